//! Planner → executor → replanner loop over a shared workflow state.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rcdiag_core::domain::{
    validate_state, Capability, ExecutedStep, Slot, StepOrigin, StepSpec, StepStatus, WorkflowState, NORMAL,
};
use rcdiag_core::planner::{anomaly_status, plan, plan_from_list, replan, select_template, PlanError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::cache::StepCache;
use crate::cpa::{postprocess_chain, slot_summary, Cpa};
use crate::io;
use crate::protocol::{EventKind, InvokeContext, InvokeRequest};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("data file not found: {0}")]
    DataNotFound(PathBuf),
    #[error(transparent)]
    Io(#[from] io::IoError),
}

#[derive(Debug, Clone, Default)]
pub struct EngineSettings {
    /// Final states are written here as `<workflow_id>.json`.
    pub out_dir: Option<PathBuf>,
    /// External planner; the keyword table is the fallback.
    pub planner_url: Option<String>,
    /// Base for relative data references.
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub workflow_id: String,
    /// Template id, or "external" when the plan came from the planner service.
    pub template: String,
    pub state: WorkflowState,
    /// Agent invocations in this run; cache hits are not counted.
    pub dispatches: usize,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RunOutcome {
    pub fn failed_steps(&self) -> usize {
        self.state.trace.iter().filter(|s| s.status == StepStatus::Failed).count()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlannerReply {
    Steps { steps: Vec<String> },
    List(Vec<String>),
}

pub struct Engine {
    cpa: Arc<Cpa>,
    cache: Arc<StepCache>,
    settings: EngineSettings,
    counter: AtomicU64,
    dispatches: AtomicU64,
    epoch: Instant,
    http: ureq::Agent,
}

struct Run<'a> {
    id: &'a str,
    data_hash: String,
    chained: BTreeSet<Capability>,
    dispatches: usize,
    notes: Vec<String>,
}

impl Engine {
    pub fn new(cpa: Arc<Cpa>, cache: Arc<StepCache>, settings: EngineSettings) -> Self {
        let http = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(10))).build().into();
        Self { cpa, cache, settings, counter: AtomicU64::new(0), dispatches: AtomicU64::new(0), epoch: Instant::now(), http }
    }

    pub fn cpa(&self) -> &Arc<Cpa> {
        &self.cpa
    }

    pub fn cache(&self) -> &Arc<StepCache> {
        &self.cache
    }

    /// Agent invocations over the engine's lifetime.
    pub fn total_dispatches(&self) -> u64 {
        self.dispatches.load(Ordering::Relaxed)
    }

    pub fn next_workflow_id(&self) -> String {
        format!("wf-{:04}", self.counter.fetch_add(1, Ordering::Relaxed) + 1)
    }

    pub fn run(&self, query: &str, data_ref: Option<&str>) -> Result<RunOutcome, EngineError> {
        let id = self.next_workflow_id();
        self.run_with_id(&id, query, data_ref, &|_| {})
    }

    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn event(&self, id: &str, kind: EventKind, body: Value) {
        let _ = self.cpa.events().publish(id, kind, body);
    }

    /// Runs one workflow under `id`; `observe` sees the state after every step.
    pub fn run_with_id(
        &self,
        id: &str,
        query: &str,
        data_ref: Option<&str>,
        observe: &dyn Fn(&WorkflowState),
    ) -> Result<RunOutcome, EngineError> {
        let data_path = data_ref.filter(|d| !d.is_empty()).map(|d| io::absolute(Path::new(d), &self.settings.base_dir));
        if let Some(p) = &data_path {
            if !p.is_file() {
                self.event(id, EventKind::Error, json!({"kind": "DataNotFound", "message": p}));
                return Err(EngineError::DataNotFound(p.clone()));
            }
        }
        let data_hash = match &data_path {
            Some(p) => io::file_hash(p).inspect_err(|e| {
                self.event(id, EventKind::Error, json!({"kind": "Io", "message": e.to_string()}));
            })?,
            None => String::new(),
        };
        let mut state =
            WorkflowState::new(query, data_path.as_ref().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default());
        let template = match self.plan(query, &mut state) {
            Ok(t) => t,
            Err(e) => {
                self.event(id, EventKind::Error, json!({"kind": "UnplannableQuery", "message": e.to_string()}));
                return Err(e.into());
            }
        };
        self.event(id, EventKind::Started, json!({"query": query, "template": template, "plan": state.planned}));
        observe(&state);

        let mut run = Run { id, data_hash, chained: BTreeSet::new(), dispatches: 0, notes: Vec::new() };
        // every iteration consumes a pending step; chaining adds at most one per capability
        let budget = state.plan.len() + Capability::ALL.len();
        for _ in 0..budget {
            if state.plan.is_empty() {
                break;
            }
            let step = state.plan.remove(0);
            let origin = if run.chained.contains(&step.capability) { StepOrigin::Chained } else { StepOrigin::Planned };
            self.execute_step(&step, origin, &mut state, &mut run);
            observe(&state);
            self.replan_step(&mut state, &run);
        }
        if !state.trace.iter().any(|s| s.capability == Capability::Recommend) {
            // the recommender always closes a run
            self.execute_step(&StepSpec::new(Capability::Recommend), StepOrigin::Chained, &mut state, &mut run);
            observe(&state);
        }
        for v in validate_state(&state) {
            run.notes.push(format!("state check: {v}"));
        }
        let outcome = RunOutcome {
            workflow_id: id.to_string(),
            template,
            state,
            dispatches: run.dispatches,
            notes: run.notes,
        };
        self.persist(id, &outcome.state)?;
        self.event(
            id,
            EventKind::Result,
            json!({
                "executed": outcome.state.executed(),
                "pruned": outcome.state.pruned,
                "dispatches": outcome.dispatches,
                "failed": outcome.failed_steps(),
            }),
        );
        Ok(outcome)
    }

    /// Runs `steps` on an already finished state, outside the plan loop,
    /// with chaining enabled. Events go to `task_id`, which must be fresh.
    pub fn extend(&self, task_id: &str, state: &mut WorkflowState, steps: Vec<StepSpec>) -> Result<Vec<ExecutedStep>, EngineError> {
        let data_hash = if state.data_ref.is_empty() { String::new() } else { io::file_hash(Path::new(&state.data_ref))? };
        let caps: Vec<Capability> = steps.iter().map(|s| s.capability).collect();
        self.event(task_id, EventKind::Started, json!({"extend": caps}));
        let mut run = Run { id: task_id, data_hash, chained: BTreeSet::new(), dispatches: 0, notes: Vec::new() };
        let before = state.trace.len();
        let saved = std::mem::replace(&mut state.plan, steps);
        for _ in 0..caps.len() + Capability::ALL.len() {
            if state.plan.is_empty() {
                break;
            }
            let step = state.plan.remove(0);
            let origin = if run.chained.contains(&step.capability) { StepOrigin::Chained } else { StepOrigin::Planned };
            self.execute_step(&step, origin, state, &mut run);
        }
        state.plan = saved;
        let added = state.trace[before..].to_vec();
        self.event(task_id, EventKind::Result, json!({"executed": added.iter().map(|s| s.capability).collect::<Vec<_>>()}));
        Ok(added)
    }

    /// Writes `state` to the output directory, if one is configured.
    pub fn persist(&self, workflow_id: &str, state: &WorkflowState) -> Result<(), EngineError> {
        if let Some(dir) = &self.settings.out_dir {
            io::write_json(&dir.join(format!("{workflow_id}.json")), state)?;
        }
        Ok(())
    }

    fn plan(&self, query: &str, state: &mut WorkflowState) -> Result<String, PlanError> {
        if let Some(url) = &self.settings.planner_url {
            let body = json!({"query": query, "state": slot_summary(state), "data_ref": state.data_ref});
            let reply = self
                .http
                .post(url)
                .send_json(&body)
                .ok()
                .and_then(|mut r| r.body_mut().read_json::<PlannerReply>().ok());
            if let Some(reply) = reply {
                let steps = match reply {
                    PlannerReply::Steps { steps } | PlannerReply::List(steps) => steps,
                };
                let mut trial = state.clone();
                if plan_from_list(&steps, query, &mut trial).is_ok() {
                    *state = trial;
                    return Ok("external".into());
                }
            }
        }
        let t = select_template(query)?;
        plan(query, state)?;
        Ok(t.id.to_string())
    }

    fn replan_step(&self, state: &mut WorkflowState, run: &Run<'_>) {
        let before = state.pruned.len();
        replan(state);
        if state.pruned.len() == before {
            return;
        }
        let normal = anomaly_status(state) == Some(NORMAL);
        for cap in state.pruned[before..].iter().copied() {
            let reason = if normal && matches!(cap, Capability::Causal | Capability::Rca) {
                "status Normal"
            } else {
                "result already available"
            };
            let name = if cap == Capability::Rca { "RCA".to_string() } else { cap.tag().to_string() };
            self.event(run.id, EventKind::Progress, json!({"replanner": format!("{name} skipped: {reason}"), "pruned": cap}));
        }
    }

    /// Request payload for `step`, with the slots it reads from.
    fn build_payload(&self, step: &StepSpec, state: &WorkflowState) -> (Value, Vec<Slot>) {
        let mut p = Map::new();
        let mut consumed = Vec::new();
        let clean = state.slot(Slot::Preprocessing).and_then(|v| v.get("clean_ref")).cloned();
        let use_clean = |p: &mut Map<String, Value>, consumed: &mut Vec<Slot>| {
            if let Some(c) = &clean {
                p.insert("data_ref".into(), c.clone());
                consumed.push(Slot::Preprocessing);
            }
        };
        match step.capability {
            Capability::Preprocessing => {}
            Capability::BackgroundInfo => {
                if let Some(t) = state.slot(Slot::Anomaly).and_then(|v| v.pointer("/rca_payload/targets")) {
                    p.insert("variables".into(), t.clone());
                    consumed.push(Slot::Anomaly);
                } else if let Some(cols) = state.slot(Slot::Preprocessing).and_then(|v| v.get("columns")) {
                    p.insert("variables".into(), cols.clone());
                    consumed.push(Slot::Preprocessing);
                } else {
                    p.insert("query".into(), json!(state.query));
                }
            }
            Capability::Anomaly | Capability::Causal => use_clean(&mut p, &mut consumed),
            Capability::Rca => {
                use_clean(&mut p, &mut consumed);
                if let Some(t) = state.slot(Slot::Anomaly).and_then(|v| v.get("rca_payload")) {
                    p.insert("trigger".into(), t.clone());
                    consumed.push(Slot::Anomaly);
                }
                if let Some(g) = state.slot(Slot::Causal).and_then(|v| v.get("graph")) {
                    p.insert("graph".into(), g.clone());
                    consumed.push(Slot::Causal);
                }
            }
            Capability::Recommend => {
                let last = state
                    .trace
                    .iter()
                    .rev()
                    .find(|s| s.status == StepStatus::Success && s.capability != Capability::Recommend);
                if let Some(last) = last {
                    let slot = last.capability.slot();
                    p.insert("last_capability".into(), json!(last.capability));
                    p.insert("last_output".into(), state.slot(slot).cloned().unwrap_or(Value::Null));
                    consumed.push(slot);
                }
                p.insert("filled".into(), json!(state.slots.keys().collect::<Vec<_>>()));
            }
        }
        if let Value::Object(params) = &step.params {
            for (k, v) in params {
                p.insert(k.clone(), v.clone());
            }
        }
        (Value::Object(p), consumed)
    }

    fn cached_result(&self, cap: Capability, key: &str) -> Option<Value> {
        let v = self.cache.get(key)?;
        // a cached cleaning result is only useful while its output file exists
        if cap == Capability::Preprocessing {
            let clean = v.get("clean_ref")?.as_str()?;
            if !Path::new(clean).is_file() {
                return None;
            }
        }
        Some(v)
    }

    fn execute_step(&self, step: &StepSpec, origin: StepOrigin, state: &mut WorkflowState, run: &mut Run<'_>) {
        let cap = step.capability;
        let seq = state.next_seq();
        let started_ms = self.now_ms();
        let mut record = ExecutedStep {
            seq,
            capability: cap,
            agent: String::new(),
            status: StepStatus::Success,
            started_ms,
            ended_ms: started_ms,
            cache_hit: false,
            origin,
            slot_written: None,
            consumed: Vec::new(),
            error: None,
        };
        if let Some(dep) = cap.dependencies().iter().find(|s| state.failed(**s)) {
            record.status = StepStatus::Skipped;
            record.error = Some(format!("dependency {dep} failed"));
            self.finish(state, record, run);
            return;
        }
        let (payload, consumed) = self.build_payload(step, state);
        record.consumed = consumed;
        let key = step.cacheable.then(|| {
            let mut k = payload.clone();
            if let Value::Object(m) = &mut k {
                m.remove("data_ref");
            }
            StepCache::key(cap, &run.data_hash, &k)
        });
        if let Some(hit) = key.as_deref().and_then(|k| self.cached_result(cap, k)) {
            record.agent = "cache".into();
            record.cache_hit = true;
            self.commit(state, &mut record, hit, run);
            return;
        }
        let context = InvokeContext {
            data_ref: (!state.data_ref.is_empty()).then(|| state.data_ref.clone()),
            prior_slots: slot_summary(state),
        };
        let req = InvokeRequest { task_id: format!("{}-{seq}-{}", run.id, cap.tag()), capability: cap.tag().into(), payload, context };
        run.dispatches += 1;
        self.dispatches.fetch_add(1, Ordering::Relaxed);
        match self.cpa.dispatch(&req) {
            Ok(res) => {
                record.agent = res.agent;
                if let Some(k) = &key {
                    self.cache.put(k, &res.result);
                }
                self.commit(state, &mut record, res.result, run);
            }
            Err(e) => {
                record.status = StepStatus::Failed;
                record.error = Some(format!("{}: {e}", e.kind()));
                self.finish(state, record, run);
            }
        }
    }

    /// Stores a successful result, records the step and fires the
    /// producing card's postprocess rules.
    fn commit(&self, state: &mut WorkflowState, record: &mut ExecutedStep, output: Value, run: &mut Run<'_>) {
        let cap = record.capability;
        state.slots.insert(cap.slot(), output.clone());
        record.slot_written = Some(cap.slot());
        let seq = record.seq;
        self.finish(state, record.clone(), run);
        if cap == Capability::Recommend {
            return;
        }
        let Some(card) = self.cpa.registry().find_by_capability(cap.tag()).into_iter().next() else { return };
        let (reqs, errors) = postprocess_chain(&card, &output, state, &format!("{}-{seq}", run.id));
        for e in errors {
            run.notes.push(e.to_string());
            self.event(run.id, EventKind::Progress, json!({"chain_error": e.to_string()}));
        }
        for r in reqs {
            let Some(next) = Capability::parse(&r.capability) else {
                run.notes.push(format!("chain to unknown capability {:?} ignored", r.capability));
                continue;
            };
            let pending = state.plan.iter().any(|s| s.capability == next);
            if pending || state.is_filled(next.slot()) || run.chained.contains(&next) {
                self.event(run.id, EventKind::Progress, json!({"chain": next, "dropped": "already planned or done"}));
                continue;
            }
            let deps = next.dependencies();
            let pos = state.plan.iter().rposition(|s| deps.contains(&s.capability.slot())).map_or(0, |i| i + 1);
            state.plan.insert(pos, StepSpec { capability: next, params: r.payload, cacheable: false });
            run.chained.insert(next);
            self.event(run.id, EventKind::Progress, json!({"chain": next, "after": cap, "position": pos}));
        }
    }

    fn finish(&self, state: &mut WorkflowState, mut record: ExecutedStep, run: &Run<'_>) {
        record.ended_ms = self.now_ms();
        self.event(
            run.id,
            EventKind::Progress,
            json!({
                "seq": record.seq,
                "capability": record.capability,
                "status": record.status,
                "agent": record.agent,
                "cache_hit": record.cache_hit,
                "error": record.error,
            }),
        );
        state.trace.push(record);
    }
}
