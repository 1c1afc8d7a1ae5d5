//! Client process agent: normalizes requests, routes them by capability to
//! the first registered agent, publishes task events and evaluates
//! postprocess rules.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use rcdiag_core::domain::{lookup, AgentCard, Slot, WorkflowState};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agents::{Agent, AgentError};
use crate::events::EventStore;
use crate::io;
use crate::protocol::{DispatchResult, EventKind, InvokeContext, InvokeRequest, TaskEvent, WireError};
use crate::registry::{Registry, RegistryError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DispatchError {
    #[error("no agent offers capability {0:?}")]
    NoAgentForCapability(String),
    #[error("task id {0:?} already used")]
    DuplicateTask(String),
    #[error("bad payload: {0}")]
    BadPayload(String),
    #[error("agent {agent} timed out after {after_ms} ms")]
    AgentTimeout { agent: String, after_ms: u64, partial: Vec<TaskEvent> },
    #[error("agent {agent}: {error}")]
    Agent { agent: String, error: AgentError },
    #[error("agent {agent} unreachable: {message}")]
    Transport { agent: String, message: String },
}

impl DispatchError {
    pub fn kind(&self) -> &'static str {
        match self {
            DispatchError::NoAgentForCapability(_) => "NoAgentForCapability",
            DispatchError::DuplicateTask(_) => "DuplicateTask",
            DispatchError::BadPayload(_) => "BadPayload",
            DispatchError::AgentTimeout { .. } => "AgentTimeout",
            DispatchError::Agent { error, .. } => error.kind(),
            DispatchError::Transport { .. } => "Transport",
        }
    }
}

/// Body of an agent's `/run` response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResponse {
    pub result: Value,
    #[serde(default)]
    pub progress: Vec<Value>,
}

pub struct Cpa {
    registry: Registry,
    events: EventStore,
    local: RwLock<HashMap<String, Arc<dyn Agent>>>,
    base_dir: PathBuf,
    timeout: Duration,
    http: ureq::Agent,
}

impl Cpa {
    /// Relative data references are resolved against `base_dir`.
    pub fn new(registry: Registry, events: EventStore, base_dir: &Path, timeout: Duration) -> Self {
        let http = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { registry, events, local: RwLock::default(), base_dir: base_dir.to_path_buf(), timeout, http }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn events(&self) -> &EventStore {
        &self.events
    }

    /// Registers `agent` under `endpoint` and keeps an in-process handle, so
    /// dispatch skips the network.
    pub fn attach_local(&self, agent: Arc<dyn Agent>, endpoint: &str) -> Result<String, RegistryError> {
        let card = agent.card(endpoint);
        let id = self.registry.register(card)?;
        self.local.write().expect("local agents poisoned").insert(id.clone(), agent);
        Ok(id)
    }

    /// Canonical copy of `req`: `file` is accepted as an alias of
    /// `data_ref`, a missing `data_ref` is taken from the context, and the
    /// result is made absolute. The caller's request is left untouched.
    pub fn normalize(&self, req: &InvokeRequest) -> Result<InvokeRequest, DispatchError> {
        let mut out = req.clone();
        let Value::Object(map) = &mut out.payload else {
            return Err(DispatchError::BadPayload("payload must be an object".into()));
        };
        if !map.contains_key("data_ref") {
            if let Some(f) = map.remove("file") {
                map.insert("data_ref".into(), f);
            } else if let Some(d) = &req.context.data_ref {
                map.insert("data_ref".into(), json!(d));
            }
        }
        if let Some(d) = map.get("data_ref") {
            let Some(s) = d.as_str() else {
                return Err(DispatchError::BadPayload("data_ref must be a string".into()));
            };
            let abs = io::absolute(Path::new(s), &self.base_dir);
            map.insert("data_ref".into(), json!(abs));
        }
        Ok(out)
    }

    fn fail(&self, task_id: &str, err: DispatchError) -> DispatchError {
        let _ = self.events.publish(task_id, EventKind::Error, json!({"kind": err.kind(), "message": err.to_string()}));
        err
    }

    pub fn dispatch(&self, req: &InvokeRequest) -> Result<DispatchResult, DispatchError> {
        let task = req.task_id.as_str();
        if self.events.contains(task) {
            return Err(DispatchError::DuplicateTask(task.into()));
        }
        let Some(card) = self.registry.find_by_capability(&req.capability).into_iter().next() else {
            return Err(self.fail(task, DispatchError::NoAgentForCapability(req.capability.clone())));
        };
        let normalized = match self.normalize(req) {
            Ok(r) => r,
            Err(e) => return Err(self.fail(task, e)),
        };
        let _ = self.events.publish(task, EventKind::Started, json!({"agent": card.id(), "capability": req.capability}));
        let started = Instant::now();
        let local = self.local.read().expect("local agents poisoned").get(&card.id()).cloned();
        let outcome = match local {
            Some(agent) => self.run_local(agent, normalized, &card),
            None => self.run_remote(&normalized, &card),
        };
        let duration_ms = started.elapsed().as_millis() as u64;
        match outcome {
            Ok(result) => {
                let _ = self.events.publish(task, EventKind::Result, json!({"agent": card.id(), "duration_ms": duration_ms}));
                Ok(DispatchResult { task_id: task.into(), agent: card.id(), duration_ms, result })
            }
            Err(e) => Err(self.fail(task, e)),
        }
    }

    fn run_local(&self, agent: Arc<dyn Agent>, req: InvokeRequest, card: &AgentCard) -> Result<Value, DispatchError> {
        let (tx, rx) = mpsc::channel();
        let events = self.events.clone();
        let task_id = req.task_id.clone();
        std::thread::spawn(move || {
            let task = req.task_id.clone();
            let progress = |body: Value| {
                // refused once the dispatcher has given up on the task
                let _ = events.publish(&task, EventKind::Progress, body);
            };
            let _ = tx.send(agent.run(&req, &progress));
        });
        match rx.recv_timeout(self.timeout) {
            Ok(r) => r.map_err(|error| DispatchError::Agent { agent: card.id(), error }),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(self.timed_out(card, &task_id)),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(DispatchError::Agent { agent: card.id(), error: AgentError::Failed("agent panicked".into()) })
            }
        }
    }

    fn timed_out(&self, card: &AgentCard, task: &str) -> DispatchError {
        let partial = self.events.events(task).unwrap_or_default();
        DispatchError::AgentTimeout { agent: card.id(), after_ms: self.timeout.as_millis() as u64, partial }
    }

    fn run_remote(&self, req: &InvokeRequest, card: &AgentCard) -> Result<Value, DispatchError> {
        let url = format!("{}/run", card.endpoint.trim_end_matches('/'));
        let transport = |message: String| DispatchError::Transport { agent: card.id(), message };
        let mut resp = match self.http.post(&url).send_json(req) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(self.timed_out(card, &req.task_id)),
            Err(e) => return Err(transport(e.to_string())),
        };
        let status = resp.status();
        let body: Value = resp.body_mut().read_json().map_err(|e| transport(e.to_string()))?;
        if !status.is_success() {
            let wire: WireError = serde_json::from_value(body)
                .unwrap_or_else(|_| WireError { kind: "Failed".into(), message: format!("HTTP {status}") });
            return Err(DispatchError::Agent { agent: card.id(), error: AgentError::from_wire(wire) });
        }
        let run: RunResponse = serde_json::from_value(body).map_err(|e| transport(e.to_string()))?;
        for p in run.progress {
            let _ = self.events.publish(&req.task_id, EventKind::Progress, p);
        }
        Ok(run.result)
    }
}

/// One-line description of each filled slot, sent as request context.
pub fn slot_summary(state: &WorkflowState) -> BTreeMap<Slot, String> {
    state
        .slots
        .iter()
        .map(|(slot, v)| {
            let s = match slot {
                Slot::Anomaly => format!("status {}", v.get("status").and_then(Value::as_str).unwrap_or("?")),
                Slot::Causal => {
                    format!("{} edges", v.pointer("/graph/edges").and_then(Value::as_array).map_or(0, Vec::len))
                }
                Slot::Rca => format!("target {}", v.get("target").and_then(Value::as_str).unwrap_or("?")),
                _ => "filled".to_string(),
            };
            (*slot, s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("postprocess rule {rule} of {agent}: output has no field {field:?}")]
pub struct ChainMappingError {
    pub agent: String,
    pub rule: usize,
    pub field: String,
}

/// Requests triggered by `card`'s postprocess rules on `output`, in rule
/// order. Only auto-chaining rules fire; a rule whose mapping names a
/// missing output field is skipped and reported.
pub fn postprocess_chain(
    card: &AgentCard,
    output: &Value,
    state: &WorkflowState,
    task_prefix: &str,
) -> (Vec<InvokeRequest>, Vec<ChainMappingError>) {
    let mut reqs = Vec::new();
    let mut errors = Vec::new();
    for (i, rule) in card.postprocess_rules.iter().enumerate() {
        if !rule.auto_chain || !rule.trigger.matches(output) {
            continue;
        }
        let mut payload = serde_json::Map::new();
        let mut missing = None;
        for (from, to) in &rule.input_mapping {
            match lookup(output, from) {
                Some(v) => {
                    payload.insert(to.clone(), v.clone());
                }
                None => {
                    missing = Some(from.clone());
                    break;
                }
            }
        }
        if let Some(field) = missing {
            errors.push(ChainMappingError { agent: card.id(), rule: i, field });
            continue;
        }
        let context = InvokeContext {
            data_ref: (!state.data_ref.is_empty()).then(|| state.data_ref.clone()),
            prior_slots: slot_summary(state),
        };
        reqs.push(InvokeRequest {
            task_id: format!("{task_prefix}-chain{i}-{}", rule.next_capability),
            capability: rule.next_capability.clone(),
            payload: Value::Object(payload),
            context,
        });
    }
    (reqs, errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::well_formed;
    use rcdiag_core::domain::{PostprocessRule, Trigger, TriggerOp};

    /// Echoes its payload; sleeps `sleep_ms` first when the payload asks.
    struct Echo(&'static str);

    impl Agent for Echo {
        fn name(&self) -> &str {
            self.0
        }
        fn card(&self, endpoint: &str) -> AgentCard {
            AgentCard::new(self.0, "1", endpoint).with_capability("echo")
        }
        fn run(&self, req: &InvokeRequest, progress: &dyn Fn(Value)) -> Result<Value, AgentError> {
            progress(json!({"step": 1}));
            if let Some(ms) = req.payload.get("sleep_ms").and_then(Value::as_u64) {
                std::thread::sleep(Duration::from_millis(ms));
            }
            Ok(json!({"agent": self.0, "payload": req.payload}))
        }
    }

    fn cpa(timeout: Duration) -> Cpa {
        let c = Cpa::new(Registry::new(), EventStore::new(), Path::new("/data"), timeout);
        c.attach_local(Arc::new(Echo("first")), "http://127.0.0.1:1/a").unwrap();
        c.attach_local(Arc::new(Echo("second")), "http://127.0.0.1:1/b").unwrap();
        c
    }

    #[test]
    fn first_registered_agent_wins_and_events_are_well_formed() {
        let c = cpa(DEFAULT_TIMEOUT);
        let out = c.dispatch(&InvokeRequest::new("t1", "echo", json!({}))).unwrap();
        assert_eq!(out.agent, "first@1");
        assert_eq!(out.result["agent"], "first");
        let ev = c.events().events("t1").unwrap();
        assert!(well_formed(&ev));
        assert_eq!(ev.iter().map(|e| e.kind).collect::<Vec<_>>(), [EventKind::Started, EventKind::Progress, EventKind::Result]);
    }

    #[test]
    fn unknown_capability() {
        let c = cpa(DEFAULT_TIMEOUT);
        let err = c.dispatch(&InvokeRequest::new("t", "nonexistent", json!({}))).unwrap_err();
        assert_eq!(err, DispatchError::NoAgentForCapability("nonexistent".into()));
        assert!(well_formed(&c.events().events("t").unwrap()));
    }

    #[test]
    fn context_data_ref_fills_payload_without_touching_caller() {
        let c = cpa(DEFAULT_TIMEOUT);
        let req = InvokeRequest::new("t", "echo", json!({"x": 1})).with_data_ref("run.csv");
        let before = req.clone();
        let out = c.dispatch(&req).unwrap();
        assert_eq!(out.result["payload"]["data_ref"], "/data/run.csv");
        assert_eq!(req, before);
        let f = c.normalize(&InvokeRequest::new("u", "echo", json!({"file": "/abs/run.csv"}))).unwrap();
        assert_eq!(f.payload, json!({"data_ref": "/abs/run.csv"}));
    }

    #[test]
    fn duplicate_task_id_refused() {
        let c = cpa(DEFAULT_TIMEOUT);
        c.dispatch(&InvokeRequest::new("t", "echo", json!({}))).unwrap();
        assert_eq!(c.dispatch(&InvokeRequest::new("t", "echo", json!({}))).unwrap_err(), DispatchError::DuplicateTask("t".into()));
    }

    #[test]
    fn timeout_carries_partial_events() {
        let c = cpa(Duration::from_millis(50));
        let err = c.dispatch(&InvokeRequest::new("slow", "echo", json!({"sleep_ms": 500}))).unwrap_err();
        let DispatchError::AgentTimeout { partial, .. } = err else { panic!("{err:?}") };
        assert_eq!(partial[0].kind, EventKind::Started);
        std::thread::sleep(Duration::from_millis(600));
        assert!(well_formed(&c.events().events("slow").unwrap()));
    }

    fn rule(next: &str, map: &[(&str, &str)]) -> PostprocessRule {
        PostprocessRule {
            trigger: Trigger { field: "status".into(), op: TriggerOp::Ne, value: json!("Normal") },
            next_capability: next.into(),
            input_mapping: map.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            auto_chain: true,
        }
    }

    #[test]
    fn chain_fires_on_non_normal_only() {
        let card = AgentCard::new("anomaly", "1", "http://h").with_capability("anomaly").with_rule(rule("rca", &[]));
        let state = WorkflowState::new("q", "/d.csv");
        let (reqs, errs) = postprocess_chain(&card, &json!({"status": "Anomaly_A"}), &state, "w");
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].capability, "rca");
        assert_eq!(reqs[0].context.data_ref.as_deref(), Some("/d.csv"));
        assert!(errs.is_empty());
        assert!(postprocess_chain(&card, &json!({"status": "Normal"}), &state, "w").0.is_empty());
    }

    #[test]
    fn two_rules_in_card_order_and_bad_mapping_skipped() {
        let card = AgentCard::new("a", "1", "http://h")
            .with_capability("anomaly")
            .with_rule(rule("rca", &[("payload.targets", "targets")]))
            .with_rule(rule("causal", &[]))
            .with_rule(rule("background_info", &[("missing", "x")]));
        let out = json!({"status": "StageShift", "payload": {"targets": ["A"]}});
        let (reqs, errs) = postprocess_chain(&card, &out, &WorkflowState::default(), "w");
        assert_eq!(reqs.iter().map(|r| r.capability.as_str()).collect::<Vec<_>>(), ["rca", "causal"]);
        assert_eq!(reqs[0].payload, json!({"targets": ["A"]}));
        assert_eq!(errs, vec![ChainMappingError { agent: "a@1".into(), rule: 2, field: "missing".into() }]);
    }

    #[test]
    fn manual_rules_do_not_chain() {
        let mut r = rule("rca", &[]);
        r.auto_chain = false;
        let card = AgentCard::new("a", "1", "http://h").with_capability("anomaly").with_rule(r);
        assert!(postprocess_chain(&card, &json!({"status": "X"}), &WorkflowState::default(), "w").0.is_empty());
    }
}
