//! Wires registry, dispatcher, cache and engine together, and optionally
//! supervises agents running as child processes.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rcdiag_core::domain::{CausalGraph, Capability, ExecutedStep, Recommendation, Slot, StepSpec, WorkflowState};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agents::{default_agents, AgentEnv};
use crate::cache::StepCache;
use crate::config::{ConfigError, EngineConfig};
use crate::cpa::Cpa;
use crate::engine::{Engine, EngineError, EngineSettings, RunOutcome};
use crate::events::EventStore;
use crate::registry::{Registry, RegistryError};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("cannot start agent {name}: {source}")]
    Spawn { name: String, source: std::io::Error },
    #[error("only {got} of {want} agents registered within {after_ms} ms")]
    NotReady { got: usize, want: usize, after_ms: u64 },
}

/// Errors of operator follow-ups on a finished workflow.
#[derive(Debug, thiserror::Error)]
pub enum FollowUpError {
    #[error("unknown workflow {0:?}")]
    UnknownWorkflow(String),
    #[error("workflow {0:?} has not finished")]
    NotFinished(String),
    #[error("workflow {0:?} has no causal graph")]
    NoGraph(String),
    #[error("edge {0} -> {1} is not in the discovered graph")]
    UnknownEdge(String, String),
    #[error("stale recommendation: {0}")]
    Stale(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Operator verdicts on the discovered graph. `rejected` is the complete
/// set to drop from the original graph, so posting an empty set undoes
/// earlier rejections.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphEdits {
    #[serde(default)]
    pub rejected: Vec<(String, String)>,
    #[serde(default)]
    pub accepted: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEditOutcome {
    pub graph: CausalGraph,
    pub rejected: Vec<(String, String)>,
    pub accepted: Vec<(String, String)>,
    /// Whether RCA ran again against the edited graph.
    pub rerun: bool,
    pub rca: Option<Value>,
    pub steps: Vec<ExecutedStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confirmation {
    pub capability: Capability,
    /// Trace length the client saw; a different current length means the
    /// recommendation is stale.
    #[serde(default)]
    pub trace_len: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowStatus {
    Running,
    Done,
    Failed,
}

/// Server-side view of a submitted workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowRecord {
    pub workflow_id: String,
    pub status: WorkflowStatus,
    pub state: Option<WorkflowState>,
    pub template: Option<String>,
    pub error: Option<String>,
}

pub struct Service {
    config: EngineConfig,
    env: AgentEnv,
    engine: Arc<Engine>,
    workflows: Mutex<HashMap<String, WorkflowRecord>>,
    children: Mutex<Vec<Child>>,
}

impl Service {
    /// A service with an empty registry.
    pub fn new(config: EngineConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let env = config.agent_env()?;
        let base_dir = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."));
        let cpa = Arc::new(Cpa::new(Registry::new(), EventStore::new(), &base_dir, config.timeout()));
        let cache = Arc::new(StepCache::persistent(config.data_dir.join("cache")));
        let settings =
            EngineSettings { out_dir: Some(config.runs_dir()), planner_url: config.planner_url.clone(), base_dir };
        let engine = Arc::new(Engine::new(cpa, cache, settings));
        Ok(Self { config, env, engine, workflows: Mutex::default(), children: Mutex::default() })
    }

    /// All agents in this process, advertised under `{public_base}/agents/{name}`.
    pub fn in_process(config: EngineConfig, public_base: &str) -> Result<Self, ServiceError> {
        let s = Self::new(config)?;
        s.attach_default_agents(public_base)?;
        Ok(s)
    }

    pub fn attach_default_agents(&self, public_base: &str) -> Result<(), ServiceError> {
        let base = public_base.trim_end_matches('/');
        for agent in default_agents(&self.env) {
            let endpoint = format!("{base}/agents/{}", agent.name());
            self.engine.cpa().attach_local(agent, &endpoint)?;
        }
        Ok(())
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn env(&self) -> &AgentEnv {
        &self.env
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn registry(&self) -> &Registry {
        self.engine.cpa().registry()
    }

    pub fn events(&self) -> &EventStore {
        self.engine.cpa().events()
    }

    /// Starts one `agent` subprocess per default agent. Each binds an
    /// ephemeral port and registers itself at `registry_url`.
    pub fn spawn_agents(&self, exe: &Path, registry_url: &str) -> Result<usize, ServiceError> {
        let mut children = self.children.lock().expect("children poisoned");
        let names: Vec<String> = default_agents(&self.env).iter().map(|a| a.name().to_string()).collect();
        for name in &names {
            let mut cmd = Command::new(exe);
            cmd.arg("agent")
                .arg(name)
                .arg("--catalog")
                .arg(&self.config.catalog_path)
                .arg("--data-dir")
                .arg(&self.config.data_dir)
                .arg("--registry")
                .arg(registry_url)
                .arg("--seed")
                .arg(self.config.seed.to_string());
            if let Some(r) = &self.config.rules_path {
                cmd.arg("--rules").arg(r);
            }
            let child = cmd
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .spawn()
                .map_err(|source| ServiceError::Spawn { name: name.clone(), source })?;
            children.push(child);
        }
        Ok(names.len())
    }

    /// Blocks until at least `want` agents are registered.
    pub fn wait_ready(&self, want: usize, timeout: Duration) -> Result<(), ServiceError> {
        let start = Instant::now();
        loop {
            let got = self.registry().len();
            if got >= want {
                return Ok(());
            }
            if start.elapsed() > timeout {
                return Err(ServiceError::NotReady { got, want, after_ms: timeout.as_millis() as u64 });
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    /// Reserves an id and records the workflow as running.
    pub fn submit(&self, query: &str, data_ref: Option<&str>) -> String {
        let id = self.engine.next_workflow_id();
        let state = WorkflowState::new(query, data_ref.unwrap_or_default());
        let rec = WorkflowRecord {
            workflow_id: id.clone(),
            status: WorkflowStatus::Running,
            state: Some(state),
            template: None,
            error: None,
        };
        self.workflows.lock().expect("workflows poisoned").insert(id.clone(), rec);
        id
    }

    /// Runs a submitted workflow to completion, keeping its record current.
    pub fn execute(&self, id: &str, query: &str, data_ref: Option<&str>) -> Result<RunOutcome, EngineError> {
        let observe = |s: &WorkflowState| {
            if let Some(rec) = self.workflows.lock().expect("workflows poisoned").get_mut(id) {
                rec.state = Some(s.clone());
            }
        };
        let result = self.engine.run_with_id(id, query, data_ref, &observe);
        let mut map = self.workflows.lock().expect("workflows poisoned");
        let rec = map.entry(id.to_string()).or_insert_with(|| WorkflowRecord {
            workflow_id: id.to_string(),
            status: WorkflowStatus::Running,
            state: None,
            template: None,
            error: None,
        });
        match &result {
            Ok(o) => {
                rec.status = WorkflowStatus::Done;
                rec.state = Some(o.state.clone());
                rec.template = Some(o.template.clone());
            }
            Err(e) => {
                rec.status = WorkflowStatus::Failed;
                rec.error = Some(e.to_string());
            }
        }
        result
    }

    /// Submit and execute in one call.
    pub fn run(&self, query: &str, data_ref: Option<&str>) -> Result<RunOutcome, EngineError> {
        let id = self.submit(query, data_ref);
        self.execute(&id, query, data_ref)
    }

    pub fn workflow(&self, id: &str) -> Option<WorkflowRecord> {
        self.workflows.lock().expect("workflows poisoned").get(id).cloned()
    }

    fn finished_state(&self, id: &str) -> Result<WorkflowState, FollowUpError> {
        let rec = self.workflow(id).ok_or_else(|| FollowUpError::UnknownWorkflow(id.into()))?;
        match (rec.status, rec.state) {
            (WorkflowStatus::Done, Some(state)) => Ok(state),
            _ => Err(FollowUpError::NotFinished(id.into())),
        }
    }

    fn store(&self, id: &str, state: &WorkflowState) -> Result<(), FollowUpError> {
        self.engine.persist(id, state)?;
        if let Some(rec) = self.workflows.lock().expect("workflows poisoned").get_mut(id) {
            rec.state = Some(state.clone());
        }
        Ok(())
    }

    fn follow_up_task(&self, id: &str, what: &str, state: &WorkflowState) -> String {
        format!("{id}-{what}{}", state.trace.len() + 1)
    }

    /// Applies operator edge verdicts and refreshes RCA when the graph
    /// actually changed and an RCA result exists.
    pub fn edit_graph(&self, id: &str, edits: &GraphEdits) -> Result<GraphEditOutcome, FollowUpError> {
        let mut state = self.finished_state(id)?;
        let causal = state.slot(Slot::Causal).cloned().ok_or_else(|| FollowUpError::NoGraph(id.into()))?;
        let parse = |v: Option<&Value>| v.and_then(|g| serde_json::from_value::<CausalGraph>(g.clone()).ok());
        let current = parse(causal.get("graph")).ok_or_else(|| FollowUpError::NoGraph(id.into()))?;
        let original = parse(causal.get("original_graph")).unwrap_or_else(|| current.clone());
        let mut edited = original.clone();
        for (src, dst) in &edits.rejected {
            if !original.edges.iter().any(|e| &e.src == src && &e.dst == dst) {
                return Err(FollowUpError::UnknownEdge(src.clone(), dst.clone()));
            }
            edited = edited.without_edge(src, dst);
        }
        let mut slot = causal;
        slot["graph"] = json!(edited);
        slot["original_graph"] = json!(original);
        slot["edge_list"] = json!(edited.to_edge_list());
        slot["rejected"] = json!(edits.rejected);
        slot["accepted"] = json!(edits.accepted);
        state.slots.insert(Slot::Causal, slot);
        let rerun = edited != current && state.is_filled(Slot::Rca);
        let steps = if rerun {
            let task = self.follow_up_task(id, "edit", &state);
            self.engine.extend(&task, &mut state, vec![StepSpec::new(Capability::Rca)])?
        } else {
            Vec::new()
        };
        self.store(id, &state)?;
        Ok(GraphEditOutcome {
            graph: edited,
            rejected: edits.rejected.clone(),
            accepted: edits.accepted.clone(),
            rerun,
            rca: rerun.then(|| state.slot(Slot::Rca).cloned()).flatten(),
            steps,
        })
    }

    /// Executes a pending recommendation, then asks the recommender again.
    pub fn confirm(&self, id: &str, c: &Confirmation) -> Result<Vec<ExecutedStep>, FollowUpError> {
        let mut state = self.finished_state(id)?;
        if let Some(n) = c.trace_len {
            if n != state.trace.len() {
                return Err(FollowUpError::Stale(format!("state advanced from {n} to {} steps", state.trace.len())));
            }
        }
        let recs: Vec<Recommendation> = state
            .slot(Slot::Recommendations)
            .and_then(|v| v.get("recommendations"))
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default();
        let Some(rec) = recs.into_iter().find(|r| r.suggested_capability == c.capability) else {
            return Err(FollowUpError::Stale(format!("{} is not among the current recommendations", c.capability.tag())));
        };
        if state.is_filled(c.capability.slot()) {
            return Err(FollowUpError::Stale(format!("{} already has a result", c.capability.tag())));
        }
        let step = StepSpec { capability: c.capability, params: rec.params, cacheable: false };
        let task = self.follow_up_task(id, "confirm", &state);
        let steps = self.engine.extend(&task, &mut state, vec![step, StepSpec::new(Capability::Recommend)])?;
        self.store(id, &state)?;
        Ok(steps)
    }

    pub fn stop_children(&self) {
        let mut children = self.children.lock().expect("children poisoned");
        for c in children.iter_mut() {
            let _ = c.kill();
            let _ = c.wait();
        }
        children.clear();
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop_children();
    }
}
