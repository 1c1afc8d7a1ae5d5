//! Wire types shared by the registry, the dispatcher and every agent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use rcdiag_core::domain::Slot;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InvokeContext {
    #[serde(default)]
    pub data_ref: Option<String>,
    /// Filled slot → short description of its content.
    #[serde(default)]
    pub prior_slots: BTreeMap<Slot, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeRequest {
    pub task_id: String,
    pub capability: String,
    #[serde(default = "empty_object")]
    pub payload: Value,
    #[serde(default)]
    pub context: InvokeContext,
}

pub fn empty_object() -> Value {
    Value::Object(Map::new())
}

impl InvokeRequest {
    pub fn new(task_id: impl Into<String>, capability: impl Into<String>, payload: Value) -> Self {
        Self { task_id: task_id.into(), capability: capability.into(), payload, context: InvokeContext::default() }
    }

    pub fn with_data_ref(mut self, data_ref: impl Into<String>) -> Self {
        self.context.data_ref = Some(data_ref.into());
        self
    }

    /// String field of the payload.
    pub fn str_param(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Started,
    Progress,
    Result,
    Error,
}

impl EventKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::Result | EventKind::Error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub task_id: String,
    pub seq: u64,
    pub kind: EventKind,
    #[serde(default)]
    pub body: Value,
}

/// Response of a dispatch: the agent's result plus dispatcher metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchResult {
    pub task_id: String,
    pub agent: String,
    pub duration_ms: u64,
    pub result: Value,
}

/// Error body agents return from `/run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub kind: String,
    pub message: String,
}

/// Checks the tail of a task's event list: seq values exactly `1..=k` and
/// a single terminal event, in last position.
pub fn well_formed(events: &[TaskEvent]) -> bool {
    let seq_ok = events.iter().enumerate().all(|(i, e)| e.seq == i as u64 + 1);
    let terminals = events.iter().filter(|e| e.kind.is_terminal()).count();
    seq_ok && terminals == 1 && events.last().is_some_and(|e| e.kind.is_terminal())
}
