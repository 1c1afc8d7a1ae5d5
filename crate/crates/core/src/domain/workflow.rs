use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Capability;

/// Named result slots of the shared workflow state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Preprocessing,
    Background,
    Anomaly,
    Causal,
    Rca,
    Recommendations,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Slot::Preprocessing => "preprocessing",
            Slot::Background => "background",
            Slot::Anomaly => "anomaly",
            Slot::Causal => "causal",
            Slot::Rca => "rca",
            Slot::Recommendations => "recommendations",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub capability: Capability,
    #[serde(default)]
    pub params: Value,
    /// Result may be served from the step cache.
    #[serde(default)]
    pub cacheable: bool,
}

impl StepSpec {
    pub fn new(capability: Capability) -> Self {
        Self { capability, params: Value::Object(Default::default()), cacheable: false }
    }

    pub fn cached(capability: Capability) -> Self {
        Self { cacheable: true, ..Self::new(capability) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepStatus {
    Success,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepOrigin {
    Planned,
    Chained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedStep {
    pub seq: u32,
    pub capability: Capability,
    pub agent: String,
    pub status: StepStatus,
    /// Engine-local monotonic milliseconds.
    pub started_ms: u64,
    pub ended_ms: u64,
    pub cache_hit: bool,
    pub origin: StepOrigin,
    #[serde(default)]
    pub slot_written: Option<Slot>,
    /// Slots whose content was forwarded into this step's request.
    #[serde(default)]
    pub consumed: Vec<Slot>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub query: String,
    pub data_ref: String,
    pub slots: BTreeMap<Slot, Value>,
    /// Pending steps.
    pub plan: Vec<StepSpec>,
    /// Capability sequence chosen by the planner, before any pruning.
    #[serde(default)]
    pub planned: Vec<Capability>,
    /// Pending steps the replanner removed.
    #[serde(default)]
    pub pruned: Vec<Capability>,
    pub trace: Vec<ExecutedStep>,
}

impl WorkflowState {
    pub fn new(query: impl Into<String>, data_ref: impl Into<String>) -> Self {
        Self { query: query.into(), data_ref: data_ref.into(), ..Default::default() }
    }

    pub fn slot(&self, slot: Slot) -> Option<&Value> {
        self.slots.get(&slot)
    }

    pub fn is_filled(&self, slot: Slot) -> bool {
        self.slots.contains_key(&slot)
    }

    pub fn next_seq(&self) -> u32 {
        self.trace.last().map_or(1, |s| s.seq + 1)
    }

    /// Capabilities of the successful trace entries, in order.
    pub fn executed(&self) -> Vec<Capability> {
        self.trace
            .iter()
            .filter(|s| s.status == StepStatus::Success)
            .map(|s| s.capability)
            .collect()
    }

    pub fn failed(&self, slot: Slot) -> bool {
        self.trace
            .iter()
            .any(|s| s.capability.slot() == slot && s.status != StepStatus::Success)
            && !self.is_filled(slot)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateViolation {
    NonContiguousSeq { position: usize, expected: u32, found: u32 },
    SuccessWithoutSlot { seq: u32 },
    SlotNotFilled { seq: u32, slot: Slot },
    SlotMismatch { seq: u32, expected: Slot, found: Slot },
}

impl fmt::Display for StateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateViolation::NonContiguousSeq { position, expected, found } => {
                write!(f, "non-contiguous seq at trace[{position}]: expected {expected}, found {found}")
            }
            StateViolation::SuccessWithoutSlot { seq } => write!(f, "step {seq} succeeded without writing a slot"),
            StateViolation::SlotNotFilled { seq, slot } => write!(f, "step {seq} wrote slot {slot} but it is empty"),
            StateViolation::SlotMismatch { seq, expected, found } => {
                write!(f, "step {seq} wrote slot {found}, expected {expected}")
            }
        }
    }
}

/// Checks the trace invariants; an empty result means the state is consistent.
pub fn validate_state(state: &WorkflowState) -> Vec<StateViolation> {
    let mut out = Vec::new();
    for (i, step) in state.trace.iter().enumerate() {
        let expected = i as u32 + 1;
        if step.seq != expected {
            out.push(StateViolation::NonContiguousSeq { position: i, expected, found: step.seq });
        }
        if step.status == StepStatus::Success {
            match step.slot_written {
                None => out.push(StateViolation::SuccessWithoutSlot { seq: step.seq }),
                Some(slot) if slot != step.capability.slot() => out.push(StateViolation::SlotMismatch {
                    seq: step.seq,
                    expected: step.capability.slot(),
                    found: slot,
                }),
                Some(slot) if !state.is_filled(slot) => {
                    out.push(StateViolation::SlotNotFilled { seq: step.seq, slot })
                }
                Some(_) => {}
            }
        }
    }
    out
}
