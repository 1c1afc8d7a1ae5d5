use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Capability;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Threshold,
    IsolationForest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub variable: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Violation {
    /// Distance outside the band in units of the band half-width.
    pub fn exceedance(&self) -> f64 {
        let half = (self.hi - self.lo) / 2.0;
        let dist = if self.value > self.hi { self.value - self.hi } else { self.lo - self.value };
        if half > 0.0 { dist / half } else { dist }
    }
}

/// Structured hand-off from anomaly detection to root-cause analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaTrigger {
    pub targets: Vec<String>,
    pub event_ref: String,
    #[serde(default)]
    pub data_ref: String,
}

pub const NORMAL: &str = "Normal";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub status: String,
    pub score: f64,
    pub violated_features: Vec<Violation>,
    pub backend: Backend,
    pub event_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rca_payload: Option<RcaTrigger>,
}

impl AnomalyReport {
    pub fn is_normal(&self) -> bool {
        self.status == NORMAL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCause {
    pub variable: String,
    pub combined_score: f64,
    pub noise_score: f64,
    pub structural_score: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaPath {
    pub nodes: Vec<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaReport {
    pub target: String,
    pub ranked_causes: Vec<RankedCause>,
    pub paths: Vec<RcaPath>,
}

impl RcaReport {
    pub fn ranking(&self) -> Vec<&str> {
        self.ranked_causes.iter().map(|c| c.variable.as_str()).collect()
    }

    /// One path per line, `A -> B -> target (score=…)`, highest score first.
    pub fn render_paths(&self) -> String {
        let mut paths: Vec<&RcaPath> = self.paths.iter().collect();
        paths.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut out = String::new();
        for p in paths {
            let _ = writeln!(out, "{} (score={:.3})", p.nodes.join(" -> "), p.score);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub suggested_capability: Capability,
    pub rationale: String,
    pub auto_chain: bool,
    #[serde(default)]
    pub params: Value,
}
