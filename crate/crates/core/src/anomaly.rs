//! Anomaly detection over a tolerance catalog or an isolation forest, and
//! the hand-off payload for root-cause analysis.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{AnomalyReport, Backend, NumericData, RcaTrigger, VarType, VariableCatalog, Violation, NORMAL};
use crate::iforest::{ForestError, IsolationForest};
use crate::stats::{mean, std_dev};

pub const TOLERANCE_VIOLATION: &str = "ToleranceViolation";
pub const STAGE_SHIFT: &str = "StageShift";
pub const FOREST_ANOMALY: &str = "ForestAnomaly";
/// Scores at or above this are anomalous.
pub const FOREST_CUTOFF: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnomalyError {
    #[error("no fitted or fittable isolation forest: {0}")]
    ModelUnavailable(String),
    #[error("backend {0:?} is not available")]
    BackendUnavailable(String),
    #[error("event row {row} out of range for {n} rows")]
    RowOutOfRange { row: usize, n: usize },
    #[error("empty table")]
    EmptyTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectMode {
    #[default]
    Auto,
    Threshold,
    Forest,
    /// Cross-modal fusion backend; not shipped.
    Fusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOptions {
    pub trees: usize,
    pub psi: usize,
    pub seed: u64,
    /// Pre-fitted forest; when absent one is fitted on the input table.
    pub model: Option<IsolationForest>,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self { trees: 100, psi: 256, seed: 0, model: None }
    }
}

fn violations(row: &BTreeMap<String, f64>, catalog: &VariableCatalog) -> (Vec<Violation>, usize) {
    let mut out = Vec::new();
    let mut with_tol = 0;
    for (name, &value) in row {
        let Some(tol) = catalog.get(name).and_then(|v| v.tolerance) else { continue };
        with_tol += 1;
        if !tol.contains(value) {
            out.push(Violation { variable: name.clone(), value, lo: tol.lo, hi: tol.hi });
        }
    }
    (out, with_tol)
}

/// Checks one record against the catalog tolerances. Variables without a
/// tolerance (or missing from the catalog) are skipped.
pub fn threshold_check(row: &BTreeMap<String, f64>, catalog: &VariableCatalog) -> AnomalyReport {
    let (violated, with_tol) = violations(row, catalog);
    let score = if with_tol == 0 { 0.0 } else { (violated.len() as f64 / with_tol as f64).min(1.0) };
    AnomalyReport {
        status: if violated.is_empty() { NORMAL.into() } else { TOLERANCE_VIOLATION.into() },
        score,
        violated_features: violated,
        backend: Backend::Threshold,
        event_ref: String::new(),
        rca_payload: None,
    }
}

/// Backend chosen by `Auto`: a function of the catalog alone.
pub fn auto_backend(catalog: &VariableCatalog) -> Backend {
    if catalog.has_tolerances() {
        Backend::Threshold
    } else {
        Backend::IsolationForest
    }
}

/// Orders violations as RCA targets: observations before controls, larger
/// exceedance first, then name.
pub fn rank_targets(violated: &[Violation], catalog: &VariableCatalog) -> Vec<String> {
    let mut v: Vec<&Violation> = violated.iter().collect();
    let is_control = |name: &str| catalog.get(name).is_some_and(|i| i.var_type == VarType::Control);
    v.sort_by(|a, b| {
        is_control(&a.variable)
            .cmp(&is_control(&b.variable))
            .then(b.exceedance().total_cmp(&a.exceedance()))
            .then(a.variable.cmp(&b.variable))
    });
    v.into_iter().map(|x| x.variable.clone()).collect()
}

/// Columns ordered by the event row's absolute z-score against the whole
/// table, largest first.
pub fn rank_by_deviation(data: &NumericData, row: usize) -> Vec<String> {
    let mut scored: Vec<(f64, &String)> = data
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = data.column(j);
            let sd = std_dev(col, 1);
            let z = if sd > 0.0 { libm::fabs(col[row] - mean(col)) / sd } else { 0.0 };
            (z, name)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().map(|(_, n)| n.clone()).collect()
}

/// Number of rows with at least one tolerance violation.
pub fn violating_rows(data: &NumericData, catalog: &VariableCatalog) -> usize {
    let tols: Vec<(usize, crate::domain::Tolerance)> = data
        .names()
        .iter()
        .enumerate()
        .filter_map(|(j, n)| catalog.get(n).and_then(|v| v.tolerance).map(|t| (j, t)))
        .collect();
    (0..data.n_rows())
        .filter(|&i| tols.iter().any(|(j, t)| !t.contains(data.column(*j)[i])))
        .count()
}

/// Labels the event row (default: last row) of a table.
///
/// Threshold reports "StageShift" when every violated variable sits in one
/// stage and "ToleranceViolation" otherwise; the forest reports
/// "ForestAnomaly" at scores ≥ 0.6. Any non-normal report carries the RCA
/// payload.
pub fn detect(
    data: &NumericData,
    event_row: Option<usize>,
    catalog: &VariableCatalog,
    mode: DetectMode,
    opts: &DetectOptions,
    data_ref: &str,
    event_ref: &str,
) -> Result<AnomalyReport, AnomalyError> {
    let n = data.n_rows();
    if n == 0 {
        return Err(AnomalyError::EmptyTable);
    }
    let row = event_row.unwrap_or(n - 1);
    if row >= n {
        return Err(AnomalyError::RowOutOfRange { row, n });
    }
    let backend = match mode {
        DetectMode::Auto => auto_backend(catalog),
        DetectMode::Threshold => Backend::Threshold,
        DetectMode::Forest => Backend::IsolationForest,
        DetectMode::Fusion => return Err(AnomalyError::BackendUnavailable("fusion".into())),
    };
    let mut report = match backend {
        Backend::Threshold => {
            let mut r = threshold_check(&data.row_map(row), catalog);
            let stages: BTreeSet<u32> =
                r.violated_features.iter().filter_map(|v| catalog.get(&v.variable).map(|i| i.stage)).collect();
            if !r.violated_features.is_empty() && stages.len() == 1 && !stages.contains(&0) {
                r.status = STAGE_SHIFT.into();
            }
            r
        }
        Backend::IsolationForest => {
            let model = match &opts.model {
                Some(m) => m.clone(),
                None => IsolationForest::fit(data, opts.trees, opts.psi, opts.seed)
                    .map_err(|e: ForestError| AnomalyError::ModelUnavailable(e.to_string()))?,
            };
            let score = model.score(&data.row(row)).map_err(|e| AnomalyError::ModelUnavailable(e.to_string()))?;
            AnomalyReport {
                status: if score >= FOREST_CUTOFF { FOREST_ANOMALY.into() } else { NORMAL.into() },
                score,
                violated_features: Vec::new(),
                backend: Backend::IsolationForest,
                event_ref: String::new(),
                rca_payload: None,
            }
        }
    };
    report.event_ref = event_ref.into();
    if !report.is_normal() {
        let targets = if report.violated_features.is_empty() {
            rank_by_deviation(data, row).into_iter().take(1).collect()
        } else {
            rank_targets(&report.violated_features, catalog)
        };
        report.rca_payload = Some(RcaTrigger { targets, event_ref: event_ref.into(), data_ref: data_ref.into() });
    }
    Ok(report)
}
