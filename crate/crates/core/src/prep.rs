//! Table cleaning, variable descriptions and the rule-based recommender.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::domain::{lookup, Capability, Cell, DataTable, Recommendation, Slot, VariableCatalog, NORMAL};
use crate::stats::{mean, median, std_dev};

pub const NO_DESCRIPTION: &str = "no description available";
/// Share of non-missing cells that must parse as numbers for a column to
/// be treated as numeric.
pub const NUMERIC_SHARE: f64 = 0.9;
pub const MAX_RECOMMENDATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PrepError {
    #[error("every row is empty")]
    EmptyDataset,
    #[error("table has no columns")]
    NoColumns,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub rows_in: usize,
    pub rows_out: usize,
    pub cols_in: usize,
    pub cols_out: usize,
    /// Imputed cells per column (columns with none are omitted).
    pub imputed_cells: BTreeMap<String, usize>,
    /// Categorical column → number of distinct labels.
    pub encodings: BTreeMap<String, usize>,
    pub enriched: BTreeMap<String, String>,
    pub dropped_columns: Vec<String>,
    pub stats: BTreeMap<String, ColumnStats>,
}

impl PreprocessSummary {
    pub fn total_imputed(&self) -> usize {
        self.imputed_cells.values().sum()
    }
}

fn numeric_value(c: &Cell) -> Option<f64> {
    c.as_f64().filter(|v| v.is_finite())
}

fn is_missing(c: &Cell) -> bool {
    match c {
        Cell::Missing => true,
        Cell::Text(t) => t.trim().is_empty(),
        Cell::Num(v) => !v.is_finite(),
    }
}

fn label(c: &Cell) -> String {
    match c {
        Cell::Text(t) => t.clone(),
        Cell::Num(v) => format!("{v}"),
        Cell::Missing => String::new(),
    }
}

/// Cleans a raw table: drops all-empty rows and columns, coerces mostly
/// numeric columns, imputes (median / mode), label-encodes categoricals in
/// first-occurrence order and attaches catalog descriptions.
pub fn preprocess(table: &DataTable, catalog: &VariableCatalog) -> Result<(DataTable, PreprocessSummary), PrepError> {
    let (cols_in, rows_in) = table.shape();
    if cols_in == 0 {
        return Err(PrepError::NoColumns);
    }
    let rows: Vec<&Vec<Cell>> = table.rows().iter().filter(|r| !r.iter().all(is_missing)).collect();
    if rows.is_empty() {
        return Err(PrepError::EmptyDataset);
    }
    let keep: Vec<usize> = (0..cols_in).filter(|&j| !rows.iter().all(|r| is_missing(&r[j]))).collect();
    let dropped_columns: Vec<String> =
        (0..cols_in).filter(|j| !keep.contains(j)).map(|j| table.columns()[j].clone()).collect();

    let mut out_cols: Vec<String> = Vec::with_capacity(keep.len());
    let mut out_data: Vec<Vec<Cell>> = Vec::with_capacity(keep.len());
    let mut imputed_cells = BTreeMap::new();
    let mut encodings = BTreeMap::new();
    let mut encoders: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut stats = BTreeMap::new();

    for &j in &keep {
        let name = table.columns()[j].clone();
        let cells: Vec<&Cell> = rows.iter().map(|r| &r[j]).collect();
        let present: Vec<&Cell> = cells.iter().copied().filter(|c| !is_missing(c)).collect();
        let numeric = present.iter().filter(|c| numeric_value(c).is_some()).count();
        let mut filled = 0usize;
        let column: Vec<Cell> = if numeric as f64 >= NUMERIC_SHARE * present.len() as f64 {
            let values: Vec<f64> = present.iter().filter_map(|c| numeric_value(c)).collect();
            let fill = median(&values).unwrap_or(0.0);
            let col: Vec<Cell> = cells
                .iter()
                .map(|c| match numeric_value(c) {
                    Some(v) => Cell::Num(v),
                    None => {
                        filled += 1;
                        Cell::Num(fill)
                    }
                })
                .collect();
            let xs: Vec<f64> = col.iter().filter_map(Cell::as_f64).collect();
            let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            stats.insert(name.clone(), ColumnStats { mean: mean(&xs), std: std_dev(&xs, 1), min: lo, max: hi });
            if let Some(existing) = table.encoders.get(&name) {
                // already encoded by an earlier pass
                encoders.insert(name.clone(), existing.clone());
            }
            col
        } else {
            let mut order: Vec<String> = Vec::new();
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for c in &present {
                let l = label(c);
                if !counts.contains_key(&l) {
                    order.push(l.clone());
                }
                *counts.entry(l).or_default() += 1;
            }
            // mode, ties broken by first occurrence
            let mode = order.iter().max_by(|a, b| counts[*a].cmp(&counts[*b]).then(core::cmp::Ordering::Greater)).cloned();
            let mode = mode.unwrap_or_default();
            let code: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
            let col = cells
                .iter()
                .map(|c| {
                    let l = if is_missing(c) {
                        filled += 1;
                        mode.clone()
                    } else {
                        label(c)
                    };
                    Cell::Num(code[l.as_str()] as f64)
                })
                .collect();
            encodings.insert(name.clone(), order.len());
            encoders.insert(name.clone(), order);
            col
        };
        if filled > 0 {
            imputed_cells.insert(name.clone(), filled);
        }
        out_cols.push(name);
        out_data.push(column);
    }

    let n = rows.len();
    let out_rows: Vec<Vec<Cell>> = (0..n).map(|i| out_data.iter().map(|c| c[i].clone()).collect()).collect();
    let mut out = DataTable::new(out_cols.clone(), out_rows).expect("rectangular by construction");
    out.encoders = encoders;
    let enriched = describe_variables(catalog, &out_cols)
        .into_iter()
        .filter(|(k, _)| catalog.contains(k))
        .collect();
    let summary = PreprocessSummary {
        rows_in,
        rows_out: n,
        cols_in,
        cols_out: out_cols.len(),
        imputed_cells,
        encodings,
        enriched,
        dropped_columns,
        stats,
    };
    Ok((out, summary))
}

/// Catalog descriptions for `names`; unknown or undescribed names get the
/// fixed placeholder.
pub fn describe_variables<S: AsRef<str>>(catalog: &VariableCatalog, names: &[S]) -> BTreeMap<String, String> {
    names
        .iter()
        .map(|n| {
            let n = n.as_ref();
            let d = catalog
                .get(n)
                .map(|v| v.description.clone())
                .filter(|d| !d.is_empty())
                .unwrap_or_else(|| NO_DESCRIPTION.to_string());
            (n.to_string(), d)
        })
        .collect()
}

fn rec(cap: Capability, rationale: impl Into<String>, auto_chain: bool, params: Value) -> Recommendation {
    Recommendation { suggested_capability: cap, rationale: rationale.into(), auto_chain, params }
}

/// Fixed rule table for the next step after `last_capability`. Unknown
/// capabilities yield no suggestions; at most three are returned.
pub fn recommend_next(last_capability: &str, last_output: &Value, filled: &BTreeSet<Slot>) -> Vec<Recommendation> {
    let Some(cap) = Capability::parse(last_capability) else { return Vec::new() };
    let mut out = Vec::new();
    match cap {
        Capability::Preprocessing => {
            out.push(rec(Capability::Anomaly, "data is clean; screen it for anomalies", false, json!({})));
        }
        Capability::Anomaly => {
            let status = lookup(last_output, "status").and_then(Value::as_str).unwrap_or(NORMAL);
            if status == NORMAL {
                out.push(rec(
                    Capability::Recommend,
                    "status Normal; archive the report",
                    false,
                    json!({"action": "archive_report"}),
                ));
            } else {
                let mut params = json!({});
                if let Some(p) = lookup(last_output, "rca_payload") {
                    params = p.clone();
                }
                out.push(rec(Capability::Rca, format!("status {status}; trace the root cause"), true, params));
                if !filled.contains(&Slot::Causal) {
                    out.push(rec(Capability::Causal, "no causal graph yet; discover one", false, json!({})));
                }
            }
        }
        Capability::Causal => {
            if filled.contains(&Slot::Anomaly) {
                out.push(rec(Capability::Rca, "graph and anomaly available; run root-cause analysis", false, json!({})));
            }
        }
        Capability::Rca => {
            if let Some(top) = lookup(last_output, "ranked_causes.0.variable").and_then(Value::as_str) {
                out.push(rec(
                    Capability::BackgroundInfo,
                    format!("inspect top-ranked variable {top}"),
                    false,
                    json!({"variable": top}),
                ));
            }
        }
        Capability::BackgroundInfo | Capability::Recommend => {}
    }
    out.truncate(MAX_RECOMMENDATIONS);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(cols: &[&str], rows: Vec<Vec<Cell>>) -> DataTable {
        DataTable::new(cols.iter().map(|s| String::from(*s)).collect(), rows).unwrap()
    }

    #[test]
    fn drops_empty_column() {
        let table = t(
            &["a", "b", "c"],
            vec![
                vec![Cell::Num(1.0), Cell::Missing, Cell::Num(2.0)],
                vec![Cell::Num(3.0), Cell::Missing, Cell::Num(4.0)],
            ],
        );
        let (out, s) = preprocess(&table, &VariableCatalog::default()).unwrap();
        assert_eq!(s.cols_out, s.cols_in - 1);
        assert_eq!(out.columns(), &["a".to_string(), "c".to_string()]);
        assert_eq!(s.dropped_columns, vec!["b"]);
    }

    #[test]
    fn categorical_encoding_with_mode_imputation() {
        let table = t(
            &["x", "y"],
            ["a", "b", "a", ""].iter().enumerate().map(|(i, l)| vec![Cell::parse(l), Cell::Num(i as f64)]).collect(),
        );
        let (out, s) = preprocess(&table, &VariableCatalog::default()).unwrap();
        let codes: Vec<f64> = out.column(0).map(|c| c.as_f64().unwrap()).collect();
        assert_eq!(codes, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(out.encoders["x"], vec!["a", "b"]);
        assert_eq!(s.imputed_cells["x"], 1);
        assert_eq!(out.decode("x", 1.0), Some("b"));
    }

    #[test]
    fn clean_numeric_is_identity() {
        let table = t(&["a", "b"], vec![vec![Cell::Num(1.0), Cell::Num(2.0)], vec![Cell::Num(3.0), Cell::Num(4.5)]]);
        let (out, s) = preprocess(&table, &VariableCatalog::default()).unwrap();
        assert_eq!(out, table);
        assert_eq!(s.total_imputed(), 0);
    }

    #[test]
    fn all_empty_rows_is_error() {
        let table = t(&["a"], vec![vec![Cell::Missing], vec![Cell::Missing]]);
        assert_eq!(preprocess(&table, &VariableCatalog::default()), Err(PrepError::EmptyDataset));
    }

    #[test]
    fn numeric_share_threshold() {
        // 9 of 10 parse: numeric, the stray label becomes a median fill
        let mut rows: Vec<Vec<Cell>> = (0..9).map(|i| vec![Cell::Num(i as f64)]).collect();
        rows.push(vec![Cell::parse("oops")]);
        let (out, s) = preprocess(&t(&["a"], rows), &VariableCatalog::default()).unwrap();
        assert!(s.encodings.is_empty());
        assert_eq!(out.rows()[9][0], Cell::Num(4.0));
        // 8 of 10: categorical
        let mut rows: Vec<Vec<Cell>> = (0..8).map(|i| vec![Cell::Num(i as f64)]).collect();
        rows.push(vec![Cell::parse("x")]);
        rows.push(vec![Cell::parse("y")]);
        let (_, s) = preprocess(&t(&["a"], rows), &VariableCatalog::default()).unwrap();
        assert_eq!(s.encodings["a"], 10);
    }

    #[test]
    fn describe_lookup() {
        assert!(describe_variables::<&str>(&VariableCatalog::default(), &[]).is_empty());
        assert_eq!(describe_variables(&VariableCatalog::default(), &["Unknown_Var"])["Unknown_Var"], NO_DESCRIPTION);
    }

    #[test]
    fn recommender_rules() {
        let none = BTreeSet::new();
        let r = recommend_next("anomaly", &json!({"status": "StageShift"}), &none);
        assert_eq!(r[0].suggested_capability, Capability::Rca);
        assert!(r[0].auto_chain);
        assert_eq!(r[1].suggested_capability, Capability::Causal);
        let with_causal: BTreeSet<Slot> = [Slot::Causal].into_iter().collect();
        assert_eq!(recommend_next("anomaly", &json!({"status": "StageShift"}), &with_causal).len(), 1);
        let normal = recommend_next("anomaly", &json!({"status": "Normal"}), &none);
        assert!(normal.iter().all(|r| r.suggested_capability != Capability::Rca));
        assert_eq!(normal[0].params["action"], "archive_report");
        assert_eq!(recommend_next("preprocessing", &json!({}), &none)[0].suggested_capability, Capability::Anomaly);
        assert!(recommend_next("causal", &json!({}), &none).is_empty());
        let rca = recommend_next("rca", &json!({"ranked_causes": [{"variable": "SetAngle_3"}]}), &none);
        assert!(rca[0].rationale.contains("SetAngle_3"));
        assert!(recommend_next("teleport", &json!({}), &none).is_empty());
    }
}
