//! Root-cause ranking metrics and criterion success rates.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no queries")]
    NoQueries,
    #[error("{successes} successes out of {queries} queries")]
    TooManySuccesses { queries: usize, successes: usize },
}

/// Rounds to `decimals` places, ties to even.
pub fn round_half_even(x: f64, decimals: i32) -> f64 {
    let scale = libm::pow(10.0, decimals as f64);
    let scaled = x * scale;
    // snap values that sit within float noise of a tie onto the tie
    let frac = scaled - libm::floor(scaled);
    let snapped = if libm::fabs(frac - 0.5) < 1e-9 { libm::floor(scaled) + 0.5 } else { scaled };
    libm::rint(snapped) / scale
}

/// 1 when any true cause is among the first `k` ranked variables.
pub fn hits_at_k<S: AsRef<str>>(ranked: &[S], truth: &BTreeSet<String>, k: usize) -> Result<u8, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    Ok(ranked.iter().take(k).any(|v| truth.contains(v.as_ref())) as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn rounded(self, decimals: i32) -> Prf {
        Prf {
            precision: round_half_even(self.precision, decimals),
            recall: round_half_even(self.recall, decimals),
            f1: round_half_even(self.f1, decimals),
        }
    }
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub fn set_prf(pred: &BTreeSet<String>, truth: &BTreeSet<String>) -> Prf {
    let hit = pred.intersection(truth).count() as f64;
    let precision = if pred.is_empty() { 0.0 } else { hit / pred.len() as f64 };
    let recall = if truth.is_empty() { 0.0 } else { hit / truth.len() as f64 };
    Prf { precision, recall, f1: f1_score(precision, recall) }
}

/// `100·successes/queries` to one decimal.
pub fn criterion_success(queries: usize, successes: usize) -> Result<f64, MetricError> {
    if queries == 0 {
        return Err(MetricError::NoQueries);
    }
    if successes > queries {
        return Err(MetricError::TooManySuccesses { queries, successes });
    }
    Ok(round_half_even(100.0 * successes as f64 / queries as f64, 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDetail {
    pub event: String,
    pub ranked: Vec<String>,
    pub truth: BTreeSet<String>,
    pub hits: BTreeMap<usize, u8>,
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// k → share of events with a hit in the top k.
    pub hits: BTreeMap<usize, f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub events: Vec<EventDetail>,
}

impl MetricReport {
    /// Aggregates per-event metrics. The predicted set of an event is its
    /// top `pred_size` ranked variables. Precision, recall and F1 are
    /// averaged over events.
    pub fn from_events(
        events: &[(String, Vec<String>, BTreeSet<String>)],
        ks: &[usize],
        pred_size: usize,
    ) -> Result<Self, MetricError> {
        if ks.contains(&0) {
            return Err(MetricError::ZeroK);
        }
        let mut details = Vec::with_capacity(events.len());
        for (name, ranked, truth) in events {
            let hits = ks.iter().map(|&k| Ok((k, hits_at_k(ranked, truth, k)?))).collect::<Result<_, MetricError>>()?;
            let pred: BTreeSet<String> = ranked.iter().take(pred_size).cloned().collect();
            details.push(EventDetail {
                event: name.clone(),
                ranked: ranked.clone(),
                truth: truth.clone(),
                hits,
                prf: set_prf(&pred, truth),
            });
        }
        let n = details.len().max(1) as f64;
        let hits = ks
            .iter()
            .map(|&k| (k, details.iter().map(|d| d.hits[&k] as f64).sum::<f64>() / n))
            .collect();
        let avg = |f: fn(&Prf) -> f64| details.iter().map(|d| f(&d.prf)).sum::<f64>() / n;
        Ok(MetricReport {
            hits,
            precision: avg(|p| p.precision),
            recall: avg(|p| p.recall),
            f1: avg(|p| p.f1),
            events: details,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rounding_is_half_even() {
        assert_eq!(round_half_even(0.125, 2), 0.12);
        assert_eq!(round_half_even(0.135, 2), 0.14);
        assert_eq!(round_half_even(2.0 / 3.0, 2), 0.67);
        assert_eq!(round_half_even(1.0 / 3.0, 2), 0.33);
        assert_eq!(round_half_even(4.0 / 7.0, 2), 0.57);
    }

    #[test]
    fn hits_edge_cases() {
        assert_eq!(hits_at_k(&["a"], &BTreeSet::new(), 3), Ok(0));
        assert_eq!(hits_at_k(&["a"], &set(&["a"]), 0), Err(MetricError::ZeroK));
        assert_eq!(hits_at_k(&["b", "a"], &set(&["a"]), 10), Ok(1));
    }

    #[test]
    fn prf_edge_cases() {
        assert_eq!(set_prf(&set(&["X"]), &set(&["X"])), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(set_prf(&BTreeSet::new(), &set(&["X"])).f1, 0.0);
        assert_eq!(set_prf(&set(&["X"]), &BTreeSet::new()).recall, 0.0);
    }

    #[test]
    fn criterion_examples() {
        assert_eq!(criterion_success(20, 20), Ok(100.0));
        assert_eq!(criterion_success(50, 49), Ok(98.0));
        assert_eq!(criterion_success(1, 0), Ok(0.0));
        assert_eq!(criterion_success(3, 2), Ok(66.7));
        assert_eq!(criterion_success(0, 0), Err(MetricError::NoQueries));
    }

    #[test]
    fn report_aggregates() {
        let events = vec![
            ("e1".to_string(), vec!["a".to_string(), "b".to_string()], set(&["b"])),
            ("e2".to_string(), vec!["c".to_string(), "d".to_string()], set(&["c"])),
        ];
        let r = MetricReport::from_events(&events, &[1, 2], 1).unwrap();
        assert_eq!(r.hits[&1], 0.5);
        assert_eq!(r.hits[&2], 1.0);
        assert_eq!(r.precision, 0.5);
    }
}
