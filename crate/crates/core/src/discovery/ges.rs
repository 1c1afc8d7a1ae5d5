//! Score-based structure learning: BIC-scored two-phase greedy search over
//! DAGs whose edges are all admissible.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::orient::reaches;
use super::{columns_for, DiscoveryError};
use crate::domain::{Algorithm, CausalGraph, GraphEdge, NumericData};
use crate::rules::Admissibility;
use crate::stats::covariance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalScore {
    pub score: f64,
    /// Parents were collinear; the fit used a pseudo-inverse.
    pub collinear: bool,
}

/// Gaussian BIC of single-node regressions, computed from a precomputed
/// covariance matrix so each evaluation is a small solve.
#[derive(Debug, Clone)]
pub struct BicScorer {
    cov: DMatrix<f64>,
    n: usize,
}

impl BicScorer {
    pub fn from_columns(columns: &[&[f64]]) -> Self {
        let n = columns.first().map_or(0, |c| c.len());
        let (_, cov) = covariance(columns);
        Self { cov, n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `−(n/2)·ln(RSS/n) − ((|parents|+2)/2)·ln n` for the least-squares fit
    /// of `node` on `parents` plus intercept.
    pub fn local(&self, node: usize, parents: &[usize]) -> LocalScore {
        let n = self.n as f64;
        let var = self.cov[(node, node)];
        let (rss_n, collinear) = if parents.is_empty() {
            (var, false)
        } else {
            let k = parents.len();
            let sxx = DMatrix::from_fn(k, k, |i, j| self.cov[(parents[i], parents[j])]);
            let sxy = DVector::from_fn(k, |i, _| self.cov[(parents[i], node)]);
            // pivots are compared to each parent's own variance so scale does not matter
            let ok = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
                (0..k).all(|i| { let p = c.l_dirty()[(i, i)]; p * p > 1e-10 * sxx[(i, i)] })
            };
            match sxx.clone().cholesky().filter(ok) {
                Some(ch) => (var - sxy.dot(&ch.solve(&sxy)), false),
                None => {
                    let beta = sxx
                        .pseudo_inverse(1e-10)
                        .map(|p| p * &sxy)
                        .unwrap_or_else(|_| DVector::zeros(k));
                    (var - sxy.dot(&beta), true)
                }
            }
        };
        // a perfect fit would send the log to -inf; keep it finite
        let rss_n = rss_n.max(var * 1e-12).max(1e-300);
        let score = -(n / 2.0) * libm::log(rss_n) - ((parents.len() as f64 + 2.0) / 2.0) * libm::log(n);
        LocalScore { score, collinear }
    }
}

/// `bic_local` for one node of a numeric table.
pub fn bic_local(data: &NumericData, node: &str, parents: &[&str]) -> Result<LocalScore, DiscoveryError> {
    let idx = |name: &str| data.index(name).ok_or_else(|| DiscoveryError::UnknownColumn(name.into()));
    let node = idx(node)?;
    let parents: Vec<usize> = parents.iter().map(|p| idx(p)).collect::<Result<_, _>>()?;
    if data.n_rows() < parents.len() + 3 {
        return Err(DiscoveryError::InsufficientData { n: data.n_rows(), needed: parents.len() + 3 });
    }
    let cols: Vec<&[f64]> = (0..data.n_cols()).map(|j| data.column(j)).collect();
    Ok(BicScorer::from_columns(&cols).local(node, &parents))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GesOutput {
    pub graph: CausalGraph,
    /// Total score after the empty start and after every accepted move.
    pub trajectory: Vec<f64>,
    /// Some local fit fell back to the pseudo-inverse.
    pub collinear: bool,
}

struct Search<'a> {
    scorer: BicScorer,
    adm: &'a Admissibility,
    parents: Vec<Vec<usize>>,
    local: Vec<f64>,
    cache: BTreeMap<(usize, Vec<usize>), f64>,
    collinear: bool,
}

impl Search<'_> {
    fn score(&mut self, node: usize, parents: &[usize]) -> f64 {
        let mut key = parents.to_vec();
        key.sort_unstable();
        if let Some(&s) = self.cache.get(&(node, key.clone())) {
            return s;
        }
        let ls = self.scorer.local(node, &key);
        self.collinear |= ls.collinear;
        self.cache.insert((node, key), ls.score);
        ls.score
    }

    fn adjacency(&self) -> Vec<Vec<bool>> {
        let m = self.parents.len();
        let mut adj = vec![vec![false; m]; m];
        for (j, ps) in self.parents.iter().enumerate() {
            for &i in ps {
                adj[i][j] = true;
            }
        }
        adj
    }

    fn total(&self) -> f64 {
        self.local.iter().sum()
    }
}

/// Greedy forward additions then backward deletions, each time taking the
/// move with the largest strictly positive gain. Candidates are visited in
/// the order of `adm.names()`, which breaks ties deterministically.
pub fn ges_learn(data: &NumericData, adm: &Admissibility) -> Result<GesOutput, DiscoveryError> {
    let cols = columns_for(data, adm)?;
    let m = adm.len();
    if m >= 2 && data.n_rows() < 4 {
        return Err(DiscoveryError::InsufficientData { n: data.n_rows(), needed: 4 });
    }
    let mut s = Search {
        scorer: BicScorer::from_columns(&cols),
        adm,
        parents: vec![Vec::new(); m],
        local: vec![0.0; m],
        cache: BTreeMap::new(),
        collinear: false,
    };
    for j in 0..m {
        s.local[j] = s.score(j, &[]);
    }
    let mut stats: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut trajectory = vec![s.total()];

    loop {
        let adj = s.adjacency();
        let mut best: Option<(f64, usize, usize, f64)> = None;
        for i in 0..m {
            for j in 0..m {
                if !s.adm.allows(i, j) || adj[i][j] || adj[j][i] {
                    continue;
                }
                if s.parents[j].len() + 3 > data.n_rows() {
                    continue;
                }
                let mut ps = s.parents[j].clone();
                ps.push(i);
                let new = s.score(j, &ps);
                let gain = new - s.local[j];
                if gain > 0.0 && best.is_none_or(|b| gain > b.0) && !reaches(&adj, j, i) {
                    best = Some((gain, i, j, new));
                }
            }
        }
        let Some((gain, i, j, new)) = best else { break };
        s.parents[j].push(i);
        s.local[j] = new;
        stats.insert((i, j), gain);
        trajectory.push(s.total());
    }

    loop {
        let mut best: Option<(f64, usize, usize, f64)> = None;
        for j in 0..m {
            for (k, &i) in s.parents[j].clone().iter().enumerate() {
                let mut ps = s.parents[j].clone();
                ps.remove(k);
                let new = s.score(j, &ps);
                let gain = new - s.local[j];
                if gain > 0.0 && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, i, j, new));
                }
            }
        }
        let Some((_, i, j, new)) = best else { break };
        s.parents[j].retain(|&p| p != i);
        s.local[j] = new;
        stats.remove(&(i, j));
        trajectory.push(s.total());
    }

    let names = adm.names();
    let mut graph = CausalGraph::empty(names.to_vec(), Algorithm::Ges);
    graph.constrained = true;
    for ((i, j), stat) in stats {
        graph.edges.push(GraphEdge { src: names[i].clone(), dst: names[j].clone(), directed: true, stat });
    }
    Ok(GesOutput { graph, trajectory, collinear: s.collinear })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| String::from(*s)).collect()
    }

    #[test]
    fn empty_parent_set_specialization() {
        let x = [1.0, 2.0, 4.0, 7.0, 11.0];
        let data = NumericData::new(names(&["x"]), vec![x.to_vec()]).unwrap();
        let n = 5.0f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let want = -(n / 2.0) * var.ln() - n.ln();
        let got = bic_local(&data, "x", &[]).unwrap();
        assert!((got.score - want).abs() < 1e-12);
        assert!(!got.collinear);
    }

    #[test]
    fn collinear_parents_are_flagged() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let y: Vec<f64> = a.iter().map(|v| v * v).collect();
        let data = NumericData::new(names(&["a", "b", "y"]), vec![a, b, y]).unwrap();
        let s = bic_local(&data, "y", &["a", "b"]).unwrap();
        assert!(s.collinear);
        assert!(s.score.is_finite());
    }
}
