//! Path-based root-cause attribution over a linear-Gaussian SCM fitted on
//! a reference window.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{CausalGraph, NumericData, RankedCause, RcaPath, RcaReport, VariableCatalog};
use crate::prep::describe_variables;
use crate::rules::stage_cmp;
use crate::stats::{mean, std_dev};

pub const SIGMA_FLOOR: f64 = 1e-9;
pub const DEFAULT_MAX_PATH_LEN: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RcaError {
    #[error("graph has undirected edge {0} -- {1}; orient or drop it first")]
    UndirectedGraph(String, String),
    #[error("graph has a directed cycle")]
    CyclicGraph,
    #[error("column {0:?} missing from data")]
    MissingColumn(String),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("reference window has {n} rows; need at least {needed}")]
    InsufficientData { n: usize, needed: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub parents: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub residual_sigma: f64,
}

impl Mechanism {
    fn predict(&self, row: &BTreeMap<String, f64>) -> Result<f64, RcaError> {
        let mut y = self.intercept;
        for (p, c) in self.parents.iter().zip(&self.coefficients) {
            y += c * row.get(p).ok_or_else(|| RcaError::MissingColumn(p.clone()))?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScm {
    pub mechanisms: BTreeMap<String, Mechanism>,
    /// Marginal standard deviation of each node in the reference window.
    pub marginal_sigma: BTreeMap<String, f64>,
}

/// Least-squares fit of every graph node on its parents.
pub fn fit_scm(graph: &CausalGraph, reference: &NumericData) -> Result<LinearScm, RcaError> {
    if let Some(e) = graph.edges.iter().find(|e| !e.directed) {
        return Err(RcaError::UndirectedGraph(e.src.clone(), e.dst.clone()));
    }
    if !graph.is_acyclic() {
        return Err(RcaError::CyclicGraph);
    }
    let col = |name: &str| -> Result<&[f64], RcaError> {
        reference.index(name).map(|j| reference.column(j)).ok_or_else(|| RcaError::MissingColumn(name.into()))
    };
    let max_parents = graph.nodes.iter().map(|n| graph.parents(n).len()).max().unwrap_or(0);
    let needed = (10 * max_parents).max(2);
    if reference.n_rows() < needed {
        return Err(RcaError::InsufficientData { n: reference.n_rows(), needed });
    }
    let mut mechanisms = BTreeMap::new();
    let mut marginal_sigma = BTreeMap::new();
    for node in &graph.nodes {
        let y = col(node)?;
        let mut parents: Vec<String> = graph.parents(node).into_iter().map(String::from).collect();
        parents.sort();
        let xs: Vec<&[f64]> = parents.iter().map(|p| col(p)).collect::<Result<_, _>>()?;
        let (coefficients, intercept) = regress(y, &xs);
        let n = y.len();
        let ss: f64 = (0..n)
            .map(|i| {
                let pred = intercept + xs.iter().zip(&coefficients).map(|(x, c)| c * x[i]).sum::<f64>();
                (y[i] - pred) * (y[i] - pred)
            })
            .sum();
        let dof = n.saturating_sub(parents.len() + 1).max(1);
        let residual_sigma = libm::sqrt(ss / dof as f64).max(SIGMA_FLOOR);
        marginal_sigma.insert(node.clone(), std_dev(y, 1).max(SIGMA_FLOOR));
        mechanisms.insert(node.clone(), Mechanism { parents, coefficients, intercept, residual_sigma });
    }
    Ok(LinearScm { mechanisms, marginal_sigma })
}

fn regress(y: &[f64], xs: &[&[f64]]) -> (Vec<f64>, f64) {
    let my = mean(y);
    if xs.is_empty() {
        return (Vec::new(), my);
    }
    let k = xs.len();
    let mx: Vec<f64> = xs.iter().map(|x| mean(x)).collect();
    let n = y.len();
    let mut sxx = DMatrix::<f64>::zeros(k, k);
    let mut sxy = DVector::<f64>::zeros(k);
    for i in 0..n {
        for a in 0..k {
            let da = xs[a][i] - mx[a];
            sxy[a] += da * (y[i] - my);
            for b in a..k {
                sxx[(a, b)] += da * (xs[b][i] - mx[b]);
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            sxx[(a, b)] = sxx[(b, a)];
        }
    }
    let beta = match sxx.clone().cholesky() {
        Some(ch) => ch.solve(&sxy),
        None => sxx.pseudo_inverse(1e-10).map(|p| p * &sxy).unwrap_or_else(|_| DVector::zeros(k)),
    };
    let intercept = my - beta.iter().zip(&mx).map(|(b, m)| b * m).sum::<f64>();
    (beta.iter().copied().collect(), intercept)
}

/// `|x − prediction| / residual_sigma` for every node of the SCM.
pub fn node_deviation(scm: &LinearScm, row: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>, RcaError> {
    scm.mechanisms
        .iter()
        .map(|(node, m)| {
            let x = row.get(node).ok_or_else(|| RcaError::MissingColumn(node.clone()))?;
            Ok((node.clone(), libm::fabs(x - m.predict(row)?) / m.residual_sigma))
        })
        .collect()
}

/// All directed paths of at most `max_len` nodes ending at `target`, from
/// any ancestor. Ordered by length, then head in stage order, then
/// lexicographically. The trivial path `[target]` is not included.
pub fn enumerate_paths(
    graph: &CausalGraph,
    target: &str,
    max_len: usize,
    catalog: &VariableCatalog,
) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut stack: Vec<String> = alloc::vec![target.into()];
    fn walk(g: &CausalGraph, stack: &mut Vec<String>, max_len: usize, out: &mut Vec<Vec<String>>) {
        if stack.len() >= max_len {
            return;
        }
        let head = stack.last().expect("non-empty").clone();
        let mut ps = g.parents(&head);
        ps.sort();
        for p in ps {
            if stack.iter().any(|s| s == p) {
                continue;
            }
            stack.push(p.into());
            out.push(stack.iter().rev().cloned().collect());
            walk(g, stack, max_len, out);
            stack.pop();
        }
    }
    if graph.contains(target) {
        walk(graph, &mut stack, max_len, &mut out);
    }
    out.sort_by(|a: &Vec<String>, b: &Vec<String>| {
        a.len().cmp(&b.len()).then_with(|| stage_cmp(catalog, &a[0], &b[0])).then_with(|| a.cmp(b))
    });
    out
}

fn path_strength(scm: &LinearScm, path: &[String]) -> f64 {
    path.windows(2)
        .map(|w| {
            let (p, c) = (&w[0], &w[1]);
            let m = &scm.mechanisms[c];
            let coef = m.parents.iter().position(|x| x == p).map_or(0.0, |k| m.coefficients[k]);
            libm::fabs(coef * scm.marginal_sigma[p] / scm.marginal_sigma[c])
        })
        .product()
}

/// Ranks the target and its ancestors by structural × noise score.
pub fn score_causes(
    scm: &LinearScm,
    graph: &CausalGraph,
    row: &BTreeMap<String, f64>,
    target: &str,
    catalog: &VariableCatalog,
    max_len: usize,
) -> Result<RcaReport, RcaError> {
    if !graph.contains(target) || !scm.mechanisms.contains_key(target) {
        return Err(RcaError::UnknownVariable(target.into()));
    }
    let z = node_deviation(scm, row)?;
    let paths = enumerate_paths(graph, target, max_len.max(2), catalog);
    let mut structural: BTreeMap<String, f64> = BTreeMap::new();
    structural.insert(target.into(), 1.0);
    let mut scored_paths = Vec::with_capacity(paths.len() + 1);
    for p in &paths {
        let s = path_strength(scm, p);
        let e = structural.entry(p[0].clone()).or_insert(0.0);
        *e = e.max(s);
        scored_paths.push(RcaPath { nodes: p.clone(), score: s * z[&p[0]] });
    }
    scored_paths.push(RcaPath { nodes: alloc::vec![target.into()], score: z[target] });

    let mut candidates: Vec<String> = graph.ancestors(target).into_iter().collect();
    candidates.push(target.into());
    let descriptions = describe_variables(catalog, &candidates);
    let mut ranked: Vec<RankedCause> = candidates
        .into_iter()
        .map(|c| {
            let s = structural.get(&c).copied().unwrap_or(0.0);
            let noise = z[&c];
            RankedCause {
                description: descriptions[&c].clone(),
                combined_score: s * noise,
                noise_score: noise,
                structural_score: s,
                variable: c,
            }
        })
        .collect();
    ranked.sort_by(|a, b| match b.combined_score.total_cmp(&a.combined_score) {
        Ordering::Equal => stage_cmp(catalog, &a.variable, &b.variable),
        o => o,
    });
    Ok(RcaReport { target: target.into(), ranked_causes: ranked, paths: scored_paths })
}

/// Picks the RCA target: the first suggested variable present in the graph,
/// else the graph node whose event value deviates most from the reference
/// mean in units of its reference standard deviation.
pub fn choose_target(
    suggested: &[String],
    graph: &CausalGraph,
    row: &BTreeMap<String, f64>,
    reference: &NumericData,
) -> Option<String> {
    if let Some(t) = suggested.iter().find(|t| graph.contains(t)) {
        return Some(t.clone());
    }
    let mut best: Option<(f64, &String)> = None;
    for node in &graph.nodes {
        let (Some(j), Some(x)) = (reference.index(node), row.get(node)) else { continue };
        let col = reference.column(j);
        let sd = std_dev(col, 1);
        let z = if sd > 0.0 { libm::fabs(x - mean(col)) / sd } else { 0.0 };
        if best.is_none_or(|(bz, _)| z > bz) {
            best = Some((z, node));
        }
    }
    best.map(|(_, n)| n.clone())
}
