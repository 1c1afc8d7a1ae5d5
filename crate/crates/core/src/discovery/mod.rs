//! Knowledge-constrained causal structure learning.

pub mod ci;
pub mod ges;
pub mod pc;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{CausalGraph, NumericData, RuleSet, VariableCatalog};
use crate::rules::{stage_cmp, Admissibility, RulesError};

pub use ci::{critical_value, fisher_z_statistic, fisher_z_test, partial_correlation, CITestResult};
pub use ges::{bic_local, ges_learn, BicScorer, GesOutput, LocalScore};
pub use pc::{pc_learn, pc_skeleton, PcOptions, Skeleton};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiscoveryError {
    #[error("insufficient data: {n} rows, need at least {needed}")]
    InsufficientData { n: usize, needed: usize },
    #[error("conditioning set is singular")]
    SingularCondSet,
    #[error("column {0:?} not present in data")]
    UnknownColumn(String),
    #[error(transparent)]
    Rules(#[from] RulesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AlgorithmChoice {
    #[default]
    Auto,
    #[serde(rename = "PC", alias = "pc")]
    Pc,
    #[serde(rename = "GES", alias = "ges")]
    Ges,
}

/// Column slices in the order of `adm.names()`.
pub(crate) fn columns_for<'a>(data: &'a NumericData, adm: &Admissibility) -> Result<Vec<&'a [f64]>, DiscoveryError> {
    adm.names()
        .iter()
        .map(|n| data.index(n).map(|j| data.column(j)).ok_or_else(|| DiscoveryError::UnknownColumn(n.clone())))
        .collect()
}

/// Runs the selected learner over all columns of `data`, constrained by the
/// catalog and rules. `Auto` picks GES when every column is staged in the
/// catalog and PC otherwise.
pub fn discover(
    data: &NumericData,
    catalog: &VariableCatalog,
    rules: &RuleSet,
    algorithm: AlgorithmChoice,
) -> Result<CausalGraph, DiscoveryError> {
    let mut names: Vec<String> = data.names().to_vec();
    names.sort_by(|a, b| stage_cmp(catalog, a, b));
    let adm = Admissibility::from_rules(&names, catalog, rules)?;
    let staged = names.iter().all(|n| catalog.get(n).is_some_and(|v| v.stage > 0));
    let pick = match algorithm {
        AlgorithmChoice::Auto if staged => AlgorithmChoice::Ges,
        AlgorithmChoice::Auto => AlgorithmChoice::Pc,
        other => other,
    };
    let mut graph = match pick {
        AlgorithmChoice::Ges => ges_learn(data, &adm)?.graph,
        _ => pc_learn(data, &adm, PcOptions::default())?,
    };
    graph.constrained = true;
    Ok(graph)
}

/// Edge marks of a partially directed graph: `arrow[i][j]` means the
/// edge between i and j may point into j. Both set means undirected.
#[derive(Debug, Clone)]
pub(crate) struct Marks {
    arrow: Vec<Vec<bool>>,
}

impl Marks {
    pub(crate) fn from_adjacency(adj: &[Vec<bool>]) -> Self {
        Self { arrow: adj.to_vec() }
    }

    fn len(&self) -> usize {
        self.arrow.len()
    }

    pub(crate) fn adjacent(&self, i: usize, j: usize) -> bool {
        self.arrow[i][j] || self.arrow[j][i]
    }

    pub(crate) fn is_directed(&self, i: usize, j: usize) -> bool {
        self.arrow[i][j] && !self.arrow[j][i]
    }

    pub(crate) fn is_undirected(&self, i: usize, j: usize) -> bool {
        self.arrow[i][j] && self.arrow[j][i]
    }

    pub(crate) fn orient(&mut self, i: usize, j: usize) {
        self.arrow[i][j] = true;
        self.arrow[j][i] = false;
    }

    fn remove(&mut self, i: usize, j: usize) {
        self.arrow[i][j] = false;
        self.arrow[j][i] = false;
    }
}

pub(crate) mod orient {
    use super::*;

    /// Undirected edges with exactly one admissible direction take it.
    pub(crate) fn forced(marks: &mut Marks, adm: &Admissibility) {
        let m = marks.len();
        for i in 0..m {
            for j in i + 1..m {
                if !marks.is_undirected(i, j) {
                    continue;
                }
                match (adm.allows(i, j), adm.allows(j, i)) {
                    (true, false) => marks.orient(i, j),
                    (false, true) => marks.orient(j, i),
                    _ => {}
                }
            }
        }
    }

    /// Meek rules R1–R3 to closure, each applied only when the resulting
    /// direction is admissible.
    pub(crate) fn meek(marks: &mut Marks, adm: &Admissibility) {
        let m = marks.len();
        loop {
            let mut changed = false;
            for b in 0..m {
                for c in 0..m {
                    if b == c || !marks.is_undirected(b, c) || !adm.allows(b, c) {
                        continue;
                    }
                    // R1: a -> b - c, a and c not adjacent
                    let r1 = (0..m).any(|a| a != c && marks.is_directed(a, b) && !marks.adjacent(a, c));
                    // R2: b -> a -> c
                    let r2 = (0..m).any(|a| marks.is_directed(b, a) && marks.is_directed(a, c));
                    // R3: b - x, b - y, x -> c, y -> c, x and y not adjacent
                    let r3 = {
                        let xs: Vec<usize> = (0..m)
                            .filter(|&x| x != c && marks.is_undirected(b, x) && marks.is_directed(x, c))
                            .collect();
                        xs.iter().enumerate().any(|(k, &x)| xs[k + 1..].iter().any(|&y| !marks.adjacent(x, y)))
                    };
                    if r1 || r2 || r3 {
                        marks.orient(b, c);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    pub(crate) fn drop_inadmissible(marks: &mut Marks, adm: &Admissibility) {
        let m = marks.len();
        for i in 0..m {
            for j in 0..m {
                if marks.is_directed(i, j) && !adm.allows(i, j) {
                    marks.remove(i, j);
                }
            }
        }
    }

    /// Only reachable when the admissible space itself has cycles (custom
    /// rules or unstaged variables): directed edges that would close a
    /// cycle are downgraded to undirected.
    pub(crate) fn break_cycles(marks: &mut Marks) {
        let m = marks.len();
        let mut kept = vec![vec![false; m]; m];
        for i in 0..m {
            for j in 0..m {
                if !marks.is_directed(i, j) {
                    continue;
                }
                if reaches(&kept, j, i) {
                    marks.arrow[j][i] = true;
                } else {
                    kept[i][j] = true;
                }
            }
        }
    }

    pub(crate) fn reaches(adj: &[Vec<bool>], from: usize, to: usize) -> bool {
        let m = adj.len();
        let mut seen = vec![false; m];
        let mut stack = vec![from];
        while let Some(x) = stack.pop() {
            if x == to {
                return true;
            }
            if core::mem::replace(&mut seen[x], true) {
                continue;
            }
            stack.extend((0..m).filter(|&y| adj[x][y] && !seen[y]));
        }
        false
    }
}
