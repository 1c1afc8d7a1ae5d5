//! Constraint-based structure learning (PC-stable skeleton, rule-aware
//! orientation).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::ci::{critical_value, fisher_z_statistic, partial_correlation};
use super::{orient, DiscoveryError, Marks};
use crate::domain::{Algorithm, CausalGraph, GraphEdge, NumericData};
use crate::rules::Admissibility;
use crate::stats::correlation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcOptions {
    pub alpha: f64,
    pub max_cond: usize,
}

impl Default for PcOptions {
    fn default() -> Self {
        Self { alpha: 0.05, max_cond: 3 }
    }
}

/// Result of the adjacency phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub adjacent: Vec<Vec<bool>>,
    /// Separating set for each removed pair `(i, j)` with `i < j`.
    pub sepsets: BTreeMap<(usize, usize), Vec<usize>>,
    /// Smallest CI statistic seen for each tested pair.
    pub min_stat: BTreeMap<(usize, usize), f64>,
}

impl Skeleton {
    pub fn removed(&self) -> BTreeSet<(usize, usize)> {
        self.sepsets.keys().copied().collect()
    }

    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        let m = self.adjacent.len();
        let mut out = BTreeSet::new();
        for i in 0..m {
            for j in i + 1..m {
                if self.adjacent[i][j] {
                    out.insert((i, j));
                }
            }
        }
        out
    }
}

/// Lexicographic k-subsets of `items`.
fn for_each_subset(items: &[usize], k: usize, f: &mut impl FnMut(&[usize]) -> bool) {
    let n = items.len();
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut buf = vec![0; k];
    'outer: loop {
        for (b, &i) in buf.iter_mut().zip(&idx) {
            *b = items[i];
        }
        if f(&buf) {
            return;
        }
        let mut pos = k;
        while pos > 0 {
            pos -= 1;
            if idx[pos] < pos + n - k {
                idx[pos] += 1;
                for q in pos + 1..k {
                    idx[q] = idx[q - 1] + 1;
                }
                continue 'outer;
            }
        }
        return;
    }
}

/// PC-stable adjacency search: conditioning sets are drawn from the
/// adjacencies frozen at the start of each level, so the result does not
/// depend on the order in which pairs are visited.
pub fn pc_skeleton(corr: &DMatrix<f64>, n: usize, adm: &Admissibility, opts: PcOptions) -> Result<Skeleton, DiscoveryError> {
    let m = adm.len();
    let mut adjacent = vec![vec![false; m]; m];
    for i in 0..m {
        for j in 0..m {
            adjacent[i][j] = i != j && adm.allows_either(i, j);
        }
    }
    let mut sk = Skeleton { adjacent, sepsets: BTreeMap::new(), min_stat: BTreeMap::new() };
    if m < 2 {
        return Ok(sk);
    }
    if n < 4 {
        return Err(DiscoveryError::InsufficientData { n, needed: 4 });
    }
    let crit = critical_value(opts.alpha);
    for level in 0..=opts.max_cond {
        if n < level + 4 {
            break;
        }
        let frozen = sk.adjacent.clone();
        let neighbours = |x: usize, other: usize| -> Vec<usize> {
            (0..m).filter(|&k| k != other && frozen[x][k]).collect()
        };
        let mut any_testable = false;
        let mut removals = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                if !frozen[i][j] {
                    continue;
                }
                let mut found: Option<Vec<usize>> = None;
                for (a, b) in [(i, j), (j, i)] {
                    let cands = neighbours(a, b);
                    if cands.len() < level {
                        continue;
                    }
                    any_testable = true;
                    for_each_subset(&cands, level, &mut |s| {
                        let stat = match partial_correlation(corr, i, j, s) {
                            Ok(r) => fisher_z_statistic(r, n, s.len()),
                            // singular conditioning set counts as dependence
                            Err(_) => return false,
                        };
                        let e = sk.min_stat.entry((i, j)).or_insert(f64::INFINITY);
                        if stat < *e {
                            *e = stat;
                        }
                        if stat <= crit {
                            found = Some(s.to_vec());
                            true
                        } else {
                            false
                        }
                    });
                    if found.is_some() {
                        break;
                    }
                }
                if let Some(s) = found {
                    removals.push(((i, j), s));
                }
            }
        }
        for ((i, j), s) in removals {
            sk.adjacent[i][j] = false;
            sk.adjacent[j][i] = false;
            sk.sepsets.insert((i, j), s);
        }
        if !any_testable {
            break;
        }
    }
    Ok(sk)
}

fn sepset_contains(sk: &Skeleton, u: usize, v: usize, w: usize) -> bool {
    let key = if u < v { (u, v) } else { (v, u) };
    sk.sepsets.get(&key).is_some_and(|s| s.contains(&w))
}

/// Full PC: skeleton, v-structures, rule-forced orientations, Meek rules
/// R1–R3 (each applied only along admissible directions), then removal of
/// any inadmissible directed edge.
pub fn pc_learn(data: &NumericData, adm: &Admissibility, opts: PcOptions) -> Result<CausalGraph, DiscoveryError> {
    let cols = super::columns_for(data, adm)?;
    let corr = correlation(&cols);
    let n = data.n_rows();
    let sk = pc_skeleton(&corr, n, adm, opts)?;
    let m = adm.len();

    let mut marks = Marks::from_adjacency(&sk.adjacent);
    // v-structures u -> w <- v
    for w in 0..m {
        let nb: Vec<usize> = (0..m).filter(|&k| sk.adjacent[w][k]).collect();
        for (a, &u) in nb.iter().enumerate() {
            for &v in &nb[a + 1..] {
                if sk.adjacent[u][v] || sepset_contains(&sk, u, v, w) {
                    continue;
                }
                for x in [u, v] {
                    if adm.allows(x, w) && !marks.is_directed(w, x) {
                        marks.orient(x, w);
                    }
                }
            }
        }
    }
    orient::forced(&mut marks, adm);
    orient::meek(&mut marks, adm);
    orient::drop_inadmissible(&mut marks, adm);
    orient::break_cycles(&mut marks);

    let names = adm.names();
    let mut graph = CausalGraph::empty(names.to_vec(), Algorithm::Pc);
    graph.constrained = true;
    for i in 0..m {
        for j in 0..m {
            let stat = |a: usize, b: usize| sk.min_stat.get(&(a.min(b), a.max(b))).copied().unwrap_or(f64::INFINITY);
            if marks.is_directed(i, j) {
                graph.edges.push(GraphEdge { src: names[i].clone(), dst: names[j].clone(), directed: true, stat: stat(i, j) });
            } else if i < j && marks.is_undirected(i, j) {
                graph.edges.push(GraphEdge { src: names[i].clone(), dst: names[j].clone(), directed: false, stat: stat(i, j) });
            }
        }
    }
    Ok(graph)
}
