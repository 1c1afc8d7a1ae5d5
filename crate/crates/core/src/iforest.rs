//! Isolation forest for unsupervised anomaly scoring on numeric rows.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::NumericData;

const EULER_GAMMA: f64 = 0.5772156649;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForestError {
    #[error("need at least 2 rows to fit, got {0}")]
    InsufficientData(usize),
    #[error("forest needs at least one tree")]
    NoTrees,
    #[error("row has {found} values, model expects {expected}")]
    ArityMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IsoNode {
    Leaf {
        size: usize,
    },
    Split {
        feature: usize,
        value: f64,
        left: Box<IsoNode>,
        right: Box<IsoNode>,
    },
}

impl IsoNode {
    fn height(&self) -> usize {
        match self {
            IsoNode::Leaf { .. } => 0,
            IsoNode::Split { left, right, .. } => 1 + left.height().max(right.height()),
        }
    }

    fn path_length(&self, row: &[f64]) -> f64 {
        let mut node = self;
        let mut depth = 0.0;
        loop {
            match node {
                IsoNode::Leaf { size } => return depth + average_path_length(*size),
                IsoNode::Split { feature, value, left, right } => {
                    node = if row[*feature] < *value { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points: `2(ln(n−1)+γ) − 2(n−1)/n`, with c(2)=1 and c(1)=c(0)=0.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * (libm::log(n - 1.0) + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

pub fn height_limit(psi: usize) -> usize {
    if psi <= 1 {
        0
    } else {
        // ceil(log2 psi) without floating point
        (usize::BITS - (psi - 1).leading_zeros()) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<IsoNode>,
    /// Effective subsample size, `min(psi, N)`.
    pub psi: usize,
    pub n_features: usize,
    pub seed: u64,
}

fn build(rows: &[&[f64]], n_features: usize, depth: usize, limit: usize, rng: &mut ChaCha8Rng) -> IsoNode {
    if depth >= limit || rows.len() <= 1 {
        return IsoNode::Leaf { size: rows.len() };
    }
    // a feature that is constant on this node cannot split it; redraw a few times
    for _ in 0..n_features.max(1) {
        let feature = rng.random_range(0..n_features);
        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[feature]), hi.max(r[feature])));
        if !(hi > lo) {
            continue;
        }
        let value = rng.random_range(lo..hi);
        let (left, right): (Vec<&[f64]>, Vec<&[f64]>) = rows.iter().partition(|r| r[feature] < value);
        if left.is_empty() || right.is_empty() {
            continue;
        }
        return IsoNode::Split {
            feature,
            value,
            left: Box::new(build(&left, n_features, depth + 1, limit, rng)),
            right: Box::new(build(&right, n_features, depth + 1, limit, rng)),
        };
    }
    IsoNode::Leaf { size: rows.len() }
}

impl IsolationForest {
    /// Fits `trees` trees, each on a uniform subsample (without replacement)
    /// of `min(psi, N)` rows.
    pub fn fit(data: &NumericData, trees: usize, psi: usize, seed: u64) -> Result<Self, ForestError> {
        let n = data.n_rows();
        if n < 2 {
            return Err(ForestError::InsufficientData(n));
        }
        if trees == 0 {
            return Err(ForestError::NoTrees);
        }
        let psi = psi.clamp(2, n);
        let limit = height_limit(psi);
        let m = data.n_cols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(trees);
        for _ in 0..trees {
            let picked = index::sample(&mut rng, n, psi);
            let rows: Vec<Vec<f64>> = picked.iter().map(|i| data.row(i)).collect();
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            out.push(build(&refs, m, 0, limit, &mut rng));
        }
        Ok(Self { trees: out, psi, n_features: m, seed })
    }

    pub fn max_height(&self) -> usize {
        self.trees.iter().map(IsoNode::height).max().unwrap_or(0)
    }

    pub fn mean_path_length(&self, row: &[f64]) -> Result<f64, ForestError> {
        if row.len() != self.n_features {
            return Err(ForestError::ArityMismatch { expected: self.n_features, found: row.len() });
        }
        Ok(self.trees.iter().map(|t| t.path_length(row)).sum::<f64>() / self.trees.len() as f64)
    }

    /// `2^(−E[h]/c(psi))`: near 1 for easily isolated rows, about 0.5 for
    /// typical ones.
    pub fn score(&self, row: &[f64]) -> Result<f64, ForestError> {
        let h = self.mean_path_length(row)?;
        Ok(score_from_path_length(h, self.psi))
    }

    pub fn score_all(&self, data: &NumericData) -> Result<Vec<f64>, ForestError> {
        (0..data.n_rows()).map(|i| self.score(&data.row(i))).collect()
    }
}

pub fn score_from_path_length(mean_h: f64, psi: usize) -> f64 {
    let c = average_path_length(psi);
    if c <= 0.0 {
        return 0.5;
    }
    libm::pow(2.0, -mean_h / c)
}
