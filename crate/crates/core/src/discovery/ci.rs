//! Gaussian conditional-independence testing via partial correlation.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DiscoveryError;
use crate::stats::normal_quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CITestResult {
    pub pair: (usize, usize),
    pub cond_set: Vec<usize>,
    pub r: f64,
    pub statistic: f64,
    pub independent: bool,
}

/// Partial correlation of `u` and `v` given `s`, read off the inverse of
/// the correlation submatrix over `{u, v} ∪ s`.
pub fn partial_correlation(corr: &DMatrix<f64>, u: usize, v: usize, s: &[usize]) -> Result<f64, DiscoveryError> {
    if s.is_empty() {
        return Ok(corr[(u, v)].clamp(-1.0, 1.0));
    }
    let mut idx = Vec::with_capacity(s.len() + 2);
    idx.push(u);
    idx.push(v);
    idx.extend_from_slice(s);
    let k = idx.len();
    let sub = DMatrix::from_fn(k, k, |i, j| corr[(idx[i], idx[j])]);
    let chol = sub.cholesky().ok_or(DiscoveryError::SingularCondSet)?;
    // a near-zero pivot means the conditioning set is (numerically) collinear
    let l = chol.l_dirty();
    if (0..k).any(|i| l[(i, i)] < 1e-7) {
        return Err(DiscoveryError::SingularCondSet);
    }
    let p = chol.inverse();
    let denom = libm::sqrt(p[(0, 0)] * p[(1, 1)]);
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(DiscoveryError::SingularCondSet);
    }
    Ok((-p[(0, 1)] / denom).clamp(-1.0, 1.0))
}

/// Fisher z statistic `sqrt(n-|S|-3)·|atanh r|`; infinite when |r| ≥ 1.
pub fn fisher_z_statistic(r: f64, n: usize, cond: usize) -> f64 {
    let dof = n as f64 - cond as f64 - 3.0;
    if dof <= 0.0 {
        return 0.0;
    }
    if libm::fabs(r) >= 1.0 {
        return f64::INFINITY;
    }
    libm::sqrt(dof) * libm::fabs(0.5 * libm::log((1.0 + r) / (1.0 - r)))
}

/// Two-sided critical value `Φ⁻¹(1 − α/2)`.
pub fn critical_value(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha / 2.0)
}

pub fn fisher_z_test(
    pair: (usize, usize),
    cond_set: &[usize],
    r: f64,
    n: usize,
    alpha: f64,
) -> Result<CITestResult, DiscoveryError> {
    if n < cond_set.len() + 4 {
        return Err(DiscoveryError::InsufficientData { n, needed: cond_set.len() + 4 });
    }
    let statistic = fisher_z_statistic(r, n, cond_set.len());
    Ok(CITestResult {
        pair,
        cond_set: cond_set.to_vec(),
        r,
        statistic,
        independent: statistic <= critical_value(alpha),
    })
}
