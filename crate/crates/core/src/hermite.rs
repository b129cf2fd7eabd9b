//! Orthonormal probabilist Hermite polynomials.
//!
//! `h_k` is normalized so that `E[h_j(x) h_k(x)] = δ_jk` for `x ~ N(0, 1)`,
//! and satisfies `√(k+1) h_{k+1}(x) = x h_k(x) − √k h_{k−1}(x)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor_index::ln_binomial;

/// Evaluator for `h_0, …, h_n` with a fixed maximal degree.
#[derive(Clone, Debug)]
pub struct HermiteEval {
    max_degree: usize,
}

impl HermiteEval {
    pub fn new(max_degree: usize) -> Self {
        HermiteEval { max_degree }
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// `h_k(x)`.
    pub fn eval(&self, k: usize, x: f64) -> Result<f64> {
        if k > self.max_degree {
            return Err(Error::DegreeOutOfRange(k, self.max_degree));
        }
        let mut buf = vec![0.0; k + 1];
        eval_all_into(x, &mut buf);
        Ok(buf[k])
    }

    /// `[h_0(x), …, h_n(x)]` with `n = max_degree`.
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        let mut buf = vec![0.0; self.max_degree + 1];
        eval_all_into(x, &mut buf);
        buf
    }
}

/// Fills `out[k] = h_k(x)` for `k < out.len()` by upward recurrence.
pub fn eval_all_into(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len().saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
    }
}

/// `B(l, m, p)` such that `h_l h_m = Σ_p B(l,m,p) h_{l+m−2p}`.
///
/// `B(l,m,p) = √(C(l,p) C(m,p) C(l+m−2p, l−p))`.
pub fn product_coeffs(l: u32, m: u32) -> BTreeMap<u32, f64> {
    (0..=l.min(m))
        .map(|p| {
            let ln = ln_binomial(l, p) + ln_binomial(m, p) + ln_binomial(l + m - 2 * p, l - p);
            (p, (0.5 * ln).exp())
        })
        .collect()
}

/// `h_k' = √k h_{k−1}`, returned as `(k−1, √k)`; `(0, 0)` for `k = 0`.
pub fn derivative_shift(k: u32) -> (u32, f64) {
    if k == 0 {
        (0, 0.0)
    } else {
        (k - 1, (k as f64).sqrt())
    }
}

/// Gauss–Hermite rule for the standard Gaussian measure.
///
/// Nodes are the eigenvalues of the symmetric Jacobi matrix with
/// off-diagonals `√k`; weights are the squared first components of the
/// normalized eigenvectors. The rule is exact for polynomials of degree
/// `< 2n` and its weights sum to one.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Enforce the reflection symmetry of the rule exactly.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}
