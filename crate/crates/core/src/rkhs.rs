//! The isotropic Hermite kernel `K(x, y) = Σ_β c_{|β|} H_β(x) H_β(y)`:
//! evaluation, random features and population ridge shrinkage.

use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_space::HermiteFunction;
use crate::hermite::eval_all_into;
use crate::tensor_index::{binomial, MultiIndex};

/// Default truncation degree.
pub const DEFAULT_K_MAX: usize = 64;

/// Constant in the decay bound `c_k ≤ C·(1+k)^{−(q+1)}`.
pub const DECAY_CONSTANT: f64 = 1e3;

/// Degree-indexed spectrum `c_0, …, c_{k_max}` with ridge parameter `mu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpectrum {
    q: usize,
    c: Vec<f64>,
    mu: f64,
}

impl KernelSpectrum {
    pub fn new(q: usize, c: Vec<f64>, mu: f64) -> Result<Self> {
        if q == 0 || c.is_empty() {
            return Err(Error::InvalidArgument(
                "need q ≥ 1 and a nonempty spectrum".into(),
            ));
        }
        if !(mu >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ridge parameter {mu} must be ≥ 0"
            )));
        }
        for (k, &ck) in c.iter().enumerate() {
            let bound = DECAY_CONSTANT * (1.0 + k as f64).powi(-(q as i32 + 1));
            if !(ck > 0.0) || ck > bound {
                return Err(Error::InvalidArgument(format!(
                    "c_{k} = {ck} outside (0, {bound}]"
                )));
            }
        }
        Ok(KernelSpectrum { q, c, mu })
    }

    /// `c_k = (1+k)^{−(q+2)}` for `k ≤ 64`.
    pub fn default_for(q: usize, mu: f64) -> Result<Self> {
        let c = (0..=DEFAULT_K_MAX)
            .map(|k| (1.0 + k as f64).powi(-(q as i32 + 2)))
            .collect();
        Self::new(q, c, mu)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn k_max(&self) -> usize {
        self.c.len() - 1
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Number of multi-indices of degree `k`, `C(k+q−1, k)`.
    pub fn shell_size(&self, k: usize) -> f64 {
        binomial((k + self.q - 1) as u32, k as u32)
    }

    /// `‖c‖₁ = Σ_β c_{|β|} = Σ_k C(k+q−1, k) c_k`.
    pub fn norm_l1(&self) -> f64 {
        self.c
            .iter()
            .enumerate()
            .map(|(k, &ck)| self.shell_size(k) * ck)
            .sum()
    }
}

/// A truncated kernel value with the magnitude of its highest shell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelValue {
    pub value: f64,
    pub last_shell: f64,
}

/// `Σ_{k ≤ k_max} c_k Σ_{|β|=k} H_β(x) H_β(y)`.
///
/// The inner shell sums are the coefficients of `∏ᵢ Σ_j h_j(xᵢ)h_j(yᵢ) tʲ`.
pub fn kernel_eval(spec: &KernelSpectrum, x: &[f64], y: &[f64]) -> Result<KernelValue> {
    let q = spec.q;
    for p in [x, y] {
        if p.len() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: p.len(),
            });
        }
    }
    let n = spec.k_max() + 1;
    let (mut hx, mut hy) = (vec![0.0; n], vec![0.0; n]);
    let mut shells = vec![0.0; n];
    shells[0] = 1.0;
    for i in 0..q {
        eval_all_into(x[i], &mut hx);
        eval_all_into(y[i], &mut hy);
        let mut next = vec![0.0; n];
        for (a, &sa) in shells.iter().enumerate() {
            if sa == 0.0 {
                continue;
            }
            for j in 0..n - a {
                next[a + j] += sa * hx[j] * hy[j];
            }
        }
        shells = next;
    }
    let terms: Vec<f64> = shells.iter().zip(&spec.c).map(|(s, c)| s * c).collect();
    Ok(KernelValue {
        value: terms.iter().sum(),
        last_shell: terms[n - 1].abs(),
    })
}

/// i.i.d. draws from `p(β) = c_{|β|}/‖c‖₁`: a degree with probability
/// `∝ C(k+q−1, k) c_k`, then a uniform composition of that degree.
pub fn sample_features(spec: &KernelSpectrum, n: usize, seed: u64) -> Result<Vec<MultiIndex>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one feature".into()));
    }
    let weights: Vec<f64> = spec
        .c
        .iter()
        .enumerate()
        .map(|(k, &c)| spec.shell_size(k) * c)
        .collect();
    let degree = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = spec.q;
    Ok((0..n)
        .map(|_| {
            let k = degree.sample(&mut rng);
            // Stars and bars: q−1 bar positions among k+q−1 slots.
            let mut bars = sample_indices(&mut rng, k + q - 1, q - 1).into_vec();
            bars.sort_unstable();
            let mut entries = Vec::with_capacity(q);
            let mut prev = 0usize;
            for (i, &b) in bars.iter().enumerate() {
                let start = if i == 0 { 0 } else { prev + 1 };
                entries.push((b - start) as u32);
                prev = b;
            }
            let start = if bars.is_empty() { 0 } else { prev + 1 };
            entries.push((k + q - 1 - start) as u32);
            MultiIndex::new(entries)
        })
        .collect())
}

/// `(‖c‖₁/n) Σᵢ H_{βᵢ}(x) H_{βᵢ}(y)` with its standard error.
pub fn random_feature_estimate(
    spec: &KernelSpectrum,
    features: &[MultiIndex],
    x: &[f64],
    y: &[f64],
) -> (f64, f64) {
    let n = spec.k_max() + 1;
    let table = |p: &[f64]| -> Vec<Vec<f64>> {
        p.iter()
            .map(|&v| {
                let mut h = vec![0.0; n];
                eval_all_into(v, &mut h);
                h
            })
            .collect()
    };
    let (tx, ty) = (table(x), table(y));
    let norm = spec.norm_l1();
    let vals: Vec<f64> = features
        .iter()
        .map(|b| {
            norm * b
                .entries()
                .iter()
                .enumerate()
                .map(|(i, &k)| tx[i][k as usize] * ty[i][k as usize])
                .product::<f64>()
        })
        .collect();
    let m = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / m;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    (mean, (var / m).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShrinkMode {
    /// `α_β ↦ α_β √(c/(c+μ))`.
    Target,
    /// `α_β ↦ α_β c/(c+μ)`.
    Link,
}

/// Multiplier applied to the degree-`k` shell.
pub fn shrink_multiplier(spec: &KernelSpectrum, k: usize, mode: ShrinkMode) -> f64 {
    let c = spec.c[k];
    let r = if spec.mu.is_infinite() {
        0.0
    } else {
        c / (c + spec.mu)
    };
    match mode {
        ShrinkMode::Target => r.sqrt(),
        ShrinkMode::Link => r,
    }
}

/// Degree-wise spectral shrinkage of `f`.
pub fn ridge_shrink(
    f: &HermiteFunction,
    spec: &KernelSpectrum,
    mode: ShrinkMode,
) -> Result<HermiteFunction> {
    if f.q() != spec.q {
        return Err(Error::DimensionMismatch {
            expected: spec.q,
            got: f.q(),
        });
    }
    if f.degree() as usize > spec.k_max() {
        return Err(Error::DegreeExceedsSpectrum(f.degree(), spec.k_max()));
    }
    Ok(f.map_coeffs(|b, a| a * shrink_multiplier(spec, b.degree() as usize, mode)))
}
