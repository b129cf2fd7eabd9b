//! Structural analysis of a target: intrinsic dimension, minimal energy,
//! relative information exponents and the leap cascade.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::frame::{qr_positive, Frame};
use crate::function_space::{
    adapted_coefficients, inner, partial_derivative, threshold, HermiteFunction,
};
use crate::landscape::{grassmann_grad_G, grassmann_loss, SummaryStatistics, Target};

/// Default relative tolerance for ranks and vanishing coefficients.
pub const STRUCTURE_TOL: f64 = 1e-9;

/// Random restarts used by [`minimal_energy`].
pub const ENERGY_RESTARTS: usize = 32;

/// `G_f[i, j] = ⟨∂ᵢf, ∂ⱼf⟩`.
pub fn gradient_gram(f: &HermiteFunction) -> DMatrix<f64> {
    let q = f.q();
    let d: Vec<HermiteFunction> = (0..q)
        .map(|i| partial_derivative(f, i).expect("index within range"))
        .collect();
    DMatrix::from_fn(q, q, |i, j| inner(&d[i], &d[j]).expect("same dimension"))
}

/// Rank of the gradient Gram matrix and the eigenvector frame spanning its range.
///
/// Columns are ordered by decreasing eigenvalue and each is signed so that
/// its largest-magnitude entry is positive.
pub fn intrinsic_dimension(f: &HermiteFunction, tol: f64) -> Result<(usize, Frame)> {
    if f.is_zero() {
        return Err(Error::ZeroFunction);
    }
    let q = f.q();
    let eig = SymmetricEigen::new(gradient_gram(f));
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = order.first().map_or(0.0, |&i| eig.eigenvalues[i]);
    if !top.is_finite() {
        return Err(Error::InvalidArgument(
            "gradient Gram matrix is not finite".into(),
        ));
    }
    if top <= 0.0 {
        return Ok((0, Frame::zero(q)));
    }
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > tol * top)
        .collect();
    let cols: Vec<_> = kept
        .iter()
        .map(|&i| {
            let c = eig.eigenvectors.column(i).into_owned();
            let big = c
                .iter()
                .fold(0.0f64, |m, &x| if x.abs() > m.abs() { x } else { m });
            if big < 0.0 {
                -c
            } else {
                c
            }
        })
        .collect();
    let frame = Frame::orthonormalize(&DMatrix::from_columns(&cols));
    Ok((kept.len(), frame))
}

/// `E_p(f) = ‖f‖² − sup_{W ∈ G(q,p)} ‖Π_W f‖²`.
///
/// The supremum is approached by Riemannian gradient ascent on the
/// Grassmannian with QR retraction and Armijo backtracking, from
/// [`ENERGY_RESTARTS`] Gaussian starts drawn from a fixed seed.
pub fn minimal_energy(f: &HermiteFunction, p: usize) -> Result<f64> {
    let q = f.q();
    if p > q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: p,
        });
    }
    let total = f.norm_sq();
    if p == 0 {
        return Ok((total - f.mean().powi(2)).max(0.0));
    }
    if p == q {
        return Ok(0.0);
    }
    let target = Target::Coefficients(f.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_e4e7);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..ENERGY_RESTARTS {
        let start = DMatrix::from_fn(q, p, |_, _| StandardNormal.sample(&mut rng));
        best = best.max(ascend_projection(&target, qr_positive(&start))?);
    }
    Ok((total - best).max(0.0))
}

/// `‖Π_W f‖² = ⟨A_{WWᵀ} f, f⟩` and its Riemannian gradient in `W`.
fn projection_energy(f: &Target, w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let s = SummaryStatistics::from_correlation(w.clone());
    let value = grassmann_loss(f, &s)?;
    let euclid = grassmann_grad_G(f, &s)? * w * 2.0;
    let riem = &euclid - w * (w.transpose() * &euclid);
    Ok((value, riem))
}

fn ascend_projection(f: &Target, mut w: DMatrix<f64>) -> Result<f64> {
    let (mut value, mut grad) = projection_energy(f, &w)?;
    let mut step = 1.0;
    for _ in 0..500 {
        let gn = grad.norm_squared();
        if gn < 1e-24 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let cand = qr_positive(&(&w + &grad * step));
            let (v, g) = projection_energy(f, &cand)?;
            if v >= value + 0.45 * step * gn {
                w = cand;
                value = v;
                grad = g;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(value)
}

/// `s(f; W) = min{|β|_I : ⟨f, H_β([W, W⊥])⟩ ≠ 0, |β|_I > 0}` where `I` indexes
/// the directions orthogonal to `W`. Zero when `f` depends only on `Wᵀx`.
pub fn relative_info_exponent(f: &HermiteFunction, w: &Frame, tol: f64) -> Result<u32> {
    if f.is_zero() {
        return Err(Error::ZeroFunction);
    }
    let p = w.rank();
    if p == f.q() {
        return Ok(0);
    }
    let cut = tol * f.norm();
    let adapted = adapted_coefficients(f, w)?;
    Ok(adapted
        .iter()
        .filter(|(_, c)| c.abs() > cut)
        .map(|(b, _)| b.tail_degree(p))
        .filter(|&t| t > 0)
        .min()
        .unwrap_or(0))
}

/// One fine-grained stage `(f_k, W_k, s_k, p_k)`.
#[derive(Clone, Debug)]
pub struct Stage {
    pub f: HermiteFunction,
    pub support: Frame,
    pub s: u32,
    pub p: usize,
}

/// One regrouped stage, with `b` the number of fine stages it absorbs.
#[derive(Clone, Debug)]
pub struct RegroupedStage {
    pub f: HermiteFunction,
    pub support: Frame,
    pub s: u32,
    pub p: usize,
    pub b: usize,
}

#[derive(Clone, Debug)]
pub struct CascadeReport {
    pub stages: Vec<Stage>,
    pub regrouped: Vec<RegroupedStage>,
    pub s_star: u32,
}

#[derive(Serialize)]
struct StageJson {
    s: u32,
    p: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<usize>,
    support_columns: Vec<Vec<f64>>,
    coeff_summary: Value,
}

fn stage_json(f: &HermiteFunction, w: &Frame, s: u32, p: usize, b: Option<usize>) -> StageJson {
    StageJson {
        s,
        p,
        b,
        support_columns: w
            .matrix()
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect(),
        coeff_summary: json!({
            "terms": f.len(),
            "degree": f.degree(),
            "norm_sq": f.norm_sq(),
        }),
    }
}

impl CascadeReport {
    pub fn fine_exponents(&self) -> Vec<u32> {
        self.stages.iter().map(|s| s.s).collect()
    }

    pub fn fine_dimensions(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.p).collect()
    }

    pub fn coarse_exponents(&self) -> Vec<u32> {
        self.regrouped.iter().map(|s| s.s).collect()
    }

    pub fn coarse_dimensions(&self) -> Vec<usize> {
        self.regrouped.iter().map(|s| s.p).collect()
    }

    pub fn cascade_counts(&self) -> Vec<usize> {
        self.regrouped.iter().map(|s| s.b).collect()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "stages": self.stages.iter().map(|s| stage_json(&s.f, &s.support, s.s, s.p, None)).collect::<Vec<_>>(),
            "regrouped": self.regrouped.iter().map(|s| stage_json(&s.f, &s.support, s.s, s.p, Some(s.b))).collect::<Vec<_>>(),
            "s_star": self.s_star,
        })
    }
}

/// Iterates `s_{k+1} = s(f; W_k)`, `f_{k+1} = S^{s_{k+1}}_{W_k} f`,
/// `W_{k+1} = supp f_{k+1}` until the support of `f` is exhausted, then
/// merges each stage whose exponent does not exceed the current group's.
///
/// Targets of deficient intrinsic dimension are analyzed inside their
/// support: the iteration stops once `p_k = d(f)`.
pub fn leap_decomposition(f: &HermiteFunction, tol: f64) -> Result<CascadeReport> {
    let (dim, _) = intrinsic_dimension(f, tol)?;
    let mut stages: Vec<Stage> = Vec::new();
    let mut w = Frame::zero(f.q());
    let mut p = 0usize;
    while p < dim {
        let s = relative_info_exponent(f, &w, tol)?;
        let fk = threshold(f, &w, s)?;
        let (pk, wk) = intrinsic_dimension(&fk, tol)?;
        if pk <= p {
            return Err(Error::InvalidArgument(format!(
                "cascade stalled at dimension {p}"
            )));
        }
        stages.push(Stage {
            f: fk,
            support: wk.clone(),
            s,
            p: pk,
        });
        w = wk;
        p = pk;
    }
    let mut regrouped: Vec<RegroupedStage> = Vec::new();
    for st in &stages {
        match regrouped.last_mut() {
            Some(g) if st.s <= g.s => {
                g.f = st.f.clone();
                g.support = st.support.clone();
                g.p = st.p;
                g.b += 1;
            }
            _ => regrouped.push(RegroupedStage {
                f: st.f.clone(),
                support: st.support.clone(),
                s: st.s,
                p: st.p,
                b: 1,
            }),
        }
    }
    let s_star = stages.iter().map(|s| s.s).max().unwrap_or(0);
    Ok(CascadeReport {
        stages,
        regrouped,
        s_star,
    })
}
