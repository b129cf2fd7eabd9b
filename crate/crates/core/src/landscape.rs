//! Population correlations and their manifold gradients.
//!
//! Both models reduce to the Gaussian correlation
//! `C(M) = E[f*(z) f*(y)]` with `cov(z, y) = M`: the joint (Grassmann) loss
//! is `C(G)` with `G = MMᵀ`, the planted (Stiefel) loss is `C(M)` with
//! `M = W*ᵀW`. By Price's theorem `∂C/∂M_ij = E[∂ᵢf*(z) ∂ⱼf*(y)]`, which in
//! the singular bases of `M = VΛUᵀ` becomes `∇C = V D Uᵀ` with
//! `D_kl = Σ_β λ_β ⟨∂_k f_V, H_β⟩⟨∂_l f_U, H_β⟩`.
//!
//! All values reported are correlations, to be maximized.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::frame::Frame;
use crate::function_space::{
    lambda_power, partial_derivative, pullback, ridge_coeffs, HermiteFunction,
};

/// Singular-value gap below which `V` is reported as unstable.
pub const GAP_TOL: f64 = 1e-8;

/// `M = W*ᵀW` with its SVD `M = V diag(λ) Uᵀ` and `G = MMᵀ`.
#[derive(Clone, Debug)]
pub struct SummaryStatistics {
    m: DMatrix<f64>,
    v: DMatrix<f64>,
    lambda: Vec<f64>,
    u: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl SummaryStatistics {
    /// Summary statistics of the pair `(W*, W)`; requires `rank W* ≤ rank W`.
    pub fn new(wstar: &Frame, w: &Frame) -> Result<Self> {
        if wstar.ambient_dim() != w.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: wstar.ambient_dim(),
                got: w.ambient_dim(),
            });
        }
        if wstar.rank() > w.rank() {
            return Err(Error::DimensionMismatch {
                expected: wstar.rank(),
                got: w.rank(),
            });
        }
        Ok(Self::from_correlation(
            wstar.matrix().transpose() * w.matrix(),
        ))
    }

    /// Summary statistics of a `q×r` correlation matrix. When `q > r` the
    /// factors are thin with `min(q, r)` columns.
    pub fn from_correlation(m: DMatrix<f64>) -> Self {
        let (v, lambda, u) = sorted_svd(&m);
        let g = &m * m.transpose();
        SummaryStatistics { m, v, lambda, u, g }
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Singular values, nonincreasing.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Smallest gap between consecutive singular values.
    pub fn min_gap(&self) -> f64 {
        self.lambda
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(f64::INFINITY, f64::min)
    }

    /// True when `V` is not determined to working precision.
    pub fn unstable(&self) -> bool {
        self.min_gap() < GAP_TOL
    }
}

/// SVD of a `q×r` matrix (`q ≤ r`) with nonincreasing singular values and
/// each left singular vector's largest-magnitude entry positive.
fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (mut v, lambda, mut u) = crate::function_space::thin_svd(m);
    for i in 0..lambda.len() {
        let big = v
            .column(i)
            .iter()
            .fold(0.0f64, |b, &x| if x.abs() > b.abs() { x } else { b });
        if big < 0.0 {
            v.column_mut(i).neg_mut();
            u.column_mut(i).neg_mut();
        }
    }
    (v, lambda, u)
}

/// `g = Σ_j Z_j P_{w_j} h_s`, a weighted sum of degree-`s` ridges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeSum {
    weights: Vec<f64>,
    directions: Vec<Vec<f64>>,
    degree: u32,
}

impl RidgeSum {
    pub fn new(weights: Vec<f64>, directions: Vec<Vec<f64>>, degree: u32) -> Result<Self> {
        if weights.len() != directions.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                got: directions.len(),
            });
        }
        if degree == 0 {
            return Err(Error::InvalidArgument(
                "ridge degree must be at least 1".into(),
            ));
        }
        let q = directions.first().map_or(0, Vec::len);
        for w in &directions {
            if w.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: w.len(),
                });
            }
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-12 {
                return Err(Error::NotUnit(n));
            }
        }
        Ok(RidgeSum {
            weights,
            directions,
            degree,
        })
    }

    /// Ridges along the `N`-th roots of unity `w_j = (cos 2πj/N, sin 2πj/N)`.
    pub fn roots_of_unity(weights: Vec<f64>, degree: u32) -> Result<Self> {
        let n = weights.len();
        let dirs = (0..n).map(|j| root_of_unity(j, n).to_vec()).collect();
        Self::new(weights, dirs, degree)
    }

    pub fn q(&self) -> usize {
        self.directions.first().map_or(0, Vec::len)
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    /// `Σ_{j,j'} Z_j Z_j' (w_jᵀ M w_j')^s`.
    pub fn correlation(&self, m: &DMatrix<f64>) -> f64 {
        let s = self.degree as i32;
        let mw = self.mapped_directions(m);
        let mut total = 0.0;
        for (j, wj) in self.directions.iter().enumerate() {
            for (jp, mwj) in mw.iter().enumerate() {
                total += self.weights[j] * self.weights[jp] * dot(wj, mwj.as_slice()).powi(s);
            }
        }
        total
    }

    /// `Σ_{j,j'} s Z_j Z_j' (w_jᵀ M w_j')^{s−1} w_j w_j'ᵀ`.
    pub fn correlation_grad(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.degree as i32;
        let q = m.nrows();
        let r = m.ncols();
        let mw = self.mapped_directions(m);
        let mut grad = DMatrix::zeros(q, r);
        for (j, wj) in self.directions.iter().enumerate() {
            // Accumulate Σ_j' c_jj' w_j' first, then one outer product per j.
            let mut acc = vec![0.0; r];
            for (jp, mwj) in mw.iter().enumerate() {
                let c = s as f64
                    * self.weights[j]
                    * self.weights[jp]
                    * dot(wj, mwj.as_slice()).powi(s - 1);
                if c == 0.0 {
                    continue;
                }
                for (a, &x) in acc.iter_mut().zip(&self.directions[jp]) {
                    *a += c * x;
                }
            }
            for a in 0..q {
                for b in 0..r {
                    grad[(a, b)] += wj[a] * acc[b];
                }
            }
        }
        grad
    }

    fn mapped_directions(&self, m: &DMatrix<f64>) -> Vec<DVector<f64>> {
        self.directions
            .iter()
            .map(|w| m * DVector::from_column_slice(w))
            .collect()
    }

    /// `‖g‖² = Σ Z_j Z_j' (w_j·w_j')^s`.
    pub fn norm_sq(&self) -> f64 {
        self.correlation(&DMatrix::identity(self.q(), self.q()))
    }

    /// Coefficient form; only for degrees within the coefficient cap.
    pub fn materialize(&self) -> Result<HermiteFunction> {
        let mut f = HermiteFunction::zero(self.q());
        for (z, w) in self.weights.iter().zip(&self.directions) {
            f = f.axpy(*z, &ridge_coeffs(w, self.degree)?)?;
        }
        Ok(f)
    }
}

/// `(cos 2πj/N, sin 2πj/N)`.
pub fn root_of_unity(j: usize, n: usize) -> [f64; 2] {
    let a = 2.0 * PI * j as f64 / n as f64;
    [a.cos(), a.sin()]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A target link function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// A band-limited coefficient map.
    Coefficients(HermiteFunction),
    /// A ridge sum of arbitrary degree.
    Ridge(RidgeSum),
    /// `f + √ε·g`, so that the correlation reads `C_f + ε C_g` whenever `f`
    /// has no component in the degree shell of `g`.
    Mixed {
        coeff: HermiteFunction,
        ridge: RidgeSum,
        eps: f64,
    },
}

/// How a target is evaluated: a coefficient part plus a weighted ridge part.
struct Parts<'a> {
    coeff: Option<std::borrow::Cow<'a, HermiteFunction>>,
    ridge: Option<(&'a RidgeSum, f64)>,
}

impl Target {
    pub fn q(&self) -> usize {
        match self {
            Target::Coefficients(f) => f.q(),
            Target::Ridge(g) => g.q(),
            Target::Mixed { coeff, .. } => coeff.q(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Target::Coefficients(_) => "coefficients",
            Target::Ridge(_) => "ridge",
            Target::Mixed { .. } => "mixed",
        }
    }

    /// `‖f*‖²`.
    pub fn norm_sq(&self) -> Result<f64> {
        let p = self.parts()?;
        let mut n = p.coeff.as_ref().map_or(0.0, |f| f.norm_sq());
        if let Some((g, w)) = p.ridge {
            n += w * g.norm_sq();
        }
        Ok(n)
    }

    /// `E‖∇f*‖²`, used to scale the default time step.
    pub fn gradient_norm_sq(&self) -> Result<f64> {
        let p = self.parts()?;
        let mut n = p.coeff.as_ref().map_or(0.0, |f| f.gradient_norm_sq());
        if let Some((g, w)) = p.ridge {
            n += w * g.degree() as f64 * g.norm_sq();
        }
        Ok(n)
    }

    /// Coefficient form of the whole target.
    pub fn materialize(&self) -> Result<HermiteFunction> {
        match self {
            Target::Coefficients(f) => Ok(f.clone()),
            Target::Ridge(g) => g.materialize(),
            Target::Mixed { coeff, ridge, eps } => coeff.axpy(eps.sqrt(), &ridge.materialize()?),
        }
    }

    /// The coefficient part, if the target has one.
    pub fn coefficient_part(&self) -> Option<&HermiteFunction> {
        match self {
            Target::Coefficients(f) | Target::Mixed { coeff: f, .. } => Some(f),
            Target::Ridge(_) => None,
        }
    }

    fn parts(&self) -> Result<Parts<'_>> {
        use std::borrow::Cow;
        Ok(match self {
            Target::Coefficients(f) => Parts {
                coeff: Some(Cow::Borrowed(f)),
                ridge: None,
            },
            Target::Ridge(g) => Parts {
                coeff: None,
                ridge: Some((g, 1.0)),
            },
            Target::Mixed { coeff, ridge, eps } => {
                if coeff.shell(ridge.degree()).is_zero() {
                    Parts {
                        coeff: Some(Cow::Borrowed(coeff)),
                        ridge: Some((ridge, *eps)),
                    }
                } else {
                    // Overlapping shells carry cross terms; fold the ridge in.
                    Parts {
                        coeff: Some(Cow::Owned(coeff.axpy(eps.sqrt(), &ridge.materialize()?)?)),
                        ridge: None,
                    }
                }
            }
        })
    }
}

impl From<HermiteFunction> for Target {
    fn from(f: HermiteFunction) -> Self {
        Target::Coefficients(f)
    }
}

/// `C(M) = Σ_β λ_β ⟨f, H_β(V)⟩⟨f, H_β(U)⟩` from an SVD `M = V diag(λ) Uᵀ`.
fn coeff_correlation(
    f: &HermiteFunction,
    v: &DMatrix<f64>,
    lambda: &[f64],
    u: &DMatrix<f64>,
) -> Result<f64> {
    let fv = pullback(f, &v.transpose())?;
    let fu = pullback(f, &u.transpose())?;
    Ok(fv
        .iter()
        .map(|(b, c)| c * fu.coeff(b) * lambda_power(lambda, b))
        .sum())
}

/// `∇C(M) = V D Uᵀ` from an SVD `M = V diag(λ) Uᵀ`.
fn coeff_correlation_grad(
    f: &HermiteFunction,
    v: &DMatrix<f64>,
    lambda: &[f64],
    u: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let k = lambda.len();
    let fv = pullback(f, &v.transpose())?;
    let fu = pullback(f, &u.transpose())?;
    let dv: Vec<HermiteFunction> = (0..k)
        .map(|i| partial_derivative(&fv, i))
        .collect::<Result<_>>()?;
    let du: Vec<HermiteFunction> = (0..k)
        .map(|i| partial_derivative(&fu, i))
        .collect::<Result<_>>()?;
    let mut d = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            d[(a, b)] = dv[a]
                .iter()
                .map(|(beta, c)| c * du[b].coeff(beta) * lambda_power(lambda, beta))
                .sum();
        }
    }
    Ok(v * d * u.transpose())
}

/// `C(M)` for a square correlation matrix.
pub fn correlation(f: &Target, m: &DMatrix<f64>) -> Result<f64> {
    check_square(f, m)?;
    let (v, lambda, u) = sorted_svd(m);
    correlation_svd(f, m, &v, &lambda, &u)
}

fn correlation_svd(
    f: &Target,
    m: &DMatrix<f64>,
    v: &DMatrix<f64>,
    lambda: &[f64],
    u: &DMatrix<f64>,
) -> Result<f64> {
    let p = f.parts()?;
    let mut total = 0.0;
    if let Some(c) = &p.coeff {
        total += coeff_correlation(c, v, lambda, u)?;
    }
    if let Some((g, w)) = p.ridge {
        total += w * g.correlation(m);
    }
    Ok(total)
}

/// `∇_M C(M)` for a square correlation matrix.
pub fn correlation_grad(f: &Target, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(f, m)?;
    let (v, lambda, u) = sorted_svd(m);
    correlation_grad_svd(f, m, &v, &lambda, &u)
}

fn correlation_grad_svd(
    f: &Target,
    m: &DMatrix<f64>,
    v: &DMatrix<f64>,
    lambda: &[f64],
    u: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = f.parts()?;
    let mut grad = DMatrix::zeros(m.nrows(), m.ncols());
    if let Some(c) = &p.coeff {
        grad += coeff_correlation_grad(c, v, lambda, u)?;
    }
    if let Some((g, w)) = p.ridge {
        grad += g.correlation_grad(m) * w;
    }
    Ok(grad)
}

fn check_square(f: &Target, m: &DMatrix<f64>) -> Result<()> {
    let q = f.q();
    if m.nrows() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: m.nrows(),
        });
    }
    if m.ncols() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: m.ncols(),
        });
    }
    Ok(())
}

/// `L(W) = ⟨A_G f, f⟩ = Σ_β α_β(V)² λ_β²`.
pub fn grassmann_loss(f: &Target, s: &SummaryStatistics) -> Result<f64> {
    check_square(f, s.g())?;
    let l2: Vec<f64> = s.lambda.iter().map(|l| l * l).collect();
    correlation_svd(f, &s.g, &s.v, &l2, &s.v)
}

/// `∇_G ℓ = E[∇f (A_G ∇f)ᵀ]`, symmetric positive semidefinite.
#[allow(non_snake_case)]
pub fn grassmann_grad_G(f: &Target, s: &SummaryStatistics) -> Result<DMatrix<f64>> {
    check_square(f, s.g())?;
    let mut l2: Vec<f64> = s.lambda.iter().map(|l| l * l).collect();
    // Directions in the kernel of G still carry first-order terms.
    let v = if s.v.ncols() < s.v.nrows() {
        l2.resize(s.v.nrows(), 0.0);
        Frame::orthonormalize(&s.v).completed()
    } else {
        s.v.clone()
    };
    let g = correlation_grad_svd(f, &s.g, &v, &l2, &v)?;
    Ok((&g + g.transpose()) * 0.5)
}

/// `(I − WWᵀ)·2·W*·∇_G ℓ·M`, the Riemannian gradient on `G(d, r)`.
pub fn grassmann_flow_field(f: &Target, wstar: &Frame, w: &Frame) -> Result<DMatrix<f64>> {
    let s = SummaryStatistics::new(wstar, w)?;
    let grad_g = grassmann_grad_G(f, &s)?;
    let ambient = wstar.matrix() * (grad_g * s.m()) * 2.0;
    let wm = w.matrix();
    Ok(&ambient - wm * (wm.transpose() * &ambient))
}

/// `L(W) = ⟨A_M f, f⟩ = Σ_β α_β(V) α_β(U) λ_β` for the planted model.
pub fn planted_loss(f: &Target, s: &SummaryStatistics) -> Result<f64> {
    check_square(f, s.m())?;
    correlation_svd(f, &s.m, &s.v, &s.lambda, &s.u)
}

/// `∇_M ⟨f, A_M f⟩`.
pub fn planted_grad_m(f: &Target, s: &SummaryStatistics) -> Result<DMatrix<f64>> {
    check_square(f, s.m())?;
    correlation_grad_svd(f, &s.m, &s.v, &s.lambda, &s.u)
}

/// `F̄ − W F̄ᵀ W` with `F̄ = W*·∇_M`, the Riemannian gradient on `S(d, q)`.
pub fn stiefel_flow_field(f: &Target, wstar: &Frame, w: &Frame) -> Result<DMatrix<f64>> {
    if wstar.rank() != w.rank() {
        return Err(Error::DimensionMismatch {
            expected: wstar.rank(),
            got: w.rank(),
        });
    }
    let s = SummaryStatistics::new(wstar, w)?;
    let fbar = wstar.matrix() * planted_grad_m(f, &s)?;
    let wm = w.matrix();
    Ok(&fbar - wm * (fbar.transpose() * wm))
}

/// Vertex pattern of the spectrum.
#[derive(Clone, Debug)]
pub struct CriticalInfo {
    /// Count of `λᵢ ≥ 1 − tol`.
    pub tau: usize,
    /// Count of `tol < λᵢ < 1 − tol`.
    pub tau_prime: usize,
    /// `span{vᵢ : λᵢ ≈ 1}`.
    pub sp: Frame,
    /// `span{vᵢ : 0 < λᵢ < 1}`.
    pub ess: Frame,
    pub is_vertex: bool,
}

pub fn classify_critical(s: &SummaryStatistics, tol: f64) -> CriticalInfo {
    let mut sp = Vec::new();
    let mut ess = Vec::new();
    for (i, &l) in s.lambda.iter().enumerate() {
        if l >= 1.0 - tol {
            sp.push(i);
        } else if l > tol {
            ess.push(i);
        }
    }
    let v = Frame::new(s.v.clone()).unwrap_or_else(|_| Frame::orthonormalize(&s.v));
    CriticalInfo {
        tau: sp.len(),
        tau_prime: ess.len(),
        sp: v.select_columns(&sp),
        ess: v.select_columns(&ess),
        is_vertex: ess.is_empty(),
    }
}

/// `Σ_{j,j'} Z_j Z_j' cos(θ + 2π(j − j')/N)^s`, or with `j + j'` and a
/// reversed angle for the reflection branch.
pub fn autocorrelation_phi(z: &[f64], s: u32, theta: f64, reflection: bool) -> Result<f64> {
    if reflection && s % 2 == 1 {
        return Err(Error::OddDegreeWithReflection(s));
    }
    let n = z.len();
    let mut total = 0.0;
    for (j, zj) in z.iter().enumerate() {
        for (jp, zjp) in z.iter().enumerate() {
            let shift = if reflection {
                -((j + jp) as f64)
            } else {
                j as f64 - jp as f64
            };
            total += zj * zjp * (theta + 2.0 * PI * shift / n as f64).cos().powi(s as i32);
        }
    }
    Ok(total)
}

/// Cyclic autocorrelation `φ_Z(k) = Σ_l Z_l Z_{l+k mod N}`.
pub fn discrete_autocorrelation(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    (0..n)
        .map(|k| (0..n).map(|l| z[l] * z[(l + k) % n]).sum())
        .collect()
}

/// Cyclic self-convolution `Σ_l Z_l Z_{k−l mod N}`.
pub fn discrete_self_convolution(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    (0..n)
        .map(|k| (0..n).map(|l| z[l] * z[(k + n - l) % n]).sum())
        .collect()
}

/// An even sequence whose cyclic autocorrelation is negative at every
/// nonzero lag.
///
/// The autocorrelation is prescribed in the orthonormal cosine basis of even
/// sequences as `Y = (1 − η, −δ, …, −δ)` with `‖Y‖ = 1`; its spectrum stays in
/// the positive orthant because `‖Y − e₀‖² = 2η` is below the squared
/// distance from `e₀`'s image to the boundary. `Z` is the inverse transform of
/// the square root of that spectrum, rescaled so that `max |Z| = 1`.
pub fn negative_autocorrelation_sequence(n: usize) -> Result<Vec<f64>> {
    if n < 4 || n % 2 == 1 {
        return Err(Error::InfeasibleN(n));
    }
    let half = n / 2;
    let nf = n as f64;
    let mult = |k: usize| if k == 0 || k == half { 1.0 } else { 2.0 };
    let eta = 1.0 / (4.0 * nf);
    let delta = ((2.0 * eta - eta * eta) / half as f64).sqrt();
    // Orthonormal even-cosine matrix C_{kω} = √(m_k m_ω / N) cos(2πωk/N).
    let c = |k: usize, w: usize| {
        (mult(k) * mult(w) / nf).sqrt() * (2.0 * PI * (w * k) as f64 / nf).cos()
    };
    let y: Vec<f64> = (0..=half)
        .map(|k| if k == 0 { 1.0 - eta } else { -delta })
        .collect();
    let mut zhat = vec![0.0; half + 1];
    for (w, zh) in zhat.iter_mut().enumerate() {
        let p_tilde: f64 = (0..=half).map(|k| c(k, w) * y[k]).sum();
        let p = p_tilde / mult(w).sqrt();
        if p < 0.0 {
            return Err(Error::InfeasibleN(n));
        }
        *zh = p.sqrt();
    }
    let mut z: Vec<f64> = (0..n)
        .map(|l| {
            (0..=half)
                .map(|w| mult(w) * zhat[w] * (2.0 * PI * (w * l) as f64 / nf).cos())
                .sum::<f64>()
                / nf
        })
        .collect();
    // Exact evenness.
    for l in 1..half {
        let avg = 0.5 * (z[l] + z[n - l]);
        z[l] = avg;
        z[n - l] = avg;
    }
    let scale = z.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(z.into_iter().map(|x| x / scale).collect())
}

/// Largest `ε` with `arccos(1 − 2εN√(2 log N)(1 + log(c/ε))) ≤ π/(10N)`,
/// `c = 1 + 2‖f‖² + s‖g‖²`, found by bisection in `log ε`.
pub fn failure_epsilon(n: usize, s: u32, f_norm_sq: f64, g_norm_sq: f64) -> f64 {
    let nf = n as f64;
    let c = 1.0 + 2.0 * f_norm_sq + s as f64 * g_norm_sq;
    let bound = PI / (10.0 * nf);
    let ok = |eps: f64| {
        let arg = 1.0 - 2.0 * eps * nf * (2.0 * nf.ln()).sqrt() * (1.0 + (c / eps).ln());
        arg >= -1.0 && arg.acos() <= bound
    };
    let (mut lo, mut hi) = ((1e-300f64).ln(), c.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid.exp()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo.exp()
}

/// Smallest even `s` with `cos(π/(10N))^s ≤ 1/(10N²)`.
pub fn failure_degree(n: usize) -> u32 {
    let nf = n as f64;
    let s = ((10.0 * nf * nf).ln() / -(PI / (10.0 * nf)).cos().ln()).ceil() as u32;
    s + s % 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::LinearMap;
    use crate::tensor_index::MultiIndex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h(beta: &[u32], c: f64) -> HermiteFunction {
        HermiteFunction::monomial(MultiIndex::new(beta.to_vec()), c)
    }

    fn radial() -> HermiteFunction {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        h(&[2, 0], c).try_add(&h(&[0, 2], c)).unwrap()
    }

    fn random_frame(d: usize, r: usize, rng: &mut ChaCha8Rng) -> Frame {
        let m = DMatrix::from_fn(d, r, |_, _| rng.random::<f64>() - 0.5);
        Frame::orthonormalize(&m)
    }

    #[test]
    fn summary_examples() {
        let ws = Frame::canonical(5, 2);
        let s = SummaryStatistics::new(&ws, &ws).unwrap();
        assert!(s.lambda().iter().all(|l| (l - 1.0).abs() < 1e-14));
        let w = Frame::new(DMatrix::from_fn(
            5,
            2,
            |i, j| if i == j + 2 { 1.0 } else { 0.0 },
        ))
        .unwrap();
        let s = SummaryStatistics::new(&ws, &w).unwrap();
        assert!(s.lambda().iter().all(|l| l.abs() < 1e-14));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_frame(5, 3, &mut rng);
        let s = SummaryStatistics::new(&ws, &w).unwrap();
        let recon = s.v()
            * DMatrix::from_diagonal(&DVector::from_column_slice(s.lambda()))
            * s.u().transpose();
        assert!((recon - s.m()).amax() < 1e-12);
        assert!(s.lambda().windows(2).all(|p| p[0] >= p[1]));
        for j in 0..2 {
            let col = s.v().column(j);
            let big = col
                .iter()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { *x } else { m });
            assert!(big > 0.0);
        }
        assert!(SummaryStatistics::new(&Frame::canonical(4, 2), &ws).is_err());
    }

    #[test]
    fn grassmann_loss_examples() {
        let f: Target = h(&[2, 1], 0.7).try_add(&h(&[1, 0], -0.4)).unwrap().into();
        let s = SummaryStatistics::from_correlation(DMatrix::identity(2, 2));
        assert!((grassmann_loss(&f, &s).unwrap() - f.norm_sq().unwrap()).abs() < 1e-14);
        let s0 = SummaryStatistics::from_correlation(DMatrix::zeros(2, 2));
        assert!(grassmann_loss(&f, &s0).unwrap().abs() < 1e-15);
        let f1: Target = h(&[2], 1.0).into();
        let s = SummaryStatistics::from_correlation(DMatrix::from_element(1, 1, 0.5));
        assert!((grassmann_loss(&f1, &s).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn grad_g_examples() {
        let f: Target = h(&[1, 0], 1.0).into();
        let s = SummaryStatistics::from_correlation(DMatrix::from_row_slice(
            2,
            2,
            &[0.3, 0.1, -0.2, 0.5],
        ));
        let g = grassmann_grad_G(&f, &s).unwrap();
        assert!((g - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-14);
        let f: Target = h(&[2, 0], 1.0).try_add(&h(&[1, 2], 0.5)).unwrap().into();
        let s0 = SummaryStatistics::from_correlation(DMatrix::zeros(2, 2));
        assert!(grassmann_grad_G(&f, &s0).unwrap().amax() < 1e-15);
    }

    #[test]
    fn correlation_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f: Target = h(&[2, 1], 0.7)
            .try_add(&h(&[0, 3], -0.4))
            .unwrap()
            .try_add(&h(&[1, 0], 0.3))
            .unwrap()
            .into();
        for _ in 0..5 {
            let m = DMatrix::from_fn(2, 2, |_, _| 0.6 * (rng.random::<f64>() - 0.5));
            let g = correlation_grad(&f, &m).unwrap();
            let step = 1e-5;
            for i in 0..2 {
                for j in 0..2 {
                    let mut mp = m.clone();
                    mp[(i, j)] += step;
                    let mut mm = m.clone();
                    mm[(i, j)] -= step;
                    let fd = (correlation(&f, &mp).unwrap() - correlation(&f, &mm).unwrap())
                        / (2.0 * step);
                    assert!((fd - g[(i, j)]).abs() < 1e-8, "fd {fd} vs {}", g[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn grassmann_field_vanishes_at_optimum_and_is_tangent() {
        let f: Target = h(&[2, 0], 1.0).try_add(&h(&[0, 3], 1.0)).unwrap().into();
        let ws = Frame::canonical(6, 2);
        let field = grassmann_flow_field(&f, &ws, &ws).unwrap();
        assert!(field.amax() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_frame(6, 2, &mut rng);
        let field = grassmann_flow_field(&f, &ws, &w).unwrap();
        assert!((w.matrix().transpose() * field).amax() < 1e-12);
    }

    #[test]
    fn constructed_saddle_is_critical() {
        // W contains e1 and is orthogonal to e2: λ = (1, 0).
        let f: Target = h(&[2, 0], 1.0).try_add(&h(&[0, 3], 1.0)).unwrap().into();
        let ws = Frame::canonical(6, 2);
        let w = Frame::new(DMatrix::from_fn(6, 2, |i, j| {
            if (i, j) == (0, 0) || (i, j) == (3, 1) {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap();
        assert!(grassmann_flow_field(&f, &ws, &w).unwrap().amax() < 1e-8);
    }

    #[test]
    fn stiefel_field_examples() {
        let f: Target = radial().into();
        let ws = Frame::canonical(7, 2);
        assert!(stiefel_flow_field(&f, &ws, &ws).unwrap().amax() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_frame(7, 2, &mut rng);
        let field = stiefel_flow_field(&f, &ws, &w).unwrap();
        let a = w.matrix().transpose() * field;
        assert!((&a + a.transpose()).amax() < 1e-12);
    }

    #[test]
    fn radial_planted_loss_is_half_squared_spectrum() {
        let f: Target = radial().into();
        let s = SummaryStatistics::from_correlation(DMatrix::from_row_slice(
            2,
            2,
            &[0.4, 0.2, -0.1, 0.6],
        ));
        let expect = 0.5 * (s.lambda()[0].powi(2) + s.lambda()[1].powi(2));
        assert!((planted_loss(&f, &s).unwrap() - expect).abs() < 1e-14);
        let g = planted_grad_m(&f, &s).unwrap();
        assert!((g - s.m()).amax() < 1e-14);
    }

    #[test]
    fn ridge_examples() {
        let single = RidgeSum::roots_of_unity(vec![1.0], 6).unwrap();
        let t = Target::Ridge(single);
        let s = SummaryStatistics::from_correlation(DMatrix::identity(2, 2));
        assert!((planted_loss(&t, &s).unwrap() - 1.0).abs() < 1e-14);
        let s0 = SummaryStatistics::from_correlation(DMatrix::zeros(2, 2));
        assert_eq!(planted_loss(&t, &s0).unwrap(), 0.0);
        let z = vec![2.0, 1.0, 1.0, 1.0, 1.0];
        let g = RidgeSum::roots_of_unity(z.clone(), 8).unwrap();
        let direct: f64 = (0..5)
            .flat_map(|j| (0..5).map(move |k| (j, k)))
            .map(|(j, k)| {
                let a = root_of_unity(j, 5);
                let b = root_of_unity(k, 5);
                z[j] * z[k] * (a[0] * b[0] + a[1] * b[1]).powi(8)
            })
            .sum();
        assert!((g.norm_sq() - direct).abs() < 1e-12);
        assert!((autocorrelation_phi(&z, 8, 0.0, false).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn ridge_and_coefficient_paths_agree() {
        let z = vec![2.0, 1.0, 1.0, 1.0, 1.0];
        for s in [4u32, 6, 8] {
            let g = RidgeSum::roots_of_unity(z.clone(), s).unwrap();
            let mixed = Target::Mixed {
                coeff: radial(),
                ridge: g.clone(),
                eps: 0.3,
            };
            let coeff = Target::Coefficients(mixed.materialize().unwrap());
            let m = DMatrix::from_row_slice(2, 2, &[0.5, -0.3, 0.2, 0.6]);
            let a = correlation(&mixed, &m).unwrap();
            let b = correlation(&coeff, &m).unwrap();
            assert!((a - b).abs() < 1e-9, "s={s}: {a} vs {b}");
            let ga = correlation_grad(&mixed, &m).unwrap();
            let gb = correlation_grad(&coeff, &m).unwrap();
            assert!((ga - gb).amax() < 1e-9);
        }
        // Overlapping shells: the radial part lives in degree 2.
        let g = RidgeSum::roots_of_unity(vec![1.0, 0.5, 0.25], 2).unwrap();
        let mixed = Target::Mixed {
            coeff: radial(),
            ridge: g,
            eps: 0.2,
        };
        let m = DMatrix::from_row_slice(2, 2, &[0.5, -0.3, 0.2, 0.6]);
        let coeff = Target::Coefficients(mixed.materialize().unwrap());
        assert!(
            (correlation(&mixed, &m).unwrap() - correlation(&coeff, &m).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn ridge_correlation_at_rotations_is_phi() {
        let z = vec![2.0, 1.0, 1.0, 1.0, 1.0];
        let g = Target::Ridge(RidgeSum::roots_of_unity(z.clone(), 10).unwrap());
        for &psi in &[0.0, 0.3, 1.1, 2.9] {
            let r = LinearMap::rotation2(psi).matrix().clone();
            let s = SummaryStatistics::from_correlation(r.clone());
            let phi = autocorrelation_phi(&z, 10, psi, false).unwrap();
            assert!((planted_loss(&g, &s).unwrap() - phi).abs() < 1e-12);
            let refl = r * DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
            let s = SummaryStatistics::from_correlation(refl);
            let phi = autocorrelation_phi(&z, 10, psi, true).unwrap();
            assert!((planted_loss(&g, &s).unwrap() - phi).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_properties() {
        let z = vec![2.0, 1.0, 1.0, 1.0, 1.0];
        let s = failure_degree(5);
        assert!(autocorrelation_phi(&z, s, 0.0, false).unwrap() >= 8.0 - 1e-9);
        for th in [0.1, 0.7, 2.0] {
            assert!(
                (autocorrelation_phi(&[1.0], 7, th, false).unwrap() - th.cos().powi(7)).abs()
                    < 1e-15
            );
            let a = autocorrelation_phi(&z, 12, th, false).unwrap();
            let b = autocorrelation_phi(&z, 12, th + PI, false).unwrap();
            let c = autocorrelation_phi(&z, 12, -th, false).unwrap();
            assert!((a - b).abs() < 1e-12);
            assert!((a - c).abs() < 1e-12);
        }
        assert_eq!(
            autocorrelation_phi(&z, 3, 0.0, true),
            Err(Error::OddDegreeWithReflection(3))
        );
    }

    #[test]
    fn negative_sequence_for_eight() {
        let z = negative_autocorrelation_sequence(8).unwrap();
        for k in 1..8 {
            assert!((z[k] - z[8 - k]).abs() < 1e-15);
        }
        let auto = discrete_autocorrelation(&z);
        let conv = discrete_self_convolution(&z);
        for k in 0..8 {
            assert!((auto[k] - conv[k]).abs() < 1e-12);
        }
        for k in [1, 2, 3, 5, 6, 7] {
            assert!(auto[k] < 0.0, "lag {k}: {}", auto[k]);
        }
        assert_eq!(
            negative_autocorrelation_sequence(7),
            Err(Error::InfeasibleN(7))
        );
        assert_eq!(
            negative_autocorrelation_sequence(2),
            Err(Error::InfeasibleN(2))
        );
        for n in (4..=40).step_by(2) {
            let z = negative_autocorrelation_sequence(n).unwrap();
            let auto = discrete_autocorrelation(&z);
            assert!(auto.iter().skip(1).all(|&a| a < 0.0), "n = {n}");
        }
    }

    #[test]
    fn failure_constants() {
        let s = failure_degree(5);
        assert_eq!(s % 2, 0);
        assert!((PI / 50.0).cos().powi(s as i32) <= 1.0 / 250.0);
        assert!((PI / 50.0).cos().powi(s as i32 - 2) > 1.0 / 250.0);
        let eps = failure_epsilon(5, s, 1.0, 8.0);
        assert!(eps > 0.0 && eps < 1e-3);
        let nf = 5.0f64;
        let c = 1.0 + 2.0 + s as f64 * 8.0;
        let lhs =
            |e: f64| (1.0 - 2.0 * e * nf * (2.0 * nf.ln()).sqrt() * (1.0 + (c / e).ln())).acos();
        assert!(lhs(eps) <= PI / 50.0);
        assert!(lhs(eps * 1.001) > PI / 50.0);
    }

    #[test]
    fn classify_examples() {
        let s =
            SummaryStatistics::from_correlation(DMatrix::from_diagonal(&DVector::from_vec(vec![
                1.0, 1.0, 0.0,
            ])));
        let c = classify_critical(&s, 1e-3);
        assert_eq!((c.tau, c.tau_prime, c.is_vertex), (2, 0, true));
        assert_eq!(c.sp.rank(), 2);
        let s =
            SummaryStatistics::from_correlation(DMatrix::from_diagonal(&DVector::from_vec(vec![
                1.0, 0.5, 0.0,
            ])));
        let c = classify_critical(&s, 1e-3);
        assert_eq!((c.tau, c.tau_prime, c.is_vertex), (1, 1, false));
        assert_eq!(c.ess.rank(), 1);
    }

    #[test]
    fn loss_is_invariant_under_right_rotation() {
        let f: Target = h(&[2, 1], 0.7).try_add(&h(&[0, 3], -0.4)).unwrap().into();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ws = Frame::canonical(6, 2);
        let w = random_frame(6, 3, &mut rng);
        let r =
            crate::frame::qr_positive(&DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5));
        let wr = Frame::new(w.matrix() * r).unwrap();
        let a = grassmann_loss(&f, &SummaryStatistics::new(&ws, &w).unwrap()).unwrap();
        let b = grassmann_loss(&f, &SummaryStatistics::new(&ws, &wr).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-10);
        // Grassmann loss equals ⟨A_G f, f⟩ computed by averaging.
        let fc = f.coefficient_part().unwrap();
        let s = SummaryStatistics::new(&ws, &w).unwrap();
        let ag = crate::function_space::average(fc, &LinearMap::new(s.g().clone())).unwrap();
        assert!((crate::function_space::inner(&ag, fc).unwrap() - a).abs() < 1e-12);
    }
}
