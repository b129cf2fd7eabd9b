//! Band-limited functions in `L²(γ_q)` stored as sparse Hermite coefficients.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::hermite::eval_all_into;
use crate::tensor_index::{enumerate_degree, ln_factorial, MultiIndex};

/// Coefficients with magnitude at or below this are not stored.
pub const DROP_TOL: f64 = 1e-14;

/// Largest total degree accepted by coefficient-space operations.
pub const DEGREE_CAP: u32 = 40;

/// Tolerance on `UᵀU − I` for rotations.
pub const ORTHOGONAL_TOL: f64 = 1e-10;

/// Slack on `‖M‖ ≤ 1` for averaging.
pub const CONTRACTION_TOL: f64 = 1e-12;

/// `f = Σ_β α_β H_β` on `R^q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermiteFunction {
    q: usize,
    coeffs: BTreeMap<MultiIndex, f64>,
}

impl HermiteFunction {
    pub fn zero(q: usize) -> Self {
        HermiteFunction {
            q,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn constant(q: usize, c: f64) -> Self {
        Self::monomial(MultiIndex::zeros(q), c)
    }

    /// `c·H_β`.
    pub fn monomial(beta: MultiIndex, c: f64) -> Self {
        let q = beta.q();
        let mut f = Self::zero(q);
        f.add_term(beta, c);
        f.prune();
        f
    }

    /// Sums repeated indices; fails if some index has the wrong length.
    pub fn from_terms<I>(q: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (MultiIndex, f64)>,
    {
        let mut f = Self::zero(q);
        for (beta, c) in terms {
            if beta.q() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: beta.q(),
                });
            }
            f.add_term(beta, c);
        }
        f.prune();
        Ok(f)
    }

    fn add_term(&mut self, beta: MultiIndex, c: f64) {
        *self.coeffs.entry(beta).or_insert(0.0) += c;
    }

    fn prune(&mut self) {
        self.coeffs.retain(|_, c| c.abs() > DROP_TOL);
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Largest `|β|` with a stored coefficient; 0 for the zero function.
    pub fn degree(&self) -> u32 {
        self.coeffs
            .keys()
            .map(MultiIndex::degree)
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, beta: &MultiIndex) -> f64 {
        self.coeffs.get(beta).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.coeffs.iter().map(|(b, &c)| (b, c))
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.values().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `E[f]`.
    pub fn mean(&self) -> f64 {
        self.coeff(&MultiIndex::zeros(self.q))
    }

    /// `‖∇f‖² = Σ_β |β| α_β²`.
    pub fn gradient_norm_sq(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|(b, c)| b.degree() as f64 * c * c)
            .sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut f = HermiteFunction {
            q: self.q,
            coeffs: self
                .coeffs
                .iter()
                .map(|(b, &c)| (b.clone(), s * c))
                .collect(),
        };
        f.prune();
        f
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        check_dim(self.q, other.q)?;
        let mut f = self.clone();
        for (b, &c) in &other.coeffs {
            f.add_term(b.clone(), s * c);
        }
        f.prune();
        Ok(f)
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// The part of `f` in the degree shell `|β| = k`.
    pub fn shell(&self, k: u32) -> Self {
        self.filter(|b| b.degree() == k)
    }

    /// Keeps the coefficients whose index satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&MultiIndex) -> bool) -> Self {
        HermiteFunction {
            q: self.q,
            coeffs: self
                .coeffs
                .iter()
                .filter(|(b, _)| keep(b))
                .map(|(b, &c)| (b.clone(), c))
                .collect(),
        }
    }

    /// Multiplies each coefficient by `m(β)`.
    pub fn map_coeffs(&self, m: impl Fn(&MultiIndex, f64) -> f64) -> Self {
        let mut f = HermiteFunction {
            q: self.q,
            coeffs: self
                .coeffs
                .iter()
                .map(|(b, &c)| (b.clone(), m(b, c)))
                .collect(),
        };
        f.prune();
        f
    }

    /// The same function viewed on `R^{q'}`, `q' ≥ q`, ignoring the new coordinates.
    pub fn embed(&self, q_new: usize) -> Result<Self> {
        if q_new < self.q {
            return Err(Error::DimensionMismatch {
                expected: self.q,
                got: q_new,
            });
        }
        Ok(HermiteFunction {
            q: q_new,
            coeffs: self
                .coeffs
                .iter()
                .map(|(b, &c)| (b.resized(q_new), c))
                .collect(),
        })
    }

    /// Largest `|c_β − c'_β|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for (b, &c) in &self.coeffs {
            worst = worst.max((c - other.coeff(b)).abs());
        }
        for (b, &c) in &other.coeffs {
            if !self.coeffs.contains_key(b) {
                worst = worst.max(c.abs());
            }
        }
        worst
    }

    /// `‖self − other‖`.
    pub fn distance(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for (b, &c) in &self.coeffs {
            s += (c - other.coeff(b)).powi(2);
        }
        for (b, &c) in &other.coeffs {
            if !self.coeffs.contains_key(b) {
                s += c * c;
            }
        }
        s.sqrt()
    }

    /// Text form: header `q=<q> degree=<k>` then one line `β₁ … β_q α` per term.
    pub fn to_text(&self) -> String {
        let mut s = format!("q={} degree={}\n", self.q, self.degree());
        for (b, c) in &self.coeffs {
            for e in b.entries() {
                let _ = write!(s, "{e} ");
            }
            let _ = writeln!(s, "{}", shortest(*c));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("hermite text: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let mut q = None;
        let mut degree = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("q=") {
                q = Some(v.parse::<usize>().map_err(|_| bad("q"))?);
            } else if let Some(v) = tok.strip_prefix("degree=") {
                degree = Some(v.parse::<u32>().map_err(|_| bad("degree"))?);
            }
        }
        let q = q.ok_or_else(|| bad("missing q"))?;
        let degree = degree.ok_or_else(|| bad("missing degree"))?;
        let mut f = Self::zero(q);
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != q + 1 {
                return Err(bad("wrong number of fields"));
            }
            let beta: Vec<u32> = toks[..q]
                .iter()
                .map(|t| t.parse::<u32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("index"))?;
            let c: f64 = toks[q].parse().map_err(|_| bad("coefficient"))?;
            f.add_term(MultiIndex::new(beta), c);
        }
        if f.degree() != degree {
            return Err(bad("degree does not match the terms"));
        }
        Ok(f)
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn shortest(x: f64) -> String {
    format!("{x:?}")
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// A dense real matrix used as a contraction or rotation.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap(DMatrix<f64>);

impl LinearMap {
    pub fn new(m: DMatrix<f64>) -> Self {
        LinearMap(m)
    }

    pub fn identity(q: usize) -> Self {
        LinearMap(DMatrix::identity(q, q))
    }

    pub fn diagonal(d: &[f64]) -> Self {
        LinearMap(DMatrix::from_diagonal(
            &nalgebra::DVector::from_column_slice(d),
        ))
    }

    /// Counter-clockwise planar rotation.
    pub fn rotation2(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        LinearMap(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn transpose(&self) -> Self {
        LinearMap(self.0.transpose())
    }

    pub fn compose(&self, inner: &LinearMap) -> Self {
        LinearMap(&self.0 * &inner.0)
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        thin_svd(&self.0).1.first().copied().unwrap_or(0.0)
    }
}

impl From<DMatrix<f64>> for LinearMap {
    fn from(m: DMatrix<f64>) -> Self {
        LinearMap(m)
    }
}

/// `⟨f, g⟩ = Σ_β α_β(f) α_β(g)`.
pub fn inner(f: &HermiteFunction, g: &HermiteFunction) -> Result<f64> {
    check_dim(f.q, g.q)?;
    let (small, large) = if f.len() <= g.len() { (f, g) } else { (g, f) };
    Ok(small.coeffs.iter().map(|(b, &c)| c * large.coeff(b)).sum())
}

/// Coefficients of `x ↦ f(Rᵀx)` for `x ∈ R^n`, `R` of shape `n×q`.
///
/// Each `H_γ(Rᵀx)` contributes `√(β!/γ!)·[x^β] ∏_j (r_j·x)^{γ_j}` to `H_β`,
/// where `r_j` is column `j` of `R`. This is the transport-polytope formula
/// summed over `Π(β, γ)`. It is exact whenever `R` is a block of an
/// orthogonal matrix: square orthogonal, orthonormal columns, or orthonormal
/// rows. With orthonormal rows the result is the conditional expectation of
/// `f` given the coordinates `Rᵀ`-spanned, i.e. a marginalization.
pub fn pullback(f: &HermiteFunction, r: &DMatrix<f64>) -> Result<HermiteFunction> {
    check_dim(r.ncols(), f.q)?;
    let deg = f.degree();
    if deg > DEGREE_CAP {
        return Err(Error::DegreeCap(deg, DEGREE_CAP));
    }
    let n = r.nrows();
    let mut out: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    if n == 0 {
        let c = f.mean();
        let mut g = HermiteFunction {
            q: 0,
            coeffs: BTreeMap::new(),
        };
        if c.abs() > DROP_TOL {
            g.coeffs.insert(MultiIndex::zeros(0), c);
        }
        return Ok(g);
    }
    for (gamma, a) in &f.coeffs {
        let poly = expand_product_of_powers(gamma, r);
        let lg = gamma.ln_factorial();
        for (beta, p) in poly {
            let w = (0.5 * (beta.ln_factorial() - lg)).exp();
            *out.entry(beta).or_insert(0.0) += a * w * p;
        }
    }
    let mut g = HermiteFunction { q: n, coeffs: out };
    g.prune();
    Ok(g)
}

/// Monomial coefficients of `∏_j (r_j·x)^{γ_j}`.
fn expand_product_of_powers(gamma: &MultiIndex, r: &DMatrix<f64>) -> BTreeMap<MultiIndex, f64> {
    let n = r.nrows();
    let mut poly: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    poly.insert(MultiIndex::zeros(n), 1.0);
    for (j, &g) in gamma.entries().iter().enumerate() {
        let col: Vec<f64> = (0..n).map(|i| r[(i, j)]).collect();
        for _ in 0..g {
            let mut next: BTreeMap<MultiIndex, f64> = BTreeMap::new();
            for (m, &c) in &poly {
                for (i, &ri) in col.iter().enumerate() {
                    if ri == 0.0 {
                        continue;
                    }
                    let key = m.with_increment(i, 1).expect("increment is nonnegative");
                    *next.entry(key).or_insert(0.0) += c * ri;
                }
            }
            poly = next;
        }
    }
    poly
}

/// `P_U f`, i.e. `x ↦ f(Uᵀx)` for orthogonal `U`.
pub fn rotate(f: &HermiteFunction, u: &LinearMap) -> Result<HermiteFunction> {
    let m = u.matrix();
    if m.nrows() != m.ncols() || m.nrows() != f.q {
        return Err(Error::DimensionMismatch {
            expected: f.q,
            got: m.nrows(),
        });
    }
    let res = (m.transpose() * m - DMatrix::identity(f.q, f.q)).amax();
    if res > ORTHOGONAL_TOL {
        return Err(Error::NotOrthogonal(res));
    }
    pullback(f, m)
}

/// Thin SVD `M = V·diag(λ)·Uᵀ` with `V: q×k`, `U: r×k`, `k = min(q, r)` and
/// `λ` nonincreasing.
///
/// One-sided Jacobi: stays accurate when singular values cluster, where the
/// bidiagonal QR iteration in nalgebra can return a loose factorization.
pub(crate) fn thin_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if m.nrows() < m.ncols() {
        let (u, lambda, v) = thin_svd(&m.transpose());
        return (v, lambda, u);
    }
    let (rows, k) = m.shape();
    let mut b = m.clone();
    let mut j = DMatrix::<f64>::identity(k, k);
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..k {
            for r in p + 1..k {
                let alpha = b.column(p).norm_squared();
                let beta = b.column(r).norm_squared();
                let gamma = b.column(p).dot(&b.column(r));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut b, &mut j] {
                    for i in 0..mat.nrows() {
                        let (x, y) = (mat[(i, p)], mat[(i, r)]);
                        mat[(i, p)] = c * x - s * y;
                        mat[(i, r)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..k).map(|i| b.column(i).norm()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &c| norms[c].total_cmp(&norms[a]).then(a.cmp(&c)));
    let floor = norms.iter().fold(0.0f64, |a, &x| a.max(x)) * f64::EPSILON * rows as f64;
    let mut v = DMatrix::zeros(rows, k);
    let mut u = DMatrix::zeros(k, k);
    let mut lambda = Vec::with_capacity(k);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &j.column(src));
        if norms[src] > floor {
            v.set_column(dst, &(b.column(src) / norms[src]));
            lambda.push(norms[src]);
        } else {
            missing.push(dst);
            lambda.push(0.0);
        }
    }
    // Null directions: extend the left frame by Gram–Schmidt on the standard basis.
    let mut e = 0;
    for dst in missing {
        while e < rows {
            let mut x = DVector::zeros(rows);
            x[e] = 1.0;
            e += 1;
            for _ in 0..2 {
                for c in 0..k {
                    let proj = v.column(c).dot(&x);
                    x -= v.column(c) * proj;
                }
            }
            let n = x.norm();
            if n > 0.5 {
                v.set_column(dst, &(x / n));
                break;
            }
        }
    }
    (v, lambda, u)
}

/// `λ_β = ∏ λᵢ^{βᵢ}`.
pub fn lambda_power(lambda: &[f64], beta: &MultiIndex) -> f64 {
    beta.entries()
        .iter()
        .zip(lambda)
        .map(|(&b, &l)| l.powi(b as i32))
        .product()
}

/// `A_M f` for a contraction `M: R^r → R^q` and `f` on `R^r`.
///
/// Marginalizes `f` onto the right singular frame, damps each `H_β` by `λ_β`
/// and lifts through the left singular frame.
pub fn average(f: &HermiteFunction, m: &LinearMap) -> Result<HermiteFunction> {
    check_dim(m.cols(), f.q)?;
    let nrm = m.op_norm();
    if nrm > 1.0 + CONTRACTION_TOL {
        return Err(Error::NormTooLarge(nrm));
    }
    let q = m.rows();
    if q == 0 || m.cols() == 0 {
        let mean = f.mean();
        return Ok(HermiteFunction::constant(q, mean).filter(|_| mean.abs() > DROP_TOL));
    }
    let (v, lambda, u) = thin_svd(m.matrix());
    let marg = pullback(f, &u.transpose())?;
    let damped = marg.map_coeffs(|b, c| c * lambda_power(&lambda, b));
    pullback(&damped, &v)
}

/// `S_W^s f`: drops coefficients whose degree orthogonal to `W` exceeds `s`.
pub fn threshold(f: &HermiteFunction, w: &Frame, s: u32) -> Result<HermiteFunction> {
    check_dim(w.ambient_dim(), f.q)?;
    let res = w.residual();
    if res > crate::frame::FRAME_TOL {
        return Err(Error::NotOrthonormal(res));
    }
    let p = w.rank();
    if p == 0 {
        return Ok(f.filter(|b| b.degree() <= s));
    }
    let basis = w.completed();
    let adapted = pullback(f, &basis.transpose())?;
    let kept = adapted.filter(|b| b.tail_degree(p) <= s);
    pullback(&kept, &basis)
}

/// Coefficients of `f` in the basis adapted to `[W, W⊥]`.
pub fn adapted_coefficients(f: &HermiteFunction, w: &Frame) -> Result<HermiteFunction> {
    check_dim(w.ambient_dim(), f.q)?;
    pullback(f, &w.completed().transpose())
}

/// `∂f/∂xᵢ` with zero-based `i`.
pub fn partial_derivative(f: &HermiteFunction, i: usize) -> Result<HermiteFunction> {
    if i >= f.q {
        return Err(Error::DimensionMismatch {
            expected: f.q,
            got: i + 1,
        });
    }
    let mut g = HermiteFunction::zero(f.q);
    for (b, &c) in &f.coeffs {
        let k = b.get(i);
        if k == 0 {
            continue;
        }
        let lower = b.with_increment(i, -1).expect("entry is positive");
        g.add_term(lower, (k as f64).sqrt() * c);
    }
    g.prune();
    Ok(g)
}

/// `f(x)`.
pub fn evaluate(f: &HermiteFunction, x: &[f64]) -> Result<f64> {
    check_dim(f.q, x.len())?;
    let deg = f.degree() as usize;
    let tables: Vec<Vec<f64>> = x
        .iter()
        .map(|&xi| {
            let mut buf = vec![0.0; deg + 1];
            eval_all_into(xi, &mut buf);
            buf
        })
        .collect();
    Ok(f.coeffs
        .iter()
        .map(|(b, &c)| {
            c * b
                .entries()
                .iter()
                .enumerate()
                .map(|(i, &k)| tables[i][k as usize])
                .product::<f64>()
        })
        .sum())
}

/// Coefficients of `x ↦ h_s(w·x)`: `α_β = √(s!/β!) ∏ wᵢ^{βᵢ}`.
pub fn ridge_coeffs(w: &[f64], s: u32) -> Result<HermiteFunction> {
    let n: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::NotUnit(n));
    }
    if s > DEGREE_CAP {
        return Err(Error::DegreeCap(s, DEGREE_CAP));
    }
    let q = w.len();
    let ls = ln_factorial(s);
    let terms = enumerate_degree(q, s).into_iter().map(|b| {
        let mag = (0.5 * (ls - b.ln_factorial())).exp();
        let prod: f64 = b
            .entries()
            .iter()
            .zip(w)
            .map(|(&k, &wi)| wi.powi(k as i32))
            .product();
        (b, mag * prod)
    });
    HermiteFunction::from_terms(q, terms)
}
