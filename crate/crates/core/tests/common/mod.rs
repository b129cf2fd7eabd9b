//! Oracles and random cases shared by the integration tests.
#![allow(dead_code)]

use mim_core::function_space::{average, evaluate, inner, rotate, HermiteFunction, LinearMap};
use mim_core::hermite::gauss_hermite;
use mim_core::landscape::{
    grassmann_grad_G, grassmann_loss, planted_grad_m, planted_loss, SummaryStatistics, Target,
};
use mim_core::tensor_index::{enumerate_up_to, MultiIndex};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const ALGEBRA_TOL: f64 = 1e-9;
pub const MAX_Q: usize = 4;
pub const MAX_DEGREE: u32 = 6;

/// Tensor Gauss–Hermite quadrature of `E[g(x)]` on `R^q`.
pub fn tensor_quadrature(q: usize, n: usize, g: impl Fn(&[f64]) -> f64) -> f64 {
    if q == 0 {
        return g(&[]);
    }
    let (x, w) = gauss_hermite(n);
    let mut idx = vec![0usize; q];
    let mut pt = vec![0.0; q];
    let mut total = 0.0;
    loop {
        let mut wt = 1.0;
        for i in 0..q {
            pt[i] = x[idx[i]];
            wt *= w[idx[i]];
        }
        total += wt * g(&pt);
        let mut i = 0;
        loop {
            if i == q {
                return total;
            }
            idx[i] += 1;
            if idx[i] < n {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// `E_z f(Mᵀx + (I − MᵀM)^{1/2} z)` by quadrature, exact for `deg f ≤ 2n − 1`.
pub fn average_oracle(f: &HermiteFunction, m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let r = m.ncols();
    let c = DMatrix::identity(r, r) - m.transpose() * m;
    let eig = SymmetricEigen::new(c);
    let sqrt_c = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    let base = m.transpose() * DVector::from_column_slice(x);
    let n = f.degree() as usize / 2 + 1;
    tensor_quadrature(r, n, |z| {
        let y = &base + &sqrt_c * DVector::from_column_slice(z);
        evaluate(f, y.as_slice()).unwrap()
    })
}

/// `E[f g]` by quadrature.
pub fn inner_oracle(f: &HermiteFunction, g: &HermiteFunction) -> f64 {
    let n = (f.degree() + g.degree()) as usize / 2 + 1;
    tensor_quadrature(f.q(), n, |x| {
        evaluate(f, x).unwrap() * evaluate(g, x).unwrap()
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Up to six Gaussian coefficients on random indices of degree `≤ max_deg`.
pub fn random_function(rng: &mut ChaCha8Rng, q: usize, max_deg: u32) -> HermiteFunction {
    let all: Vec<MultiIndex> = enumerate_up_to(q, max_deg);
    let terms = rng.random_range(1..=6);
    let picked: Vec<(MultiIndex, f64)> = (0..terms)
        .map(|_| (all[rng.random_range(0..all.len())].clone(), normal(rng)))
        .collect();
    HermiteFunction::from_terms(q, picked).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// Random `rows×cols` matrix rescaled to operator norm in `[0.2, 0.95]`.
pub fn random_contraction(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let m = random_matrix(rng, rows, cols);
    let nrm = m.clone().singular_values().max().max(1e-12);
    let target = rng.random_range(0.2..0.95);
    m * (target / nrm)
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, q: usize) -> DMatrix<f64> {
    mim_core::frame::qr_positive(&random_matrix(rng, q, q))
}

pub fn random_point(rng: &mut ChaCha8Rng, q: usize) -> Vec<f64> {
    (0..q).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn scale(f: &HermiteFunction) -> f64 {
    f.norm().max(1.0)
}

/// `A_M` cross-checked against the quadrature oracle at a random point.
fn checked_average(
    rng: &mut ChaCha8Rng,
    f: &HermiteFunction,
    m: &DMatrix<f64>,
) -> (HermiteFunction, f64) {
    let g = average(f, &LinearMap::new(m.clone())).unwrap();
    let x = random_point(rng, m.nrows());
    let err = (evaluate(&g, &x).unwrap() - average_oracle(f, m, &x)).abs() / scale(f);
    (g, err)
}

/// `A_M A_N f = A_{MN} f`.
pub fn semigroup_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let dims: Vec<usize> = (0..3).map(|_| rng.random_range(1..=MAX_Q)).collect();
    let f = random_function(&mut rng, dims[0], MAX_DEGREE);
    let n = random_contraction(&mut rng, dims[1], dims[0]);
    let m = random_contraction(&mut rng, dims[2], dims[1]);
    let (an, e1) = checked_average(&mut rng, &f, &n);
    let (amn, e2) = checked_average(&mut rng, &an, &m);
    let (direct, e3) = checked_average(&mut rng, &f, &(&m * &n));
    (amn.max_abs_diff(&direct) / scale(&f))
        .max(e1)
        .max(e2)
        .max(e3)
}

/// `⟨A_M f, g⟩ = ⟨f, A_{Mᵀ} g⟩`.
pub fn adjoint_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (q, r) = (rng.random_range(1..=MAX_Q), rng.random_range(1..=MAX_Q));
    let f = random_function(&mut rng, r, MAX_DEGREE);
    let g = random_function(&mut rng, q, MAX_DEGREE);
    let m = random_contraction(&mut rng, q, r);
    let (af, e1) = checked_average(&mut rng, &f, &m);
    let (atg, e2) = checked_average(&mut rng, &g, &m.transpose());
    let lhs = inner(&af, &g).unwrap();
    let rhs = inner(&f, &atg).unwrap();
    let oracle = inner_oracle(&af, &g);
    let s = scale(&f) * scale(&g);
    ((lhs - rhs).abs() / s)
        .max((lhs - oracle).abs() / s)
        .max(e1)
        .max(e2)
}

/// `‖f∘Uᵀ‖ = ‖f‖` and `⟨f∘Uᵀ, g∘Uᵀ⟩ = ⟨f, g⟩` for orthogonal `U`.
pub fn isometry_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let q = rng.random_range(1..=MAX_Q);
    let f = random_function(&mut rng, q, MAX_DEGREE);
    let g = random_function(&mut rng, q, MAX_DEGREE);
    let u = random_orthogonal(&mut rng, q);
    let lu = LinearMap::new(u.clone());
    let (fu, gu) = (rotate(&f, &lu).unwrap(), rotate(&g, &lu).unwrap());
    let x = random_point(&mut rng, q);
    let ux = u.transpose() * DVector::from_column_slice(&x);
    let point = (evaluate(&fu, &x).unwrap() - evaluate(&f, ux.as_slice()).unwrap()).abs();
    let s = scale(&f) * scale(&g);
    let norm = (fu.norm_sq() - f.norm_sq()).abs() / s;
    let cross = (inner(&fu, &gu).unwrap() - inner(&f, &g).unwrap()).abs() / s;
    let oracle = (fu.norm_sq() - inner_oracle(&fu, &fu)).abs() / s;
    norm.max(cross).max(oracle).max(point / scale(&f))
}

/// `A_M` maps each degree shell to itself.
pub fn homogeneity_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (q, r) = (rng.random_range(1..=MAX_Q), rng.random_range(1..=MAX_Q));
    let f = random_function(&mut rng, r, MAX_DEGREE);
    let m = random_contraction(&mut rng, q, r);
    let (af, e0) = checked_average(&mut rng, &f, &m);
    let mut worst = e0;
    for k in 0..=MAX_DEGREE {
        let (ak, e) = checked_average(&mut rng, &f.shell(k), &m);
        worst = worst.max(e).max(ak.max_abs_diff(&af.shell(k)) / scale(&f));
        let leaked = ak
            .iter()
            .filter(|(b, _)| b.degree() != k)
            .map(|(_, c)| c.abs())
            .fold(0.0, f64::max);
        worst = worst.max(leaked / scale(&f));
    }
    worst
}

/// `A_Λ H_β = λ^β H_β` for diagonal `Λ`.
pub fn eigenrelation_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let q = rng.random_range(1..=MAX_Q);
    let all = enumerate_up_to(q, MAX_DEGREE);
    let beta = all[rng.random_range(0..all.len())].clone();
    let lambda: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = HermiteFunction::monomial(beta.clone(), 1.0);
    let m = DMatrix::from_diagonal(&DVector::from_column_slice(&lambda));
    let (ah, e) = checked_average(&mut rng, &h, &m);
    let expect: f64 = beta
        .entries()
        .iter()
        .zip(&lambda)
        .map(|(&b, &l)| l.powi(b as i32))
        .product();
    let expected = HermiteFunction::monomial(beta, expect);
    ah.max_abs_diff(&expected).max(e)
}

/// Relative Frobenius error between an analytic gradient and central
/// differences of `loss` in every entry of `m`.
fn fd_error(m: &DMatrix<f64>, loss: impl Fn(&DMatrix<f64>) -> f64, analytic: &DMatrix<f64>) -> f64 {
    let h = 1e-5;
    let mut fd = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let mut p = m.clone();
            p[(i, j)] += h;
            let mut n = m.clone();
            n[(i, j)] -= h;
            fd[(i, j)] = (loss(&p) - loss(&n)) / (2.0 * h);
        }
    }
    (fd - analytic).norm() / analytic.norm().max(1e-300)
}

/// Grassmann: `∂L/∂M = 2∇_G M` with `L = C(MMᵀ)`.
pub fn grassmann_fd_error(f: &Target, m: &DMatrix<f64>) -> f64 {
    let st = SummaryStatistics::from_correlation(m.clone());
    let analytic = 2.0 * grassmann_grad_G(f, &st).unwrap() * m;
    fd_error(
        m,
        |x| grassmann_loss(f, &SummaryStatistics::from_correlation(x.clone())).unwrap(),
        &analytic,
    )
}

/// Stiefel: `∂L/∂M` with `L = C(M)`.
pub fn stiefel_fd_error(f: &Target, m: &DMatrix<f64>) -> f64 {
    let st = SummaryStatistics::from_correlation(m.clone());
    let analytic = planted_grad_m(f, &st).unwrap();
    fd_error(
        m,
        |x| planted_loss(f, &SummaryStatistics::from_correlation(x.clone())).unwrap(),
        &analytic,
    )
}

/// Smallest eigenvalue of the symmetrized `∇_G`.
pub fn grad_g_min_eigenvalue(f: &Target, m: &DMatrix<f64>) -> f64 {
    let g = grassmann_grad_G(f, &SummaryStatistics::from_correlation(m.clone())).unwrap();
    let sym = (&g + g.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// One target per family: coefficient, ridge and mixed.
pub fn target_families() -> Vec<(&'static str, Target)> {
    use mim_core::gallery::{bad_subspace, cascade_example, planted_failure, two_stage};
    use mim_core::landscape::RidgeSum;
    let tilted = RidgeSum::new(
        vec![1.0, -0.5, 0.8],
        vec![
            vec![1.0, 0.0, 0.0],
            vec![0.6, 0.8, 0.0],
            vec![0.0, 0.6, -0.8],
        ],
        5,
    )
    .unwrap();
    vec![
        ("cascade_example", cascade_example().into()),
        ("two_stage", two_stage().into()),
        ("ridge_q3", Target::Ridge(tilted)),
        ("bad_subspace", Target::Ridge(bad_subspace(8, 16).unwrap())),
        ("planted_failure", planted_failure(5).unwrap().target),
    ]
}
