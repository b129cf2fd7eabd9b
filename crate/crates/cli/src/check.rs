//! The `check` command: a quick deterministic pass over the core invariants.

use mim_core::flow::{angle_density, bernoulli_oracle, init_uniform, rk4_scalar};
use mim_core::function_space::{average, inner, rotate, HermiteFunction, LinearMap};
use mim_core::gallery::{bad_subspace, cascade_example, two_stage};
use mim_core::landscape::{
    grassmann_grad_G, grassmann_loss, planted_grad_m, planted_loss, SummaryStatistics, Target,
};
use mim_core::structure::{leap_decomposition, STRUCTURE_TOL};
use mim_core::tensor_index::enumerate_up_to;
use nalgebra::DMatrix;

/// Outcome of one check: name, pass flag and the measured quantity.
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Pseudo-random entries drawn through the library's own Gaussian sampler.
fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let n = rows * cols;
    // Entries of a uniform frame scaled by √n are approximately standard normal.
    let w = init_uniform(n + 1, 1, seed).expect("n ≥ 0");
    DMatrix::from_fn(rows, cols, |i, j| {
        w.matrix()[(i * cols + j, 0)] * (n as f64).sqrt()
    })
}

fn function(q: usize, seed: u64) -> HermiteFunction {
    let idx = enumerate_up_to(q, 5);
    let c = gaussian(idx.len(), 1, seed);
    HermiteFunction::from_terms(q, idx.into_iter().enumerate().map(|(i, b)| (b, c[(i, 0)])))
        .expect("valid indices")
}

/// Top-left `rows×cols` block of a random orthogonal matrix, scaled by `0.9`.
fn contraction(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let n = rows + cols;
    let u = init_uniform(n, n, seed).expect("square frame");
    u.matrix().view((0, 0), (rows, cols)).into_owned() * 0.9
}

fn result(name: &'static str, err: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        pass: err <= tol,
        detail: format!("{err:.2e} (tol {tol:.0e})"),
    }
}

fn algebra() -> Vec<CheckResult> {
    let (mut semi, mut adj, mut iso, mut eig) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..8u64 {
        let q = 1 + (seed as usize % 3);
        let f = function(q, seed);
        let g = function(q, seed + 100);
        let n = contraction(q, q, seed + 200);
        let m = contraction(q, q, seed + 300);
        let lm = |x: &DMatrix<f64>| LinearMap::new(x.clone());
        let two = average(&average(&f, &lm(&n)).unwrap(), &lm(&m)).unwrap();
        let one = average(&f, &lm(&(&m * &n))).unwrap();
        semi = semi.max(two.max_abs_diff(&one));
        let lhs = inner(&average(&f, &lm(&m)).unwrap(), &g).unwrap();
        let rhs = inner(&f, &average(&g, &lm(&m.transpose())).unwrap()).unwrap();
        adj = adj.max((lhs - rhs).abs());
        let u = init_uniform(q, q, seed + 400).unwrap();
        let fu = rotate(&f, &lm(u.matrix())).unwrap();
        iso = iso.max((fu.norm_sq() - f.norm_sq()).abs());
        let lam: Vec<f64> = (0..q).map(|i| 0.9 - 0.3 * i as f64).collect();
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&lam));
        let ad = average(&f, &lm(&diag)).unwrap();
        let expect = f.map_coeffs(|b, c| c * mim_core::function_space::lambda_power(&lam, b));
        eig = eig.max(ad.max_abs_diff(&expect));
    }
    vec![
        result("semigroup A_M A_N = A_MN", semi, 1e-9),
        result("adjoint <A_M f, g> = <f, A_M^T g>", adj, 1e-9),
        result("rotation isometry", iso, 1e-9),
        result("diagonal eigenrelation", eig, 1e-9),
    ]
}

fn cascade() -> CheckResult {
    let r = leap_decomposition(&cascade_example(), STRUCTURE_TOL).expect("cascade target");
    let ok = r.fine_exponents() == vec![2, 1, 3, 4]
        && r.coarse_exponents() == vec![2, 3, 4]
        && r.cascade_counts() == vec![2, 1, 1];
    CheckResult {
        name: "cascade tables",
        pass: ok,
        detail: format!(
            "fine {:?}, coarse {:?}, b {:?}",
            r.fine_exponents(),
            r.coarse_exponents(),
            r.cascade_counts()
        ),
    }
}

fn fd(m: &DMatrix<f64>, loss: impl Fn(&DMatrix<f64>) -> f64, analytic: &DMatrix<f64>) -> f64 {
    let h = 1e-5;
    let mut num = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let (mut p, mut n) = (m.clone(), m.clone());
            p[(i, j)] += h;
            n[(i, j)] -= h;
            num[(i, j)] = (loss(&p) - loss(&n)) / (2.0 * h);
        }
    }
    (num - analytic).norm() / analytic.norm().max(1e-300)
}

fn gradients() -> Vec<CheckResult> {
    let targets: Vec<Target> = vec![
        two_stage().into(),
        Target::Ridge(bad_subspace(8, 16).expect("feasible")),
    ];
    let (mut g_err, mut m_err, mut psd) = (0.0f64, 0.0f64, f64::INFINITY);
    for f in &targets {
        for seed in 0..4u64 {
            let m = contraction(2, 2, 500 + seed);
            let st = SummaryStatistics::from_correlation(m.clone());
            let grad_g = grassmann_grad_G(f, &st).unwrap();
            let stat = |x: &DMatrix<f64>| SummaryStatistics::from_correlation(x.clone());
            g_err = g_err.max(fd(
                &m,
                |x| grassmann_loss(f, &stat(x)).unwrap(),
                &(2.0 * &grad_g * &m),
            ));
            m_err = m_err.max(fd(
                &m,
                |x| planted_loss(f, &stat(x)).unwrap(),
                &planted_grad_m(f, &st).unwrap(),
            ));
            let sym = (&grad_g + grad_g.transpose()) * 0.5;
            psd = psd.min(sym.symmetric_eigen().eigenvalues.min());
        }
    }
    vec![
        result("grassmann gradient vs differences", g_err, 1e-5),
        result("stiefel gradient vs differences", m_err, 1e-5),
        CheckResult {
            name: "grassmann gradient is PSD",
            pass: psd >= -1e-10,
            detail: format!("min eigenvalue {psd:.2e}"),
        },
    ]
}

fn density() -> CheckResult {
    let n = 20_000;
    let h = 1.0 / n as f64;
    let mass: f64 = (0..n)
        .map(|i| {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            0.5 * h * (angle_density(&[a], 50, 1).unwrap() + angle_density(&[b], 50, 1).unwrap())
        })
        .sum();
    result("angle density mass (d=50, q=1)", (mass - 1.0).abs(), 1e-6)
}

fn bernoulli() -> CheckResult {
    let mut worst = 0.0f64;
    for (delta, a, s) in [(0.01f64, 1.0f64, 3u32), (0.05, -1.0, 2)] {
        let g = |_: f64, y: f64| y + a * y.powi(s as i32);
        for t in [0.5, 1.0, 2.0, 4.0] {
            let exact = bernoulli_oracle(delta, a, s, t).unwrap();
            worst = worst.max((rk4_scalar(g, delta, 0.0, t, 4000) - exact).abs());
        }
    }
    result("RK4 vs Bernoulli closed form", worst, 1e-8)
}

pub fn run_checks() -> Vec<CheckResult> {
    let mut out = algebra();
    out.push(cascade());
    out.extend(gradients());
    out.push(density());
    out.push(bernoulli());
    out
}
