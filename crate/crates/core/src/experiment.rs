//! Experiment drivers: parallel cells over `(d, seed)` and the summaries
//! used by the timescale, radial, trapping and bad-maximum studies.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{
    escape_times, fit_exponent, init_uniform, integrate, FlowConfig, FlowTrace, Model,
};
use crate::frame::Frame;
use crate::gallery::{bad_subspace, planted_failure, planted_radial, two_stage};
use crate::landscape::{planted_loss, RidgeSum, SummaryStatistics, Target};
use crate::structure::{leap_decomposition, STRUCTURE_TOL};

/// One independent integration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub d: usize,
    /// Position of the seed within its dimension.
    pub index: usize,
    pub seed: u64,
}

/// Deterministic per-cell seed.
pub fn cell_seed(base: u64, d: usize, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((d as u64) << 32) ^ index as u64
}

/// The grid `dims × 0..seeds` in row-major order.
pub fn grid(dims: &[usize], seeds: usize, base: u64) -> Vec<Cell> {
    dims.iter()
        .flat_map(|&d| {
            (0..seeds).map(move |index| Cell {
                d,
                index,
                seed: cell_seed(base, d, index),
            })
        })
        .collect()
}

/// Runs `job` on every cell on a pool of `workers` threads (all cores when
/// `None`). Results keep the order of `cells`.
pub fn run_cells<T, F>(
    cells: &[Cell],
    workers: Option<usize>,
    job: F,
) -> Result<Vec<(Cell, Result<T>)>>
where
    T: Send,
    F: Fn(&Cell) -> Result<T> + Sync,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(pool.install(|| cells.par_iter().map(|c| (*c, job(c))).collect()))
}

/// Median of a nonempty sample.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `‖WWᵀ − W*W*ᵀ‖_F² = 2Σ(1 − λᵢ²)` for frames of equal rank.
pub fn subspace_distance_sq(lambda: &[f64]) -> f64 {
    2.0 * lambda.iter().map(|l| 1.0 - l * l).sum::<f64>()
}

fn first_unwrap<T>(results: Vec<(Cell, Result<T>)>) -> Result<Vec<(Cell, T)>> {
    results
        .into_iter()
        .map(|(c, r)| r.map(|t| (c, t)))
        .collect()
}

// ---------------------------------------------------------------- timescale

#[derive(Clone, Debug, Serialize)]
pub struct TimescaleCell {
    pub cell: Cell,
    pub escapes: BTreeMap<usize, f64>,
    /// Fraction of samples between `τ₁` and `τ₂` with exactly one `λ ≥ 1 − η`
    /// and the others below `5/√d`.
    pub saddle_fraction: Option<f64>,
    /// Number of samples in that window.
    pub saddle_samples: usize,
    pub max_lambda_decrease: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimescaleReport {
    pub eta: f64,
    pub cells: Vec<TimescaleCell>,
    /// `median_tau[k][d]`, `None` when at least half the cells never escaped.
    pub median_tau: BTreeMap<usize, BTreeMap<usize, Option<f64>>>,
    /// `(slope, stderr)` per stage.
    pub slopes: BTreeMap<usize, (f64, f64)>,
    /// Saddle fraction over the samples of all cells pooled.
    pub pooled_saddle_fraction: Option<f64>,
}

impl TimescaleReport {
    /// Cells that did not reach stage `k`.
    pub fn missing(&self, k: usize) -> usize {
        self.cells
            .iter()
            .filter(|c| !c.escapes.contains_key(&k))
            .count()
    }
}

/// Flow settings for the two-saddle Grassmann study at dimension `d`.
pub fn timescale_config(d: usize, eta: f64, seed: u64) -> Result<FlowConfig> {
    let f: Target = two_stage().into();
    let horizon = (d * d) as f64;
    Ok(FlowConfig {
        dt: FlowConfig::default_dt(&f)?,
        t_max: 50.0 * horizon,
        eta,
        record_dt: Some(horizon / 4000.0),
        seed,
        dt_max: (horizon / 400.0).max(1.0),
        stop_lambda: Some(1.0 - eta / 4.0),
        ..FlowConfig::default()
    })
}

/// `(good, total)` samples in `[t1, t2)`.
fn saddle_counts(trace: &FlowTrace, d: usize, eta: f64, t1: f64, t2: f64) -> (usize, usize) {
    let window: Vec<_> = trace
        .samples
        .iter()
        .filter(|s| s.t >= t1 && s.t < t2)
        .collect();
    let cap = 5.0 / (d as f64).sqrt();
    let good = window
        .iter()
        .filter(|s| {
            let above = s.lambda.iter().filter(|&&l| l >= 1.0 - eta).count();
            above == 1 && s.lambda[1..].iter().all(|&l| l < cap)
        })
        .count();
    (good, window.len())
}

/// Grassmann flow on `h₂(x₁) + h₃(x₂)` over `dims × seeds`.
pub fn timescale_experiment(
    dims: &[usize],
    seeds: usize,
    base: u64,
    eta: f64,
    workers: Option<usize>,
) -> Result<TimescaleReport> {
    let f = two_stage();
    let cascade = leap_decomposition(&f, STRUCTURE_TOL)?;
    let target: Target = f.into();
    let results = run_cells(&grid(dims, seeds, base), workers, |c| {
        let cfg = timescale_config(c.d, eta, c.seed)?;
        let tr = integrate(
            Model::Grassmann,
            &target,
            &Frame::canonical(c.d, 2),
            &init_uniform(c.d, 2, c.seed)?,
            &cfg,
        )?;
        let escapes = escape_times(&tr, &cascade, eta);
        let (good, total) = match (escapes.get(&1), escapes.get(&2)) {
            (Some(&a), Some(&b)) => saddle_counts(&tr, c.d, eta, a, b),
            _ => (0, 0),
        };
        Ok(TimescaleCell {
            cell: *c,
            escapes,
            saddle_fraction: (total > 0).then(|| good as f64 / total as f64),
            saddle_samples: total,
            max_lambda_decrease: tr.max_lambda_decrease(),
        })
    })?;
    let cells: Vec<TimescaleCell> = first_unwrap(results)?.into_iter().map(|(_, t)| t).collect();
    let (median_tau, slopes) = summarize_escapes(
        cells.iter().map(|c| (c.cell.d, &c.escapes)),
        cascade.regrouped.len(),
        0,
    );
    let total: usize = cells.iter().map(|c| c.saddle_samples).sum();
    let good: f64 = cells
        .iter()
        .filter_map(|c| c.saddle_fraction.map(|f| f * c.saddle_samples as f64))
        .sum();
    Ok(TimescaleReport {
        eta,
        cells,
        median_tau,
        slopes,
        pooled_saddle_fraction: (total > 0).then(|| good / total as f64),
    })
}

/// Median escape time for stages `1..=stages` per dimension, and log–log
/// slopes over the dimensions with a finite median. A cell missing a stage
/// counts as an infinite escape time in that median.
pub fn summarize_escapes<'a>(
    cells: impl Iterator<Item = (usize, &'a BTreeMap<usize, f64>)>,
    stages: usize,
    drop_smallest: usize,
) -> (
    BTreeMap<usize, BTreeMap<usize, Option<f64>>>,
    BTreeMap<usize, (f64, f64)>,
) {
    let mut by: BTreeMap<usize, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (d, esc) in cells {
        for k in 1..=stages {
            let t = esc.get(&k).copied().unwrap_or(f64::INFINITY);
            by.entry(k).or_default().entry(d).or_default().push(t);
        }
    }
    let medians: BTreeMap<usize, BTreeMap<usize, Option<f64>>> = by
        .into_iter()
        .map(|(k, m)| {
            let row = m
                .into_iter()
                .map(|(d, v)| {
                    let med = median(&v);
                    (d, med.is_finite().then_some(med))
                })
                .collect();
            (k, row)
        })
        .collect();
    let slopes = medians
        .iter()
        .filter_map(|(&k, m)| {
            let finite: BTreeMap<usize, f64> =
                m.iter().filter_map(|(&d, v)| v.map(|t| (d, t))).collect();
            fit_exponent(&finite, drop_smallest).ok().map(|s| (k, s))
        })
        .collect();
    (medians, slopes)
}

// ------------------------------------------------------------------ radial

#[derive(Clone, Debug, Serialize)]
pub struct RadialCell {
    pub cell: Cell,
    /// First time with `‖WWᵀ − W*W*ᵀ‖_F² ≤ threshold`.
    pub hit_time: Option<f64>,
    pub final_distance_sq: f64,
    pub max_loss_decrease: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RadialReport {
    pub threshold: f64,
    pub cells: Vec<RadialCell>,
    /// Runs that never hit count as infinite; `None` when the median is.
    pub median_hit: BTreeMap<usize, Option<f64>>,
}

pub fn radial_config(d: usize, seed: u64) -> Result<FlowConfig> {
    let f: Target = planted_radial().into();
    Ok(FlowConfig {
        dt: FlowConfig::default_dt(&f)?,
        t_max: 50.0 * (d as f64).ln(),
        seed,
        ..FlowConfig::default()
    })
}

/// Stiefel flow on the radial target over `dims × seeds`.
pub fn radial_experiment(
    dims: &[usize],
    seeds: usize,
    base: u64,
    threshold: f64,
    workers: Option<usize>,
) -> Result<RadialReport> {
    let target: Target = planted_radial().into();
    let results = run_cells(&grid(dims, seeds, base), workers, |c| {
        let cfg = radial_config(c.d, c.seed)?;
        let tr = integrate(
            Model::Stiefel,
            &target,
            &Frame::canonical(c.d, 2),
            &init_uniform(c.d, 2, c.seed)?,
            &cfg,
        )?;
        let hit_time = tr
            .samples
            .iter()
            .find(|s| subspace_distance_sq(&s.lambda) <= threshold)
            .map(|s| s.t);
        Ok(RadialCell {
            cell: *c,
            hit_time,
            final_distance_sq: subspace_distance_sq(&tr.final_sample().lambda),
            max_loss_decrease: tr.max_loss_decrease(),
        })
    })?;
    let cells: Vec<RadialCell> = first_unwrap(results)?.into_iter().map(|(_, t)| t).collect();
    let mut hits: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for c in &cells {
        let t = c.hit_time.unwrap_or(f64::INFINITY);
        hits.entry(c.cell.d).or_default().push(t);
    }
    let median_hit = hits
        .into_iter()
        .map(|(d, v)| {
            let med = median(&v);
            (d, med.is_finite().then_some(med))
        })
        .collect();
    Ok(RadialReport {
        threshold,
        cells,
        median_hit,
    })
}

// ----------------------------------------------------------------- failure

#[derive(Clone, Debug, Serialize)]
pub struct FailureCell {
    pub cell: Cell,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub final_lambda: Vec<f64>,
    pub trapped: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureReport {
    pub n: usize,
    pub s: u32,
    pub eps: f64,
    pub phi0: f64,
    pub l_max: f64,
    pub trap_threshold: f64,
    pub cells: Vec<FailureCell>,
    pub trapped_fraction: f64,
}

pub fn failure_config(d: usize, seed: u64) -> FlowConfig {
    FlowConfig {
        dt: 0.01,
        t_max: 2000.0 * (d as f64).ln(),
        seed,
        ..FlowConfig::default()
    }
}

/// Stiefel flow on the trapping target at dimension `d`. A run counts as
/// trapped when it ends stationary (gradient ≤ 1e−6) with a loss at most
/// `L_max − 2ε/3`.
pub fn failure_experiment(
    n: usize,
    d: usize,
    seeds: usize,
    base: u64,
    workers: Option<usize>,
) -> Result<FailureReport> {
    let setup = planted_failure(n)?;
    let results = run_cells(&grid(&[d], seeds, base), workers, |c| {
        let tr = integrate(
            Model::Stiefel,
            &setup.target,
            &Frame::canonical(c.d, 2),
            &init_uniform(c.d, 2, c.seed)?,
            &failure_config(c.d, c.seed),
        )?;
        let last = tr.final_sample();
        Ok(FailureCell {
            cell: *c,
            final_loss: last.loss,
            final_grad_norm: last.grad_norm,
            final_lambda: last.lambda.clone(),
            trapped: last.grad_norm <= 1e-6 && last.loss <= setup.trap_threshold,
        })
    })?;
    let cells: Vec<FailureCell> = first_unwrap(results)?.into_iter().map(|(_, t)| t).collect();
    let trapped_fraction =
        cells.iter().filter(|c| c.trapped).count() as f64 / cells.len().max(1) as f64;
    Ok(FailureReport {
        n,
        s: setup.s,
        eps: setup.eps,
        phi0: setup.phi0,
        l_max: setup.l_max,
        trap_threshold: setup.trap_threshold,
        cells,
        trapped_fraction,
    })
}

// ------------------------------------------------------------ bad subspace

#[derive(Clone, Debug, Serialize)]
pub struct BadMaximumRun {
    pub a: usize,
    pub b: usize,
    pub lambda_star: f64,
    pub start_loss: f64,
    pub final_loss: f64,
    pub final_lambda: Vec<f64>,
    pub final_grad_norm: f64,
    pub steps: usize,
    /// `λ₂ ≤ 0.9`, gradient norm `≤ 1e−6` and positive loss.
    pub bad: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BadSubspaceReport {
    pub n: usize,
    pub s: u32,
    pub z: Vec<f64>,
    pub runs: Vec<BadMaximumRun>,
}

/// `M(λ) = λ R_{θ−η} + (1 − λ) θηᵀ` with `θ = w_a`, `η = w_b`.
pub fn bad_start_correlation(n: usize, a: usize, b: usize, lambda: f64) -> DMatrix<f64> {
    let ang = |j: usize| 2.0 * std::f64::consts::PI * j as f64 / n as f64;
    let (ta, tb) = (ang(a), ang(b));
    let theta = DMatrix::from_row_slice(2, 1, &[ta.cos(), ta.sin()]);
    let eta = DMatrix::from_row_slice(2, 1, &[tb.cos(), tb.sin()]);
    let (c, s) = ((ta - tb).cos(), (ta - tb).sin());
    let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    rot * lambda + theta * eta.transpose() * (1.0 - lambda)
}

/// A frame `W` in `R^d`, `d ≥ 4`, with `W*ᵀW = M` for `W* = [e₁, e₂]`:
/// `W = W*M + [e₃, e₄](I − MᵀM)^{1/2}`.
pub fn frame_with_correlation(d: usize, m: &DMatrix<f64>) -> Result<Frame> {
    let q = m.nrows();
    if d < 2 * q {
        return Err(Error::DimensionMismatch {
            expected: 2 * q,
            got: d,
        });
    }
    let eig = SymmetricEigen::new(DMatrix::identity(q, q) - m.transpose() * m);
    let root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    let mut w = DMatrix::zeros(d, q);
    w.view_mut((0, 0), (q, q)).copy_from(m);
    w.view_mut((q, 0), (q, q)).copy_from(&root);
    Frame::new(w)
}

/// Local ascent from a `10⁻³` perturbation of `M*` for every pair `a ≠ b`
/// with `Z_a Z_b > 0`, where `λ*` maximizes the loss along `λ ↦ M(λ)` on a
/// grid over `[0, 1]`.
pub fn bad_subspace_experiment(
    n: usize,
    s: u32,
    workers: Option<usize>,
) -> Result<BadSubspaceReport> {
    let g: RidgeSum = bad_subspace(n, s)?;
    let z = g.weights().to_vec();
    let target = Target::Ridge(g);
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter(|&(a, b)| a != b && z[a] * z[b] > 0.0)
        .collect();
    let cells: Vec<Cell> = pairs
        .iter()
        .enumerate()
        .map(|(i, _)| Cell {
            d: 4,
            index: i,
            seed: 0,
        })
        .collect();
    let results = run_cells(&cells, workers, |c| {
        let (a, b) = pairs[c.index];
        let loss_at = |l: f64| {
            planted_loss(
                &target,
                &SummaryStatistics::from_correlation(bad_start_correlation(n, a, b, l)),
            )
        };
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0..=1000 {
            let l = i as f64 / 1000.0;
            let v = loss_at(l)?;
            if v > best.1 {
                best = (l, v);
            }
        }
        let start = frame_with_correlation(c.d, &bad_start_correlation(n, a, b, best.0))?;
        // A small random kick so that the ascent does not rest on a stationary start.
        let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(0, a, b));
        let kick = DMatrix::from_fn(c.d, 2, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            1e-3 * z
        });
        let w0 = if best.0 >= 1.0 {
            start
        } else {
            Frame::orthonormalize(&(start.matrix() + kick))
        };
        // At λ* = 1 the start is already a planted frame and the ascent is
        // only evaluated there.
        let t_max = if best.0 >= 1.0 { 0.0 } else { 1e4 };
        let cfg = FlowConfig {
            dt: 1e-4,
            t_max,
            dt_max: 100.0,
            ..FlowConfig::default()
        };
        let tr = integrate(
            Model::Stiefel,
            &target,
            &Frame::canonical(c.d, 2),
            &w0,
            &cfg,
        )?;
        let last = tr.final_sample();
        Ok(BadMaximumRun {
            a,
            b,
            lambda_star: best.0,
            start_loss: best.1,
            final_loss: last.loss,
            final_lambda: last.lambda.clone(),
            final_grad_norm: last.grad_norm,
            steps: tr.accepted + tr.rejected,
            bad: last.lambda[1] <= 0.9 && last.grad_norm <= 1e-6 && last.loss > 0.0,
        })
    })?;
    let runs = first_unwrap(results)?.into_iter().map(|(_, r)| r).collect();
    Ok(BadSubspaceReport { n, s, z, runs })
}
