//! Gradient flows on the Grassmann and Stiefel manifolds, random
//! initialization, escape times and timescale fits.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::frame::{qr_positive, Frame};
use crate::function_space::shortest;
use crate::landscape::{
    grassmann_grad_G, grassmann_loss, planted_grad_m, planted_loss, SummaryStatistics, Target,
};
use crate::structure::CascadeReport;

/// Per-step slack allowed on the loss before a step is rejected.
pub const MONOTONE_SLACK: f64 = 1e-9;

/// Gradient norm below which an integration stops.
pub const STATIONARY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Learned link: `L(W) = ⟨A_G f, f⟩` on `G(d, r)`.
    Grassmann,
    /// Planted link: `L(W) = ⟨A_M f, f⟩` on `S(d, q)`.
    Stiefel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Initial step.
    pub dt: f64,
    pub t_max: f64,
    /// Escape threshold: stage `k` has escaped once `λ_{p_k} ≥ 1 − eta`.
    pub eta: f64,
    /// Accepted steps between samples when `record_dt` is unset.
    pub record_every: usize,
    /// Record on a time grid of this spacing instead of by step count.
    pub record_dt: Option<f64>,
    pub seed: u64,
    /// Step-doubling error control with the monotonicity guard.
    pub adapt: bool,
    /// Local error tolerance per step, max-norm on `W`.
    pub tol: f64,
    pub dt_max: f64,
    /// Stop once the smallest `λ` reaches this value.
    pub stop_lambda: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 0.01,
            t_max: 100.0,
            eta: 0.25,
            record_every: 1,
            record_dt: None,
            seed: 0,
            adapt: true,
            tol: 1e-9,
            dt_max: 10.0,
            stop_lambda: None,
        }
    }
}

impl FlowConfig {
    /// `0.01·min(1, 1/‖∇f‖²)`.
    pub fn default_dt(f: &Target) -> Result<f64> {
        let g = f.gradient_norm_sq()?;
        Ok(0.01 * if g > 1.0 { 1.0 / g } else { 1.0 })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0)
            || !(self.t_max >= 0.0)
            || !(self.dt_max >= self.dt)
            || !(self.tol > 0.0)
        {
            return Err(Error::InvalidArgument(
                "need dt > 0, t_max ≥ 0, dt_max ≥ dt, tol > 0".into(),
            ));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eta = {} outside (0, 1)",
                self.eta
            )));
        }
        if self.record_every == 0 || self.record_dt.is_some_and(|h| !(h > 0.0)) {
            return Err(Error::InvalidArgument(
                "recording interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub loss: f64,
    pub grad_norm: f64,
    /// Singular values of `W*ᵀW`, nonincreasing.
    pub lambda: Vec<f64>,
    /// `‖V_p V_pᵀ − W̃W̃ᵀ‖_F²` against a reference support, when requested.
    pub alignment: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub model: Model,
    pub samples: Vec<Sample>,
    pub escapes: BTreeMap<usize, f64>,
    pub final_w: DMatrix<f64>,
    pub accepted: usize,
    pub rejected: usize,
}

impl FlowTrace {
    pub fn final_sample(&self) -> &Sample {
        self.samples
            .last()
            .expect("a trace always holds its initial sample")
    }

    /// `t,loss,grad_norm,lambda_1,…,lambda_q` rows in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let q = self.samples.first().map_or(0, |s| s.lambda.len());
        let mut out = String::from("t,loss,grad_norm");
        for i in 1..=q {
            out.push_str(&format!(",lambda_{i}"));
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{}",
                shortest(s.t),
                shortest(s.loss),
                shortest(s.grad_norm)
            ));
            for l in &s.lambda {
                out.push(',');
                out.push_str(&shortest(*l));
            }
            out.push('\n');
        }
        out
    }

    /// Largest decrease of any `λᵢ` between consecutive samples.
    pub fn max_lambda_decrease(&self) -> f64 {
        self.samples
            .windows(2)
            .flat_map(|w| w[0].lambda.iter().zip(&w[1].lambda).map(|(a, b)| a - b))
            .fold(0.0, f64::max)
    }

    /// Largest decrease of the loss between consecutive samples.
    pub fn max_loss_decrease(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[0].loss - w[1].loss)
            .fold(0.0, f64::max)
    }
}

/// `qr(G)` of a `d×r` standard Gaussian matrix drawn from `seed`.
pub fn init_uniform(d: usize, r: usize, seed: u64) -> Result<Frame> {
    if r == 0 || r > d {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ r ≤ d, got r = {r}, d = {d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_iterator(d, r, (0..d * r).map(|_| StandardNormal.sample(&mut rng)));
    Ok(Frame::orthonormalize(&g))
}

/// `ln Γ_q(a) = q(q−1)/4·ln π + Σ_{i<q} ln Γ(a − i/2)`.
pub fn ln_multigamma(q: usize, a: f64) -> f64 {
    let qf = q as f64;
    qf * (qf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (0..q).map(|i| ln_gamma(a - i as f64 / 2.0)).sum::<f64>()
}

/// Joint density of the ordered singular values of `W*ᵀW` for `W` uniform
/// on `G(d, q)`:
/// `2^q π^{q²/2} Γ_q(d/2) / (Γ_q(q/2)² Γ_q((d−q)/2)) ∏|λᵢ²−λⱼ²| ∏(1−λᵢ²)^{(d−2q−1)/2}`.
pub fn angle_density(lambda: &[f64], d: usize, q: usize) -> Result<f64> {
    if lambda.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: lambda.len(),
        });
    }
    if d <= 2 * q {
        return Err(Error::OutOfDomain(format!(
            "need d > 2q, got d = {d}, q = {q}"
        )));
    }
    let ordered = lambda.windows(2).all(|w| w[0] >= w[1]);
    if !ordered || lambda.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
        return Err(Error::OutOfDomain(format!(
            "need 1 ≥ λ₁ ≥ … ≥ λ_q ≥ 0, got {lambda:?}"
        )));
    }
    let (df, qf) = (d as f64, q as f64);
    let ln_z = ln_multigamma(q, df / 2.0)
        - 2.0 * ln_multigamma(q, qf / 2.0)
        - ln_multigamma(q, (df - qf) / 2.0)
        + qf * std::f64::consts::LN_2
        + qf * qf / 2.0 * std::f64::consts::PI.ln();
    let mut vandermonde = 1.0;
    for i in 0..q {
        for j in i + 1..q {
            vandermonde *= (lambda[i] * lambda[i] - lambda[j] * lambda[j]).abs();
        }
    }
    let expo = (df - 2.0 * qf - 1.0) / 2.0;
    let tail: f64 = lambda.iter().map(|l| (1.0 - l * l).powf(expo)).product();
    Ok(ln_z.exp() * vandermonde * tail)
}

struct Eval {
    loss: f64,
    lambda: Vec<f64>,
    v: DMatrix<f64>,
    field: DMatrix<f64>,
}

struct Problem<'a> {
    model: Model,
    f: &'a Target,
    wstar: &'a DMatrix<f64>,
}

impl Problem<'_> {
    /// Riemannian gradient at an ambient point, which need not be orthonormal
    /// at intermediate Runge–Kutta stages.
    fn field(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.eval_inner(w, false)?.field)
    }

    fn eval(&self, w: &DMatrix<f64>) -> Result<Eval> {
        self.eval_inner(w, true)
    }

    fn eval_inner(&self, w: &DMatrix<f64>, with_loss: bool) -> Result<Eval> {
        if !w.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteState(f64::NAN));
        }
        let s = SummaryStatistics::from_correlation(self.wstar.transpose() * w);
        let (loss, field) = match self.model {
            Model::Grassmann => {
                let ambient = self.wstar * (grassmann_grad_G(self.f, &s)? * s.m()) * 2.0;
                let field = &ambient - w * (w.transpose() * &ambient);
                let loss = if with_loss {
                    grassmann_loss(self.f, &s)?
                } else {
                    0.0
                };
                (loss, field)
            }
            Model::Stiefel => {
                let fbar = self.wstar * planted_grad_m(self.f, &s)?;
                let field = &fbar - w * (fbar.transpose() * w);
                let loss = if with_loss {
                    planted_loss(self.f, &s)?
                } else {
                    0.0
                };
                (loss, field)
            }
        };
        Ok(Eval {
            loss,
            lambda: s.lambda().to_vec(),
            v: s.v().clone(),
            field,
        })
    }

    fn rk4(&self, w: &DMatrix<f64>, k1: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
        let k2 = self.field(&(w + k1 * (h / 2.0)))?;
        let k3 = self.field(&(w + &k2 * (h / 2.0)))?;
        let k4 = self.field(&(w + &k3 * h))?;
        Ok(qr_positive(
            &(w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)),
        ))
    }
}

/// Integrates the chosen flow from `w0` and records samples.
pub fn integrate(
    model: Model,
    f: &Target,
    wstar: &Frame,
    w0: &Frame,
    cfg: &FlowConfig,
) -> Result<FlowTrace> {
    integrate_aligned(model, f, wstar, w0, cfg, None)
}

/// As [`integrate`], also recording `‖V_pV_pᵀ − W̃W̃ᵀ‖_F²` for a reference
/// support `W̃` of rank `p` in the latent coordinates.
pub fn integrate_aligned(
    model: Model,
    f: &Target,
    wstar: &Frame,
    w0: &Frame,
    cfg: &FlowConfig,
    align: Option<&Frame>,
) -> Result<FlowTrace> {
    cfg.validate()?;
    let q = f.q();
    if wstar.rank() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: wstar.rank(),
        });
    }
    if wstar.ambient_dim() != w0.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: wstar.ambient_dim(),
            got: w0.ambient_dim(),
        });
    }
    match model {
        Model::Grassmann if w0.rank() < q => {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: w0.rank(),
            })
        }
        Model::Stiefel if w0.rank() != q => {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: w0.rank(),
            })
        }
        _ => {}
    }
    if let Some(a) = align {
        if a.ambient_dim() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: a.ambient_dim(),
            });
        }
    }
    let problem = Problem {
        model,
        f,
        wstar: wstar.matrix(),
    };
    let sample = |t: f64, e: &Eval| Sample {
        t,
        loss: e.loss,
        grad_norm: e.field.norm(),
        lambda: e.lambda.clone(),
        alignment: align.map(|a| {
            let vp = e.v.columns(0, a.rank().min(e.v.ncols()));
            (&vp * vp.transpose() - a.projector()).norm_squared()
        }),
    };

    let mut w = w0.matrix().clone();
    let mut cur = problem.eval(&w)?;
    let mut t = 0.0;
    let mut dt = cfg.dt;
    let mut samples = vec![sample(t, &cur)];
    let mut next_record = cfg.record_dt.unwrap_or(0.0);
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let done = |t: f64, e: &Eval| {
        t >= cfg.t_max
            || e.field.norm() < STATIONARY_TOL
            || cfg
                .stop_lambda
                .is_some_and(|s| e.lambda.iter().all(|&l| l >= s))
    };

    while !done(t, &cur) {
        let h = dt.min(cfg.t_max - t);
        let at_t = |e: Error| match e {
            Error::NonFiniteState(_) => Error::NonFiniteState(t),
            e => e,
        };
        let step = || -> Result<_> {
            Ok(if cfg.adapt {
                let full = problem.rk4(&w, &cur.field, h)?;
                let mid = problem.rk4(&w, &cur.field, h / 2.0)?;
                let mid_field = problem.field(&mid)?;
                let half = problem.rk4(&mid, &mid_field, h / 2.0)?;
                let err = (&full - &half).amax();
                let e = problem.eval(&half)?;
                (half, e, err)
            } else {
                let next = problem.rk4(&w, &cur.field, h)?;
                let e = problem.eval(&next)?;
                (next, e, 0.0)
            })
        };
        let (w_new, e_new, err) = step().map_err(at_t)?;
        if !w_new.iter().all(|x| x.is_finite()) || !e_new.loss.is_finite() {
            return Err(Error::NonFiniteState(t));
        }
        if cfg.adapt && (err > cfg.tol || e_new.loss < cur.loss - MONOTONE_SLACK) {
            rejected += 1;
            dt = h / 2.0;
            if dt < 1e-14 * (1.0 + t) {
                return Err(Error::StepRejected(t));
            }
            continue;
        }
        t += h;
        w = w_new;
        cur = e_new;
        accepted += 1;
        if cfg.adapt && err < cfg.tol / 32.0 && h >= dt {
            dt = (2.0 * dt).min(cfg.dt_max);
        }
        let record = match cfg.record_dt {
            Some(step) if t >= next_record => {
                next_record = ((t / step).floor() + 1.0) * step;
                true
            }
            Some(_) => false,
            None => accepted % cfg.record_every == 0,
        };
        if record || done(t, &cur) {
            samples.push(sample(t, &cur));
        }
    }
    if samples.last().is_some_and(|s| s.t < t) {
        samples.push(sample(t, &cur));
    }
    Ok(FlowTrace {
        model,
        samples,
        escapes: BTreeMap::new(),
        final_w: w,
        accepted,
        rejected,
    })
}

/// First time `λ_p ≥ 1 − eta`, linearly interpolated between the bracketing samples.
pub fn escape_time(trace: &FlowTrace, p: usize, eta: f64) -> Option<f64> {
    if p == 0 {
        return trace.samples.first().map(|s| s.t);
    }
    let level = 1.0 - eta;
    let value = |s: &Sample| s.lambda.get(p - 1).copied().unwrap_or(0.0);
    let first = trace.samples.first()?;
    if value(first) >= level {
        return Some(first.t);
    }
    trace.samples.windows(2).find_map(|w| {
        let (a, b) = (value(&w[0]), value(&w[1]));
        (b >= level).then(|| {
            let frac = if b > a { (level - a) / (b - a) } else { 1.0 };
            w[0].t + frac.clamp(0.0, 1.0) * (w[1].t - w[0].t)
        })
    })
}

/// `τ_k(η)` for each regrouped stage `k = 1, 2, …` of the cascade, keyed by `k`.
/// Stages that never escape are absent.
pub fn escape_times(trace: &FlowTrace, cascade: &CascadeReport, eta: f64) -> BTreeMap<usize, f64> {
    cascade
        .regrouped
        .iter()
        .enumerate()
        .filter_map(|(k, st)| escape_time(trace, st.p, eta).map(|t| (k + 1, t)))
        .collect()
}

/// Least-squares slope of `log τ` against `log d` and its standard error,
/// after dropping the `drop_smallest` smallest dimensions.
pub fn fit_exponent(taus: &BTreeMap<usize, f64>, drop_smallest: usize) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = taus
        .iter()
        .skip(drop_smallest)
        .map(|(&d, &t)| ((d as f64).ln(), t.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: pts.len(),
        });
    }
    if pts.iter().any(|p| !p.1.is_finite()) {
        return Err(Error::InvalidArgument(
            "escape times must be positive".into(),
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let ssr: f64 = pts
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum();
    Ok((slope, (ssr / (n - 2.0) / sxx).sqrt()))
}

/// Closed-form solution of `ẏ = y + a yˢ`, `y(0) = δ`:
/// `y(t) = [(δ^{1−s} + a) e^{−(s−1)t} − a]^{−1/(s−1)}`.
pub fn bernoulli_oracle(delta: f64, a: f64, s: u32, t: f64) -> Result<f64> {
    if !(delta > 0.0) || s < 2 {
        return Err(Error::InvalidArgument(format!(
            "need δ > 0 and s ≥ 2, got δ = {delta}, s = {s}"
        )));
    }
    let k = (s - 1) as f64;
    let base = (delta.powf(-k) + a) * (-k * t).exp() - a;
    if !(base > 0.0) {
        return Err(Error::BlowUp(t));
    }
    Ok(base.powf(-1.0 / k))
}

/// Classical RK4 for a scalar ODE `ẏ = g(t, y)` with `steps` equal steps.
pub fn rk4_scalar(g: impl Fn(f64, f64) -> f64, y0: f64, t0: f64, t1: f64, steps: usize) -> f64 {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = g(t, y);
        let k2 = g(t + h / 2.0, y + h / 2.0 * k1);
        let k3 = g(t + h / 2.0, y + h / 2.0 * k2);
        let k4 = g(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}
