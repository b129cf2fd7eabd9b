//! The `run` and `fit` commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mim_core::experiment::{grid, run_cells, subspace_distance_sq, summarize_escapes, Cell};
use mim_core::flow::{escape_time, escape_times, init_uniform, integrate, Model};
use mim_core::frame::Frame;
use mim_core::gallery::planted_failure;
use mim_core::structure::{leap_decomposition, CascadeReport, STRUCTURE_TOL};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Resolved};
use crate::error::CliError;

/// Command-line overrides of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

/// One `(d, seed)` entry of `escapes.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEscapes {
    pub d: usize,
    pub index: usize,
    pub seed: u64,
    pub escapes: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapesFile {
    pub config_hash: String,
    pub seed: u64,
    pub eta: f64,
    /// Number of stages tracked; a cell missing stage `k` never escaped it.
    pub stages: usize,
    /// `cascade` when stages are the coarse cascade, `rank` when stage `k`
    /// is `λ_k` crossing `1 − eta`.
    pub stage_source: String,
    pub cells: Vec<CellEscapes>,
}

#[derive(Clone, Debug, Serialize)]
struct CellSummary {
    d: usize,
    index: usize,
    seed: u64,
    trace: String,
    t_final: f64,
    final_loss: f64,
    final_grad_norm: f64,
    final_lambda: Vec<f64>,
    /// `‖WWᵀ − W*W*ᵀ‖_F²`.
    final_distance_sq: f64,
    accepted: usize,
    rejected: usize,
}

struct CellOutput {
    csv: String,
    escapes: BTreeMap<usize, f64>,
    summary: CellSummary,
}

/// Runs every cell of the experiment and writes its outputs below the
/// output directory. Returns that directory.
pub fn run(config_path: &Path, ov: &Overrides) -> Result<PathBuf, CliError> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(s) = ov.seed {
        config.seeds.base = s;
    }
    let out = ov
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let res = config.resolve()?;
    run_resolved(&res, &out, ov.workers)?;
    Ok(out)
}

fn cascade_of(res: &Resolved) -> (Option<CascadeReport>, &'static str) {
    if let Ok(f) = res.target.materialize() {
        if let Ok(c) = leap_decomposition(&f, STRUCTURE_TOL) {
            return (Some(c), "target");
        }
    }
    if let Some(f) = res.target.coefficient_part() {
        if let Ok(c) = leap_decomposition(f, STRUCTURE_TOL) {
            return (Some(c), "coefficient part");
        }
    }
    (None, "unavailable")
}

pub fn run_resolved(res: &Resolved, out: &Path, workers: Option<usize>) -> Result<(), CliError> {
    let cfg = &res.config;
    let base = cfg.seeds.base;
    let q = res.target.q();
    let (cascade, cascade_source) = cascade_of(res);
    let stages = cascade.as_ref().map_or(q, |c| c.regrouped.len());
    let eta = res.flow.eta;
    let cells = grid(&cfg.dims, cfg.seeds.count, base);
    let header = |seed: u64| format!("# config_hash={} seed={seed}\n", res.hash);

    let results = run_cells(&cells, workers, |c: &Cell| {
        let mut flow = res.flow.clone();
        flow.seed = c.seed;
        let wstar = Frame::canonical(c.d, q);
        let w0 = init_uniform(c.d, q, c.seed)?;
        let tr = integrate(cfg.model, &res.target, &wstar, &w0, &flow)?;
        let escapes = match &cascade {
            Some(k) => escape_times(&tr, k, eta),
            None => (1..=q)
                .filter_map(|p| escape_time(&tr, p, eta).map(|t| (p, t)))
                .collect(),
        };
        let last = tr.final_sample();
        let name = format!("traces/d{}_seed{}.csv", c.d, c.index);
        Ok(CellOutput {
            csv: format!("{}{}", header(c.seed), tr.to_csv()),
            escapes,
            summary: CellSummary {
                d: c.d,
                index: c.index,
                seed: c.seed,
                trace: name,
                t_final: last.t,
                final_loss: last.loss,
                final_grad_norm: last.grad_norm,
                final_lambda: last.lambda.clone(),
                final_distance_sq: subspace_distance_sq(&last.lambda),
                accepted: tr.accepted,
                rejected: tr.rejected,
            },
        })
    })?;
    let mut outputs = Vec::with_capacity(results.len());
    for (c, r) in results {
        outputs.push(r.map_err(|source| CliError::Cell {
            d: c.d,
            index: c.index,
            seed: c.seed,
            source,
        })?);
    }

    mkdir(&out.join("traces"))?;
    for o in &outputs {
        write(&out.join(&o.summary.trace), &o.csv)?;
    }
    let escapes = EscapesFile {
        config_hash: res.hash.clone(),
        seed: base,
        eta,
        stages,
        stage_source: if cascade.is_some() { "cascade" } else { "rank" }.into(),
        cells: outputs
            .iter()
            .map(|o| CellEscapes {
                d: o.summary.d,
                index: o.summary.index,
                seed: o.summary.seed,
                escapes: o.escapes.clone(),
            })
            .collect(),
    };
    write_json(&out.join("escapes.json"), &serde_json::to_value(&escapes)?)?;
    write_json(&out.join("fit.json"), &fit_value(&escapes))?;
    write_json(
        &out.join("cascade.json"),
        &json!({
            "config_hash": res.hash,
            "seed": base,
            "source": cascade_source,
            "cascade": cascade.as_ref().map(|c| c.to_json()),
        }),
    )?;
    let summaries: Vec<&CellSummary> = outputs.iter().map(|o| &o.summary).collect();
    write_json(
        &out.join("summary.json"),
        &json!({
            "config_hash": res.hash,
            "seed": base,
            "scenario": cfg.scenario,
            "model": cfg.model,
            "flow": res.flow,
            "cells": summaries,
        }),
    )?;
    if res.gallery.as_deref() == Some("planted_failure") && cfg.model == Model::Stiefel {
        write_json(&out.join("failure.json"), &failure_value(res, &summaries)?)?;
    }
    Ok(())
}

/// Fraction of runs ending stationary below the trap threshold.
fn failure_value(res: &Resolved, cells: &[&CellSummary]) -> Result<Value, CliError> {
    let setup = planted_failure(5)?;
    let trapped: Vec<bool> = cells
        .iter()
        .map(|c| c.final_grad_norm <= 1e-6 && c.final_loss <= setup.trap_threshold)
        .collect();
    let fraction = trapped.iter().filter(|&&t| t).count() as f64 / trapped.len().max(1) as f64;
    Ok(json!({
        "config_hash": res.hash,
        "seed": res.config.seeds.base,
        "n": setup.n,
        "s": setup.s,
        "eps": setup.eps,
        "phi0": setup.phi0,
        "l_max": setup.l_max,
        "trap_threshold": setup.trap_threshold,
        "trapped": trapped,
        "trapped_fraction": fraction,
    }))
}

/// Median escape times per stage and dimension with log–log slopes.
pub fn fit_value(e: &EscapesFile) -> Value {
    let (medians, slopes) =
        summarize_escapes(e.cells.iter().map(|c| (c.d, &c.escapes)), e.stages, 0);
    let slopes: BTreeMap<usize, Value> = slopes
        .into_iter()
        .map(|(k, (s, se))| (k, json!({ "slope": s, "stderr": se })))
        .collect();
    json!({
        "config_hash": e.config_hash,
        "seed": e.seed,
        "eta": e.eta,
        "median_tau": medians,
        "slopes": slopes,
    })
}

/// Fits exponents from an existing `escapes.json`.
pub fn fit(path: &Path, out: Option<&Path>) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let e: EscapesFile =
        serde_json::from_str(&text).map_err(|err| CliError::Parse(err.to_string()))?;
    let v = fit_value(&e);
    if let Some(dir) = out {
        mkdir(dir)?;
        write_json(&dir.join("fit.json"), &v)?;
    }
    Ok(v)
}

fn mkdir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write(path, &text)
}
