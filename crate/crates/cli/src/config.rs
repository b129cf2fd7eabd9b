//! Experiment configuration: one TOML file per experiment.
//!
//! ```toml
//! scenario = "two_stage"
//! dims = [16, 32, 64]
//! model = "grassmann"          # or "stiefel"
//! output_dir = "results"       # optional, `--out` wins
//!
//! [seeds]
//! count = 4
//! base = 0
//!
//! [target]                     # optional, defaults to the gallery item `scenario`
//! kind = "gallery"             # "gallery" | "coefficients" | "ridge"
//! name = "bad_subspace"
//! degree = 512
//!
//! [flow]                       # any FlowConfig field; dt defaults to the target's safe step
//! t_max = 200.0
//! eta = 0.25
//!
//! [rkhs]                       # optional degree-wise shrinkage of a coefficient target
//! mu = 0.1
//! mode = "target"              # or "link"
//! ```

use std::path::PathBuf;

use mim_core::flow::{FlowConfig, Model};
use mim_core::function_space::HermiteFunction;
use mim_core::gallery;
use mim_core::landscape::{RidgeSum, Target};
use mim_core::rkhs::{ridge_shrink, KernelSpectrum, ShrinkMode};
use mim_core::tensor_index::MultiIndex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub count: usize,
    #[serde(default)]
    pub base: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub index: Vec<u32>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TargetSpec {
    Gallery {
        name: String,
        /// Ridge degree for `bad_subspace`.
        #[serde(default)]
        degree: Option<u32>,
    },
    Coefficients {
        q: usize,
        terms: Vec<Term>,
    },
    Ridge {
        weights: Vec<f64>,
        directions: Vec<Vec<f64>>,
        degree: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RkhsSpec {
    pub mu: f64,
    #[serde(default = "default_mode")]
    pub mode: ShrinkMode,
    /// Shell weights `c_0, …, c_K`; the default spectrum when absent.
    #[serde(default)]
    pub c: Option<Vec<f64>>,
}

fn default_mode() -> ShrinkMode {
    ShrinkMode::Target
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    pub dims: Vec<usize>,
    pub seeds: Seeds,
    #[serde(default = "default_model")]
    pub model: Model,
    #[serde(default)]
    pub flow: Option<toml::Table>,
    #[serde(default)]
    pub rkhs: Option<RkhsSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_model() -> Model {
    Model::Grassmann
}

/// A validated configuration with its target and flow settings resolved.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub target: Target,
    /// Name of the gallery item behind the target, if any.
    pub gallery: Option<String>,
    pub flow: FlowConfig,
    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Checks invariants, builds the target and fills in derived flow settings.
    pub fn resolve(self) -> Result<Resolved, CliError> {
        if self.dims.is_empty() || self.dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Invalid(
                "dims must be nonempty and strictly increasing".into(),
            ));
        }
        if self.seeds.count == 0 {
            return Err(CliError::Invalid("seeds.count must be at least 1".into()));
        }
        let spec = self.target.clone().unwrap_or(TargetSpec::Gallery {
            name: self.scenario.clone(),
            degree: None,
        });
        let gallery = match &spec {
            TargetSpec::Gallery { name, .. } => Some(name.clone()),
            _ => None,
        };
        let invalid = |e: mim_core::Error| CliError::Invalid(e.to_string());
        let mut target = build_target(&spec).map_err(invalid)?;
        if let Some(r) = &self.rkhs {
            target = shrink(target, r).map_err(invalid)?;
        }
        let q = target.q();
        if let Some(&d) = self.dims.iter().find(|&&d| d <= q) {
            return Err(CliError::Invalid(format!(
                "dimension {d} must exceed the target rank {q}"
            )));
        }
        let table = self.flow.clone().unwrap_or_default();
        let mut flow: FlowConfig = table
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Parse(format!("[flow]: {e}")))?;
        if !table.contains_key("dt") {
            flow.dt = FlowConfig::default_dt(&target).map_err(invalid)?;
        }
        if !table.contains_key("dt_max") {
            flow.dt_max = flow.dt_max.max(flow.dt);
        }
        flow.validate()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        let canonical = serde_json::json!({
            "config": &self,
            "flow": &flow,
        });
        let hash = hex::encode(Sha256::digest(canonical.to_string().as_bytes()));
        Ok(Resolved {
            config: self,
            target,
            gallery,
            flow,
            hash,
        })
    }
}

fn build_target(spec: &TargetSpec) -> mim_core::Result<Target> {
    Ok(match spec {
        TargetSpec::Gallery { name, degree } => gallery::by_name(name, *degree)?,
        TargetSpec::Coefficients { q, terms } => HermiteFunction::from_terms(
            *q,
            terms
                .iter()
                .map(|t| (MultiIndex::new(t.index.clone()), t.value)),
        )?
        .into(),
        TargetSpec::Ridge {
            weights,
            directions,
            degree,
        } => Target::Ridge(RidgeSum::new(weights.clone(), directions.clone(), *degree)?),
    })
}

fn shrink(target: Target, r: &RkhsSpec) -> mim_core::Result<Target> {
    let Target::Coefficients(f) = target else {
        return Err(mim_core::Error::UnsupportedTargetKind(
            "[rkhs] applies to coefficient targets only",
        ));
    };
    let spec = match &r.c {
        Some(c) => KernelSpectrum::new(f.q(), c.clone(), r.mu)?,
        None => KernelSpectrum::default_for(f.q(), r.mu)?,
    };
    Ok(ridge_shrink(&f, &spec, r.mode)?.into())
}
