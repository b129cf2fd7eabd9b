//! Named example targets.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::function_space::HermiteFunction;
use crate::landscape::{
    autocorrelation_phi, failure_degree, failure_epsilon, negative_autocorrelation_sequence,
    RidgeSum, Target,
};
use crate::tensor_index::MultiIndex;

/// Names accepted by [`by_name`] with one-line descriptions.
pub const GALLERY: &[(&str, &str)] = &[
    (
        "cascade_example",
        "h2(x1) + h4(x2) + h6(x1)h1(x3) + h3(x1)h5(x3)h3(x4) in R^4",
    ),
    (
        "recombination",
        "(h1(x1)+h1(x2))/√2 + (h2(x1)+h2(x2)-2h1(x1)h1(x2))/2",
    ),
    (
        "two_stage",
        "h2(x1) + h3(x2), two saddles with exponents 2 and 3",
    ),
    ("planted_radial", "(h2(x1)+h2(x2))/√2"),
    (
        "planted_failure",
        "radial part plus √ε·Σ Z_j h_s(w_j·x) with Z = (2,1,…,1), N = 5",
    ),
    (
        "bad_subspace",
        "Σ Z_j h_s(w_j·x) with Z of negative autocorrelation, N = 8",
    ),
];

fn term(beta: &[u32], c: f64) -> (MultiIndex, f64) {
    (MultiIndex::new(beta.to_vec()), c)
}

pub fn cascade_example() -> HermiteFunction {
    HermiteFunction::from_terms(
        4,
        [
            term(&[2, 0, 0, 0], 1.0),
            term(&[0, 4, 0, 0], 1.0),
            term(&[6, 0, 1, 0], 1.0),
            term(&[3, 0, 5, 3], 1.0),
        ],
    )
    .expect("valid indices")
}

pub fn recombination() -> HermiteFunction {
    HermiteFunction::from_terms(
        2,
        [
            term(&[1, 0], FRAC_1_SQRT_2),
            term(&[0, 1], FRAC_1_SQRT_2),
            term(&[2, 0], 0.5),
            term(&[0, 2], 0.5),
            term(&[1, 1], -1.0),
        ],
    )
    .expect("valid indices")
}

pub fn two_stage() -> HermiteFunction {
    HermiteFunction::from_terms(2, [term(&[2, 0], 1.0), term(&[0, 3], 1.0)]).expect("valid indices")
}

/// `½‖x‖² − 1`.
pub fn planted_radial() -> HermiteFunction {
    HermiteFunction::from_terms(
        2,
        [term(&[2, 0], FRAC_1_SQRT_2), term(&[0, 2], FRAC_1_SQRT_2)],
    )
    .expect("valid indices")
}

/// The trapping construction with its constants.
#[derive(Clone, Debug, Serialize)]
pub struct FailureSetup {
    pub n: usize,
    pub s: u32,
    pub eps: f64,
    pub z: Vec<f64>,
    /// `φ(0) = ‖g‖²`.
    pub phi0: f64,
    /// `1 + ε φ(0)`, attained on the planted frame.
    pub l_max: f64,
    /// Final losses at or below this value count as trapped.
    pub trap_threshold: f64,
    #[serde(skip)]
    pub target: Target,
}

/// `f + √ε g` with `f` radial and `g = 2h_s(w_0·x) + Σ_{j≥1} h_s(w_j·x)`.
///
/// `s` is the smallest even degree with `cos(π/10N)^s ≤ 1/(10N²)` and `ε`
/// the largest value allowed by the trapping condition.
pub fn planted_failure(n: usize) -> Result<FailureSetup> {
    if n < 3 {
        return Err(Error::InfeasibleN(n));
    }
    let s = failure_degree(n);
    let mut z = vec![1.0; n];
    z[0] = 2.0;
    let g = RidgeSum::roots_of_unity(z.clone(), s)?;
    let f = planted_radial();
    let phi0 = autocorrelation_phi(&z, s, 0.0, false)?;
    let eps = failure_epsilon(n, s, f.norm_sq(), g.norm_sq());
    let l_max = f.norm_sq() + eps * phi0;
    Ok(FailureSetup {
        n,
        s,
        eps,
        z,
        phi0,
        l_max,
        trap_threshold: l_max - 2.0 / 3.0 * eps,
        target: Target::Mixed {
            coeff: f,
            ridge: g,
            eps,
        },
    })
}

/// `g_Z = Σ_j Z_j h_s(w_j·x)` with `Z` of nearly negative autocorrelation.
pub fn bad_subspace(n: usize, s: u32) -> Result<RidgeSum> {
    if s % 2 == 1 {
        return Err(Error::InvalidArgument(format!("degree {s} must be even")));
    }
    RidgeSum::roots_of_unity(negative_autocorrelation_sequence(n)?, s)
}

/// Default ridge degree for `bad_subspace`: `8N²`.
pub fn bad_subspace_degree(n: usize) -> u32 {
    (8 * n * n) as u32
}

/// Looks up a gallery target. `degree` overrides the ridge degree of
/// `bad_subspace`.
pub fn by_name(name: &str, degree: Option<u32>) -> Result<Target> {
    Ok(match name {
        "cascade_example" => cascade_example().into(),
        "recombination" => recombination().into(),
        "two_stage" => two_stage().into(),
        "planted_radial" => planted_radial().into(),
        "planted_failure" => planted_failure(5)?.target,
        "bad_subspace" => Target::Ridge(bad_subspace(8, degree.unwrap_or(bad_subspace_degree(8)))?),
        other => return Err(Error::UnknownScenario(other.to_string())),
    })
}
