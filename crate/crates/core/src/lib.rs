//! Gaussian multi-index models: Hermite function algebra, averaging
//! operators, population losses, manifold gradient flows and kernel
//! shrinkage.

pub mod error;
pub mod experiment;
pub mod flow;
pub mod frame;
pub mod function_space;
pub mod gallery;
pub mod hermite;
pub mod landscape;
pub mod rkhs;
pub mod structure;
pub mod tensor_index;

pub use error::{Error, Result};
