//! Fusion of mean-field posterior approximations.
//!
//! Local models trained independently on separate datasets each export a list
//! of exponential-family factors. This crate matches those factors across
//! datasets and merges them into one global posterior by alternating
//! minimum-cost assignment with closed-form KL barycenters, optionally
//! inferring the number of global components through a column-sparsity
//! penalty on the assignments.
//!
//! Modules:
//! - [`expfam`]: parameter algebra, closed-form KL and barycenters.
//! - [`assignment`]: rectangular Hungarian solver and cost matrices.
//! - [`fusion`]: the alternation driver.
//! - [`synthgen`]: synthetic Gaussian-mixture benchmark generator.
//! - [`localvi`]: variational Bayesian GMM producing local posteriors.
//! - [`metrics`]: polytope Hausdorff distance and model-size error.
//! - [`cli`]: file formats, commands and benchmark sweeps.

pub mod assignment;
pub mod cli;
mod error;
pub mod expfam;
pub mod fusion;
pub mod linalg;
pub mod localvi;
pub mod metrics;
pub mod rng;
pub mod special;
pub mod synthgen;
#[doc(hidden)]
pub mod testkit;

pub use error::{Error, Result};
pub use expfam::{ExpFamComponent, Family, NaturalParams, PosteriorBundle, Weights};
