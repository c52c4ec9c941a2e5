//! Multistage campaigning over social networks modelled as multivariate
//! Hawkes processes with exponential kernels.
//!
//! The crate is organised bottom-up:
//!
//! - [`hawkes`]: the network model, exact simulation, intensities and stage states.
//! - [`ratesolver`]: mean-intensity operators (Ψ, Γ, Υ) with dense and matrix-free backends.
//! - [`exposure`]: the linear map from stacked stage controls to mean exposures.
//! - [`optimizer`]: LP/QP solvers for the capped, max-min and least-squares programs.
//! - [`control`]: closed-loop certainty-equivalent replanning and the policy registry.
//! - [`baselines`]: heuristic allocation policies.
//! - [`harness`]: synthetic instances, validation and benchmark experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod control;
pub mod error;
pub mod exposure;
pub mod harness;
pub mod hawkes;
pub mod linalg;
pub mod optimizer;
pub mod ratesolver;

pub use error::{Error, Result};
