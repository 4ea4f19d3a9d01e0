//! Stochastic projected primal-dual splitting with a correction step.
//!
//! Solves `0 ∈ A_1 x + B x + L^* A_2 L x + N_V x` for maximally monotone
//! `A_2`, cocoercive `B` observed through a noisy oracle, and a closed
//! subspace `V`, together with its saddle-point and multi-block forms.

// `!(a <= b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod composite;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod linop;
pub mod monotone;
pub mod solver;
pub mod stochastic;
pub mod zoo;

pub use error::{Error, Result};
