//! Interface-controller synthesis for two-layer partially observed stochastic
//! linear systems, with Monte Carlo validation of the resulting bound.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod cases;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod sdp;
pub mod simulation;
pub mod synthesis;

pub use error::{Error, Result};
