//! Two-stage absolute trajectory estimation from drifting relative motion and
//! sparse location anchors.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baselines;
pub mod continuous_opt;
pub mod discrete_opt;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod synth;
pub mod transform_net;

pub use error::{Error, Result};
