//! Simulation and verification toolkit for SDEs driven by additive Gaussian
//! Volterra noise.

// `!(x > 0.0)` guards are written that way to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod besov;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod io;
pub mod kernels;
pub mod mc;
pub mod paths;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod smoothing;

pub use error::{Error, Result};
