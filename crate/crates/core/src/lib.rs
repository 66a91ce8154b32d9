//! Spectral solvers and diagnostics for nonlinear Schrodinger equations of
//! Doebner-Goldin type: separation tests, conditional signals after remote
//! measurements, regularized-delta asymptotics and dispersion extraction.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bipartite;
pub mod diagnostics;
pub mod dispersion;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod field;
pub mod regularization;
pub mod separation;
pub mod signaling;
pub mod spectral;
pub mod terms;

pub use error::{Error, Result};
pub use field::{ComplexField, Grid, RealField, C64};
