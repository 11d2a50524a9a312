//! Pseudo-spectral laboratory for p-evolution equations with complex,
//! decaying lower-order coefficients.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`] — periodic grid, FFT conventions, Sobolev norms, fields;
//! * [`symbol`] — sampled symbols, left quantization, symbol-class checks,
//!   Gårding defects;
//! * [`coefficients`] — coefficient model, decay-condition checker,
//!   composed/linearized coefficients;
//! * [`lambda`] — the Λ change of variables, `e^{±Λ}`, Neumann inverse,
//!   conjugated generator and constant tuning;
//! * [`linear`] — Lawson RK4 method-of-lines solver, transformed solve and
//!   energy audit;
//! * [`semilinear`] — the map `T`, its derivative, the solve map `S`, seeds,
//!   mollified target and the Newton loop;
//! * [`scenarios`] — presets, run configuration and the pipeline used by the
//!   `pevo` binary.

#![warn(missing_docs)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the summation formulas of the numerics.
#![allow(clippy::needless_range_loop)]

pub mod coefficients;
pub mod error;
pub mod grid;
pub mod jet;
pub mod lambda;
pub mod linear;
pub mod scenarios;
pub mod semilinear;
pub mod symbol;

pub use error::{PevoError, Result};
pub use grid::{bracket, derivative, sobolev_norm, Field, Grid, C64};
