//! Adaptive non-harmonic modelling of pulse-like signals.
//!
//! The crate is organised along the analysis chain:
//!
//! * [`model`]: wave-shape functions, IMT components, synthetic signals and
//!   ARMA/Student-t noise.
//! * [`tf`]: Gaussian-window STFT, the reassignment frequency and the
//!   synchrosqueezing transform.
//! * [`ridge`]: penalised dynamic-programming ridge extraction.
//! * [`recovery`]: amplitude/phase reconstruction around the ridge.
//! * [`shape`]: functional regression of the wave-shape Fourier coefficients
//!   (the spectral pulse signature, SPS).
//! * [`classify`]: PLS scoring (GPS), ROC/AUC with bootstrap CI, LOOCV and a
//!   permutation functional ANOVA.
//! * [`io`] and [`pipeline`]: file formats, configuration and batch drivers.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read closer to the formulas in numeric code.
#![allow(clippy::needless_range_loop)]

pub mod classify;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod recovery;
pub mod ridge;
pub mod seed;
pub mod shape;
pub mod tf;

pub use error::{Error, Result};
