//! Differentially private SGD with adaptive coordinate-wise clipping.
//!
//! Per-example gradients are mapped through an affine transform
//! `w = (g - a) / b`, clipped to the unit ball, noised with `N(0, sigma^2 I)`
//! and mapped back. Choosing `a` as the running gradient mean and `b` from
//! per-coordinate standard deviations minimizes the injected noise norm
//! subject to `E||w||^2 <= gamma`; constant `b = C` recovers plain l2 clipping.
//!
//! Module map:
//!
//! * [`numerics`]: seeded random streams, Gaussian sampling, vector helpers.
//! * [`mechanism`]: privatization strategies and the clip/noise pipeline.
//! * [`accountant`]: Gaussian calibration and privacy composition.
//! * [`estimator`]: private mean/std estimates and the optimal transform.
//! * [`models`]: objectives with analytic per-example gradients.
//! * [`data`]: synthetic generators and the IDX loader.
//! * [`optimizer`]: the training loop and convergence diagnostics.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod data;
pub mod error;
pub mod estimator;
pub mod mechanism;
pub mod models;
pub mod numerics;
pub mod optimizer;

pub use error::{Error, Result};
pub use numerics::{RealVector, RngStream};
