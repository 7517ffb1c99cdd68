//! Elliptical attention: self-attention whose query-key scores use a diagonal
//! Mahalanobis metric estimated from how value vectors move between layers.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`] dense matrices, softmax, a reverse-mode tape and finite differences
//! * [`metric`] the diagonal metric, its scaling modes, the κ coefficients and the robustness bound
//! * [`estimators`] coordinate-wise variability estimators and the synthetic function catalog
//! * [`attention`] standard attention, the Mahalanobis softmax and its Jacobian, elliptical attention
//! * [`nwlab`] Nadaraya-Watson regression and the statistical experiments built on it
//! * [`model`] a toy character-level transformer with collapse and robustness diagnostics

pub mod attention;
pub mod error;
pub mod estimators;
pub mod io;
pub mod metric;
pub mod model;
pub mod numerics;
pub mod nwlab;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
