//! Certified spectra and pseudospectra of discrete operators of finite local
//! complexity.
//!
//! The entry points are [`spectrum::spectrum_with_error`] for normal
//! operators and [`pseudospectrum::approx_pseudospectrum`] for general ones.
//! Operators come from [`models::build_model`] or any [`operator::PatchOracle`].

pub mod error;
pub mod exec;
pub mod geometry;
pub mod lower_norm;
pub mod models;
pub mod operator;
pub mod pseudospectrum;
pub mod section;
mod serde_ext;
pub mod spectrum;

pub use error::{Error, Result};
pub use exec::Execution;
pub use num_complex::Complex64;
