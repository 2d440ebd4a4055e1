//! Quantum frequency mixing and coherently averaged synchronized readout on
//! an NV two-level spin: closed forms, a brute-force spin oracle, trace
//! synthesis, spectral analysis and sensitivity estimates.

pub mod bessel;
pub mod casr;
pub mod error;
pub mod oracle;
pub mod qfm;
pub mod scenarios;
pub mod sensitivity;
pub mod spectrum;
pub mod units;

pub use error::{Error, Result};
