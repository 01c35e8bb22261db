//! Phonon- and nuclear-spin-driven dephasing of spin-1 color-center qubits.
//!
//! The crate ingests defect tensors, their gradients and phonon modes, builds
//! energy-gap fluctuation correlations for each dephasing channel and turns
//! them into dephasing times through the second-order cumulant expansion.

pub mod bath;
pub mod cli;
pub mod constants;
pub mod dephase;
pub mod error;
pub mod fluct;
pub mod ingest;
pub mod numeric;
pub mod spinmodel;

pub use error::{Error, Result};
