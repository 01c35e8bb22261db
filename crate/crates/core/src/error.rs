use thiserror::Error;

use crate::ingest::Axis;

/// Errors raised anywhere in the dephasing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported spin quantum number {0}: only S = 1 triplets are supported")]
    UnsupportedSpin(f64),

    #[error(
        "invalid qubit pair ({upper}, {lower}): states must be distinct members of {{+1, 0, -1}}"
    )]
    InvalidQubitPair { upper: i8, lower: i8 },

    #[error("tensor is not symmetric: |d - d^T| = {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("bundle parse error: {0}")]
    Parse(String),

    #[error("shape mismatch at `{path}`: expected {expected}, found {found}")]
    Shape {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("invariant violated at `{path}`: {message}")]
    Invariant { path: String, message: String },

    #[error("spin carriers coincide (r = 0, dipolar tensor is singular): {0}")]
    CoincidentSpins(String),

    #[error("tensor oracle failed at atom {atom}, direction {axis}: {message}")]
    Oracle {
        atom: usize,
        axis: Axis,
        message: String,
    },

    #[error("channel {channel} requires the `{block}` block, which the bundle does not provide")]
    MissingBlock {
        channel: &'static str,
        block: &'static str,
    },

    #[error("time grid under-resolved: dt = {dt:e} s, need dt < {required:e} s")]
    UnderResolvedGrid { dt: f64, required: f64 },

    #[error("no coupling content: the mode list is empty")]
    EmptyCouplings,

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("sites do not match: {0}")]
    SiteMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invariant(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Invariant {
        path: path.into(),
        message: message.into(),
    }
}
