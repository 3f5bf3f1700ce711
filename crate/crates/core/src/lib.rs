//! Filtering and retrodictive smoothing for continuously monitored open
//! quantum systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`qmath`]: small dense Hermitian linear algebra (square roots,
//!   support-restricted inverses, purity).
//! - [`channels`]: completely positive maps in Kraus form and the Petz
//!   recovery map.
//! - [`classical`]: discrete-state filtering and smoothing, both as a Bayes
//!   product and as a backward retrodictive recursion.
//! - [`dynamics`]: the driven thermal qubit, discretised step operators,
//!   record generation and forward filtering.
//! - [`smoothing`]: retrofiltered effects and the smoothers built on them
//!   (Petz-Fuchs closed form and recursion, weak-valued, symmetrised
//!   products, two-observer true-state smoothing).
//! - [`ensemble`]: seeded Monte-Carlo ensembles and exact enumeration checks.

pub mod channels;
pub mod classical;
pub mod dynamics;
pub mod ensemble;
pub mod qmath;
pub mod rng;
pub mod smoothing;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("trace {0:e} is too small to normalise")]
    ZeroTrace(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown outcome {0}")]
    UnknownOutcome(usize),
    #[error("state {0} is unreachable under the observed outcome")]
    UnreachableOutcome(usize),
    #[error("effective sample size {ess:.3} fell below 2 at step {step}")]
    DegenerateWeights { step: usize, ess: f64 },
    #[error("at time index {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, step: usize) -> Error {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Time index attached to a numerical failure, if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::AtStep { step, .. } | Error::DegenerateWeights { step, .. } => Some(*step),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub use qmath::{CMatrix, DensityMatrix, Effect, C64};
