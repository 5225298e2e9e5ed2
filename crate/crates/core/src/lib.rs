//! Universal bootstrap tests for spectral statistics of sample covariance
//! matrices, plus the deformed Marchenko-Pastur machinery, baseline tests,
//! simultaneous confidence intervals and a Monte-Carlo harness.

pub mod baselines;
pub mod bootstrap;
pub mod ci;
mod error;
pub mod exec;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod rmt;
pub mod sampling;
pub mod stats;

pub use bootstrap::{BootstrapConfig, BootstrapSample, TestReport};
pub use error::{Error, Result};
pub use exec::Execution;
pub use linalg::{Centering, CovarianceModel, DataMatrix, EigenDecomposition, SymmetricMatrix};
pub use sampling::{EntryDistribution, RngStream};
pub use stats::{ExsSpec, SpectralStatistic, StatKind};
