//! Simultaneous confidence intervals for linear functionals of the
//! covariance, calibrated by the operator-norm bootstrap quantile at an
//! estimated spectrum.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_distribution, BootstrapConfig};
use crate::linalg::{
    same_dim, sample_covariance, schatten1, sym_eigenvalues, Centering, CovarianceModel, DataMatrix, SymmetricMatrix,
};
use crate::stats::{PreparedStatistic, StatKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumMethod {
    Oracle,
    NaiveSample,
    External,
}

/// Nonnegative eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub eigenvalues: Vec<f64>,
    pub method: SpectrumMethod,
}

impl SpectrumEstimate {
    pub fn oracle(sigma: &CovarianceModel) -> Self {
        Self {
            eigenvalues: sigma.eig().eigenvalues.iter().map(|v| v.max(0.0)).collect(),
            method: SpectrumMethod::Oracle,
        }
    }

    /// Eigenvalues of the uncentered sample covariance. Biased when `p` is
    /// comparable to `n`.
    pub fn naive(x: &DataMatrix) -> Result<Self> {
        let s = sample_covariance(x, &Centering::None)?;
        Ok(Self {
            eigenvalues: sym_eigenvalues(&s)?.into_iter().map(|v| v.max(0.0)).collect(),
            method: SpectrumMethod::NaiveSample,
        })
    }

    pub fn external(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("spectrum".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrum".into()));
        }
        if let Some(v) = values.iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spectrum entries must be nonnegative, got {v}"
            )));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            eigenvalues: values,
            method: SpectrumMethod::External,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn covariance(&self) -> Result<CovarianceModel> {
        CovarianceModel::from_diagonal(&self.eigenvalues)
    }
}

/// Upper `alpha` bootstrap quantile of `||Sigma_hat - D||` with `D` the
/// diagonal spectrum and data drawn from `D`.
pub fn simultaneous_q(spec: &SpectrumEstimate, n: usize, config: &BootstrapConfig) -> Result<f64> {
    let cov = spec.covariance()?;
    let stat = PreparedStatistic::new(StatKind::Opn, &cov)?;
    let config = BootstrapConfig { n, ..config.clone() };
    bootstrap_distribution(&cov, &stat, &config)?.quantile()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub center: f64,
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(center: f64, half_width: f64) -> Self {
        Self {
            center,
            half_width,
            lower: center - half_width,
            upper: center + half_width,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// `<A, Sigma_hat> +- q ||A||_{S1}`.
pub fn ci_inner_product(sigma_hat: &SymmetricMatrix, a: &SymmetricMatrix, q: f64) -> Result<Interval> {
    same_dim(sigma_hat.dim(), a.dim(), "sigma_hat vs A")?;
    Ok(Interval::new(a.inner(sigma_hat)?, q * schatten1(a)?))
}

/// `c1' Sigma_hat c2 +- q ||c1|| ||c2||`.
pub fn ci_bilinear(sigma_hat: &SymmetricMatrix, c1: &[f64], c2: &[f64], q: f64) -> Result<Interval> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(Interval::new(sigma_hat.bilinear(c1, c2)?, q * norm(c1) * norm(c2)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub q: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub master_seed: u64,
    pub n: usize,
    pub p: usize,
    pub spectrum_method: SpectrumMethod,
    pub intervals: Vec<Interval>,
}

impl CiReport {
    pub fn new(q: f64, spec: &SpectrumEstimate, n: usize, config: &BootstrapConfig, intervals: Vec<Interval>) -> Self {
        Self {
            q,
            alpha: config.alpha,
            replicates: config.replicates,
            master_seed: config.master_seed,
            n,
            p: spec.dim(),
            spectrum_method: spec.method,
            intervals,
        }
    }
}
