//! Entrywise and Frobenius-type comparison tests. Unlike the spectral
//! statistics these depend on the data beyond `Sigma_hat`, so their null
//! distribution is simulated from full Gaussian datasets.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{empirical_upper_quantile, BootstrapConfig, TestReport};
use crate::exec::{collect_indexed, map_indexed};
use crate::linalg::{same_dim, CovarianceModel, DataMatrix, SymmetricMatrix, DEFAULT_INV_SQRT_TOL};
use crate::sampling::{derive_stream, gaussian_data};
use crate::{Error, Result};

const DEGENERATE_THETA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Supn,
    Ufn,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 2] = [BaselineKind::Supn, BaselineKind::Ufn];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Supn => "supn",
            BaselineKind::Ufn => "ufn",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "supn" => Ok(BaselineKind::Supn),
            "ufn" => Ok(BaselineKind::Ufn),
            _ => Err(Error::Parse(format!("unknown baseline statistic '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    #[default]
    MonteCarlo,
    Asymptotic,
}

impl FromStr for Calibration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" | "monte_carlo" | "montecarlo" => Ok(Calibration::MonteCarlo),
            "asymptotic" => Ok(Calibration::Asymptotic),
            _ => Err(Error::Parse(format!("unknown calibration '{s}'"))),
        }
    }
}

/// `max_{i<=j} n (s_ij - s0_ij)^2 / theta_ij`, with `theta_ij` the
/// empirical variance of `X_ki X_kj`.
pub fn stat_supn(x: &DataMatrix, sigma0: &SymmetricMatrix) -> Result<f64> {
    same_dim(x.ncols(), sigma0.dim(), "data columns vs sigma0")?;
    supn_raw(x.as_matrix(), sigma0)
}

fn supn_raw(x: &DMatrix<f64>, sigma0: &SymmetricMatrix) -> Result<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    let nf = n as f64;
    let s = x.tr_mul(x) / nf;
    let x2 = x.component_mul(x);
    let q = x2.tr_mul(&x2) / nf;
    let s0 = sigma0.as_matrix();
    let mut best: f64 = 0.0;
    for j in 0..p {
        for i in 0..=j {
            let theta = q[(i, j)] - s[(i, j)] * s[(i, j)];
            if theta <= DEGENERATE_THETA {
                return Err(Error::DegenerateVariance(i, j));
            }
            let d = s[(i, j)] - s0[(i, j)];
            best = best.max(nf * d * d / theta);
        }
    }
    Ok(best)
}

/// `U2 - 2 U1 + p` on the whitened rows `Sigma0^{-1/2} X_i`; unbiased for
/// `tr((Sigma~ - I)^2)` with mean-zero data.
pub fn stat_ufn(x: &DataMatrix, sigma0: &CovarianceModel) -> Result<f64> {
    same_dim(x.ncols(), sigma0.dim(), "data columns vs sigma0")?;
    let w = sigma0.inv_sqrt(DEFAULT_INV_SQRT_TOL)?;
    ufn_raw(x.as_matrix(), Some(&w))
}

fn ufn_raw(x: &DMatrix<f64>, w: Option<&SymmetricMatrix>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    let xt;
    let xt_ref = match w {
        Some(w) => {
            xt = x * w.as_matrix();
            &xt
        }
        None => x,
    };
    let g = xt_ref * xt_ref.transpose();
    let nf = n as f64;
    let mut off = 0.0;
    let mut diag = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i == j {
                diag += g[(i, i)];
            } else {
                off += g[(i, j)] * g[(i, j)];
            }
        }
    }
    let u2 = off / (nf * (nf - 1.0));
    let u1 = diag / nf;
    Ok(u2 - 2.0 * u1 + x.ncols() as f64)
}

/// A baseline statistic with its null covariance prepared for repeated use.
#[derive(Debug, Clone)]
pub struct Baseline {
    kind: BaselineKind,
    sigma0: SymmetricMatrix,
    w: Option<SymmetricMatrix>,
}

impl Baseline {
    pub fn new(kind: BaselineKind, sigma0: &CovarianceModel) -> Result<Self> {
        let w = match kind {
            BaselineKind::Ufn => {
                let w = sigma0.inv_sqrt(DEFAULT_INV_SQRT_TOL)?;
                if w.is_diagonal() && w.diagonal().iter().all(|&d| d == 1.0) {
                    None
                } else {
                    Some(w)
                }
            }
            BaselineKind::Supn => None,
        };
        Ok(Self {
            kind,
            sigma0: sigma0.matrix().clone(),
            w,
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.sigma0.dim()
    }

    pub fn evaluate(&self, x: &DataMatrix) -> Result<f64> {
        same_dim(x.ncols(), self.dim(), "data columns vs sigma0")?;
        match self.kind {
            BaselineKind::Supn => supn_raw(x.as_matrix(), &self.sigma0),
            BaselineKind::Ufn => ufn_raw(x.as_matrix(), self.w.as_ref()),
        }
    }
}

/// Gumbel-type limit `P(M - 4 log p + log log p <= t) -> exp(-e^{-t/2} / sqrt(8 pi))`.
pub fn supn_asymptotic_quantile(p: usize, alpha: f64) -> Result<f64> {
    check_gumbel(p, alpha)?;
    let lp = (p as f64).ln();
    let t = -(8.0 * std::f64::consts::PI).ln() - 2.0 * (-(1.0 - alpha).ln()).ln();
    Ok(4.0 * lp - lp.ln() + t)
}

pub fn supn_asymptotic_p_value(m: f64, p: usize) -> Result<f64> {
    check_gumbel(p, 0.5)?;
    let lp = (p as f64).ln();
    let t = m - 4.0 * lp + lp.ln();
    let cdf = (-(8.0 * std::f64::consts::PI).powf(-0.5) * (-t / 2.0).exp()).exp();
    Ok(1.0 - cdf)
}

fn check_gumbel(p: usize, alpha: f64) -> Result<()> {
    if p < 3 {
        return Err(Error::InvalidArgument(format!(
            "asymptotic calibration needs p >= 3, got {p}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Statistic values on `B` Gaussian datasets `Z sigma0^{1/2}`; dataset `b`
/// uses stream `b` of the master seed.
pub fn mc_null_values(baseline: &Baseline, sigma0: &CovarianceModel, config: &BootstrapConfig) -> Result<Vec<f64>> {
    config.validate()?;
    same_dim(sigma0.dim(), baseline.dim(), "calibration covariance vs statistic")?;
    let vals = map_indexed(config.execution, config.replicates, |b| {
        let x = gaussian_data(config.n, sigma0, derive_stream(config.master_seed, b as u64))?;
        baseline.evaluate(&x)
    });
    collect_indexed(vals)
}

pub fn calibrate_mc(kind: BaselineKind, sigma0: &CovarianceModel, config: &BootstrapConfig) -> Result<f64> {
    let values = mc_null_values(&Baseline::new(kind, sigma0)?, sigma0, config)?;
    empirical_upper_quantile(&values, config.alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    #[serde(flatten)]
    pub report: TestReport,
    pub calibration: Calibration,
}

pub fn test_baseline(
    x: &DataMatrix,
    sigma0: &CovarianceModel,
    kind: BaselineKind,
    calibration: Calibration,
    config: &BootstrapConfig,
) -> Result<BaselineReport> {
    same_dim(x.ncols(), sigma0.dim(), "data columns vs sigma0")?;
    let config = BootstrapConfig {
        n: x.nrows(),
        ..config.clone()
    };
    config.validate()?;
    let baseline = Baseline::new(kind, sigma0)?;
    let observed = baseline.evaluate(x)?;
    let report = match (calibration, kind) {
        (Calibration::MonteCarlo, _) => {
            let values = mc_null_values(&baseline, sigma0, &config)?;
            TestReport::from_values(kind.name(), observed, &values, &config, x.ncols())?
        }
        (Calibration::Asymptotic, BaselineKind::Supn) => {
            let quantile = supn_asymptotic_quantile(x.ncols(), config.alpha)?;
            TestReport {
                statistic: kind.name().into(),
                observed,
                quantile,
                p_value: supn_asymptotic_p_value(observed, x.ncols())?,
                reject: observed > quantile,
                replicates: 0,
                alpha: config.alpha,
                master_seed: config.master_seed,
                n: config.n,
                p: x.ncols(),
            }
        }
        (Calibration::Asymptotic, BaselineKind::Ufn) => {
            return Err(Error::InvalidArgument(
                "asymptotic calibration is only available for supn".into(),
            ))
        }
    };
    Ok(BaselineReport { report, calibration })
}
