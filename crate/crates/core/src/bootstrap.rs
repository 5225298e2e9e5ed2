//! The universal bootstrap: recompute the statistic on Gaussian data with
//! the null covariance and compare the observed value with the upper
//! quantile of the replicates.

use serde::{Deserialize, Serialize};

use crate::exec::{collect_indexed, map_indexed, Execution};
use crate::linalg::{
    gram_over_n, same_dim, sample_covariance, Centering, CovarianceModel, DataMatrix, SymmetricMatrix,
};
use crate::sampling::{derive_stream, gaussian_data};
use crate::stats::{ExsSpec, NullStatistics, SpectralStatistic, StatKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Number of bootstrap replicates `B`.
    pub replicates: usize,
    pub alpha: f64,
    pub master_seed: u64,
    /// Bootstrap sample size. The `test_*` entry points overwrite it with
    /// the number of observed rows.
    pub n: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl BootstrapConfig {
    pub fn new(n: usize, master_seed: u64) -> Self {
        Self {
            replicates: 1000,
            alpha: 0.05,
            master_seed,
            n,
            execution: Execution::default(),
        }
    }

    pub fn with_replicates(mut self, b: usize) -> Self {
        self.replicates = b;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("B must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("bootstrap n must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSample {
    pub values: Vec<f64>,
    pub config: BootstrapConfig,
}

impl BootstrapSample {
    pub fn quantile(&self) -> Result<f64> {
        empirical_upper_quantile(&self.values, self.config.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: String,
    pub observed: f64,
    pub quantile: f64,
    pub p_value: f64,
    pub reject: bool,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub n: usize,
    pub p: usize,
}

impl TestReport {
    pub fn from_values(
        statistic: impl Into<String>,
        observed: f64,
        values: &[f64],
        config: &BootstrapConfig,
        p: usize,
    ) -> Result<Self> {
        let quantile = empirical_upper_quantile(values, config.alpha)?;
        Ok(Self {
            statistic: statistic.into(),
            observed,
            quantile,
            p_value: p_value(observed, values),
            reject: observed > quantile,
            replicates: values.len(),
            alpha: config.alpha,
            master_seed: config.master_seed,
            n: config.n,
            p,
        })
    }
}

/// Order statistic `k = max(1, ceil((1 - alpha) B))` of the ascending sort.
pub fn empirical_upper_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("bootstrap values".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len();
    Ok(sorted[upper_index(b, alpha) - 1])
}

/// 1-based index of the upper quantile. `(1 - alpha) B` is snapped to the
/// nearest integer when within rounding noise, so 0.8 * 5 gives 4 not 5.
pub fn upper_index(b: usize, alpha: f64) -> usize {
    let x = (1.0 - alpha) * b as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * (b as f64).max(1.0) {
        r
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, b)
}

/// `(1 + #{v >= observed}) / (B + 1)`.
pub fn p_value(observed: f64, values: &[f64]) -> f64 {
    let count = values.iter().filter(|&&v| v >= observed).count();
    (1 + count) as f64 / (values.len() + 1) as f64
}

/// Runs `f` on `B` bootstrap covariances `Y^T Y / n`, `Y = Z sigma^{1/2}`,
/// replicate `b` drawing from stream `b` of the master seed.
pub fn bootstrap_replicates<T, F>(sigma: &CovarianceModel, config: &BootstrapConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&SymmetricMatrix) -> Result<T> + Sync + Send,
{
    config.validate()?;
    let results = map_indexed(config.execution, config.replicates, |b| {
        let y = gaussian_data(config.n, sigma, derive_stream(config.master_seed, b as u64))?;
        f(&gram_over_n(y.as_matrix()))
    });
    collect_indexed(results)
}

pub fn bootstrap_distribution(
    sigma: &CovarianceModel,
    statistic: &dyn SpectralStatistic,
    config: &BootstrapConfig,
) -> Result<BootstrapSample> {
    same_dim(sigma.dim(), statistic.dim(), "bootstrap covariance vs statistic")?;
    let values = bootstrap_replicates(sigma, config, |s| statistic.evaluate(s))?;
    Ok(BootstrapSample {
        values,
        config: config.clone(),
    })
}

/// Several null statistics evaluated on the same replicates; one value
/// vector per kind.
pub fn bootstrap_many(
    sigma: &CovarianceModel,
    null: &NullStatistics,
    kinds: &[StatKind],
    config: &BootstrapConfig,
) -> Result<Vec<Vec<f64>>> {
    same_dim(sigma.dim(), null.dim(), "bootstrap covariance vs statistic")?;
    let rows = bootstrap_replicates(sigma, config, |s| null.evaluate_many(s, kinds))?;
    Ok((0..kinds.len()).map(|k| rows.iter().map(|r| r[k]).collect()).collect())
}

fn observed_config(x: &DataMatrix, config: &BootstrapConfig) -> BootstrapConfig {
    BootstrapConfig {
        n: x.nrows(),
        ..config.clone()
    }
}

/// Tests `H0: Sigma = sigma0` with the bootstrap run at `sigma0` and the
/// observed `n`.
pub fn test_covariance(
    x: &DataMatrix,
    sigma0: &CovarianceModel,
    kind: StatKind,
    config: &BootstrapConfig,
    centering: &Centering,
) -> Result<TestReport> {
    same_dim(x.ncols(), sigma0.dim(), "data columns vs sigma0")?;
    let config = observed_config(x, config);
    config.validate()?;
    let statistic = NullStatistics::new(sigma0, &[kind])?.prepared(kind);
    let observed = statistic.evaluate(&sample_covariance(x, centering)?)?;
    let sample = bootstrap_distribution(sigma0, &statistic, &config)?;
    TestReport::from_values(kind.name(), observed, &sample.values, &config, x.ncols())
}

/// Generalized test. Replicates are drawn from `sigma`, or from the first
/// block's `sigma1` when `sigma` is `None`.
pub fn test_exs(
    x: &DataMatrix,
    spec: &ExsSpec,
    sigma: Option<&CovarianceModel>,
    config: &BootstrapConfig,
    centering: &Centering,
) -> Result<TestReport> {
    same_dim(x.ncols(), spec.dim(), "data columns vs statistic")?;
    let config = observed_config(x, config);
    config.validate()?;
    let owned;
    let sigma = match sigma {
        Some(s) => s,
        None => {
            owned = CovarianceModel::new(spec.blocks()[0].sigma1.clone())?;
            &owned
        }
    };
    let observed = spec.evaluate(&sample_covariance(x, centering)?)?;
    let sample = bootstrap_distribution(sigma, spec, &config)?;
    TestReport::from_values(spec.name(), observed, &sample.values, &config, x.ncols())
}
