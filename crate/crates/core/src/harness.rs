//! Monte-Carlo experiments: size tables, power curves, universality and
//! Tracy-Widom cross-ensemble checks, spiked phase transitions and
//! confidence-interval coverage.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::baselines::{mc_null_values, Baseline, BaselineKind};
use crate::bootstrap::{bootstrap_many, empirical_upper_quantile, BootstrapConfig};
use crate::ci::{simultaneous_q, SpectrumEstimate};
use crate::exec::{collect_indexed, map_indexed};
use crate::linalg::{gram_over_n, operator_norm, sym_eigenvalues, CovarianceModel, DataMatrix, SymmetricMatrix};
use crate::rmt::{bbp_kappas, corollary1_normalize, SpikeModel};
use crate::sampling::{
    derive_stream, general_data, label_tag, standard_entries, sub_seed, unit_sphere, EntryDistribution,
};
use crate::stats::{NullStatistics, StatKind};
use crate::{Error, Result};

/// Covariance families of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovModelKind {
    ExpDecay { rho: f64 },
    Block { block: usize, off: f64 },
    SignedSubExp { base: f64, power: f64 },
}

impl CovModelKind {
    pub const EXP_DECAY: CovModelKind = CovModelKind::ExpDecay { rho: 0.6 };
    pub const BLOCK: CovModelKind = CovModelKind::Block { block: 10, off: 0.55 };
    pub const SIGNED_SUB_EXP: CovModelKind = CovModelKind::SignedSubExp { base: 0.4, power: 0.5 };
    pub const ALL: [CovModelKind; 3] = [Self::EXP_DECAY, Self::BLOCK, Self::SIGNED_SUB_EXP];

    pub fn name(&self) -> &'static str {
        match self {
            CovModelKind::ExpDecay { .. } => "expdecay",
            CovModelKind::Block { .. } => "block",
            CovModelKind::SignedSubExp { .. } => "signedsubexp",
        }
    }

    /// Entries of the `p x p` matrix. Block sizes that do not divide `p`
    /// leave a smaller final block.
    pub fn entries(&self, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, p, |i, j| {
            let d = i.abs_diff(j);
            match *self {
                CovModelKind::ExpDecay { rho } => rho.powi(d as i32),
                CovModelKind::Block { block, off } => {
                    if i == j {
                        1.0
                    } else if i / block == j / block {
                        off
                    } else {
                        0.0
                    }
                }
                CovModelKind::SignedSubExp { base, power } => {
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * base.powf((d as f64).powf(power))
                }
            }
        })
    }

    pub fn covariance(&self, p: usize) -> Result<CovarianceModel> {
        if p == 0 {
            return Err(Error::EmptyInput("dimension p".into()));
        }
        if let CovModelKind::Block { block: 0, .. } = self {
            return Err(Error::InvalidArgument("block size must be positive".into()));
        }
        let c = CovarianceModel::new(SymmetricMatrix::from_matrix(self.entries(p))?)?;
        if c.psd_floor() <= -1e-10 {
            return Err(Error::NotPsd {
                min_eigenvalue: c.psd_floor(),
                bound: -1e-10,
            });
        }
        Ok(c)
    }
}

impl fmt::Display for CovModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expdecay" | "exp" => Ok(Self::EXP_DECAY),
            "block" => Ok(Self::BLOCK),
            "signedsubexp" | "signed" => Ok(Self::SIGNED_SUB_EXP),
            _ => Err(Error::Parse(format!("unknown covariance model '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlternativeKind {
    /// `sigma (u u'/2 + v v'/4)`, `u` the fifth eigenvector of `Sigma0`, `v`
    /// uniform on the sphere and redrawn every replicate.
    Spike,
    /// `sigma I`.
    WhiteNoise,
}

impl AlternativeKind {
    pub fn name(self) -> &'static str {
        match self {
            AlternativeKind::Spike => "spike",
            AlternativeKind::WhiteNoise => "whitenoise",
        }
    }
}

impl FromStr for AlternativeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spike" => Ok(AlternativeKind::Spike),
            "whitenoise" | "white" => Ok(AlternativeKind::WhiteNoise),
            _ => Err(Error::Parse(format!("unknown alternative '{s}'"))),
        }
    }
}

/// Fifth-largest eigenvector of `sigma0`, signed so its first nonzero
/// component is positive.
pub fn spike_direction(sigma0: &CovarianceModel) -> Result<Vec<f64>> {
    let p = sigma0.dim();
    if p < 5 {
        return Err(Error::InvalidArgument(format!(
            "spike alternative needs p >= 5, got {p}"
        )));
    }
    let mut u: Vec<f64> = sigma0.eig().eigenvectors.column(4).iter().copied().collect();
    if u.iter().find(|v| v.abs() > 1e-12).is_some_and(|&v| v < 0.0) {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(u)
}

pub fn spike_delta(u: &[f64], v: &[f64], sigma: f64) -> Result<SymmetricMatrix> {
    let p = u.len();
    SymmetricMatrix::from_matrix(DMatrix::from_fn(p, p, |i, j| {
        sigma * (u[i] * u[j] / 2.0 + v[i] * v[j] / 4.0)
    }))
}

/// A test statistic in an experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatisticId {
    Spectral(StatKind),
    Baseline(BaselineKind),
}

impl StatisticId {
    pub fn name(self) -> &'static str {
        match self {
            StatisticId::Spectral(k) => k.name(),
            StatisticId::Baseline(k) => k.name(),
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').map(|t| t.trim().parse()).collect()
    }
}

impl fmt::Display for StatisticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatisticId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<StatKind>()
            .map(StatisticId::Spectral)
            .or_else(|_| s.parse::<BaselineKind>().map(StatisticId::Baseline))
            .map_err(|_| Error::Parse(format!("unknown statistic '{s}'")))
    }
}

/// Null-prepared statistics evaluated together on each dataset.
struct Evaluator {
    stats: Vec<StatisticId>,
    kinds: Vec<StatKind>,
    null: Option<NullStatistics>,
    baselines: Vec<Baseline>,
}

impl Evaluator {
    fn new(sigma0: &CovarianceModel, stats: &[StatisticId]) -> Result<Self> {
        if stats.is_empty() {
            return Err(Error::EmptyInput("statistic list".into()));
        }
        let kinds: Vec<StatKind> = stats
            .iter()
            .filter_map(|s| match s {
                StatisticId::Spectral(k) => Some(*k),
                _ => None,
            })
            .collect();
        let null = if kinds.is_empty() {
            None
        } else {
            Some(NullStatistics::new(sigma0, &kinds)?)
        };
        let baselines = stats
            .iter()
            .filter_map(|s| match s {
                StatisticId::Baseline(k) => Some(Baseline::new(*k, sigma0)),
                _ => None,
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            stats: stats.to_vec(),
            kinds,
            null,
            baselines,
        })
    }

    fn evaluate(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        let spectral = match &self.null {
            Some(null) => null.evaluate_many(&gram_over_n(x.as_matrix()), &self.kinds)?,
            None => Vec::new(),
        };
        let (mut si, mut bi) = (0, 0);
        self.stats
            .iter()
            .map(|s| match s {
                StatisticId::Spectral(_) => {
                    si += 1;
                    Ok(spectral[si - 1])
                }
                StatisticId::Baseline(_) => {
                    bi += 1;
                    self.baselines[bi - 1].evaluate(x)
                }
            })
            .collect()
    }

    /// Upper quantiles under the Gaussian null: the universal bootstrap for
    /// spectral statistics, full-data Monte Carlo for the baselines.
    fn thresholds(&self, sigma0: &CovarianceModel, config: &BootstrapConfig) -> Result<Vec<f64>> {
        let spectral = match &self.null {
            Some(null) => bootstrap_many(sigma0, null, &self.kinds, config)?,
            None => Vec::new(),
        };
        let (mut si, mut bi) = (0, 0);
        self.stats
            .iter()
            .map(|s| match s {
                StatisticId::Spectral(_) => {
                    si += 1;
                    empirical_upper_quantile(&spectral[si - 1], config.alpha)
                }
                StatisticId::Baseline(_) => {
                    bi += 1;
                    let values = mc_null_values(&self.baselines[bi - 1], sigma0, config)?;
                    empirical_upper_quantile(&values, config.alpha)
                }
            })
            .collect()
    }
}

/// One row of the long-format results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub experiment: String,
    pub statistic: String,
    pub model: String,
    pub distribution: String,
    pub n: usize,
    pub p: usize,
    pub alternative: String,
    pub sigma: f64,
    pub reps: usize,
    pub rejections: usize,
    pub rate: f64,
    pub se: f64,
    pub threshold: f64,
}

impl CellResult {
    #[allow(clippy::too_many_arguments)]
    fn new(
        experiment: &str,
        statistic: StatisticId,
        model: &str,
        distribution: &str,
        n: usize,
        p: usize,
        alternative: &str,
        sigma: f64,
        reps: usize,
        rejections: usize,
        threshold: f64,
    ) -> Self {
        let rate = rejections as f64 / reps as f64;
        Self {
            experiment: experiment.into(),
            statistic: statistic.name().into(),
            model: model.into(),
            distribution: distribution.into(),
            n,
            p,
            alternative: alternative.into(),
            sigma,
            reps,
            rejections,
            rate,
            se: (rate * (1.0 - rate) / reps as f64).sqrt(),
            threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub reps: usize,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub metadata: BTreeMap<String, String>,
    pub cells: Vec<CellResult>,
}

impl ExperimentResult {
    fn new(experiment: &str, reps: usize, config: &BootstrapConfig) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert(
            "calibration".into(),
            "one null threshold per (model, n, p, statistic), shared by every cell and replicate".into(),
        );
        metadata.insert(
            "data_seeds".into(),
            "per (model, distribution, n, p); identical across statistics and sigma".into(),
        );
        Self {
            experiment: experiment.into(),
            reps,
            replicates: config.replicates,
            alpha: config.alpha,
            master_seed: config.master_seed,
            metadata,
            cells: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.cells {
            w.serialize(c).map_err(|e| Error::Parse(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn cell(&self, statistic: &str, model: &str, distribution: &str, sigma: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.statistic == statistic && c.model == model && c.distribution == distribution && c.sigma == sigma
        })
    }
}

fn null_seed(master: u64, model: &str, n: usize, p: usize) -> u64 {
    sub_seed(master, label_tag(&format!("null/{model}/{n}/{p}")))
}

fn data_seed(master: u64, model: &str, dist: &str, n: usize, p: usize) -> u64 {
    sub_seed(master, label_tag(&format!("data/{model}/{dist}/{n}/{p}")))
}

fn check_reps(reps: usize) -> Result<()> {
    if reps == 0 {
        Err(Error::InvalidArgument("reps must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn count(rejected: &[Vec<bool>], k: usize) -> usize {
    rejected.iter().filter(|r| r[k]).count()
}

/// Empirical size of every statistic on every `(model, distribution)` cell.
pub fn run_size(
    models: &[CovModelKind],
    dists: &[EntryDistribution],
    stats: &[StatisticId],
    n: usize,
    p: usize,
    reps: usize,
    config: &BootstrapConfig,
) -> Result<ExperimentResult> {
    check_reps(reps)?;
    let mut out = ExperimentResult::new("size", reps, config);
    for model in models {
        let cell = format!("{model} n={n} p={p}");
        let run = || -> Result<Vec<CellResult>> {
            let sigma0 = model.covariance(p)?;
            let eval = Evaluator::new(&sigma0, stats)?;
            let boot = BootstrapConfig {
                n,
                master_seed: null_seed(config.master_seed, model.name(), n, p),
                ..config.clone()
            };
            let thresholds = eval.thresholds(&sigma0, &boot)?;
            let mut cells = Vec::new();
            for dist in dists {
                let seed = data_seed(config.master_seed, model.name(), &dist.name(), n, p);
                let rows = map_indexed(config.execution, reps, |r| {
                    let x = general_data(n, &sigma0, dist, derive_stream(seed, r as u64))?;
                    let v = eval.evaluate(&x)?;
                    Ok(v.iter().zip(&thresholds).map(|(a, t)| a > t).collect::<Vec<bool>>())
                });
                let rows = collect_indexed(rows)?;
                for (k, s) in stats.iter().enumerate() {
                    cells.push(CellResult::new(
                        "size",
                        *s,
                        model.name(),
                        &dist.name(),
                        n,
                        p,
                        "none",
                        0.0,
                        reps,
                        count(&rows, k),
                        thresholds[k],
                    ));
                }
            }
            Ok(cells)
        };
        out.cells.extend(run().map_err(|e| e.in_cell(&cell))?);
    }
    Ok(out)
}

/// Rejection rates under `Sigma = Sigma0 + Delta(sigma)` with thresholds
/// calibrated at `Sigma0`.
#[allow(clippy::too_many_arguments)]
pub fn run_power(
    model: CovModelKind,
    alternative: AlternativeKind,
    sigma_grid: &[f64],
    dist: &EntryDistribution,
    stats: &[StatisticId],
    n: usize,
    p: usize,
    reps: usize,
    config: &BootstrapConfig,
) -> Result<ExperimentResult> {
    check_reps(reps)?;
    if sigma_grid.is_empty() {
        return Err(Error::EmptyInput("sigma grid".into()));
    }
    if let Some(s) = sigma_grid.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "signal strength must be nonnegative, got {s}"
        )));
    }
    let mut out = ExperimentResult::new("power", reps, config);
    out.metadata.insert("alternative".into(), alternative.name().into());
    if alternative == AlternativeKind::Spike {
        out.metadata.insert(
            "spike_v".into(),
            "redrawn uniformly on the sphere every replicate".into(),
        );
    }
    let sigma0 = model.covariance(p)?;
    let eval = Evaluator::new(&sigma0, stats)?;
    let boot = BootstrapConfig {
        n,
        master_seed: null_seed(config.master_seed, model.name(), n, p),
        ..config.clone()
    };
    let thresholds = eval.thresholds(&sigma0, &boot)?;
    let u = match alternative {
        AlternativeKind::Spike => Some(spike_direction(&sigma0)?),
        AlternativeKind::WhiteNoise => None,
    };
    let seed = data_seed(config.master_seed, model.name(), &dist.name(), n, p);
    let v_seed = sub_seed(seed, label_tag("spike-v"));
    for &sigma in sigma_grid {
        let cell = format!("{model} {} sigma={sigma}", alternative.name());
        let run = || -> Result<Vec<Vec<bool>>> {
            let shared = match (alternative, sigma == 0.0) {
                (_, true) => Some(sigma0.clone()),
                (AlternativeKind::WhiteNoise, false) => Some(CovarianceModel::new(sigma0.matrix().shifted(sigma))?),
                (AlternativeKind::Spike, false) => None,
            };
            let rows = map_indexed(config.execution, reps, |r| {
                let owned;
                let cov = match &shared {
                    Some(c) => c,
                    None => {
                        let mut rng = derive_stream(v_seed, r as u64).rng();
                        let v = unit_sphere(p, &mut rng);
                        let delta = spike_delta(u.as_deref().expect("spike direction"), &v, sigma)?;
                        owned = CovarianceModel::new(sigma0.matrix().add(&delta)?)?;
                        &owned
                    }
                };
                let x = general_data(n, cov, dist, derive_stream(seed, r as u64))?;
                let v = eval.evaluate(&x)?;
                Ok(v.iter().zip(&thresholds).map(|(a, t)| a > t).collect())
            });
            collect_indexed(rows)
        };
        let rows = run().map_err(|e| e.in_cell(&cell))?;
        for (k, s) in stats.iter().enumerate() {
            out.cells.push(CellResult::new(
                "power",
                *s,
                model.name(),
                &dist.name(),
                n,
                p,
                alternative.name(),
                sigma,
                reps,
                count(&rows, k),
                thresholds[k],
            ));
        }
    }
    Ok(out)
}

/// Two-sample Kolmogorov-Smirnov comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub ks_distance: f64,
    pub p_value: f64,
    pub n_target: usize,
    pub n_reference: usize,
    pub mean_target: f64,
    pub mean_reference: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("KS samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let t = x[i].min(y[j]);
        while i < n && x[i] <= t {
            i += 1;
        }
        while j < m && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(KsResult {
        ks_distance: d,
        p_value: kolmogorov_q(lambda),
        n_target: n,
        n_reference: m,
        mean_target: mean(a),
        mean_reference: mean(b),
    })
}

/// `Q(l) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 l^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Distribution of the statistic under `dist` entries against Gaussian
/// entries, both with covariance `sigma` and `n` rows.
pub fn run_universality(
    sigma: &CovarianceModel,
    sigma0: &CovarianceModel,
    dist: &EntryDistribution,
    n: usize,
    reps: usize,
    kind: StatKind,
    config: &BootstrapConfig,
) -> Result<KsResult> {
    check_reps(reps)?;
    let null = NullStatistics::new(sigma0, &[kind])?;
    let sample = |d: &EntryDistribution, role: &str| -> Result<Vec<f64>> {
        let seed = sub_seed(config.master_seed, label_tag(role));
        let vals = map_indexed(config.execution, reps, |r| {
            let x = general_data(n, sigma, d, derive_stream(seed, r as u64))?;
            null.evaluate(&gram_over_n(x.as_matrix()), kind)
        });
        collect_indexed(vals)
    };
    let target = sample(dist, "universality/target")?;
    let reference = sample(&EntryDistribution::Gaussian, "universality/reference")?;
    ks_two_sample(&target, &reference)
}

/// Normalized `lambda_1(Z'Z)` for `p >= 10 n` under `dist` against
/// Gaussian entries.
pub fn run_tracy_widom_check(
    n: usize,
    p: usize,
    dist: &EntryDistribution,
    reps: usize,
    config: &BootstrapConfig,
) -> Result<KsResult> {
    check_reps(reps)?;
    if p < 10 * n {
        return Err(Error::InvalidArgument(format!("need p >= 10 n, got n = {n}, p = {p}")));
    }
    let sample = |d: &EntryDistribution, role: &str| -> Result<Vec<f64>> {
        let seed = sub_seed(config.master_seed, label_tag(role));
        let vals = map_indexed(config.execution, reps, |r| {
            let z = standard_entries(n, p, d, derive_stream(seed, r as u64))?;
            // Z Z' shares the nonzero spectrum of Z' Z.
            let top = sym_eigenvalues(&SymmetricMatrix::from_matrix(&z * z.transpose())?)?[0];
            corollary1_normalize(top, n, p)
        });
        collect_indexed(vals)
    };
    let target = sample(dist, "tw/target")?;
    let reference = sample(&EntryDistribution::Gaussian, "tw/reference")?;
    ks_two_sample(&target, &reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbpPoint {
    pub d_prime: f64,
    pub rejections: usize,
    pub rate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbpResult {
    pub n: usize,
    pub p: usize,
    pub phi: f64,
    pub statistic: String,
    pub kappa: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub reps: usize,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub points: Vec<BbpPoint>,
    /// Where the power curve crosses `(1 + alpha) / 2`.
    pub midpoint: Option<f64>,
}

/// Power of the `Sigma0 = I` test against one spike `d'` over an identity
/// bulk, for each `d'` on the grid.
pub fn run_bbp(
    d_grid: &[f64],
    n: usize,
    p: usize,
    reps: usize,
    kind: StatKind,
    config: &BootstrapConfig,
) -> Result<BbpResult> {
    check_reps(reps)?;
    if d_grid.is_empty() {
        return Err(Error::EmptyInput("spike grid".into()));
    }
    if let Some(d) = d_grid.iter().find(|d| d.is_nan() || **d < 0.0) {
        return Err(Error::InvalidArgument(format!("spike must be nonnegative, got {d}")));
    }
    let phi = p as f64 / n as f64;
    let (_, ks) = bbp_kappas(&SpikeModel::identity_bulk(vec![d_grid[0]], vec![1.0], p, phi)?)?;
    let sigma0 = CovarianceModel::identity(p);
    let null = NullStatistics::new(&sigma0, &[kind])?;
    let boot = BootstrapConfig {
        n,
        master_seed: sub_seed(config.master_seed, label_tag("bbp/null")),
        ..config.clone()
    };
    let threshold = empirical_upper_quantile(&bootstrap_many(&sigma0, &null, &[kind], &boot)?[0], config.alpha)?;
    let seed = sub_seed(config.master_seed, label_tag("bbp/data"));
    let mut points = Vec::new();
    for &d in d_grid {
        let mut diag = vec![1.0; p];
        diag[0] = d;
        let cov = CovarianceModel::from_diagonal(&diag)?;
        let rows = map_indexed(config.execution, reps, |r| {
            let x = general_data(n, &cov, &EntryDistribution::Gaussian, derive_stream(seed, r as u64))?;
            Ok(null.evaluate(&gram_over_n(x.as_matrix()), kind)? > threshold)
        });
        let rejections = collect_indexed(rows)?.into_iter().filter(|&b| b).count();
        let rate = rejections as f64 / reps as f64;
        points.push(BbpPoint {
            d_prime: d,
            rejections,
            rate,
            se: (rate * (1.0 - rate) / reps as f64).sqrt(),
        });
    }
    let level = (1.0 + config.alpha) / 2.0;
    let midpoint = points.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        (a.rate < level && b.rate >= level)
            .then(|| a.d_prime + (level - a.rate) / (b.rate - a.rate) * (b.d_prime - a.d_prime))
    });
    Ok(BbpResult {
        n,
        p,
        phi,
        statistic: kind.name().into(),
        kappa: ks[0].kappa,
        threshold,
        alpha: config.alpha,
        reps,
        replicates: config.replicates,
        points,
        midpoint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub q: f64,
    pub alpha: f64,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub pairs: usize,
    /// Fraction of replicates where every random pair is covered.
    pub coverage_random: f64,
    /// Same, with the extremal pair (top eigenvector of `Sigma_hat - Sigma`)
    /// added to each replicate's pairs.
    pub coverage_with_extremal: f64,
}

/// Simultaneous coverage of `c1' Sigma c2` by the bilinear intervals with
/// `q` from the oracle spectrum.
pub fn run_ci_coverage(
    sigma: &CovarianceModel,
    n: usize,
    reps: usize,
    pairs: usize,
    config: &BootstrapConfig,
) -> Result<CoverageResult> {
    check_reps(reps)?;
    let p = sigma.dim();
    let boot = BootstrapConfig {
        n,
        master_seed: sub_seed(config.master_seed, label_tag("ci/null")),
        ..config.clone()
    };
    let q = simultaneous_q(&SpectrumEstimate::oracle(sigma), n, &boot)?;
    let data = sub_seed(config.master_seed, label_tag("ci/data"));
    let pair_seed = sub_seed(config.master_seed, label_tag("ci/pairs"));
    let rows = map_indexed(config.execution, reps, |r| {
        let x = general_data(n, sigma, &EntryDistribution::Gaussian, derive_stream(data, r as u64))?;
        let err = gram_over_n(x.as_matrix()).sub(sigma.matrix())?;
        let mut rng = derive_stream(pair_seed, r as u64).rng();
        let mut random_ok = true;
        for _ in 0..pairs {
            let c1 = unit_sphere(p, &mut rng);
            let c2 = unit_sphere(p, &mut rng);
            if err.bilinear(&c1, &c2)?.abs() > q {
                random_ok = false;
            }
        }
        // The sup over unit pairs of |c1' E c2| is ||E||.
        let extremal_ok = operator_norm(&err)? <= q;
        Ok((random_ok, random_ok && extremal_ok))
    });
    let rows = collect_indexed(rows)?;
    let frac = |f: &dyn Fn(&(bool, bool)) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / reps as f64;
    Ok(CoverageResult {
        q,
        alpha: config.alpha,
        n,
        p,
        reps,
        pairs,
        coverage_random: frac(&|r| r.0),
        coverage_with_extremal: frac(&|r| r.1),
    })
}

/// Seeds an independent generator for auxiliary draws in tests and tools.
pub fn aux_rng(seed: u64, label: &str) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(sub_seed(seed, label_tag(label)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn models_are_psd() {
        for m in CovModelKind::ALL {
            for p in [5, 10, 37, 100, 200, 500] {
                let c = m.covariance(p).unwrap();
                assert!(c.psd_floor() > -1e-10, "{m} p={p}");
            }
        }
    }

    #[test]
    fn model_entries() {
        let e = CovModelKind::EXP_DECAY.entries(4);
        assert!((e[(0, 3)] - 0.216).abs() < 1e-15);
        let b = CovModelKind::BLOCK.entries(20);
        assert_eq!((b[(0, 9)], b[(9, 10)], b[(10, 19)], b[(3, 3)]), (0.55, 0.0, 0.55, 1.0));
        let s = CovModelKind::SIGNED_SUB_EXP.entries(5);
        assert!((s[(0, 4)] - 0.4f64.powf(2.0)).abs() < 1e-15);
        assert!((s[(0, 1)] + 0.4).abs() < 1e-15);
    }

    #[test]
    fn spike_delta_rank_and_trace() {
        let sigma0 = CovModelKind::EXP_DECAY.covariance(30).unwrap();
        let u = spike_direction(&sigma0).unwrap();
        let mut rng = aux_rng(1, "v");
        for sigma in [0.5, 2.0, 7.0] {
            let v = unit_sphere(30, &mut rng);
            let d = spike_delta(&u, &v, sigma).unwrap();
            assert!((d.trace() - sigma * 0.75).abs() < 1e-12);
            let ev = sym_eigenvalues(&d).unwrap();
            assert!(ev[2..].iter().all(|x| x.abs() < 1e-10));
        }
    }

    #[test]
    fn spike_direction_sign_is_canonical() {
        let sigma0 = CovModelKind::BLOCK.covariance(50).unwrap();
        let u = spike_direction(&sigma0).unwrap();
        assert!(u.iter().find(|v| v.abs() > 1e-12).unwrap() > &0.0);
        let norm: f64 = u.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn statistic_names_parse() {
        let l = StatisticId::parse_list("opn,roy,com,supn,ufn").unwrap();
        assert_eq!(
            l.iter().map(|s| s.name()).collect::<Vec<_>>(),
            ["opn", "roy", "com", "supn", "ufn"]
        );
        assert!("lfn".parse::<StatisticId>().is_err());
    }

    #[test]
    fn zero_reps_rejected() {
        let err = run_size(
            &[CovModelKind::EXP_DECAY],
            &[EntryDistribution::Gaussian],
            &[StatisticId::Spectral(StatKind::Opn)],
            10,
            5,
            0,
            &BootstrapConfig::new(10, 1),
        );
        assert!(err.is_err());
    }

    #[test]
    fn negative_sigma_rejected() {
        let err = run_power(
            CovModelKind::EXP_DECAY,
            AlternativeKind::WhiteNoise,
            &[-1.0],
            &EntryDistribution::Gaussian,
            &[StatisticId::Spectral(StatKind::Opn)],
            10,
            5,
            5,
            &BootstrapConfig::new(10, 1),
        );
        assert!(err.is_err());
    }

    #[test]
    fn ks_examples() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.ks_distance, 0.0);
        assert_eq!(r.p_value, 1.0);
        let b: Vec<f64> = (0..100).map(|i| i as f64 + 1000.0).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert_eq!(r.ks_distance, 1.0);
        assert!(r.p_value < 1e-10);
        // Kolmogorov distribution: Q(1.36) ~ 0.049.
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 1e-3);
    }

    #[test]
    fn ks_ties_handled() {
        let a = [1.0, 1.0, 2.0, 2.0];
        let b = [1.0, 2.0, 2.0, 2.0];
        assert!((ks_two_sample(&a, &b).unwrap().ks_distance - 0.25).abs() < 1e-15);
    }

    #[test]
    fn power_at_zero_equals_size() {
        let stats = [
            StatisticId::Spectral(StatKind::Opn),
            StatisticId::Spectral(StatKind::Roy),
        ];
        let cfg = BootstrapConfig::new(0, 5).with_replicates(60);
        let size = run_size(
            &[CovModelKind::EXP_DECAY],
            &[EntryDistribution::Gaussian],
            &stats,
            30,
            10,
            80,
            &cfg,
        )
        .unwrap();
        for alt in [AlternativeKind::Spike, AlternativeKind::WhiteNoise] {
            let pow = run_power(
                CovModelKind::EXP_DECAY,
                alt,
                &[0.0, 1.0],
                &EntryDistribution::Gaussian,
                &stats,
                30,
                10,
                80,
                &cfg,
            )
            .unwrap();
            for s in ["opn", "roy"] {
                let a = size.cell(s, "expdecay", "gauss", 0.0).unwrap();
                let b = pow.cell(s, "expdecay", "gauss", 0.0).unwrap();
                assert_eq!((a.rejections, a.threshold), (b.rejections, b.threshold));
            }
        }
    }

    #[test]
    fn csv_has_one_row_per_stat_and_sigma() {
        let stats = StatisticId::parse_list("opn,supn").unwrap();
        let cfg = BootstrapConfig::new(0, 5).with_replicates(20);
        let pow = run_power(
            CovModelKind::BLOCK,
            AlternativeKind::WhiteNoise,
            &[0.0, 0.5, 1.0],
            &EntryDistribution::Gaussian,
            &stats,
            20,
            10,
            10,
            &cfg,
        )
        .unwrap();
        let csv = pow.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 6);
        assert!(csv.starts_with(
            "experiment,statistic,model,distribution,n,p,alternative,sigma,reps,rejections,rate,se,threshold"
        ));
    }
}
