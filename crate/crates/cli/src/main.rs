use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use covspec::baselines::{test_baseline, Calibration};
use covspec::ci::{ci_bilinear, ci_inner_product, simultaneous_q, CiReport, SpectrumEstimate};
use covspec::exec::with_threads;
use covspec::harness::{run_power, run_size, AlternativeKind, CovModelKind, ExperimentResult, StatisticId};
use covspec::io::{read_labels, read_matrix, read_symmetric, read_vector};
use covspec::linalg::{center_data, sample_covariance, sym_eigenvalues};
use covspec::rmt::{
    admissible_check, bbp_kappa, support_edges, Admissibility, BbpKappa, MPSolution, SpectralEnsemble, SpikeModel,
};
use covspec::{bootstrap, BootstrapConfig, Centering, CovarianceModel, DataMatrix, EntryDistribution, Error};

const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Parser)]
#[command(
    name = "covspec",
    version,
    about = "Operator-norm covariance tests with the universal bootstrap"
)]
struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, env = "COVSPEC_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test H0: Sigma = Sigma0 on a data matrix.
    Test(TestArgs),
    /// Monte-Carlo size or power study.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Support edges, admissibility and spike thresholds of a deformed MP law.
    Edges(EdgesArgs),
    /// Simultaneous confidence intervals for linear functionals of Sigma.
    Ci(CiArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Skip the first row of every input CSV.
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sigma0: PathBuf,
    /// opn, roy, com, supn or ufn.
    #[arg(long, default_value = "opn")]
    stat: StatisticId,
    /// none, global or groups:FILE (one label per row).
    #[arg(long, default_value = "none")]
    center: String,
    /// Baselines only: mc or asymptotic.
    #[arg(long, default_value = "mc")]
    calibration: Calibration,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Simulate {
    Size(SizeArgs),
    Power(PowerArgs),
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    p: usize,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long = "B", default_value_t = 500)]
    replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Comma-separated statistics.
    #[arg(long, value_delimiter = ',', default_value = "opn,roy,com")]
    stats: Vec<StatisticId>,
    /// Long-format CSV, one row per cell.
    #[arg(long)]
    out: PathBuf,
    /// Also write the full result with metadata as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SizeArgs {
    #[arg(long, value_delimiter = ',', default_value = "expdecay")]
    model: Vec<CovModelKind>,
    #[arg(long, value_delimiter = ',', default_value = "gauss")]
    dist: Vec<EntryDistribution>,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long, default_value = "expdecay")]
    model: CovModelKind,
    #[arg(long, default_value = "gauss")]
    dist: EntryDistribution,
    #[arg(long, default_value = "spike")]
    alt: AlternativeKind,
    #[arg(long, value_delimiter = ',', required = true)]
    sigma_grid: Vec<f64>,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct EdgesArgs {
    #[arg(long, requires_all = ["r_eigs", "phi"], conflicts_with_all = ["sigma", "sigma0", "n"])]
    sigma_eigs: Option<PathBuf>,
    #[arg(long)]
    r_eigs: Option<PathBuf>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, requires_all = ["sigma0", "n"])]
    sigma: Option<PathBuf>,
    #[arg(long)]
    sigma0: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Required admissibility margin.
    #[arg(long, default_value_t = 1e-3)]
    tau: f64,
    /// Spike `d,v1,r1` over the null bulk; repeatable.
    #[arg(long, value_parser = parse_spike)]
    spike: Vec<(f64, f64, f64)>,
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct CiArgs {
    #[arg(long)]
    data: PathBuf,
    /// naive or file:PATH (eigenvalues, one per row).
    #[arg(long, default_value = "naive")]
    spectrum: String,
    /// Symmetric matrix A for <A, Sigma>; repeatable.
    #[arg(long = "A", conflicts_with_all = ["c1", "c2"])]
    a: Vec<PathBuf>,
    #[arg(long, requires = "c2")]
    c1: Vec<PathBuf>,
    #[arg(long, requires = "c1")]
    c2: Vec<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn parse_spike(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [d, v1, r1] => Ok((d, v1, r1)),
        _ => Err(format!("expected d,v1,r1, got '{s}'")),
    }
}

fn config(n: usize, alpha: f64, b: usize, seed: u64) -> BootstrapConfig {
    BootstrapConfig::new(n, seed).with_alpha(alpha).with_replicates(b)
}

fn json_string<T: Serialize>(v: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))
}

fn load_data(path: &Path, header: bool) -> Result<DataMatrix, Error> {
    DataMatrix::new(read_matrix(path, header)?)
}

fn load_cov(path: &Path, header: bool) -> Result<CovarianceModel, Error> {
    CovarianceModel::new(read_symmetric(path, header)?)
}

fn centering(spec: &str, header: bool) -> Result<Centering, Error> {
    match spec {
        "none" => Ok(Centering::None),
        "global" => Ok(Centering::Global),
        s => match s.strip_prefix("groups:") {
            Some(file) => Ok(Centering::Groups(read_labels(file, header)?)),
            None => Err(Error::InvalidArgument(format!(
                "--center must be none, global or groups:FILE, got '{s}'"
            ))),
        },
    }
}

fn cmd_test(a: &TestArgs) -> Result<String, Error> {
    let c = &a.common;
    let x = load_data(&a.data, c.header)?;
    let sigma0 = load_cov(&a.sigma0, c.header)?;
    let center = centering(&a.center, c.header)?;
    let cfg = config(x.nrows(), c.alpha, c.replicates, c.seed);
    match a.stat {
        StatisticId::Spectral(kind) => json_string(&bootstrap::test_covariance(&x, &sigma0, kind, &cfg, &center)?),
        StatisticId::Baseline(kind) => {
            let x = center_data(&x, &center)?;
            json_string(&test_baseline(&x, &sigma0, kind, a.calibration, &cfg)?)
        }
    }
}

fn write_experiment(r: &ExperimentResult, sim: &SimArgs) -> Result<String, Error> {
    std::fs::write(&sim.out, r.to_csv()?)?;
    if let Some(path) = &sim.json {
        std::fs::write(path, r.to_json()?)?;
    }
    let summary = json!({
        "experiment": r.experiment,
        "cells": r.cells.len(),
        "reps": r.reps,
        "B": r.replicates,
        "alpha": r.alpha,
        "master_seed": r.master_seed,
        "out": sim.out.display().to_string(),
    });
    Ok(summary.to_string())
}

fn cmd_simulate(s: &Simulate) -> Result<String, Error> {
    match s {
        Simulate::Size(a) => {
            let sim = &a.sim;
            let cfg = config(sim.n, sim.alpha, sim.replicates, sim.seed);
            let r = run_size(&a.model, &a.dist, &sim.stats, sim.n, sim.p, sim.reps, &cfg)?;
            write_experiment(&r, sim)
        }
        Simulate::Power(a) => {
            let sim = &a.sim;
            let cfg = config(sim.n, sim.alpha, sim.replicates, sim.seed);
            let r = run_power(
                a.model,
                a.alt,
                &a.sigma_grid,
                &a.dist,
                &sim.stats,
                sim.n,
                sim.p,
                sim.reps,
                &cfg,
            )?;
            write_experiment(&r, sim)
        }
    }
}

#[derive(Serialize)]
struct EdgesReport {
    phi: f64,
    p: usize,
    #[serde(rename = "E_minus")]
    e_minus: f64,
    #[serde(rename = "E_plus")]
    e_plus: f64,
    m_at_edges: (f64, f64),
    margin_minus: f64,
    margin_plus: f64,
    refined: (bool, bool),
    admissible: bool,
    admissibility: Admissibility,
    kappas: Vec<BbpKappa>,
}

fn cmd_edges(a: &EdgesArgs) -> Result<String, Error> {
    let (ens, residual, null_bulk) = match (&a.sigma_eigs, &a.sigma) {
        (Some(se), None) => {
            let (Some(re), Some(phi)) = (&a.r_eigs, a.phi) else {
                return Err(Error::InvalidArgument("--sigma-eigs needs --r-eigs and --phi".into()));
            };
            let s = read_vector(se, a.header)?;
            let ens = SpectralEnsemble::new(s.clone(), read_vector(re, a.header)?, phi)?;
            (ens, None, s)
        }
        (None, Some(sp)) => {
            let (Some(s0), Some(n)) = (&a.sigma0, a.n) else {
                return Err(Error::InvalidArgument("--sigma needs --sigma0 and --n".into()));
            };
            let sigma = load_cov(sp, a.header)?;
            let sigma0 = load_cov(s0, a.header)?;
            let (ens, res) = SpectralEnsemble::null_pair(&sigma, &sigma0, n)?;
            (ens, Some(res), sym_eigenvalues(sigma0.matrix())?)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "give either --sigma-eigs/--r-eigs/--phi or --sigma/--sigma0/--n".into(),
            ))
        }
    };
    let sol: MPSolution = support_edges(&ens)?;
    let adm = admissible_check(&sol, a.tau, residual);
    let mut kappas = Vec::new();
    if !a.spike.is_empty() {
        let d = a.spike.iter().map(|s| s.0).collect();
        let v1 = a.spike.iter().map(|s| s.1).collect();
        let r1 = a.spike.iter().map(|s| s.2).collect();
        let ones = vec![1.0; null_bulk.len()];
        let model = SpikeModel::new(d, v1, r1, null_bulk, ones, ens.phi)?;
        let bulk = support_edges(&model.bulk_ensemble()?)?;
        for i in 0..model.k() {
            kappas.push(bbp_kappa(&model, &bulk, i)?);
        }
    }
    json_string(&EdgesReport {
        phi: sol.phi,
        p: ens.dim(),
        e_minus: sol.e_minus,
        e_plus: sol.e_plus,
        m_at_edges: sol.m_at_edges,
        margin_minus: sol.admissibility_margin_minus,
        margin_plus: sol.admissibility_margin_plus,
        refined: sol.refined,
        admissible: adm.admissible,
        admissibility: adm,
        kappas,
    })
}

fn cmd_ci(a: &CiArgs) -> Result<String, Error> {
    let c = &a.common;
    let x = load_data(&a.data, c.header)?;
    let spec = match a.spectrum.as_str() {
        "naive" => SpectrumEstimate::naive(&x)?,
        s => match s.strip_prefix("file:") {
            Some(file) => SpectrumEstimate::external(read_vector(file, c.header)?)?,
            None => {
                return Err(Error::InvalidArgument(format!(
                    "--spectrum must be naive or file:PATH, got '{s}'"
                )))
            }
        },
    };
    if spec.dim() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "spectrum has {} values for {} columns",
            spec.dim(),
            x.ncols()
        )));
    }
    if a.a.is_empty() && a.c1.is_empty() {
        return Err(Error::InvalidArgument("give --A or --c1/--c2".into()));
    }
    if a.c1.len() != a.c2.len() {
        return Err(Error::InvalidArgument(format!(
            "{} --c1 files but {} --c2 files",
            a.c1.len(),
            a.c2.len()
        )));
    }
    let cfg = config(x.nrows(), c.alpha, c.replicates, c.seed);
    cfg.validate()?;
    let sigma_hat = sample_covariance(&x, &Centering::None)?;
    let q = simultaneous_q(&spec, x.nrows(), &cfg)?;
    let mut intervals = Vec::new();
    for path in &a.a {
        intervals.push(ci_inner_product(&sigma_hat, &read_symmetric(path, c.header)?, q)?);
    }
    for (p1, p2) in a.c1.iter().zip(&a.c2) {
        let v1 = read_vector(p1, c.header)?;
        let v2 = read_vector(p2, c.header)?;
        intervals.push(ci_bilinear(&sigma_hat, &v1, &v2, q)?);
    }
    json_string(&CiReport::new(q, &spec, x.nrows(), &cfg, intervals))
}

fn run(cmd: &Command) -> Result<String, Error> {
    match cmd {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(s) => cmd_simulate(s),
        Command::Edges(a) => cmd_edges(a),
        Command::Ci(a) => cmd_ci(a),
    }
}

fn error_json(code: &str, message: &str) -> String {
    json!({ "error": { "code": code, "message": message } }).to_string()
}

fn emit(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            emit(&error_json("UsageError", e.to_string().trim()));
            return ExitCode::from(1);
        }
    };
    match with_threads(cli.threads, || run(&cli.command)) {
        Ok(out) => {
            emit(&out);
            ExitCode::SUCCESS
        }
        Err(e) => {
            emit(&error_json(e.code(), &e.to_string()));
            ExitCode::from(1)
        }
    }
}
