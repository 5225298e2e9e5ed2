use std::hint::black_box;

use covspec::bootstrap::{bootstrap_distribution, bootstrap_many};
use covspec::harness::CovModelKind;
use covspec::rmt::{support_edges_with, EdgeOptions, SpectralEnsemble};
use covspec::stats::{NullStatistics, PreparedStatistic};
use covspec::{BootstrapConfig, Execution, StatKind};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bootstrap_opn(c: &mut Criterion) {
    let mut group = c.benchmark_group("bootstrap_opn");
    group.sample_size(10);
    for p in [50, 100] {
        let sigma0 = CovModelKind::EXP_DECAY.covariance(p).unwrap();
        let stat = PreparedStatistic::new(StatKind::Opn, &sigma0).unwrap();
        for (name, exec) in MODES {
            let cfg = BootstrapConfig::new(100, 1).with_replicates(100).with_execution(exec);
            group.bench_with_input(BenchmarkId::new(name, p), &cfg, |b, cfg| {
                b.iter(|| bootstrap_distribution(&sigma0, &stat, black_box(cfg)).unwrap())
            });
        }
    }
    group.finish();
}

fn bootstrap_three_stats(c: &mut Criterion) {
    let mut group = c.benchmark_group("bootstrap_opn_roy_com");
    group.sample_size(10);
    let kinds = [StatKind::Opn, StatKind::Roy, StatKind::Com];
    let sigma0 = CovModelKind::BLOCK.covariance(100).unwrap();
    let null = NullStatistics::new(&sigma0, &kinds).unwrap();
    for (name, exec) in MODES {
        let cfg = BootstrapConfig::new(100, 2).with_replicates(100).with_execution(exec);
        group.bench_function(name, |b| {
            b.iter(|| bootstrap_many(&sigma0, &null, &kinds, black_box(&cfg)).unwrap())
        });
    }
    group.finish();
}

fn edges(c: &mut Criterion) {
    let mut group = c.benchmark_group("support_edges");
    group.sample_size(10);
    let sigma: Vec<f64> = (0..200).map(|i| 0.5 + (i % 17) as f64 / 10.0).collect();
    let r: Vec<f64> = sigma.iter().map(|s| -s).collect();
    let ens = SpectralEnsemble::new(sigma, r, 0.5).unwrap();
    for (name, exec) in MODES {
        let opts = EdgeOptions {
            execution: exec,
            ..EdgeOptions::default()
        };
        group.bench_function(name, |b| b.iter(|| support_edges_with(black_box(&ens), opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bootstrap_opn, bootstrap_three_stats, edges);
criterion_main!(benches);
