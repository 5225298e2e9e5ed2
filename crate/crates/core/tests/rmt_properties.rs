use covspec::linalg::{sample_covariance, sym_eigenvalues};
use covspec::rmt::{
    bbp_kappa, mtilde_at, solve_mtilde_with, stieltjes_at, support_edges, SolverOptions, SpectralEnsemble, SpikeModel,
};
use covspec::sampling::{derive_stream, gaussian_data};
use covspec::{Centering, CovarianceModel, SymmetricMatrix};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_ensemble(rng: &mut ChaCha8Rng, p: usize, with_r: bool) -> SpectralEnsemble {
    let sigma: Vec<f64> = (0..p).map(|_| rng.random_range(0.2..3.0)).collect();
    let r: Vec<f64> = (0..p)
        .map(|_| if with_r { rng.random_range(-2.0..1.0) } else { 0.0 })
        .collect();
    let phi = [0.25, 0.5, 1.0, 2.0, 4.0][rng.random_range(0..5)];
    SpectralEnsemble::new(sigma, r, phi).unwrap()
}

#[test]
fn stieltjes_positivity_on_random_probes() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for probe in 0..500 {
        let with_r = probe % 2 == 1;
        let p = rng.random_range(1..12);
        let ens = random_ensemble(&mut rng, p, with_r);
        let x = rng.random_range(-8.0..12.0);
        let eta = 10f64.powf(rng.random_range(-3.0..1.0));
        let m = stieltjes_at(x, eta, &ens).unwrap();
        assert!(m.im >= -1e-12, "probe {probe}: m({x} + {eta}i) = {m}");
        if !with_r {
            let mt = mtilde_at(x, eta, &ens).unwrap();
            assert!(mt.im >= -1e-12, "probe {probe}: m~({x} + {eta}i) = {mt}");
        }
    }
}

#[test]
fn accepted_fixed_points_have_small_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..300 {
        let (p, with_r) = (rng.random_range(1..12), rng.random_bool(0.5));
        let ens = random_ensemble(&mut rng, p, with_r);
        let z = Complex64::new(rng.random_range(-8.0..12.0), 10f64.powf(rng.random_range(-2.0..1.0)));
        let fp = solve_mtilde_with(z, &ens, SolverOptions::default(), None).unwrap();
        assert!(fp.residual <= 1e-10, "z = {z}: residual {:e}", fp.residual);
    }
}

#[test]
fn shift_moves_edges_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..4 {
        let ens = random_ensemble(&mut rng, 6, true);
        let c: f64 = rng.random_range(-1.5..1.5);
        let a = support_edges(&ens).unwrap();
        let b = support_edges(&ens.shift_r(c)).unwrap();
        let step = c / ens.phi.sqrt();
        assert!(
            (b.e_plus - a.e_plus - step).abs() < 1e-8,
            "E+ {} vs {}",
            b.e_plus - a.e_plus,
            step
        );
        assert!(
            (b.e_minus - a.e_minus - step).abs() < 1e-8,
            "E- {} vs {}",
            b.e_minus - a.e_minus,
            step
        );
    }
}

fn lambda1_mean(sigma: &[f64], r: &[f64], n: usize, seed: u64, reps: u64) -> f64 {
    let cov = CovarianceModel::from_diagonal(sigma).unwrap();
    let rm = SymmetricMatrix::from_diagonal(r).unwrap();
    let mut total = 0.0;
    for rep in 0..reps {
        let x = gaussian_data(n, &cov, derive_stream(seed, rep)).unwrap();
        let m = sample_covariance(&x, &Centering::None).unwrap().add(&rm).unwrap();
        total += sym_eigenvalues(&m).unwrap()[0];
    }
    total / reps as f64
}

fn null_pairs(p: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut out = vec![(vec![1.0; p], vec![-1.0; p])];
    for case in 1..5 {
        let sigma: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..1.5)).collect();
        let r: Vec<f64> = if case < 3 {
            sigma.iter().map(|s| -s).collect()
        } else {
            sigma.iter().map(|s| -s * rng.random_range(0.8..1.2)).collect()
        };
        out.push((sigma, r));
    }
    out
}

fn edge_gaps(n: usize, reps: u64) -> Vec<(f64, f64)> {
    null_pairs(n)
        .iter()
        .enumerate()
        .map(|(case, (sigma, r))| {
            let edge = support_edges(&SpectralEnsemble::new(sigma.clone(), r.clone(), 1.0).unwrap())
                .unwrap()
                .e_plus;
            (edge, lambda1_mean(sigma, r, n, 900 + case as u64, reps))
        })
        .collect()
}

// The first ensemble is Sigma = Sigma0 = I with E+ = 3 exactly; its mean
// lambda_1 at n = 400 is about 2.94 (Tracy-Widom shift -1.21 * 2^{4/3} *
// 400^{-2/3}), so the 0.05 band is out of reach at this size.
#[test]
#[ignore = "fails: finite-n Tracy-Widom shift at n = p = 400 is about 0.06"]
fn upper_edge_matches_simulation_n400() {
    for (case, (edge, mean)) in edge_gaps(400, 50).into_iter().enumerate() {
        assert!((mean - edge).abs() < 0.05, "case {case}: simulated {mean}, E+ {edge}");
    }
}

// Independent uniform R gives a thin upper edge, so compare bulk tail mass
// rather than lambda_1.
#[test]
fn density_tail_matches_simulation() {
    let (n, p) = (400, 400);
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let sigma: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..1.5)).collect();
    let r: Vec<f64> = (0..p).map(|_| rng.random_range(-1.5..0.0)).collect();
    let sol = support_edges(&SpectralEnsemble::new(sigma.clone(), r.clone(), 1.0).unwrap()).unwrap();
    let cov = CovarianceModel::from_diagonal(&sigma).unwrap();
    let rm = SymmetricMatrix::from_diagonal(&r).unwrap();
    let mut eigs = Vec::new();
    for rep in 0..10 {
        let x = gaussian_data(n, &cov, derive_stream(950, rep)).unwrap();
        let m = sample_covariance(&x, &Centering::None).unwrap().add(&rm).unwrap();
        eigs.extend(sym_eigenvalues(&m).unwrap());
    }
    let width = sol.e_plus - sol.e_minus;
    for frac in [0.3, 0.5, 0.7, 0.85] {
        let t = sol.e_minus + frac * width;
        let theory: f64 = sol
            .density_grid
            .windows(2)
            .filter(|w| w[0].0 >= t)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
            .sum();
        let empirical = eigs.iter().filter(|&&e| e >= t).count() as f64 / eigs.len() as f64;
        assert!(
            (theory - empirical).abs() < 0.01,
            "tail above {t}: {theory} vs {empirical}"
        );
    }
}

#[test]
fn kappa_is_continuous_along_v() {
    let bulk_eigs: Vec<f64> = (0..40).map(|i| 0.5 + i as f64 / 20.0).collect();
    let phi = 0.5;
    let template = SpikeModel::new(vec![4.0], vec![1.0], vec![1.0], bulk_eigs.clone(), vec![1.0; 40], phi).unwrap();
    let bulk = support_edges(&template.bulk_ensemble().unwrap()).unwrap();
    let mut prev: Option<f64> = None;
    let mut jumps = Vec::new();
    for i in 0..=60 {
        let v = 0.05 + i as f64 * 0.05;
        let model = SpikeModel::new(vec![4.0], vec![v], vec![1.0], bulk_eigs.clone(), vec![1.0; 40], phi).unwrap();
        let k = bbp_kappa(&model, &bulk, 0).unwrap().kappa;
        assert!(k.is_finite());
        if let Some(p) = prev {
            jumps.push((k - p).abs());
        }
        prev = Some(k);
    }
    let (lo, hi) = jumps
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &j| (a.min(j), b.max(j)));
    assert!(hi - lo < 1e-9, "kappa steps range over [{lo}, {hi}]");
}

#[test]
fn kappa_continuous_in_bulk_scale() {
    let mut prev: Option<f64> = None;
    for i in 0..=20 {
        let s = 0.8 + i as f64 * 0.02;
        let bulk: Vec<f64> = (0..30).map(|j| s * (1.0 + (j % 3) as f64 * 0.25)).collect();
        let model = SpikeModel::new(vec![5.0], vec![1.0], vec![1.0], bulk, vec![1.0; 30], 1.0).unwrap();
        let sol = support_edges(&model.bulk_ensemble().unwrap()).unwrap();
        let k = bbp_kappa(&model, &sol, 0).unwrap().kappa;
        if let Some(p) = prev {
            assert!((k - p).abs() < 0.1, "scale {s}: {p} -> {k}");
        }
        prev = Some(k);
    }
}
