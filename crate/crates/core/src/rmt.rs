//! Deformed Marchenko-Pastur law for `M = Sigma_hat + R` with commuting
//! `(Sigma, R)`: the `m~` fixed point, support edges of `phi^{-1/2} M`,
//! edge admissibility margins and spiked phase-transition thresholds.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::exec::{map_indexed, Execution};
use crate::linalg::{same_dim, sym_eigen, sym_eigenvalues, CovarianceModel, SymmetricMatrix};
use crate::{Error, Result};

/// Commutator norm allowed when building an ensemble from full matrices.
pub const COMMUTATOR_TOL: f64 = 1e-8;

/// Eigenvalues of `Sigma` and `R` listed in a common eigenbasis, plus
/// `phi = p / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEnsemble {
    pub sigma_eigs: Vec<f64>,
    pub r_eigs: Vec<f64>,
    pub phi: f64,
}

impl SpectralEnsemble {
    pub fn new(sigma_eigs: Vec<f64>, r_eigs: Vec<f64>, phi: f64) -> Result<Self> {
        same_dim(sigma_eigs.len(), r_eigs.len(), "sigma vs R eigenvalues")?;
        if sigma_eigs.is_empty() {
            return Err(Error::EmptyInput("ensemble eigenvalues".into()));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::InvalidArgument(format!("phi must be positive, got {phi}")));
        }
        if sigma_eigs.iter().chain(&r_eigs).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble eigenvalues".into()));
        }
        if let Some(s) = sigma_eigs.iter().find(|&&s| s < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma eigenvalues must be nonnegative, got {s}"
            )));
        }
        Ok(Self {
            sigma_eigs,
            r_eigs,
            phi,
        })
    }

    /// Jointly diagonalizes commuting `sigma` and `r`. Returns the ensemble
    /// and the commutator norm `||sigma r - r sigma||_op`.
    pub fn from_matrices(sigma: &SymmetricMatrix, r: &SymmetricMatrix, phi: f64) -> Result<(Self, f64)> {
        same_dim(sigma.dim(), r.dim(), "sigma vs R")?;
        let residual = commutator_residual(sigma, r)?;
        let ns = crate::linalg::operator_norm(sigma)?;
        let nr = crate::linalg::operator_norm(r)?;
        let scale = ns.max(1.0) * nr.max(1.0);
        if residual > COMMUTATOR_TOL * scale {
            return Err(Error::NonCommuting { residual });
        }
        let ratio = if nr > 0.0 { ns.max(1.0) / nr } else { 1.0 };
        // Generic combinations; a collision of combined eigenvalues between
        // different (sigma, r) pairs is checked for and retried.
        for t in [
            0.732_050_807_568_877_2,
            std::f64::consts::FRAC_1_PI,
            1.618_033_988_749_895,
        ] {
            let combo = sigma.add(&r.scaled(t * ratio))?;
            let v = sym_eigen(&combo)?.eigenvectors;
            let ds = v.transpose() * sigma.as_matrix() * &v;
            let dr = v.transpose() * r.as_matrix() * &v;
            let off = |m: &nalgebra::DMatrix<f64>| {
                let mut worst: f64 = 0.0;
                for j in 0..m.ncols() {
                    for i in 0..m.nrows() {
                        if i != j {
                            worst = worst.max(m[(i, j)].abs());
                        }
                    }
                }
                worst
            };
            if off(&ds) <= 1e-8 * ns.max(1.0) && off(&dr) <= 1e-8 * nr.max(1.0) {
                let p = sigma.dim();
                let s: Vec<f64> = (0..p).map(|i| ds[(i, i)].max(0.0)).collect();
                let rr: Vec<f64> = (0..p).map(|i| dr[(i, i)]).collect();
                return Ok((Self::new(s, rr, phi)?, residual));
            }
        }
        Err(Error::NonCommuting { residual })
    }

    /// The `(Sigma, -Sigma0)` ensemble of the test statistic `T` at sample
    /// size `n`.
    pub fn null_pair(sigma: &CovarianceModel, sigma0: &CovarianceModel, n: usize) -> Result<(Self, f64)> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        let phi = sigma.dim() as f64 / n as f64;
        Self::from_matrices(sigma.matrix(), &sigma0.matrix().scaled(-1.0), phi)
    }

    pub fn dim(&self) -> usize {
        self.sigma_eigs.len()
    }

    /// Same ensemble with `R + c I`.
    pub fn shift_r(&self, c: f64) -> Self {
        Self {
            sigma_eigs: self.sigma_eigs.clone(),
            r_eigs: self.r_eigs.iter().map(|r| r + c).collect(),
            phi: self.phi,
        }
    }

    fn atoms(&self) -> Atoms {
        Atoms::compress(&self.sigma_eigs, &self.r_eigs, self.phi)
    }
}

/// Distinct `(sigma, r)` pairs with multiplicity weights summing to one.
#[derive(Debug, Clone)]
struct Atoms {
    sigma: Vec<f64>,
    r: Vec<f64>,
    w: Vec<f64>,
    /// `phi^{-1/2}`.
    c: f64,
    /// `phi^{1/2}`.
    q: f64,
}

impl Atoms {
    fn compress(sigma: &[f64], r: &[f64], phi: f64) -> Self {
        let mut pairs: Vec<(f64, f64)> = sigma.iter().copied().zip(r.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let unit = 1.0 / pairs.len() as f64;
        let (mut s, mut rr, mut w) = (Vec::new(), Vec::new(), Vec::<f64>::new());
        for (a, b) in pairs {
            if let (Some(&ls), Some(&lr)) = (s.last(), rr.last()) {
                if ls == a && lr == b {
                    *w.last_mut().expect("nonempty") += unit;
                    continue;
                }
            }
            s.push(a);
            rr.push(b);
            w.push(unit);
        }
        Self {
            sigma: s,
            r: rr,
            w,
            c: phi.powf(-0.5),
            q: phi.sqrt(),
        }
    }

    /// Eigenvalues of `Sigma(z) = z Sigma (z - phi^{-1/2} R)^{-1}`.
    fn sigma_z(&self, z: Complex64) -> Result<Vec<Complex64>> {
        let scale = z.norm().max(1.0);
        self.sigma
            .iter()
            .zip(&self.r)
            .map(|(&s, &r)| {
                if s == 0.0 {
                    return Ok(Complex64::new(0.0, 0.0));
                }
                let den = z - self.c * r;
                if den.norm() <= 1e-13 * scale {
                    return Err(Error::PoleHit { z: format!("{z}") });
                }
                Ok(z * s / den)
            })
            .collect()
    }

    fn check_z(&self, z: Complex64) -> Result<()> {
        if z.norm() == 0.0 && self.r.iter().any(|&r| r != 0.0) {
            return Err(Error::PoleHit { z: "0".into() });
        }
        if !(z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("spectral argument z".into()));
        }
        Ok(())
    }

    fn map(&self, z: Complex64, s: &[Complex64], m: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (si, wi) in s.iter().zip(&self.w) {
            acc += *si * *wi / (1.0 + self.c * m * si);
        }
        1.0 / (-z + self.q * acc)
    }

    /// `h(m) = 1/m + z - phi^{1/2} avg s/(1 + c m s)` and `h'(m)`.
    fn h_and_slope(&self, z: Complex64, s: &[Complex64], m: Complex64) -> (Complex64, Complex64) {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut slope = Complex64::new(0.0, 0.0);
        for (si, wi) in s.iter().zip(&self.w) {
            let den = 1.0 + self.c * m * si;
            acc += *si * *wi / den;
            slope += *si * *si * *wi / (den * den);
        }
        (1.0 / m + z - self.q * acc, -1.0 / (m * m) + slope)
    }

    /// Stieltjes transform of the limiting spectrum of `phi^{-1/2} M`.
    fn stieltjes(&self, z: Complex64, s: &[Complex64], m: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for ((si, wi), &r) in s.iter().zip(&self.w).zip(&self.r) {
            acc += *wi / ((z - self.c * r) * (1.0 + self.c * m * si));
        }
        -acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Damped steps before switching to Newton.
    pub newton_after: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            damping: 0.5,
            newton_after: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub m: Complex64,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves the fixed point for `m~(z)` from `m0 = -1/z`.
pub fn solve_mtilde(z: Complex64, ens: &SpectralEnsemble) -> Result<Complex64> {
    Ok(solve_mtilde_with(z, ens, SolverOptions::default(), None)?.m)
}

/// Damped fixed-point iteration, then Newton on `h(m)` if it has not
/// converged after `opts.newton_after` steps.
pub fn solve_mtilde_with(
    z: Complex64,
    ens: &SpectralEnsemble,
    opts: SolverOptions,
    init: Option<Complex64>,
) -> Result<FixedPoint> {
    let atoms = ens.atoms();
    atoms.check_z(z)?;
    let s = atoms.sigma_z(z)?;
    solve_atoms(&atoms, z, &s, opts, init)
}

fn solve_atoms(
    atoms: &Atoms,
    z: Complex64,
    s: &[Complex64],
    opts: SolverOptions,
    init: Option<Complex64>,
) -> Result<FixedPoint> {
    let mut m = init.unwrap_or(-1.0 / z);
    let mut residual = f64::INFINITY;
    let mut it = 0;
    while it < opts.max_iter.min(opts.newton_after) {
        let f = atoms.map(z, s, m);
        residual = (m - f).norm();
        if residual <= opts.tol * m.norm().max(1.0) {
            return Ok(FixedPoint {
                m,
                residual,
                iterations: it,
            });
        }
        if !residual.is_finite() {
            break;
        }
        m = m * (1.0 - opts.damping) + f * opts.damping;
        it += 1;
    }
    if !residual.is_finite() || !(m.re.is_finite() && m.im.is_finite()) {
        m = init.unwrap_or(-1.0 / z);
    }
    newton(atoms, z, s, m, it, opts)
}

fn newton(
    atoms: &Atoms,
    z: Complex64,
    s: &[Complex64],
    mut m: Complex64,
    mut it: usize,
    opts: SolverOptions,
) -> Result<FixedPoint> {
    let res = |m: Complex64| (m - atoms.map(z, s, m)).norm();
    let mut residual = res(m);
    while it < opts.max_iter {
        if residual <= opts.tol * m.norm().max(1.0) {
            return Ok(FixedPoint {
                m,
                residual,
                iterations: it,
            });
        }
        let (h, slope) = atoms.h_and_slope(z, s, m);
        let step = h / slope;
        if !(step.re.is_finite() && step.im.is_finite()) {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = m - step * t;
            let r = res(cand);
            if r < residual || r <= opts.tol {
                m = cand;
                residual = r;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        it += 1;
        if !accepted {
            break;
        }
    }
    // Stagnation just above the tolerance is the rounding floor.
    if residual <= 1e3 * opts.tol * m.norm().max(1.0) {
        return Ok(FixedPoint {
            m,
            residual,
            iterations: it,
        });
    }
    Err(Error::NonConvergence {
        iterations: it,
        residual,
    })
}

/// Newton from a nearby solution, falling back to the full solver.
fn solve_warm(atoms: &Atoms, z: Complex64, s: &[Complex64], m0: Complex64) -> Result<FixedPoint> {
    let quick = SolverOptions {
        max_iter: 100,
        newton_after: 0,
        ..SolverOptions::default()
    };
    let on_branch = |fp: &FixedPoint| z.im <= 0.0 || atoms.stieltjes(z, s, fp.m).im >= -1e-12;
    if let Ok(fp) = newton(atoms, z, s, m0, 0, quick) {
        if on_branch(&fp) {
            return Ok(fp);
        }
    }
    let fp = solve_atoms(atoms, z, s, SolverOptions::default(), Some(m0))?;
    if on_branch(&fp) {
        return Ok(fp);
    }
    solve_atoms(atoms, z, s, SolverOptions::default(), None)
}

/// Solutions at `x + i eta` for each `eta` of a decreasing ladder, each
/// warm-started from the previous rung.
fn ladder(atoms: &Atoms, x: f64, etas: &[f64]) -> Result<Vec<(Complex64, Complex64)>> {
    let mut out = Vec::with_capacity(etas.len());
    let mut prev: Option<Complex64> = None;
    for &eta in etas {
        let z = Complex64::new(x, eta);
        atoms.check_z(z)?;
        let s = atoms.sigma_z(z)?;
        let fp = match prev {
            None => solve_atoms(atoms, z, &s, SolverOptions::default(), None)?,
            Some(m0) => solve_warm(atoms, z, &s, m0)?,
        };
        prev = Some(fp.m);
        out.push((fp.m, atoms.stieltjes(z, &s, fp.m)));
    }
    Ok(out)
}

fn eta_ladder(start: f64, stop: f64) -> Vec<f64> {
    let mut etas = Vec::new();
    let mut eta = start;
    while eta > stop * 1.000_001 {
        etas.push(eta);
        eta /= 10.0;
    }
    etas.push(stop);
    etas
}

/// `m~(x + i eta)` reached by continuation from large imaginary part.
pub fn mtilde_at(x: f64, eta: f64, ens: &SpectralEnsemble) -> Result<Complex64> {
    let atoms = ens.atoms();
    let etas = eta_ladder(ladder_start(&atoms), eta);
    Ok(ladder(&atoms, x, &etas)?.last().expect("nonempty").0)
}

/// Limiting Stieltjes transform of the spectrum of `phi^{-1/2} M` at
/// `x + i eta`.
pub fn stieltjes_at(x: f64, eta: f64, ens: &SpectralEnsemble) -> Result<Complex64> {
    let atoms = ens.atoms();
    let etas = eta_ladder(ladder_start(&atoms), eta);
    Ok(ladder(&atoms, x, &etas)?.last().expect("nonempty").1)
}

fn ladder_start(atoms: &Atoms) -> f64 {
    let smax = atoms.sigma.iter().fold(0.0f64, |a, &b| a.max(b));
    let rmax = atoms.r.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    10f64.powf((atoms.c * (smax + rmax) + 1.0).log10().ceil())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MPSolution {
    pub phi: f64,
    pub e_minus: f64,
    pub e_plus: f64,
    /// `m~` at `(E_-, E_+)`.
    pub m_at_edges: (f64, f64),
    pub admissibility_margin_minus: f64,
    pub admissibility_margin_plus: f64,
    /// Whether each edge was polished to a fold of the fixed-point equation
    /// (otherwise it is the bisection estimate).
    pub refined: (bool, bool),
    /// `(x, density)` of the absolutely continuous part.
    pub density_grid: Vec<(f64, f64)>,
    pub eta: f64,
    pub density_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeOptions {
    pub eta: f64,
    pub grid_points: usize,
    pub density_threshold: f64,
    pub bisection_tol: f64,
    pub execution: Execution,
}

impl Default for EdgeOptions {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            grid_points: 2000,
            density_threshold: 1e-3,
            bisection_tol: 1e-6,
            execution: Execution::default(),
        }
    }
}

pub fn support_edges(ens: &SpectralEnsemble) -> Result<MPSolution> {
    support_edges_with(ens, EdgeOptions::default())
}

struct Probe {
    density: f64,
    in_support: bool,
}

/// Density at `eta` plus the stability test: the point counts as support
/// only if the density persists at `eta/10` and `eta/100`. Outside the
/// support the density decays like `eta`, on an atom it grows like `1/eta`.
fn probe(atoms: &Atoms, x: f64, opts: &EdgeOptions) -> Result<Probe> {
    let etas = eta_ladder(ladder_start(atoms), opts.eta / 100.0);
    let sols = ladder(atoms, x, &etas)?;
    let k = sols.len();
    let d = |i: usize| sols[i].1.im / std::f64::consts::PI;
    let (d0, d1, d2) = (d(k - 3), d(k - 2), d(k - 1));
    let stable = |r: f64| (0.5..=2.0).contains(&r);
    let in_support = d0 > opts.density_threshold && stable(d1 / d0) && stable(d2 / d0);
    Ok(Probe {
        density: d0,
        in_support,
    })
}

pub fn support_edges_with(ens: &SpectralEnsemble, opts: EdgeOptions) -> Result<MPSolution> {
    if opts.grid_points < 3 {
        return Err(Error::InvalidArgument("grid_points must be at least 3".into()));
    }
    let atoms = ens.atoms();
    let smax = atoms.sigma.iter().fold(0.0f64, |a, &b| a.max(b));
    let cr: Vec<f64> = atoms.r.iter().map(|r| atoms.c * r).collect();
    let lo_r = cr.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_r = cr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let margin = 2.0 * atoms.c.max(1.0) * (1.0 + ens.phi.sqrt()).powi(2) * smax;
    let (lo, hi) = (lo_r - margin, hi_r + margin);
    if smax == 0.0 {
        return Err(Error::DegenerateSupport { lo, hi });
    }
    let n = opts.grid_points;
    let step = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    let probes = map_indexed(opts.execution, n, |i| probe(&atoms, xs[i], &opts));
    let probes = probes.into_iter().collect::<Result<Vec<_>>>()?;
    let first = probes.iter().position(|p| p.in_support);
    let last = probes.iter().rposition(|p| p.in_support);
    let (first, last) = match (first, last) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::DegenerateSupport { lo, hi }),
    };
    let inside = |x: f64| probe(&atoms, x, &opts).map(|p| p.in_support);
    let bisect = |mut out_x: f64, mut in_x: f64| -> Result<f64> {
        while (in_x - out_x).abs() > opts.bisection_tol {
            let mid = 0.5 * (in_x + out_x);
            if inside(mid)? {
                in_x = mid;
            } else {
                out_x = mid;
            }
        }
        Ok(0.5 * (in_x + out_x))
    };
    let e_minus_bis = if first == 0 {
        xs[0]
    } else {
        bisect(xs[first - 1], xs[first])?
    };
    let e_plus_bis = if last == n - 1 {
        xs[n - 1]
    } else {
        bisect(xs[last + 1], xs[last])?
    };
    let accept = 1e-3f64.max(5.0 * step);
    let (e_minus, m_minus, ref_minus) = polish_edge(&atoms, e_minus_bis, opts.eta, accept)?;
    let (e_plus, m_plus, ref_plus) = polish_edge(&atoms, e_plus_bis, opts.eta, accept)?;
    let density_grid = xs
        .iter()
        .zip(&probes)
        .map(|(&x, p)| (x, if p.in_support { p.density.max(0.0) } else { 0.0 }))
        .collect();
    Ok(MPSolution {
        phi: ens.phi,
        e_minus,
        e_plus,
        m_at_edges: (m_minus, m_plus),
        admissibility_margin_minus: edge_margin(&atoms, e_minus, m_minus)?,
        admissibility_margin_plus: edge_margin(&atoms, e_plus, m_plus)?,
        refined: (ref_minus, ref_plus),
        density_grid,
        eta: opts.eta,
        density_threshold: opts.density_threshold,
    })
}

/// Moves a bisection estimate onto the nearby fold `h = dh/dm = 0` of the
/// real fixed-point equation, where the real solution branch ends.
fn polish_edge(atoms: &Atoms, x0: f64, eta: f64, accept: f64) -> Result<(f64, f64, bool)> {
    let etas = eta_ladder(ladder_start(atoms), (eta * 1e-4).max(1e-12));
    let approx = ladder(atoms, x0, &etas)?.last().expect("nonempty").0.re;
    if let Some((x, m)) = fold_newton(atoms, x0, approx) {
        if (x - x0).abs() <= accept && m != 0.0 {
            return Ok((x, m, true));
        }
    }
    Ok((x0, approx, false))
}

fn fold_newton(atoms: &Atoms, mut x: f64, mut m: f64) -> Option<(f64, f64)> {
    let c = atoms.c;
    for _ in 0..100 {
        let (mut a, mut b, mut hx, mut hmm, mut hmx) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((&sg, &r), &w) in atoms.sigma.iter().zip(&atoms.r).zip(&atoms.w) {
            if sg == 0.0 {
                continue;
            }
            let den_x = x - c * r;
            let s = x * sg / den_x;
            let ds = -sg * c * r / (den_x * den_x);
            let d = 1.0 + c * m * s;
            a += w * s / d;
            b += w * s * s / (d * d);
            hx += w * ds / (d * d);
            hmm += w * s * s * s / (d * d * d);
            hmx += w * 2.0 * s * ds / (d * d * d);
        }
        let h = 1.0 / m + x - atoms.q * a;
        let hm = -1.0 / (m * m) + b;
        let hx = 1.0 - atoms.q * hx;
        let hmm = 2.0 / (m * m * m) - 2.0 * c * hmm;
        let det = hm * hmx - hx * hmm;
        if !det.is_finite() || det == 0.0 {
            return None;
        }
        let dm = (h * hmx - hx * hm) / det;
        let dx = (hm * hm - hmm * h) / det;
        m -= dm;
        x -= dx;
        if !(m.is_finite() && x.is_finite()) || m.abs() > 1e8 {
            return None;
        }
        if dm.abs() <= 1e-14 * m.abs().max(1.0) && dx.abs() <= 1e-14 * x.abs().max(1.0) {
            return Some((x, m));
        }
    }
    None
}

/// `min_i |1 + phi^{-1/2} m~(E) lambda_i(Sigma(E))|`.
fn edge_margin(atoms: &Atoms, e: f64, m: f64) -> Result<f64> {
    let s = atoms.sigma_z(Complex64::new(e, 0.0))?;
    Ok(s.iter()
        .map(|si| (1.0 + atoms.c * m * si).norm())
        .fold(f64::INFINITY, f64::min))
}

/// Largest-absolute-value edge check of the admissibility condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub admissible: bool,
    pub tau: f64,
    pub margin_minus: f64,
    pub margin_plus: f64,
    /// `"plus"`, `"minus"` or `"both"`.
    pub checked_edge: String,
    pub checked_margin: f64,
    pub commutator_residual: Option<f64>,
}

pub fn admissible_check(sol: &MPSolution, tau: f64, commutator_residual: Option<f64>) -> Admissibility {
    let (ap, am) = (sol.e_plus.abs(), sol.e_minus.abs());
    let (edge, margin) = if ap > am {
        ("plus", sol.admissibility_margin_plus)
    } else if ap < am {
        ("minus", sol.admissibility_margin_minus)
    } else {
        (
            "both",
            sol.admissibility_margin_plus.min(sol.admissibility_margin_minus),
        )
    };
    Admissibility {
        admissible: margin >= tau,
        tau,
        margin_minus: sol.admissibility_margin_minus,
        margin_plus: sol.admissibility_margin_plus,
        checked_edge: edge.into(),
        checked_margin: margin,
        commutator_residual,
    }
}

/// `||a b - b a||_op` for symmetric `a`, `b`.
pub fn commutator_residual(a: &SymmetricMatrix, b: &SymmetricMatrix) -> Result<f64> {
    same_dim(a.dim(), b.dim(), "commutator")?;
    let ab = a.as_matrix() * b.as_matrix();
    let k = &ab - ab.transpose();
    // k is antisymmetric; its norm is sqrt(lambda_max(k^T k)).
    let ktk = SymmetricMatrix::from_matrix(k.transpose() * &k)?;
    let top = sym_eigenvalues(&ktk)?[0];
    Ok(top.max(0.0).sqrt())
}

/// Diagonal spiked model: spiked block `(d, v1, r1)` of size `k`, bulk
/// `(v2, r2)`; `Sigma = diag(d, v2)`, `Sigma0 = diag(v1, v2)`,
/// `Sigma1 = diag(r1, r2)` in the common eigenbasis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeModel {
    pub d: Vec<f64>,
    pub v1: Vec<f64>,
    pub r1: Vec<f64>,
    pub v2: Vec<f64>,
    pub r2: Vec<f64>,
    pub phi: f64,
}

impl SpikeModel {
    pub fn new(d: Vec<f64>, v1: Vec<f64>, r1: Vec<f64>, v2: Vec<f64>, r2: Vec<f64>, phi: f64) -> Result<Self> {
        same_dim(d.len(), v1.len(), "spike d vs v1")?;
        same_dim(d.len(), r1.len(), "spike d vs r1")?;
        same_dim(v2.len(), r2.len(), "bulk v2 vs r2")?;
        if d.is_empty() || v2.is_empty() {
            return Err(Error::EmptyInput("spike model blocks".into()));
        }
        let all = d.iter().chain(&v1).chain(&r1).chain(&v2).chain(&r2);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spike model".into()));
        }
        if r1.iter().chain(&r2).any(|&r| r <= 0.0) {
            return Err(Error::InvalidArgument("r1 and r2 must be positive".into()));
        }
        if d.iter().chain(&v1).chain(&v2).any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("d, v1, v2 must be nonnegative".into()));
        }
        if phi.is_nan() || phi <= 0.0 {
            return Err(Error::InvalidArgument(format!("phi must be positive, got {phi}")));
        }
        Ok(Self { d, v1, r1, v2, r2, phi })
    }

    /// Spikes over an identity-normalized bulk of size `p - k`.
    pub fn identity_bulk(d: Vec<f64>, v1: Vec<f64>, p: usize, phi: f64) -> Result<Self> {
        let k = d.len();
        if p <= k {
            return Err(Error::InvalidArgument(format!("p = {p} must exceed k = {k}")));
        }
        Self::new(d, v1, vec![1.0; k], vec![1.0; p - k], vec![1.0; p - k], phi)
    }

    pub fn k(&self) -> usize {
        self.d.len()
    }

    pub fn d_prime(&self) -> Vec<f64> {
        self.d.iter().zip(&self.r1).map(|(a, b)| a / b).collect()
    }

    pub fn v1_prime(&self) -> Vec<f64> {
        self.v1.iter().zip(&self.r1).map(|(a, b)| a / b).collect()
    }

    pub fn v2_prime(&self) -> Vec<f64> {
        self.v2.iter().zip(&self.r2).map(|(a, b)| a / b).collect()
    }

    /// `(V2', -V2')`.
    pub fn bulk_ensemble(&self) -> Result<SpectralEnsemble> {
        let v = self.v2_prime();
        SpectralEnsemble::new(v.clone(), v.iter().map(|x| -x).collect(), self.phi)
    }

    /// `(Sigma, Sigma0, Sigma1)` as diagonal matrices.
    pub fn matrices(&self) -> Result<(SymmetricMatrix, SymmetricMatrix, SymmetricMatrix)> {
        let cat = |a: &[f64], b: &[f64]| [a, b].concat();
        Ok((
            SymmetricMatrix::from_diagonal(&cat(&self.d, &self.v2))?,
            SymmetricMatrix::from_diagonal(&cat(&self.v1, &self.v2))?,
            SymmetricMatrix::from_diagonal(&cat(&self.r1, &self.r2))?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbpKappa {
    pub index: usize,
    pub kappa: f64,
    pub d_prime: f64,
    pub v_prime: f64,
    pub detectable: bool,
    /// Edge of the bulk of `phi^{-1/2} M` where `m~` is evaluated.
    pub edge_scaled: f64,
    /// `phi^{1/2}` times the above; the edge of `M` itself.
    pub edge_unscaled: f64,
    pub m_tilde: f64,
    /// How the two edge occurrences in the threshold formula were read.
    pub convention: String,
    /// The same formula with the second edge read in scaled units.
    pub kappa_all_scaled: f64,
}

pub const KAPPA_CONVENTION: &str = "m~ at the edge of phi^{-1/2} M; E+ in the second denominator is the edge of M";

/// Phase-transition point for spike `i` given the solved bulk `(V2', -V2')`.
pub fn bbp_kappa(model: &SpikeModel, bulk: &MPSolution, i: usize) -> Result<BbpKappa> {
    if i >= model.k() {
        return Err(Error::InvalidArgument(format!(
            "spike index {i} out of range 0..{}",
            model.k()
        )));
    }
    let m = bulk.m_at_edges.1;
    let e = bulk.e_plus;
    if m == 0.0 || e == 0.0 {
        return Err(Error::ZeroDenominator(e));
    }
    let q = model.phi.sqrt();
    let v = model.v1_prime()[i];
    let d = model.d_prime()[i];
    let kappa = -q / m - v / (e * m);
    Ok(BbpKappa {
        index: i,
        kappa,
        d_prime: d,
        v_prime: v,
        detectable: d > kappa,
        edge_scaled: e,
        edge_unscaled: q * e,
        m_tilde: m,
        convention: KAPPA_CONVENTION.into(),
        kappa_all_scaled: -q / m - q * v / (e * m),
    })
}

/// Solves the bulk and returns the threshold for every spike.
pub fn bbp_kappas(model: &SpikeModel) -> Result<(MPSolution, Vec<BbpKappa>)> {
    let bulk = support_edges(&model.bulk_ensemble()?)?;
    let ks = (0..model.k())
        .map(|i| bbp_kappa(model, &bulk, i))
        .collect::<Result<_>>()?;
    Ok((bulk, ks))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub threshold_t: f64,
    pub threshold_roy: f64,
    /// `d - v`, compared with both thresholds.
    pub gap: f64,
    pub detectable_t: bool,
    pub detectable_roy: bool,
}

/// Right-hand sides for `T` and Roy given the solved `T`-null bulk
/// `(V2, -V2)`.
pub fn corollary2_thresholds(d: f64, v: f64, bulk: &MPSolution) -> Result<Thresholds> {
    let m = bulk.m_at_edges.1;
    let e = bulk.e_plus;
    if m == 0.0 || e == 0.0 {
        return Err(Error::ZeroDenominator(e));
    }
    let q = bulk.phi.sqrt();
    let threshold_t = -q / m - v * (1.0 + 1.0 / (e * m));
    let threshold_roy = q * v;
    let gap = d - v;
    Ok(Thresholds {
        threshold_t,
        threshold_roy,
        gap,
        detectable_t: gap > threshold_t,
        detectable_roy: gap > threshold_roy,
    })
}

/// `(lambda1 - p) / (p^{1/2} n^{-1/6})` for `p > n`.
pub fn corollary1_normalize(lambda1: f64, n: usize, p: usize) -> Result<f64> {
    if p <= n || n == 0 {
        return Err(Error::InvalidArgument(format!("need p > n >= 1, got n = {n}, p = {p}")));
    }
    let (n, p) = (n as f64, p as f64);
    Ok((lambda1 - p) / (p.sqrt() * n.powf(-1.0 / 6.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(p: usize, r: f64, phi: f64) -> SpectralEnsemble {
        SpectralEnsemble::new(vec![1.0; p], vec![r; p], phi).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn closed_form_root_at_five() {
        let m = solve_mtilde(c(5.0, 0.0), &identity(10, 0.0, 1.0)).unwrap();
        let root = (-5.0 + 5f64.sqrt()) / 10.0;
        assert!((m.re - root).abs() < 1e-10, "{m}");
        assert!(m.im.abs() < 1e-12);
        assert!((5.0 * m * m + 5.0 * m + 1.0).norm() < 1e-10);
    }

    #[test]
    fn large_z_asymptotics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = 7;
            let ens = SpectralEnsemble::new(
                (0..p).map(|_| rng.random_range(0.1..2.0)).collect(),
                (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
                rng.random_range(0.2..3.0),
            )
            .unwrap();
            for &r in &[50.0, 200.0, 1000.0] {
                let z = c(r, 0.3 * r);
                let m = solve_mtilde(z, &ens).unwrap();
                assert!((m + 1.0 / z).norm() <= 40.0 / z.norm().powi(2), "{z} {m}");
            }
        }
    }

    #[test]
    fn classical_density_at_two() {
        // MP at phi = 1: rho(x) = sqrt(x (4 - x)) / (2 pi x).
        let m = solve_mtilde(c(2.0, 1e-3), &identity(1, 0.0, 1.0)).unwrap();
        let rho = (2.0f64 * 2.0).sqrt() / (2.0 * std::f64::consts::PI * 2.0);
        assert!(m.im > 0.0);
        assert!((m.im / std::f64::consts::PI - rho).abs() < 0.02);
    }

    #[test]
    fn pole_and_zero_errors() {
        let ens = identity(3, -1.0, 1.0);
        assert!(matches!(solve_mtilde(c(-1.0, 0.0), &ens), Err(Error::PoleHit { .. })));
        assert!(matches!(solve_mtilde(c(0.0, 0.0), &ens), Err(Error::PoleHit { .. })));
    }

    #[test]
    fn nonconvergence_reports_residual() {
        let opts = SolverOptions {
            max_iter: 3,
            newton_after: 3,
            ..SolverOptions::default()
        };
        let err = solve_mtilde_with(c(2.0, 1e-6), &identity(1, 0.0, 1.0), opts, None).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 3, .. }));
    }

    #[test]
    fn classical_edges() {
        for (phi, lo, hi) in [(0.25, 0.5, 4.5), (1.0, 0.0, 4.0), (4.0, 0.5, 4.5)] {
            let sol = support_edges(&identity(50, 0.0, phi)).unwrap();
            assert!((sol.e_minus - lo).abs() < 1e-3, "phi {phi}: {}", sol.e_minus);
            assert!((sol.e_plus - hi).abs() < 1e-3, "phi {phi}: {}", sol.e_plus);
            assert!(sol.density_grid.iter().all(|&(_, d)| d >= 0.0));
            for &(x, d) in &sol.density_grid {
                if x < sol.e_minus - 1e-2 || x > sol.e_plus + 1e-2 {
                    assert_eq!(d, 0.0, "phi {phi} x {x}");
                }
            }
        }
    }

    #[test]
    fn t_null_edge() {
        let sol = support_edges(&identity(50, -1.0, 1.0)).unwrap();
        assert!((sol.e_plus - 3.0).abs() < 2e-3);
        assert!(sol.refined.1);
        assert!((sol.m_at_edges.1 + 2.0 / 3.0).abs() < 1e-8);
        assert!((sol.admissibility_margin_plus - 0.5).abs() < 1e-8);
    }

    #[test]
    fn shift_identity_to_1e6() {
        for phi in [0.25, 1.0, 4.0] {
            let a = support_edges(&identity(20, 0.0, phi)).unwrap();
            let b = support_edges(&identity(20, -1.0, phi)).unwrap();
            assert!((b.e_plus - (a.e_plus - phi.powf(-0.5))).abs() < 1e-6, "phi {phi}");
        }
    }

    #[test]
    fn quarter_phi_double_root() {
        let sol = support_edges(&identity(10, -1.0, 0.25)).unwrap();
        assert!((sol.e_plus - 2.5).abs() < 1e-9);
        assert!((sol.m_at_edges.1 + 0.6).abs() < 1e-9);
    }

    #[test]
    fn admissibility_verdicts() {
        let sol = support_edges(&identity(10, -1.0, 1.0)).unwrap();
        let a = admissible_check(&sol, 1e-3, None);
        assert!(a.admissible);
        assert_eq!(a.checked_edge, "plus");
        assert!(a.checked_margin > 0.0);
        let b = admissible_check(&sol, a.checked_margin + 0.1, None);
        assert!(!b.admissible);
    }

    #[test]
    fn non_commuting_pair_is_rejected() {
        let p = 6;
        let sigma = SymmetricMatrix::from_matrix(nalgebra::DMatrix::from_fn(p, p, |i, j| {
            0.6f64.powi((i as i32 - j as i32).abs())
        }))
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = nalgebra::DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0))
            .qr()
            .q();
        let block = nalgebra::DMatrix::from_fn(p, p, |i, j| {
            if i / 2 == j / 2 {
                if i == j {
                    1.0
                } else {
                    0.5
                }
            } else {
                0.0
            }
        });
        let s0 = SymmetricMatrix::from_matrix(&q * block * q.transpose()).unwrap();
        let err = SpectralEnsemble::from_matrices(&sigma, &s0.scaled(-1.0), 1.0).unwrap_err();
        assert!(matches!(err, Error::NonCommuting { .. }));
    }

    #[test]
    fn joint_diagonalization_recovers_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = 8;
        let q = nalgebra::DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0))
            .qr()
            .q();
        let s: Vec<f64> = (0..p).map(|i| 1.0 + (i % 3) as f64).collect();
        let r: Vec<f64> = (0..p).map(|i| -0.5 * (i % 2) as f64).collect();
        let rot = |d: &[f64]| {
            SymmetricMatrix::from_matrix(
                &q * nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(d)) * q.transpose(),
            )
            .unwrap()
        };
        let (ens, res) = SpectralEnsemble::from_matrices(&rot(&s), &rot(&r), 0.5).unwrap();
        assert!(res < 1e-10);
        let mut got: Vec<(f64, f64)> = ens.sigma_eigs.iter().copied().zip(ens.r_eigs.iter().copied()).collect();
        let mut want: Vec<(f64, f64)> = s.into_iter().zip(r).collect();
        let key = |a: &(f64, f64), b: &(f64, f64)| {
            let r = |x: f64| (x * 1e6).round();
            r(a.0).total_cmp(&r(b.0)).then(r(a.1).total_cmp(&r(b.1)))
        };
        got.sort_by(key);
        want.sort_by(key);
        for (g, w) in got.iter().zip(&want) {
            assert!((g.0 - w.0).abs() < 1e-9 && (g.1 - w.1).abs() < 1e-9);
        }
    }

    #[test]
    fn kappa_identity_bulk() {
        for phi in [0.25, 1.0, 4.0] {
            let model = SpikeModel::identity_bulk(vec![3.0], vec![1.0], 50, phi).unwrap();
            let (_, ks) = bbp_kappas(&model).unwrap();
            assert!(
                (ks[0].kappa - (1.0 + phi.sqrt())).abs() < 1e-8,
                "phi {phi}: {}",
                ks[0].kappa
            );
        }
    }

    #[test]
    fn kappa_without_v_term() {
        let model = SpikeModel::identity_bulk(vec![3.0], vec![0.0], 20, 1.0).unwrap();
        let (bulk, ks) = bbp_kappas(&model).unwrap();
        assert!((ks[0].kappa + 1.0 / bulk.m_at_edges.1).abs() < 1e-12);
    }

    #[test]
    fn corollary2_examples() {
        let bulk = support_edges(&identity(20, -1.0, 1.0)).unwrap();
        let t = corollary2_thresholds(2.0, 1.0, &bulk).unwrap();
        assert!((t.threshold_roy - 1.0).abs() < 1e-15);
        assert!((t.threshold_t - t.threshold_roy).abs() < 1e-6);
        let quarter = support_edges(&identity(20, -1.0, 0.25)).unwrap();
        let r = corollary2_thresholds(2.6, 1.0, &quarter).unwrap();
        assert!((r.threshold_roy - 0.5).abs() < 1e-15);
        assert!(r.detectable_roy);
        assert!(!corollary2_thresholds(1.4, 1.0, &quarter).unwrap().detectable_roy);
        let mut last = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..20 {
            let v = 0.1 + 0.2 * i as f64;
            let t = corollary2_thresholds(5.0, v, &quarter).unwrap();
            assert!(t.threshold_t < last.0 && t.threshold_roy > last.1);
            last = (t.threshold_t, t.threshold_roy);
        }
    }

    #[test]
    fn corollary1_examples() {
        assert_eq!(corollary1_normalize(2500.0, 50, 2500).unwrap(), 0.0);
        let sigma = 2500f64.sqrt() * 50f64.powf(-1.0 / 6.0);
        assert!((sigma - 26.0500).abs() < 1e-4);
        assert!((corollary1_normalize(2500.0 + sigma, 50, 2500).unwrap() - 1.0).abs() < 1e-12);
        assert!(corollary1_normalize(1.0, 50, 50).is_err());
    }
}
