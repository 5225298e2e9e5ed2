//! Spectral test statistics: the operator-norm distance `T`, Roy's largest
//! root, the combined statistic and the general extreme-singular-value class.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::linalg::{
    extreme_abs, same_dim, sym_eigenvalues, top_abs, CovarianceModel, SymmetricMatrix, DEFAULT_INV_SQRT_TOL,
};
use crate::{Error, Result};

/// Anything the bootstrap can evaluate on a sample covariance.
pub trait SpectralStatistic: Send + Sync {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn evaluate(&self, sigma_hat: &SymmetricMatrix) -> Result<f64>;
}

/// `||sigma_hat - sigma0||_op`.
pub fn stat_t(sigma_hat: &SymmetricMatrix, sigma0: &SymmetricMatrix) -> Result<f64> {
    let d = sigma_hat.sub(sigma0)?;
    Ok(extreme_abs(&sym_eigenvalues(&d)?))
}

/// `||sigma0^{-1/2} sigma_hat sigma0^{-1/2} - I||_op`.
pub fn stat_roy(sigma_hat: &SymmetricMatrix, sigma0: &CovarianceModel) -> Result<f64> {
    NullStatistics::new(sigma0, &[StatKind::Roy])?.evaluate(sigma_hat, StatKind::Roy)
}

/// `T^2 / tr(sigma0) + Roy^2`.
pub fn stat_com(sigma_hat: &SymmetricMatrix, sigma0: &CovarianceModel) -> Result<f64> {
    NullStatistics::new(sigma0, &[StatKind::Com])?.evaluate(sigma_hat, StatKind::Com)
}

pub fn stat_exs(sigma_hat: &SymmetricMatrix, spec: &ExsSpec) -> Result<f64> {
    spec.evaluate(sigma_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Opn,
    Roy,
    Com,
}

impl StatKind {
    pub const ALL: [StatKind; 3] = [StatKind::Opn, StatKind::Roy, StatKind::Com];

    pub fn name(self) -> &'static str {
        match self {
            StatKind::Opn => "opn",
            StatKind::Roy => "roy",
            StatKind::Com => "com",
        }
    }

    fn needs_inverse(self) -> bool {
        !matches!(self, StatKind::Opn)
    }
}

impl fmt::Display for StatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "opn" | "t" => Ok(StatKind::Opn),
            "roy" => Ok(StatKind::Roy),
            "com" => Ok(StatKind::Com),
            other => Err(Error::InvalidArgument(format!("unknown statistic '{other}'"))),
        }
    }
}

/// `T`, Roy and Com against a fixed `sigma0`, with `sigma0^{-1/2}` computed
/// once. Evaluating several kinds on the same input shares decompositions.
#[derive(Debug, Clone)]
pub struct NullStatistics {
    sigma0: SymmetricMatrix,
    inv_sqrt: Option<SymmetricMatrix>,
    trace: f64,
}

impl NullStatistics {
    pub fn new(sigma0: &CovarianceModel, kinds: &[StatKind]) -> Result<Self> {
        let inv_sqrt = if kinds.iter().any(|k| k.needs_inverse()) {
            Some(sigma0.inv_sqrt(DEFAULT_INV_SQRT_TOL)?)
        } else {
            None
        };
        let trace = sigma0.trace();
        if kinds.contains(&StatKind::Com) && trace <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "combined statistic needs tr(sigma0) > 0, got {trace}"
            )));
        }
        Ok(Self {
            sigma0: sigma0.matrix().clone(),
            inv_sqrt,
            trace,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma0.dim()
    }

    pub fn evaluate(&self, sigma_hat: &SymmetricMatrix, kind: StatKind) -> Result<f64> {
        Ok(self.evaluate_many(sigma_hat, &[kind])?[0])
    }

    pub fn evaluate_many(&self, sigma_hat: &SymmetricMatrix, kinds: &[StatKind]) -> Result<Vec<f64>> {
        same_dim(sigma_hat.dim(), self.dim(), "sample covariance vs sigma0")?;
        let diff = sigma_hat.sub(&self.sigma0)?;
        let needs_t = kinds.iter().any(|k| matches!(k, StatKind::Opn | StatKind::Com));
        let needs_roy = kinds.iter().any(|k| k.needs_inverse());
        let t = if needs_t {
            extreme_abs(&sym_eigenvalues(&diff)?)
        } else {
            f64::NAN
        };
        let roy = if needs_roy {
            let w = self
                .inv_sqrt
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("statistic prepared without sigma0^{-1/2}".into()))?;
            extreme_abs(&sym_eigenvalues(&diff.congruence(w)?)?)
        } else {
            f64::NAN
        };
        Ok(kinds
            .iter()
            .map(|k| match k {
                StatKind::Opn => t,
                StatKind::Roy => roy,
                StatKind::Com => t * t / self.trace + roy * roy,
            })
            .collect())
    }

    pub fn prepared(self, kind: StatKind) -> PreparedStatistic {
        PreparedStatistic { null: self, kind }
    }
}

/// One [`StatKind`] bound to its null.
#[derive(Debug, Clone)]
pub struct PreparedStatistic {
    null: NullStatistics,
    kind: StatKind,
}

impl PreparedStatistic {
    pub fn new(kind: StatKind, sigma0: &CovarianceModel) -> Result<Self> {
        Ok(NullStatistics::new(sigma0, &[kind])?.prepared(kind))
    }

    pub fn kind(&self) -> StatKind {
        self.kind
    }
}

impl SpectralStatistic for PreparedStatistic {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn dim(&self) -> usize {
        self.null.dim()
    }

    fn evaluate(&self, sigma_hat: &SymmetricMatrix) -> Result<f64> {
        self.null.evaluate(sigma_hat, self.kind)
    }
}

pub type Combiner = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone)]
pub struct ExsBlock {
    pub sigma1: SymmetricMatrix,
    pub sigma2: CovarianceModel,
    pub k: usize,
    /// `None` when `sigma2` is the identity.
    inv_sqrt2: Option<SymmetricMatrix>,
}

/// Blocks `(sigma1, sigma2, k)` and a deterministic combiner over the
/// concatenated top-`k` singular values of `sigma2^{-1/2}(S - sigma1)sigma2^{-1/2}`.
#[derive(Clone)]
pub struct ExsSpec {
    blocks: Vec<ExsBlock>,
    combiner: Combiner,
    name: String,
}

impl fmt::Debug for ExsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExsSpec")
            .field("name", &self.name)
            .field("blocks", &self.blocks.len())
            .finish()
    }
}

impl ExsSpec {
    pub fn new(blocks: Vec<(SymmetricMatrix, CovarianceModel, usize)>, combiner: Combiner) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::EmptyInput("statistic blocks".into()));
        }
        let p = blocks[0].0.dim();
        let mut out = Vec::with_capacity(blocks.len());
        for (sigma1, sigma2, k) in blocks {
            same_dim(sigma1.dim(), p, "block sigma1")?;
            same_dim(sigma2.dim(), p, "block sigma2")?;
            if k == 0 || k > p {
                return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={p}")));
            }
            let inv_sqrt2 = if *sigma2.matrix() == SymmetricMatrix::identity(p) {
                None
            } else {
                Some(sigma2.inv_sqrt(DEFAULT_INV_SQRT_TOL)?)
            };
            out.push(ExsBlock {
                sigma1,
                sigma2,
                k,
                inv_sqrt2,
            });
        }
        Ok(Self {
            blocks: out,
            combiner,
            name: "exs".into(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn blocks(&self) -> &[ExsBlock] {
        &self.blocks
    }

    pub fn first_element() -> Combiner {
        Arc::new(|v: &[f64]| v[0])
    }

    pub fn sum() -> Combiner {
        Arc::new(|v: &[f64]| v.iter().sum())
    }

    /// `T` as a one-block spec.
    pub fn operator_norm(sigma0: &CovarianceModel) -> Result<Self> {
        let p = sigma0.dim();
        Self::new(
            vec![(sigma0.matrix().clone(), CovarianceModel::identity(p), 1)],
            Self::first_element(),
        )
        .map(|s| s.with_name("opn"))
    }

    /// Roy's statistic as a one-block spec. Both blocks equal `sigma0`.
    pub fn roy(sigma0: &CovarianceModel) -> Result<Self> {
        Self::new(
            vec![(sigma0.matrix().clone(), sigma0.clone(), 1)],
            Self::first_element(),
        )
        .map(|s| s.with_name("roy"))
    }

    /// The combined statistic as a two-block spec.
    pub fn combined(sigma0: &CovarianceModel) -> Result<Self> {
        let p = sigma0.dim();
        let tr = sigma0.trace();
        if tr <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "combined statistic needs tr(sigma0) > 0, got {tr}"
            )));
        }
        Self::new(
            vec![
                (sigma0.matrix().clone(), CovarianceModel::identity(p), 1),
                (sigma0.matrix().clone(), sigma0.clone(), 1),
            ],
            Arc::new(move |v: &[f64]| v[0] * v[0] / tr + v[1] * v[1]),
        )
        .map(|s| s.with_name("com"))
    }

    /// Concatenated singular values before the combiner.
    pub fn singular_values(&self, sigma_hat: &SymmetricMatrix) -> Result<Vec<f64>> {
        let mut vals = Vec::new();
        for b in &self.blocks {
            let mut m = sigma_hat.sub(&b.sigma1)?;
            if let Some(w) = &b.inv_sqrt2 {
                m = m.congruence(w)?;
            }
            vals.extend(top_abs(&sym_eigenvalues(&m)?, b.k));
        }
        Ok(vals)
    }
}

impl SpectralStatistic for ExsSpec {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn dim(&self) -> usize {
        self.blocks[0].sigma1.dim()
    }

    fn evaluate(&self, sigma_hat: &SymmetricMatrix) -> Result<f64> {
        same_dim(sigma_hat.dim(), self.dim(), "sample covariance vs statistic")?;
        let v = (self.combiner)(&self.singular_values(sigma_hat)?);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("combiner output {v}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::schatten1;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn diag(d: &[f64]) -> SymmetricMatrix {
        SymmetricMatrix::from_diagonal(d).unwrap()
    }

    fn random_psd(p: usize, rng: &mut ChaCha8Rng) -> SymmetricMatrix {
        let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        SymmetricMatrix::from_matrix(&a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5).unwrap()
    }

    fn random_orthogonal(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        a.qr().q()
    }

    fn rotate(s: &SymmetricMatrix, q: &DMatrix<f64>) -> SymmetricMatrix {
        SymmetricMatrix::from_matrix(q * s.as_matrix() * q.transpose()).unwrap()
    }

    #[test]
    fn t_examples() {
        let s0 = diag(&[1.0, 2.0]);
        assert_eq!(stat_t(&s0, &s0).unwrap(), 0.0);
        let sh = diag(&[4.0, -3.0]);
        assert_eq!(stat_t(&sh, &s0).unwrap(), 5.0);
        assert!(matches!(stat_t(&diag(&[1.0]), &s0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn roy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s0 = random_psd(6, &mut rng);
        let c0 = CovarianceModel::new(s0.clone()).unwrap();
        assert!(stat_roy(&s0, &c0).unwrap() < 1e-12);
        assert!((stat_roy(&s0.scaled(2.0), &c0).unwrap() - 1.0).abs() < 1e-12);
        let sh = random_psd(6, &mut rng);
        let id = CovarianceModel::identity(6);
        assert_eq!(stat_roy(&sh, &id).unwrap(), stat_t(&sh, id.matrix()).unwrap());
        let sing = CovarianceModel::from_diagonal(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            stat_roy(&diag(&[1.0, 1.0]), &sing),
            Err(Error::SingularCovariance { .. })
        ));
    }

    #[test]
    fn com_examples() {
        let c0 = CovarianceModel::identity(4);
        assert_eq!(stat_com(c0.matrix(), &c0).unwrap(), 0.0);
        let sh = SymmetricMatrix::identity(4).scaled(2.0);
        assert!((stat_com(&sh, &c0).unwrap() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn exs_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let c0 = CovarianceModel::new(random_psd(7, &mut rng)).unwrap();
            let sh = random_psd(7, &mut rng);
            let t = ExsSpec::operator_norm(&c0).unwrap();
            assert_eq!(stat_exs(&sh, &t).unwrap(), stat_t(&sh, c0.matrix()).unwrap());
            let r = ExsSpec::roy(&c0).unwrap();
            assert!((stat_exs(&sh, &r).unwrap() - stat_roy(&sh, &c0).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn exs_encodes_com() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = rng.random_range(2..12);
            let c0 = CovarianceModel::new(random_psd(p, &mut rng)).unwrap();
            let sh = random_psd(p, &mut rng);
            let spec = ExsSpec::combined(&c0).unwrap();
            let a = stat_exs(&sh, &spec).unwrap();
            let b = stat_com(&sh, &c0).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn exs_sum_of_all_is_schatten1() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = 9;
        let s1 = random_psd(p, &mut rng);
        let c2 = CovarianceModel::new(random_psd(p, &mut rng)).unwrap();
        let sh = random_psd(p, &mut rng);
        let spec = ExsSpec::new(vec![(s1.clone(), c2.clone(), p)], ExsSpec::sum()).unwrap();
        let w = c2.inv_sqrt(DEFAULT_INV_SQRT_TOL).unwrap();
        let m = sh.sub(&s1).unwrap().congruence(&w).unwrap();
        assert!((stat_exs(&sh, &spec).unwrap() - schatten1(&m).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn exs_validation() {
        let c0 = CovarianceModel::identity(3);
        let s = SymmetricMatrix::identity(3);
        assert!(ExsSpec::new(vec![(s.clone(), c0.clone(), 4)], ExsSpec::sum()).is_err());
        let sing = CovarianceModel::from_diagonal(&[1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(
            ExsSpec::new(vec![(s.clone(), sing, 1)], ExsSpec::sum()),
            Err(Error::SingularCovariance { .. })
        ));
        let nan = ExsSpec::new(vec![(s.clone(), c0, 1)], Arc::new(|_: &[f64]| f64::NAN)).unwrap();
        assert!(matches!(nan.evaluate(&s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn orthogonal_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = rng.random_range(2..15);
            let s0 = random_psd(p, &mut rng);
            let sh = random_psd(p, &mut rng);
            let q = random_orthogonal(p, &mut rng);
            let a = stat_t(&rotate(&sh, &q), &rotate(&s0, &q)).unwrap();
            let b = stat_t(&sh, &s0).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn roy_is_t_of_whitened() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let p = rng.random_range(2..15);
            let c0 = CovarianceModel::new(random_psd(p, &mut rng)).unwrap();
            let sh = random_psd(p, &mut rng);
            let w = c0.inv_sqrt(DEFAULT_INV_SQRT_TOL).unwrap();
            let white = sh.congruence(&w).unwrap();
            let a = stat_roy(&sh, &c0).unwrap();
            let b = stat_t(&white, &SymmetricMatrix::identity(p)).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s0 = random_psd(8, &mut rng);
        let sh = random_psd(8, &mut rng);
        let base = stat_t(&sh, &s0).unwrap();
        for c in [0.1, 2.0, 37.5] {
            let v = stat_t(&sh.scaled(c), &s0.scaled(c)).unwrap();
            assert!((v - c * base).abs() <= 1e-10 * c * base.max(1.0));
        }
    }

    #[test]
    fn many_shares_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c0 = CovarianceModel::new(random_psd(5, &mut rng)).unwrap();
        let sh = random_psd(5, &mut rng);
        let null = NullStatistics::new(&c0, &StatKind::ALL).unwrap();
        let all = null.evaluate_many(&sh, &StatKind::ALL).unwrap();
        for (k, v) in StatKind::ALL.iter().zip(&all) {
            assert_eq!(*v, PreparedStatistic::new(*k, &c0).unwrap().evaluate(&sh).unwrap());
        }
    }

    #[test]
    fn stat_kind_parsing() {
        assert_eq!("ROY".parse::<StatKind>().unwrap(), StatKind::Roy);
        assert!("lfn".parse::<StatKind>().is_err());
    }
}
