//! Reproducible random data matrices with a prescribed covariance.
//!
//! Every draw comes from a [`RngStream`]: ChaCha8 keyed by a master seed,
//! with the replicate index as the ChaCha stream id. Two replicates never
//! share a keystream and a replicate's output does not depend on which
//! thread produced it.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::linalg::{CovarianceModel, DataMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

pub fn derive_stream(master_seed: u64, replicate_index: u64) -> RngStream {
    RngStream::new(master_seed, replicate_index)
}

/// Derives an unrelated master seed for a named purpose (SplitMix64 finalizer
/// over `seed ^ tag`), so e.g. data and bootstrap draws never overlap.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, for turning labels into seed tags.
pub fn label_tag(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Standardized (mean 0, variance 1) entry distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EntryDistribution {
    Gaussian,
    Rademacher,
    /// Uniform on [-1, 1] times sqrt(3).
    UniformStd,
    /// Student t with `df > 4` degrees of freedom times sqrt((df-2)/df).
    StudentTStd(u32),
    /// `first` for rows `0..n/2`, `second` for the rest.
    RowMixture(Box<EntryDistribution>, Box<EntryDistribution>),
}

impl EntryDistribution {
    pub fn row_mixture(first: EntryDistribution, second: EntryDistribution) -> Self {
        EntryDistribution::RowMixture(Box::new(first), Box::new(second))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EntryDistribution::StudentTStd(df) if *df <= 4 => {
                Err(Error::InvalidArgument(format!("Student t needs df > 4, got {df}")))
            }
            EntryDistribution::RowMixture(a, b) => {
                for d in [a, b] {
                    if matches!(**d, EntryDistribution::RowMixture(..)) {
                        return Err(Error::InvalidArgument("row mixtures cannot be nested".into()));
                    }
                    d.validate()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            EntryDistribution::Gaussian => "gauss".into(),
            EntryDistribution::Rademacher => "rademacher".into(),
            EntryDistribution::UniformStd => "unif".into(),
            EntryDistribution::StudentTStd(df) => format!("t{df}"),
            EntryDistribution::RowMixture(a, b) => format!("{}_{}", a.name(), b.name()),
        }
    }
}

impl std::str::FromStr for EntryDistribution {
    type Err = Error;

    /// Accepts the names produced by [`EntryDistribution::name`]; a bare `t`
    /// means 12 degrees of freedom.
    fn from_str(s: &str) -> Result<Self> {
        let single = |s: &str| -> Result<Self> {
            Ok(match s {
                "gauss" | "gaussian" | "normal" => EntryDistribution::Gaussian,
                "rademacher" => EntryDistribution::Rademacher,
                "unif" | "uniform" => EntryDistribution::UniformStd,
                "t" => EntryDistribution::StudentTStd(12),
                _ => match s.strip_prefix('t').and_then(|d| d.parse().ok()) {
                    Some(df) => EntryDistribution::StudentTStd(df),
                    None => return Err(Error::Parse(format!("unknown distribution '{s}'"))),
                },
            })
        };
        let dist = match s.split_once('_') {
            Some((a, b)) => EntryDistribution::row_mixture(single(a)?, single(b)?),
            None => single(s)?,
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Sampler for a single non-mixture kind.
enum Scalar {
    Gaussian,
    Rademacher,
    Uniform,
    T(StudentT<f64>, f64),
}

impl Scalar {
    fn new(d: &EntryDistribution) -> Result<Self> {
        Ok(match d {
            EntryDistribution::Gaussian => Scalar::Gaussian,
            EntryDistribution::Rademacher => Scalar::Rademacher,
            EntryDistribution::UniformStd => Scalar::Uniform,
            EntryDistribution::StudentTStd(df) => {
                let df = *df as f64;
                let t = StudentT::new(df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Scalar::T(t, ((df - 2.0) / df).sqrt())
            }
            EntryDistribution::RowMixture(..) => {
                return Err(Error::InvalidArgument("row mixtures cannot be nested".into()))
            }
        })
    }

    #[inline]
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Scalar::Gaussian => rng.sample(StandardNormal),
            Scalar::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Scalar::Uniform => rng.random_range(-1.0..=1.0) * 3f64.sqrt(),
            Scalar::T(t, scale) => t.sample(rng) * scale,
        }
    }
}

/// `n x p` matrix of standardized entries, drawn column by column.
pub fn standard_entries(n: usize, p: usize, dist: &EntryDistribution, stream: RngStream) -> Result<DMatrix<f64>> {
    dist.validate()?;
    if n == 0 || p == 0 {
        return Err(Error::EmptyInput("data shape".into()));
    }
    let mut rng = stream.rng();
    let (top, bottom, split) = match dist {
        EntryDistribution::RowMixture(a, b) => (Scalar::new(a)?, Scalar::new(b)?, n / 2),
        d => (Scalar::new(d)?, Scalar::Gaussian, n),
    };
    let mut z = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            z[(i, j)] = if i < split {
                top.draw(&mut rng)
            } else {
                bottom.draw(&mut rng)
            };
        }
    }
    Ok(z)
}

/// `Z C^{1/2}` with Gaussian `Z`.
pub fn gaussian_data(n: usize, c: &CovarianceModel, stream: RngStream) -> Result<DataMatrix> {
    general_data(n, c, &EntryDistribution::Gaussian, stream)
}

/// `Z C^{1/2}` with `Z` drawn from `dist`.
pub fn general_data(n: usize, c: &CovarianceModel, dist: &EntryDistribution, stream: RngStream) -> Result<DataMatrix> {
    let z = standard_entries(n, c.dim(), dist, stream)?;
    Ok(DataMatrix::from_unchecked(color(z, c)))
}

pub(crate) fn color(mut z: DMatrix<f64>, c: &CovarianceModel) -> DMatrix<f64> {
    let root = c.sqrt();
    if root.is_diagonal() {
        for (j, s) in root.diagonal().into_iter().enumerate() {
            z.column_mut(j).scale_mut(s);
        }
        z
    } else {
        z * root.as_matrix()
    }
}

/// Uniform point on the unit sphere in `R^p`.
pub fn unit_sphere<R: Rng>(p: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
