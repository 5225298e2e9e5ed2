use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not square or not rectangular: {0}")]
    BadMatrixShape(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("matrix asymmetry {asymmetry:.3e} exceeds relative tolerance {tolerance:.1e}")]
    Asymmetric { asymmetry: f64, tolerance: f64 },

    #[error("eigensolver did not converge (dim {dim}, max |entry| {max_abs:.3e}, frobenius {frobenius:.3e})")]
    EigenNonConvergence { dim: usize, max_abs: f64, frobenius: f64 },

    #[error("covariance is not positive semi-definite: min eigenvalue {min_eigenvalue:.3e} below {bound:.3e}")]
    NotPsd { min_eigenvalue: f64, bound: f64 },

    #[error("covariance is singular: min eigenvalue {min_eigenvalue:.3e} <= {threshold:.3e}")]
    SingularCovariance { min_eigenvalue: f64, threshold: f64 },

    #[error("fixed point did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("z = {z} collides with a pole of the z-dependent covariance")]
    PoleHit { z: String },

    #[error("no density mass found on the scan window [{lo}, {hi}]")]
    DegenerateSupport { lo: f64, hi: f64 },

    #[error("m~ vanishes at the evaluation point {0}")]
    ZeroDenominator(f64),

    #[error("matrices do not commute (residual {residual:.3e})")]
    NonCommuting { residual: f64 },

    #[error("degenerate variance estimate at entry ({0}, {1})")]
    DegenerateVariance(usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code, used in CLI error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::BadMatrixShape(_) => "BadMatrixShape",
            Error::NonFinite(_) => "NonFinite",
            Error::Asymmetric { .. } => "Asymmetric",
            Error::EigenNonConvergence { .. } => "EigenNonConvergence",
            Error::NotPsd { .. } => "NotPsd",
            Error::SingularCovariance { .. } => "SingularCovariance",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::PoleHit { .. } => "PoleHit",
            Error::DegenerateSupport { .. } => "DegenerateSupport",
            Error::ZeroDenominator(_) => "ZeroDenominator",
            Error::NonCommuting { .. } => "NonCommuting",
            Error::DegenerateVariance(..) => "DegenerateVariance",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::EmptyInput(_) => "EmptyInput",
            Error::Replicate { source, .. } => source.code(),
            Error::Cell { source, .. } => source.code(),
            Error::Parse(_) => "ParseError",
            Error::Io(_) => "IoError",
        }
    }

    pub(crate) fn in_cell(self, cell: &str) -> Self {
        Error::Cell {
            cell: cell.to_owned(),
            source: Box::new(self),
        }
    }

    pub(crate) fn at_replicate(self, index: usize) -> Self {
        Error::Replicate {
            index,
            source: Box::new(self),
        }
    }
}
