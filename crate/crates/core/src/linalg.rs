//! Dense symmetric linear algebra: the matrix newtypes and spectral
//! primitives everything else is built on.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Relative asymmetry tolerated in matrices loaded from outside.
pub const LOAD_ASYMMETRY_TOL: f64 = 1e-6;

/// Negative eigenvalues down to `-PSD_CLAMP_BAND * ||S||_op` are clamped to
/// zero when taking square roots; anything below is rejected.
pub const PSD_CLAMP_BAND: f64 = 1e-8;

/// A real symmetric `p x p` matrix, `p >= 1`. Exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    m: DMatrix<f64>,
}

impl SymmetricMatrix {
    /// Symmetrizes `m` as `(m + m^T) / 2`.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        check_finite(&m, "symmetric matrix")?;
        Ok(Self::symmetrize(m))
    }

    /// Like [`from_matrix`](Self::from_matrix) but rejects inputs whose raw
    /// asymmetry exceeds `rel_tol * max(1, max |m_ij|)`.
    pub fn from_matrix_checked(m: DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        check_square(&m)?;
        check_finite(&m, "symmetric matrix")?;
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > rel_tol * scale {
            return Err(Error::Asymmetric {
                asymmetry: asym / scale,
                tolerance: rel_tol,
            });
        }
        Ok(Self::symmetrize(m))
    }

    pub fn identity(p: usize) -> Self {
        assert!(p >= 1, "dimension must be positive");
        Self {
            m: DMatrix::identity(p, p),
        }
    }

    pub fn zeros(p: usize) -> Self {
        assert!(p >= 1, "dimension must be positive");
        Self {
            m: DMatrix::zeros(p, p),
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::EmptyInput("diagonal".into()));
        }
        if d.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("diagonal".into()));
        }
        let mut m = DMatrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        Ok(Self { m })
    }

    fn symmetrize(mut m: DMatrix<f64>) -> Self {
        let p = m.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn is_diagonal(&self) -> bool {
        let p = self.dim();
        (0..p).all(|j| (0..p).all(|i| i == j || self.m[(i, j)] == 0.0))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.m[(i, i)]).collect()
    }

    pub fn sub(&self, other: &SymmetricMatrix) -> Result<Self> {
        same_dim(self.dim(), other.dim(), "matrix difference")?;
        Ok(Self { m: &self.m - &other.m })
    }

    pub fn add(&self, other: &SymmetricMatrix) -> Result<Self> {
        same_dim(self.dim(), other.dim(), "matrix sum")?;
        Ok(Self { m: &self.m + &other.m })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { m: &self.m * c }
    }

    /// `self + c I`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut m = self.m.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += c;
        }
        Self { m }
    }

    /// `w * self * w` for symmetric `w`.
    pub fn congruence(&self, w: &SymmetricMatrix) -> Result<Self> {
        same_dim(self.dim(), w.dim(), "congruence")?;
        let left = &w.m * &self.m;
        Ok(Self::symmetrize(left * &w.m))
    }

    /// Frobenius inner product `tr(self^T other)`.
    pub fn inner(&self, other: &SymmetricMatrix) -> Result<f64> {
        same_dim(self.dim(), other.dim(), "inner product")?;
        Ok(self.m.dot(&other.m))
    }

    /// `c1^T self c2`.
    pub fn bilinear(&self, c1: &[f64], c2: &[f64]) -> Result<f64> {
        same_dim(self.dim(), c1.len(), "bilinear form (c1)")?;
        same_dim(self.dim(), c2.len(), "bilinear form (c2)")?;
        let mut acc = 0.0;
        for (col, b) in self.m.column_iter().zip(c2) {
            acc += col.iter().zip(c1).map(|(m, a)| m * a).sum::<f64>() * b;
        }
        Ok(acc)
    }

    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        Self::symmetrize(m)
    }
}

/// Eigenvalues sorted descending with matching orthonormal eigenvector
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(l);
        }
        scaled * v.transpose()
    }

    /// `V f(diag(lambda)) V^T`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(f(l));
        }
        SymmetricMatrix::from_symmetric_unchecked(scaled * v.transpose())
    }
}

fn convergence_error(s: &SymmetricMatrix) -> Error {
    Error::EigenNonConvergence {
        dim: s.dim(),
        max_abs: s.m.amax(),
        frobenius: s.m.norm(),
    }
}

/// Full eigendecomposition. Diagonal inputs are decomposed exactly.
pub fn sym_eigen(s: &SymmetricMatrix) -> Result<EigenDecomposition> {
    let p = s.dim();
    if s.is_diagonal() {
        let d = s.diagonal();
        let order = descending_order(&d);
        let mut vecs = DMatrix::zeros(p, p);
        for (col, &i) in order.iter().enumerate() {
            vecs[(i, col)] = 1.0;
        }
        return Ok(EigenDecomposition {
            eigenvalues: order.iter().map(|&i| d[i]).collect(),
            eigenvectors: vecs,
        });
    }
    let eig =
        s.m.clone()
            .try_symmetric_eigen(f64::EPSILON, 10_000 + 100 * p)
            .ok_or_else(|| convergence_error(s))?;
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(convergence_error(s));
    }
    let order = descending_order(&vals);
    let mut vecs = DMatrix::zeros(p, p);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok(EigenDecomposition {
        eigenvalues: order.iter().map(|&i| vals[i]).collect(),
        eigenvectors: vecs,
    })
}

/// Eigenvalues only, descending. This is the bootstrap hot path.
pub fn sym_eigenvalues(s: &SymmetricMatrix) -> Result<Vec<f64>> {
    let p = s.dim();
    if s.is_diagonal() {
        let mut d = s.diagonal();
        d.sort_by(|a, b| b.total_cmp(a));
        return Ok(d);
    }
    let view = faer::MatRef::from_column_major_slice(s.m.as_slice(), p, p);
    let mut vals = view
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|_| convergence_error(s))?;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(convergence_error(s));
    }
    vals.reverse();
    Ok(vals)
}

fn descending_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    idx
}

pub fn operator_norm(s: &SymmetricMatrix) -> Result<f64> {
    let vals = sym_eigenvalues(s)?;
    Ok(extreme_abs(&vals))
}

/// Largest `|lambda|` of a descending eigenvalue list.
pub(crate) fn extreme_abs(desc: &[f64]) -> f64 {
    let first = desc.first().copied().unwrap_or(0.0).abs();
    let last = desc.last().copied().unwrap_or(0.0).abs();
    first.max(last)
}

/// The `k` largest singular values of a symmetric matrix, i.e. the sorted
/// absolute eigenvalues.
pub fn top_singular_values_sym(s: &SymmetricMatrix, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > s.dim() {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={}", s.dim())));
    }
    let vals = sym_eigenvalues(s)?;
    Ok(top_abs(&vals, k))
}

/// Top-`k` of `|desc|` by merging from both ends of a descending list.
pub(crate) fn top_abs(desc: &[f64], k: usize) -> Vec<f64> {
    let (mut lo, mut hi) = (0usize, desc.len());
    let mut out = Vec::with_capacity(k);
    while out.len() < k && lo < hi {
        let a = desc[lo].abs();
        let b = desc[hi - 1].abs();
        if a >= b {
            out.push(a);
            lo += 1;
        } else {
            out.push(b);
            hi -= 1;
        }
    }
    out
}

/// Sum of singular values.
pub fn schatten1(s: &SymmetricMatrix) -> Result<f64> {
    Ok(sym_eigenvalues(s)?.iter().map(|v| v.abs()).sum())
}

/// A covariance matrix with its eigendecomposition and symmetric square
/// root computed once at construction.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    matrix: SymmetricMatrix,
    eig: EigenDecomposition,
    psd_floor: f64,
    sqrt: SymmetricMatrix,
}

impl CovarianceModel {
    pub fn new(matrix: SymmetricMatrix) -> Result<Self> {
        let eig = sym_eigen(&matrix)?;
        let psd_floor = *eig.eigenvalues.last().expect("dim >= 1");
        let norm = extreme_abs(&eig.eigenvalues);
        let bound = -PSD_CLAMP_BAND * norm;
        if psd_floor < bound {
            return Err(Error::NotPsd {
                min_eigenvalue: psd_floor,
                bound,
            });
        }
        let sqrt = if matrix.is_diagonal() {
            let d: Vec<f64> = matrix.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
            SymmetricMatrix::from_diagonal(&d)?
        } else {
            eig.apply(|l| l.max(0.0).sqrt())
        };
        Ok(Self {
            matrix,
            eig,
            psd_floor,
            sqrt,
        })
    }

    pub fn identity(p: usize) -> Self {
        Self::new(SymmetricMatrix::identity(p)).expect("identity is PSD")
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(SymmetricMatrix::from_diagonal(d)?)
    }

    pub fn matrix(&self) -> &SymmetricMatrix {
        &self.matrix
    }

    pub fn eig(&self) -> &EigenDecomposition {
        &self.eig
    }

    pub fn psd_floor(&self) -> f64 {
        self.psd_floor
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn operator_norm(&self) -> f64 {
        extreme_abs(&self.eig.eigenvalues)
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Symmetric square root with the PSD clamp applied.
    pub fn sqrt(&self) -> &SymmetricMatrix {
        &self.sqrt
    }

    /// `C^{-1/2}`; fails with [`Error::SingularCovariance`] if any
    /// eigenvalue is at most `rel_tol * ||C||_op`.
    pub fn inv_sqrt(&self, rel_tol: f64) -> Result<SymmetricMatrix> {
        let threshold = rel_tol * self.operator_norm();
        if self.psd_floor <= threshold || self.operator_norm() == 0.0 {
            return Err(Error::SingularCovariance {
                min_eigenvalue: self.psd_floor,
                threshold,
            });
        }
        if self.matrix.is_diagonal() {
            let d: Vec<f64> = self.matrix.diagonal().iter().map(|v| 1.0 / v.sqrt()).collect();
            return SymmetricMatrix::from_diagonal(&d);
        }
        Ok(self.eig.apply(|l| 1.0 / l.sqrt()))
    }
}

pub const DEFAULT_INV_SQRT_TOL: f64 = 1e-10;

/// An `n x p` observation matrix; rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    m: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::EmptyInput("data matrix".into()));
        }
        check_finite(&m, "data matrix")?;
        Ok(Self { m })
    }

    pub(crate) fn from_unchecked(m: DMatrix<f64>) -> Self {
        Self { m }
    }

    pub fn nrows(&self) -> usize {
        self.m.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.m.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }
}

/// Row-mean removal applied before forming the sample covariance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Centering {
    /// Data is taken as mean zero.
    #[default]
    None,
    Global,
    /// Subtract the mean of each group; one label per row.
    Groups(Vec<String>),
}

pub fn center_data(x: &DataMatrix, centering: &Centering) -> Result<DataMatrix> {
    let n = x.nrows();
    let mut m = x.m.clone();
    match centering {
        Centering::None => {}
        Centering::Global => {
            let mean = m.row_mean();
            for mut row in m.row_iter_mut() {
                row -= &mean;
            }
        }
        Centering::Groups(labels) => {
            if labels.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} group labels for {} rows",
                    labels.len(),
                    n
                )));
            }
            let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
            for (i, l) in labels.iter().enumerate() {
                match groups.iter_mut().find(|(g, _)| *g == l.as_str()) {
                    Some((_, rows)) => rows.push(i),
                    None => groups.push((l.as_str(), vec![i])),
                }
            }
            for (label, rows) in &groups {
                if rows.len() < 2 {
                    return Err(Error::InvalidArgument(format!("group '{label}' has fewer than 2 rows")));
                }
                let mut mean = nalgebra::RowDVector::zeros(m.ncols());
                for &r in rows {
                    mean += m.row(r);
                }
                mean /= rows.len() as f64;
                for &r in rows {
                    let mut row = m.row_mut(r);
                    row -= &mean;
                }
            }
        }
    }
    Ok(DataMatrix { m })
}

/// `X^T X / n` after the requested centering. The divisor is always `n`.
pub fn sample_covariance(x: &DataMatrix, centering: &Centering) -> Result<SymmetricMatrix> {
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "sample covariance needs n >= 2, got {}",
            x.nrows()
        )));
    }
    let xc = center_data(x, centering)?;
    Ok(gram_over_n(&xc.m))
}

pub(crate) fn gram_over_n(x: &DMatrix<f64>) -> SymmetricMatrix {
    let n = x.nrows() as f64;
    let mut g = x.tr_mul(x);
    g /= n;
    SymmetricMatrix::from_symmetric_unchecked(g)
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::BadMatrixShape(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::EmptyInput("matrix".into()));
    }
    Ok(())
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

pub(crate) fn same_dim(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{what}: {a} vs {b}")))
    }
}
