//! Dense CSV matrices: comma separated, row-major, optional header row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::linalg::{SymmetricMatrix, LOAD_ASYMMETRY_TOL};
use crate::{Error, Result};

fn records<R: Read>(reader: R, header: bool) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    Ok(rows)
}

pub fn parse_matrix<R: Read>(reader: R, header: bool) -> Result<DMatrix<f64>> {
    let rows = records(reader, header)?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("matrix file has no rows".into()));
    }
    let ncols = rows[0].len();
    let mut data = Vec::with_capacity(rows.len() * ncols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::BadMatrixShape(format!(
                "row {} has {} fields, expected {ncols}",
                i + 1,
                row.len()
            )));
        }
        for (j, field) in row.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("row {}, column {}: '{field}' is not a number", i + 1, j + 1)))?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("row {}, column {}", i + 1, j + 1)));
            }
            data.push(v);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &data))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn read_matrix(path: impl AsRef<Path>, header: bool) -> Result<DMatrix<f64>> {
    parse_matrix(open(path.as_ref())?, header)
}

/// Square matrix symmetrized under the load-time asymmetry tolerance.
pub fn read_symmetric(path: impl AsRef<Path>, header: bool) -> Result<SymmetricMatrix> {
    let m = read_matrix(path, header)?;
    if m.nrows() != m.ncols() {
        return Err(Error::BadMatrixShape(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    SymmetricMatrix::from_matrix_checked(m, LOAD_ASYMMETRY_TOL)
}

/// A single column or a single row.
pub fn read_vector(path: impl AsRef<Path>, header: bool) -> Result<Vec<f64>> {
    let m = read_matrix(path, header)?;
    if m.ncols() == 1 || m.nrows() == 1 {
        Ok(m.iter().copied().collect())
    } else {
        Err(Error::BadMatrixShape(format!(
            "expected a vector, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// First field of each row.
pub fn read_labels(path: impl AsRef<Path>, header: bool) -> Result<Vec<String>> {
    let rows = records(open(path.as_ref())?, header)?;
    Ok(rows.into_iter().map(|mut r| r.swap_remove(0)).collect())
}

/// Shortest round-trip formatting, so re-reading gives identical values.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(format_matrix(m).as_bytes())?;
    Ok(())
}

pub fn write_vector(path: impl AsRef<Path>, v: &[f64]) -> Result<()> {
    write_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v))
}
