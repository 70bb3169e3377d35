//! Point clouds and their CSV representation.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{NbbError, Result};
use crate::scalar::Scalar;

/// An N×n sample, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    points: DMatrix<T>,
    columns: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset, checking that it has at least two rows, at least one
    /// column and only finite entries. Ridge estimation additionally needs
    /// `n >= 2`; that is checked where the ridge dimension is known.
    pub fn new(points: DMatrix<T>) -> Result<Self> {
        let columns = (1..=points.ncols()).map(|j| format!("x_{j}")).collect();
        Self::with_columns(points, columns)
    }

    pub fn with_columns(points: DMatrix<T>, columns: Vec<String>) -> Result<Self> {
        if points.nrows() < 2 {
            return Err(NbbError::InvalidData(format!(
                "need at least 2 samples, got {}",
                points.nrows()
            )));
        }
        if points.ncols() < 1 {
            return Err(NbbError::InvalidData("need at least 1 column".into()));
        }
        if columns.len() != points.ncols() {
            return Err(NbbError::InvalidData(format!(
                "{} column names for {} columns",
                columns.len(),
                points.ncols()
            )));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite_value()) {
            // column-major storage
            let (r, c) = (pos % points.nrows(), pos / points.nrows());
            return Err(NbbError::InvalidData(format!(
                "non-finite entry at row {}, column {}",
                r + 1,
                c + 1
            )));
        }
        Ok(Self { points, columns })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(NbbError::InvalidData("no data rows".into()));
        }
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(NbbError::InvalidData("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
    }

    /// Sample size N.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Ambient dimension n.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<T> {
        &self.points
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> DVector<T> {
        self.points.row(i).transpose()
    }

    /// Mean of the per-coordinate sample standard deviations.
    pub fn mean_coordinate_std(&self) -> T {
        let n = self.len();
        let denom = T::from_usize_lossy(n - 1);
        let mut total = T::zero();
        for col in self.points.column_iter() {
            let mean = col.sum() / T::from_usize_lossy(n);
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).fold(T::zero(), |a, b| a + b) / denom;
            total += var.sqrt();
        }
        total / T::from_usize_lossy(self.dim())
    }

    /// Rows selected by index, in the given order (duplicates allowed).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let m = DMatrix::from_fn(indices.len(), self.dim(), |i, j| self.points[(indices[i], j)]);
        Self::with_columns(m, self.columns.clone())
    }

    /// Reads a CSV sample. A first row containing any non-numeric cell is
    /// taken as the header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = Vec::new();
        for rec in rdr.records() {
            records.push(rec?);
        }
        let header = match records.first() {
            Some(first) if first.iter().any(|c| c.parse::<f64>().is_err()) => Some(records.remove(0)),
            _ => None,
        };
        let offset = usize::from(header.is_some());
        let mut rows = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let mut row = Vec::with_capacity(rec.len());
            for (j, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| NbbError::Parse {
                    row: i + 1 + offset,
                    column: j + 1,
                    message: format!("non-numeric cell {cell:?}"),
                })?;
                row.push(T::lit(v));
            }
            rows.push(row);
        }
        let n = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(NbbError::Parse {
                row: bad + 1 + offset,
                column: rows[bad].len(),
                message: format!("expected {n} columns"),
            });
        }
        let m = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        match header {
            Some(h) if h.len() == n => Self::with_columns(m, h.iter().map(str::to_owned).collect()),
            Some(_) => Err(NbbError::Parse {
                row: 1,
                column: 1,
                message: "header width differs from data".into(),
            }),
            None => Self::new(m),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in self.points.row_iter() {
            w.write_record(row.iter().map(|v| fmt_scalar(*v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal representation.
pub fn fmt_scalar<T: Scalar>(v: T) -> String {
    format!("{v:?}")
}
