//! Dense column-major storage and the small elementwise kernels shared by
//! every solver.
//!
//! Every algorithm in this crate walks the data one column at a time, so
//! [`DenseMatrix`] keeps columns contiguous. Construction validates that all
//! entries are finite; the rest of the crate relies on that.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense, finite, column-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from column-major data, rejecting NaN and infinities.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos % rows.max(1),
                col: pos / rows.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Like [`DenseMatrix::from_col_major`] but also rejects negative entries.
    pub fn nonneg_from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::from_col_major(rows, cols, data)?;
        m.check_nonneg()?;
        Ok(m)
    }

    /// Builds a matrix from a list of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = vec![0.0; nrows * ncols];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::ShapeMismatch {
                    expected: (nrows, ncols),
                    found: (i, row.len()),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                data[j * nrows + i] = v;
            }
        }
        Self::from_col_major(nrows, ncols, data)
    }

    /// Non-negative variant of [`DenseMatrix::from_rows`].
    pub fn nonneg_from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = Self::from_rows(rows)?;
        m.check_nonneg()?;
        Ok(m)
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::ShapeMismatch {
                    expected: (rows, columns.len()),
                    found: (c.len(), j),
                });
            }
            data.extend_from_slice(c);
        }
        Self::from_col_major(rows, columns.len(), data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self::from_col_major(rows, cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Internal constructor for kernels whose output is finite by construction.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub(crate) fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.cols).map(move |j| self.col(j))
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    /// Column-major backing slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_nonneg(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    fn check_nonneg(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|&v| v < 0.0) {
            return Err(Error::Negative {
                row: pos % self.rows,
                col: pos / self.rows,
                value: self.data[pos],
            });
        }
        Ok(())
    }

    pub fn select_columns(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        Self::from_parts(self.rows, idx.len(), data)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for j in 0..self.cols {
            let c = self.col(j);
            data.extend(idx.iter().map(|&i| c[i]));
        }
        Self::from_parts(idx.len(), self.cols, data)
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for j in 0..self.cols {
            for i in 0..self.rows {
                data[i * self.cols + j] = self.data[j * self.rows + i];
            }
        }
        Self::from_parts(self.cols, self.rows, data)
    }

    /// `self * rhs`, accumulated column by column in index order.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                expected: (self.cols, rhs.cols),
                found: rhs.shape(),
            });
        }
        let mut data = vec![0.0; self.rows * rhs.cols];
        for j in 0..rhs.cols {
            let out = &mut data[j * self.rows..(j + 1) * self.rows];
            mat_vec_into(self, rhs.col(j), out);
        }
        Self::from_col_major(self.rows, rhs.cols, data)
    }

    /// Elementwise `self - rhs`.
    pub fn sub(&self, rhs: &DenseMatrix) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: rhs.shape(),
            });
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Self::from_parts(self.rows, self.cols, data))
    }

    /// Entrywise l1 norm.
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_col_major(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Reads a CSV matrix: one row per line, comma-separated decimals.
    pub fn read_csv<R: Read>(reader: R, has_header: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(record.len());
            for (field, s) in record.iter().enumerate() {
                let v: f64 = s.parse().map_err(|e| Error::Parse {
                    line: line + 1,
                    field: field + 1,
                    message: format!("{s:?}: {e}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: line + 1,
                        field: field + 1,
                        message: format!("{s:?} is not finite"),
                    });
                }
                row.push(v);
            }
            if let Some(first) = rows.first().map(Vec::len) {
                if row.len() != first {
                    return Err(Error::Parse {
                        line: line + 1,
                        field: row.len(),
                        message: format!("expected {first} fields, found {}", row.len()),
                    });
                }
            }
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn read_csv_path(path: impl AsRef<Path>, has_header: bool) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, has_header)
    }

    /// Writes the matrix as CSV with 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for i in 0..self.rows {
            wtr.write_record((0..self.cols).map(|j| format!("{:.16e}", self.get(i, j))))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// `out = a * v`, with each output entry summed left to right over columns.
pub(crate) fn mat_vec_into(a: &DenseMatrix, v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (l, &vl) in v.iter().enumerate() {
        if vl == 0.0 {
            continue;
        }
        for (o, &al) in out.iter_mut().zip(a.col(l)) {
            *o += al * vl;
        }
    }
}

pub(crate) fn mat_vec(a: &DenseMatrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.rows()];
    mat_vec_into(a, v, &mut out);
    out
}

/// `a^T v`.
pub(crate) fn mat_t_vec(a: &DenseMatrix, v: &[f64]) -> Vec<f64> {
    a.columns().map(|c| dot(c, v)).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sum of absolute values of each column.
pub fn column_l1_norms(x: &DenseMatrix) -> Vec<f64> {
    x.columns().map(l1).collect()
}

/// `sign(x) * max(|x| - tau, 0)`.
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Strictly positive normalization vector `1 + delta`, `delta ~ U(0, 1e-5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositiveVector {
    values: Vec<f64>,
    seed: u64,
}

/// Width of the uniform perturbation added to the all-ones vector.
pub const P_PERTURBATION: f64 = 1e-5;

/// RNG stream reserved for the normalization vector.
const P_STREAM: u64 = 0x7000;

impl PositiveVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Draws the normalization vector used by the selection criterion.
pub fn make_p(m: usize, seed: u64) -> PositiveVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(P_STREAM);
    let values = (0..m)
        .map(|_| {
            let u: f64 = rng.sample(rand::distr::Open01);
            1.0 + P_PERTURBATION * u
        })
        .collect();
    PositiveVector { values, seed }
}
