//! Dense and sparse (CSR) matrix kernels plus the spectral utilities the
//! rest of the crate builds on.
//!
//! All kernels are pure functions with deterministic iteration order, so
//! results are bit-reproducible for fixed inputs. Accumulation is in `f64`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("from_vec", rows * cols, data.len()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Build from nested row slices; rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::dim("from_rows", c, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(DenseMatrix { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Dense product `self * other` (ikj loop order).
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::dim("matmul", self.cols, other.rows));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                let orow = out.row_mut(i);
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    fn zip_with(
        &self,
        other: &DenseMatrix,
        context: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(
                context,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| f(*a, *b))
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, alpha: f64) -> DenseMatrix {
        self.map(|v| alpha * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sum of each column, returned as a length-`cols` vector.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }
}

/// Compressed sparse row matrix. Column indices are strictly increasing
/// within each row and exact structural zeros are dropped at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets. Duplicates are summed; entries
    /// that sum to exactly zero are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({r},{c}) out of bounds for {rows}x{cols}"
                )));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut it = entries.into_iter().peekable();
        while let Some((r, c, mut v)) = it.next() {
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    it.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                row_offsets[r + 1] += 1;
                col_indices.push(c);
                values.push(v);
            }
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0))).unwrap()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// (column indices, values) of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets: Vec<_> = self
            .iter()
            .map(|(r, c, v)| (c, r, v))
            .collect();
        SparseMatrix::from_triplets(self.cols, self.rows, triplets).unwrap()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            d.set(r, c, v);
        }
        d
    }
}

/// Sparse-dense product `a * b`.
pub fn spmm(a: &SparseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows() {
        return Err(Error::dim("spmm", a.cols, b.rows()));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols());
    for i in 0..a.rows {
        let (cols, vals) = a.row(i);
        let orow = out.row_mut(i);
        for (&k, &v) in cols.iter().zip(vals) {
            let brow = b.row(k);
            for (o, x) in orow.iter_mut().zip(brow) {
                *o += v * x;
            }
        }
    }
    Ok(out)
}

/// Maximum-row-sum norm: max over rows of the sum of absolute entries.
pub fn max_row_abs_sum(a: &DenseMatrix) -> f64 {
    (0..a.rows())
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Either storage format, for kernels that only need |A|·v.
pub enum MatrixRef<'a> {
    Dense(&'a DenseMatrix),
    Sparse(&'a SparseMatrix),
}

impl MatrixRef<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            MatrixRef::Dense(m) => (m.rows(), m.cols()),
            MatrixRef::Sparse(m) => (m.rows(), m.cols()),
        }
    }

    /// y = |A| x.
    fn abs_matvec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        match self {
            MatrixRef::Dense(m) => {
                for i in 0..m.rows() {
                    let mut acc = 0.0;
                    for (a, b) in m.row(i).iter().zip(x) {
                        acc += a.abs() * b;
                    }
                    y[i] = acc;
                }
            }
            MatrixRef::Sparse(m) => {
                for i in 0..m.rows() {
                    let (cols, vals) = m.row(i);
                    let mut acc = 0.0;
                    for (&c, &v) in cols.iter().zip(vals) {
                        acc += v.abs() * x[c];
                    }
                    y[i] = acc;
                }
            }
        }
    }
}

impl<'a> From<&'a DenseMatrix> for MatrixRef<'a> {
    fn from(m: &'a DenseMatrix) -> Self {
        MatrixRef::Dense(m)
    }
}

impl<'a> From<&'a SparseMatrix> for MatrixRef<'a> {
    fn from(m: &'a SparseMatrix) -> Self {
        MatrixRef::Sparse(m)
    }
}

/// Result of [`power_iteration_abs`].
#[derive(Debug, Clone, Copy)]
pub struct SpectralEstimate {
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Estimate the largest eigenvalue of the entrywise-absolute matrix |A| by
/// power iteration. Starts from the all-ones vector (the known eigenvector
/// of the normalized propagation operator in degree-scaled coordinates);
/// if the estimate stalls at zero it restarts once from a fixed pseudo-random
/// vector, and returns 0 if that also vanishes (nilpotent |A|).
pub fn power_iteration_abs<'a>(
    a: impl Into<MatrixRef<'a>>,
    iters: usize,
    tol: f64,
) -> Result<SpectralEstimate> {
    let a = a.into();
    let (n, m) = a.dims();
    if n != m {
        return Err(Error::NotSquare { rows: n, cols: m });
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("power iteration needs iters >= 1".into()));
    }
    if n == 0 {
        return Ok(SpectralEstimate {
            lambda: 0.0,
            converged: true,
            iterations: 0,
        });
    }

    let run = |start: Vec<f64>| -> SpectralEstimate {
        let mut v = start;
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm0);
        let mut y = vec![0.0; n];
        let mut lambda = 0.0;
        for it in 1..=iters {
            a.abs_matvec(&v, &mut y);
            let norm = y.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return SpectralEstimate {
                    lambda: 0.0,
                    converged: true,
                    iterations: it,
                };
            }
            let new_lambda = norm;
            let delta = (new_lambda - lambda).abs();
            lambda = new_lambda;
            for (vi, yi) in v.iter_mut().zip(&y) {
                *vi = yi / norm;
            }
            if it > 1 && delta < tol {
                return SpectralEstimate {
                    lambda,
                    converged: true,
                    iterations: it,
                };
            }
        }
        SpectralEstimate {
            lambda,
            converged: false,
            iterations: iters,
        }
    };

    let est = run(vec![1.0; n]);
    if est.lambda == 0.0 {
        // splitmix64-style fill, fixed seed: deterministic fallback start.
        let mut state: u64 = 0x9e3779b97f4a7c15;
        let fallback: Vec<f64> = (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) + 0.5
            })
            .collect();
        let est2 = run(fallback);
        if est2.lambda > est.lambda {
            return Ok(est2);
        }
    }
    Ok(est)
}

/// Frobenius distance `||a - b||_F`.
pub fn frobenius_distance(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::dim(
            "frobenius_distance",
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spmm_identity() {
        let a = SparseMatrix::identity(3);
        let b = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(spmm(&a, &b).unwrap(), b);
    }

    #[test]
    fn spmm_zero() {
        let a = SparseMatrix::from_triplets(3, 3, []).unwrap();
        let b = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(spmm(&a, &b).unwrap(), DenseMatrix::zeros(3, 2));
    }

    #[test]
    fn spmm_swap_rows() {
        let a = SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let expected = DenseMatrix::from_rows(&[vec![3.0, 4.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(spmm(&a, &b).unwrap(), expected);
    }

    #[test]
    fn spmm_dimension_mismatch() {
        let a = SparseMatrix::identity(3);
        let b = DenseMatrix::zeros(2, 2);
        assert!(spmm(&a, &b).is_err());
    }

    #[test]
    fn max_row_abs_sum_cases() {
        let a = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(max_row_abs_sum(&a), 3.0);
        assert_eq!(max_row_abs_sum(&DenseMatrix::zeros(4, 4)), 0.0);
        assert_eq!(max_row_abs_sum(&DenseMatrix::identity(5)), 1.0);
    }

    #[test]
    fn power_iteration_identity() {
        let a = DenseMatrix::identity(4);
        let est = power_iteration_abs(&a, 50, 1e-10).unwrap();
        assert!((est.lambda - 1.0).abs() < 1e-8);
        assert!(est.converged);
    }

    #[test]
    fn power_iteration_diagonal() {
        let a = DenseMatrix::from_rows(&[vec![0.3, 0.0], vec![0.0, 0.7]]).unwrap();
        let est = power_iteration_abs(&a, 200, 1e-12).unwrap();
        assert!((est.lambda - 0.7).abs() < 1e-6, "lambda = {}", est.lambda);
    }

    #[test]
    fn power_iteration_two_node_operator() {
        // M for 2 nodes joined by one unit hyperedge is (1/2) * ones.
        let m = SparseMatrix::from_triplets(
            2,
            2,
            [(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)],
        )
        .unwrap();
        let est = power_iteration_abs(&m, 100, 1e-12).unwrap();
        assert!((est.lambda - 1.0).abs() < 1e-10);
    }

    #[test]
    fn power_iteration_rejects_nonsquare() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(power_iteration_abs(&a, 10, 1e-8).is_err());
    }

    #[test]
    fn power_iteration_nilpotent_shift() {
        let a = SparseMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let est = power_iteration_abs(&a, 50, 1e-10).unwrap();
        assert_eq!(est.lambda, 0.0);
        assert!(est.converged);
    }

    #[test]
    fn frobenius_distance_cases() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(frobenius_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(frobenius_distance(&a, &DenseMatrix::zeros(2, 2)).unwrap(), 1.0);
        let c = DenseMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(frobenius_distance(&c, &DenseMatrix::zeros(1, 2)).unwrap(), 5.0);
        assert!(frobenius_distance(&a, &DenseMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn csr_drops_zeros_and_sums_duplicates() {
        let a = SparseMatrix::from_triplets(
            2,
            2,
            [(0, 0, 1.0), (0, 0, -1.0), (1, 1, 2.0), (1, 1, 3.0)],
        )
        .unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.to_dense().get(1, 1), 5.0);
    }
}
