//! Sparse matrix storage.
//!
//! [`SparseCoo`] is the canonical form: triples sorted by `(row, col)` with no
//! duplicates. Graph construction and the loss kernels read it directly.
//! [`SparseCsr`] is the execution form used by matvecs and triangular solves.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Coordinate-format sparse matrix with sorted, unique `(row, col)` keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseCoo {
    n_rows: usize,
    n_cols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCoo {
    /// Builds a matrix from unordered triplets. Triplets are sorted; duplicate
    /// or out-of-range indices are rejected.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut rows = Vec::with_capacity(triplets.len());
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            rows.push(r);
            cols.push(c);
            values.push(v);
        }
        Self::from_parts(n_rows, n_cols, rows, cols, values)
    }

    /// Builds a matrix from already sorted parallel arrays, validating every
    /// invariant.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        rows: Vec<usize>,
        cols: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_len(rows.len(), cols.len())?;
        check_len(rows.len(), values.len())?;
        for k in 0..rows.len() {
            if rows[k] >= n_rows || cols[k] >= n_cols {
                return Err(Error::Format(format!(
                    "index ({}, {}) out of range for {}x{} matrix",
                    rows[k], cols[k], n_rows, n_cols
                )));
            }
            if k > 0 {
                match (rows[k - 1], cols[k - 1]).cmp(&(rows[k], cols[k])) {
                    Ordering::Less => {}
                    Ordering::Equal => {
                        return Err(Error::Format(format!(
                            "duplicate entry ({}, {})",
                            rows[k], cols[k]
                        )))
                    }
                    Ordering::Greater => {
                        return Err(Error::Format(format!(
                            "entries not sorted at ({}, {})",
                            rows[k], cols[k]
                        )))
                    }
                }
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            rows,
            cols,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            rows: (0..n).collect(),
            cols: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(n_rows: usize, n_cols: usize, dense: &[f64]) -> Result<Self> {
        check_len(n_rows * n_cols, dense.len())?;
        let mut triplets = Vec::new();
        for i in 0..n_rows {
            for j in 0..n_cols {
                let v = dense[i * n_cols + j];
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n_rows, n_cols, triplets)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nnz()).map(move |k| (self.rows[k], self.cols[k], self.values[k]))
    }

    /// Same pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        check_len(self.nnz(), values.len())?;
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    /// Position of `(row, col)` in the storage arrays, if stored.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let start = self.rows.partition_point(|&r| r < row);
        let end = self.rows.partition_point(|&r| r <= row);
        self.cols[start..end]
            .binary_search(&col)
            .ok()
            .map(|p| start + p)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.find(row, col).map_or(0.0, |k| self.values[k])
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.first_asymmetry().is_none()
    }

    fn first_asymmetry(&self) -> Option<(usize, usize)> {
        if !self.is_square() {
            return Some((0, 0));
        }
        self.iter()
            .find(|&(i, j, v)| i != j && self.find(j, i).map(|k| self.values[k]) != Some(v))
            .map(|(i, j, _)| (i, j))
    }

    pub fn ensure_symmetric(&self) -> Result<()> {
        match self.first_asymmetry() {
            None => Ok(()),
            Some((row, col)) => Err(Error::NotSymmetric { row, col }),
        }
    }

    /// Diagonal values, failing on the first missing one.
    pub fn diagonal(&self) -> Result<Vec<f64>> {
        let mut diag = vec![f64::NAN; self.n_rows.min(self.n_cols)];
        let mut seen = vec![false; diag.len()];
        for (i, j, v) in self.iter() {
            if i == j {
                diag[i] = v;
                seen[i] = true;
            }
        }
        match seen.iter().position(|s| !s) {
            Some(row) => Err(Error::MissingDiagonal(row)),
            None => Ok(diag),
        }
    }

    pub fn transpose(&self) -> Self {
        let triplets = self.iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.n_cols, self.n_rows, triplets)
            .expect("transpose of a valid matrix is valid")
    }

    /// `P A Pᵀ` where node `i` is relabelled `perm[i]`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Result<Self> {
        check_len(self.n_rows, perm.len())?;
        if !self.is_square() {
            return Err(Error::Invalid("permutation of a non-square matrix".into()));
        }
        let triplets = self.iter().map(|(i, j, v)| (perm[i], perm[j], v)).collect();
        Self::from_triplets(self.n_rows, self.n_cols, triplets)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Row-major dense copy. Intended for small oracles and diagnostics.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n_rows * self.n_cols];
        for (i, j, v) in self.iter() {
            dense[i * self.n_cols + j] = v;
        }
        dense
    }

    pub fn to_csr(&self) -> SparseCsr {
        coo_to_csr(self)
    }
}

/// Compressed sparse row matrix; columns strictly increasing within a row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCsr {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCsr {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[s..e], &self.values[s..e])
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_cols, x.len())?;
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x` without allocation. Lengths must already agree.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn transpose(&self) -> SparseCsr {
        coo_to_csr(&csr_to_coo(self).transpose())
    }

    pub fn to_coo(&self) -> SparseCoo {
        csr_to_coo(self)
    }
}

pub fn coo_to_csr(m: &SparseCoo) -> SparseCsr {
    let mut row_ptr = vec![0usize; m.n_rows + 1];
    for &r in &m.rows {
        row_ptr[r + 1] += 1;
    }
    for i in 0..m.n_rows {
        row_ptr[i + 1] += row_ptr[i];
    }
    // Sorted COO is already in CSR order.
    SparseCsr {
        n_rows: m.n_rows,
        n_cols: m.n_cols,
        row_ptr,
        cols: m.cols.clone(),
        values: m.values.clone(),
    }
}

pub fn csr_to_coo(a: &SparseCsr) -> SparseCoo {
    let mut rows = Vec::with_capacity(a.nnz());
    for i in 0..a.n_rows {
        rows.extend(std::iter::repeat(i).take(a.row_ptr[i + 1] - a.row_ptr[i]));
    }
    SparseCoo {
        n_rows: a.n_rows,
        n_cols: a.n_cols,
        rows,
        cols: a.cols.clone(),
        values: a.values.clone(),
    }
}

pub fn csr_matvec(a: &SparseCsr, x: &[f64]) -> Result<Vec<f64>> {
    a.matvec(x)
}

/// Entries with `row >= col` of a symmetric matrix.
pub fn lower_triangle(a: &SparseCoo) -> Result<SparseCoo> {
    a.ensure_symmetric()?;
    let keep: Vec<usize> = (0..a.nnz()).filter(|&k| a.rows[k] >= a.cols[k]).collect();
    Ok(SparseCoo {
        n_rows: a.n_rows,
        n_cols: a.n_cols,
        rows: keep.iter().map(|&k| a.rows[k]).collect(),
        cols: keep.iter().map(|&k| a.cols[k]).collect(),
        values: keep.iter().map(|&k| a.values[k]).collect(),
    })
}

/// Population standard deviation of the stored values.
pub fn value_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Divides every stored value by the population standard deviation σ of the
/// nonzeros and returns σ. A constant-valued matrix (σ = 0) is returned
/// unchanged with scale 1.
pub fn scale_by_std(a: &SparseCoo) -> (SparseCoo, f64) {
    let sigma = value_std(&a.values);
    if sigma > 0.0 && sigma.is_finite() {
        (a.scaled(1.0 / sigma), sigma)
    } else {
        (a.clone(), 1.0)
    }
}

/// Lower-triangular factor with a strictly positive, fully stored diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerFactor {
    matrix: SparseCoo,
}

impl LowerFactor {
    pub fn new(matrix: SparseCoo) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Invalid("lower factor must be square".into()));
        }
        if let Some((i, j, _)) = matrix.iter().find(|&(i, j, _)| i < j) {
            return Err(Error::NotTriangular { row: i, col: j });
        }
        let diag = matrix.diagonal()?;
        if let Some(row) = diag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::NonPositiveDiagonal {
                row,
                value: diag[row],
            });
        }
        Ok(Self { matrix })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: SparseCoo::identity(n),
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.n_rows
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn matrix(&self) -> &SparseCoo {
        &self.matrix
    }

    pub fn into_matrix(self) -> SparseCoo {
        self.matrix
    }

    pub fn rows(&self) -> &[usize] {
        &self.matrix.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.matrix.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.matrix.values
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.matrix.with_values(values)?)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal().expect("factor invariant: full diagonal")
    }

    pub fn same_pattern(&self, other: &LowerFactor) -> bool {
        self.matrix.n_rows == other.matrix.n_rows
            && self.matrix.rows == other.matrix.rows
            && self.matrix.cols == other.matrix.cols
    }

    pub fn to_csr(&self) -> SparseCsr {
        coo_to_csr(&self.matrix)
    }

    /// `Lᵀ` in CSR form, for backward substitution.
    pub fn transpose_csr(&self) -> SparseCsr {
        coo_to_csr(&self.matrix.transpose())
    }
}
