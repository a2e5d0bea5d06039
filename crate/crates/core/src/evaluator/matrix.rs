//! Dense row-major and CSR sparse feature matrices.

use serde::{Deserialize, Serialize};

use super::codec;
use crate::types::Representation;

/// Largest dense matrix (in cells) we are willing to materialize.
pub const MAX_DENSE_CELLS: usize = 400_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    #[serde(with = "codec::f64s")]
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        assert_eq!(data.len(), rows.len() * cols, "ragged rows");
        DenseMatrix { rows: rows.len(), cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        DenseMatrix { rows: rows.len(), cols: self.cols, data }
    }

    pub fn select_columns(&self, cols: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(cols.iter().map(|&j| row[j]));
        }
        DenseMatrix { rows: self.rows, cols: cols.len(), data }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    #[serde(with = "codec::indices")]
    pub indptr: Vec<usize>,
    #[serde(with = "codec::indices")]
    pub indices: Vec<usize>,
    #[serde(with = "codec::f64s")]
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(cols: usize) -> Self {
        SparseMatrix { rows: 0, cols, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    /// Appends a row from (column, value) pairs; zeros are dropped and
    /// duplicate columns summed.
    pub fn push_row(&mut self, mut entries: Vec<(usize, f64)>) {
        entries.sort_unstable_by_key(|e| e.0);
        let start = self.indices.len();
        for (j, v) in entries {
            debug_assert!(j < self.cols);
            if self.indices.len() > start && *self.indices.last().unwrap() == j {
                *self.values.last_mut().unwrap() += v;
            } else {
                self.indices.push(j);
                self.values.push(v);
            }
        }
        let mut k = start;
        for r in start..self.indices.len() {
            if self.values[r] != 0.0 {
                self.indices[k] = self.indices[r];
                self.values[k] = self.values[r];
                k += 1;
            }
        }
        self.indices.truncate(k);
        self.values.truncate(k);
        self.indptr.push(k);
        self.rows += 1;
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (idx, val) = self.row(i);
            let row = d.row_mut(i);
            for (j, v) in idx.iter().zip(val) {
                row[*j] = *v;
            }
        }
        d
    }

    pub fn select_rows(&self, rows: &[usize]) -> SparseMatrix {
        let mut out = SparseMatrix::empty(self.cols);
        for &r in rows {
            let (idx, val) = self.row(r);
            out.indices.extend_from_slice(idx);
            out.values.extend_from_slice(val);
            out.indptr.push(out.indices.len());
            out.rows += 1;
        }
        out
    }

    pub fn select_columns(&self, cols: &[usize]) -> SparseMatrix {
        let mut map = std::collections::HashMap::with_capacity(cols.len());
        for (new, &old) in cols.iter().enumerate() {
            map.insert(old, new);
        }
        let mut out = SparseMatrix::empty(cols.len());
        for i in 0..self.rows {
            let (idx, val) = self.row(i);
            let entries = idx
                .iter()
                .zip(val)
                .filter_map(|(j, v)| map.get(j).map(|&n| (n, *v)))
                .collect();
            out.push_row(entries);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "representation", rename_all = "lowercase")]
pub enum FeatureMatrix {
    Dense(DenseMatrix),
    Sparse(SparseMatrix),
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        match self {
            FeatureMatrix::Dense(m) => m.rows,
            FeatureMatrix::Sparse(m) => m.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            FeatureMatrix::Dense(m) => m.cols,
            FeatureMatrix::Sparse(m) => m.cols,
        }
    }

    pub fn representation(&self) -> Representation {
        match self {
            FeatureMatrix::Dense(_) => Representation::Dense,
            FeatureMatrix::Sparse(_) => Representation::Sparse,
        }
    }

    /// Dense copy, or `None` if it would exceed [`MAX_DENSE_CELLS`].
    pub fn try_to_dense(&self) -> Option<DenseMatrix> {
        match self {
            FeatureMatrix::Dense(m) => Some(m.clone()),
            FeatureMatrix::Sparse(m) => {
                (m.rows.saturating_mul(m.cols) <= MAX_DENSE_CELLS).then(|| m.to_dense())
            }
        }
    }

    pub fn into_dense(self) -> Option<DenseMatrix> {
        match self {
            FeatureMatrix::Dense(m) => Some(m),
            other => other.try_to_dense(),
        }
    }

    #[inline]
    pub fn row_dot(&self, i: usize, w: &[f64]) -> f64 {
        match self {
            FeatureMatrix::Dense(m) => m.row(i).iter().zip(w).map(|(a, b)| a * b).sum(),
            FeatureMatrix::Sparse(m) => {
                let (idx, val) = m.row(i);
                idx.iter().zip(val).map(|(j, v)| v * w[*j]).sum()
            }
        }
    }

    /// out += scale · xᵢ
    #[inline]
    pub fn add_row_scaled(&self, i: usize, scale: f64, out: &mut [f64]) {
        match self {
            FeatureMatrix::Dense(m) => {
                for (o, x) in out.iter_mut().zip(m.row(i)) {
                    *o += scale * x;
                }
            }
            FeatureMatrix::Sparse(m) => {
                let (idx, val) = m.row(i);
                for (j, v) in idx.iter().zip(val) {
                    out[*j] += scale * v;
                }
            }
        }
    }

    /// Calls `f(column, value)` for every stored entry of row `i`
    /// (all columns for dense rows).
    #[inline]
    pub fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            FeatureMatrix::Dense(m) => m.row(i).iter().enumerate().for_each(|(j, v)| f(j, *v)),
            FeatureMatrix::Sparse(m) => {
                let (idx, val) = m.row(i);
                idx.iter().zip(val).for_each(|(j, v)| f(*j, *v));
            }
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        match self {
            FeatureMatrix::Dense(m) => FeatureMatrix::Dense(m.select_rows(rows)),
            FeatureMatrix::Sparse(m) => FeatureMatrix::Sparse(m.select_rows(rows)),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        match self {
            FeatureMatrix::Dense(m) => FeatureMatrix::Dense(m.select_columns(cols)),
            FeatureMatrix::Sparse(m) => FeatureMatrix::Sparse(m.select_columns(cols)),
        }
    }

    /// Horizontal concatenation. Sparse iff every block is sparse.
    pub fn hstack(blocks: Vec<FeatureMatrix>) -> Option<FeatureMatrix> {
        let rows = blocks.first().map_or(0, FeatureMatrix::rows);
        assert!(blocks.iter().all(|b| b.rows() == rows), "row count mismatch in hstack");
        let cols: usize = blocks.iter().map(FeatureMatrix::cols).sum();
        if blocks.iter().all(|b| matches!(b, FeatureMatrix::Sparse(_))) {
            let mut out = SparseMatrix::empty(cols);
            for i in 0..rows {
                let mut offset = 0;
                for b in &blocks {
                    if let FeatureMatrix::Sparse(m) = b {
                        let (idx, val) = m.row(i);
                        out.indices.extend(idx.iter().map(|j| j + offset));
                        out.values.extend_from_slice(val);
                    }
                    offset += b.cols();
                }
                out.indptr.push(out.indices.len());
                out.rows += 1;
            }
            return Some(FeatureMatrix::Sparse(out));
        }
        if rows.saturating_mul(cols) > MAX_DENSE_CELLS {
            return None;
        }
        let mut out = DenseMatrix::zeros(rows, cols);
        let mut offset = 0;
        for b in &blocks {
            for i in 0..rows {
                let row = &mut out.row_mut(i)[offset..offset + b.cols()];
                b.for_each_in_row(i, |j, v| row[j] = v);
            }
            offset += b.cols();
        }
        Some(FeatureMatrix::Dense(out))
    }

    /// Squared spectral norm estimate of X by power iteration on XᵀX.
    pub fn spectral_norm_sq(&self, iterations: usize) -> f64 {
        let (n, d) = (self.rows(), self.cols());
        if n == 0 || d == 0 {
            return 0.0;
        }
        let mut v = vec![1.0 / (d as f64).sqrt(); d];
        let mut est = 0.0;
        for _ in 0..iterations {
            let mut w = vec![0.0; d];
            for i in 0..n {
                let xv = self.row_dot(i, &v);
                self.add_row_scaled(i, xv, &mut w);
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            est = norm;
            v = w.into_iter().map(|x| x / norm).collect();
        }
        est
    }
}
