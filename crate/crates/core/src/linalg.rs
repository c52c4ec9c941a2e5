//! Small sparse-matrix and operator utilities shared by the simulator and the
//! Krylov backend.

use nalgebra::{DMatrix, DVector};

/// Compressed sparse row matrix with `f64` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// and explicit zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (i, j, v) in sorted {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|t| t.2 != 0.0);

        let mut indptr = vec![0usize; nrows + 1];
        for &(i, _, _) in &merged {
            indptr[i + 1] += 1;
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        let indices = merged.iter().map(|t| t.1).collect();
        let values = merged.iter().map(|t| t.2).collect();
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &triplets)
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Nonzeros of row `i` as `(col, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// `out = self * x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        self.mul_vec_into(x.as_slice(), out.as_mut_slice());
        out
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut sums = vec![0.0; self.ncols];
        for (_, j, v) in self.triplets() {
            sums[j] += v.abs();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn trace(&self) -> f64 {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).sum()
    }

    pub fn all_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }
}

/// A square linear operator available through matrix-vector products.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// Upper bound on (or exact value of) the induced 1-norm.
    fn norm1(&self) -> f64;
    fn trace(&self) -> f64;

    /// Induced 1-norm of `self - shift * I` (an upper bound by default).
    fn shifted_norm1(&self, shift: f64) -> f64 {
        self.norm1() + shift.abs()
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nrows();
        y[..n].fill(0.0);
        for j in 0..self.ncols() {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let col = self.column(j);
            for i in 0..n {
                y[i] += col[i] * xj;
            }
        }
    }

    fn norm1(&self) -> f64 {
        self.column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn trace(&self) -> f64 {
        (0..self.nrows().min(self.ncols())).map(|i| self[(i, i)]).sum()
    }

    fn shifted_norm1(&self, shift: f64) -> f64 {
        self.column_iter()
            .enumerate()
            .map(|(j, c)| {
                c.iter()
                    .enumerate()
                    .map(|(i, v)| if i == j { (v - shift).abs() } else { v.abs() })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// `scale * (A - shift * I)` for a sparse `A`.
pub struct ShiftedSparse<'a> {
    pub a: &'a CsrMatrix,
    pub shift: f64,
    pub scale: f64,
}

impl LinearOperator for ShiftedSparse<'_> {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.a.mul_vec_into(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = self.scale * (*yi - self.shift * xi);
        }
    }

    fn norm1(&self) -> f64 {
        self.shifted_norm1(0.0)
    }

    fn trace(&self) -> f64 {
        self.scale * (self.a.trace() - self.shift * self.a.nrows() as f64)
    }

    fn shifted_norm1(&self, extra: f64) -> f64 {
        // scale * A - (scale * shift + extra) * I
        let diag_shift = self.scale * self.shift + extra;
        let n = self.a.ncols();
        let mut sums = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for (i, j, v) in self.a.triplets() {
            if i == j {
                diag[j] += v;
            } else {
                sums[j] += v.abs();
            }
        }
        sums.iter()
            .zip(&diag)
            .map(|(s, d)| self.scale.abs() * s + (self.scale * d - diag_shift).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stacks a slice of equally sized vectors into one column vector.
pub fn stack(blocks: &[DVector<f64>]) -> DVector<f64> {
    let len: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(len);
    let mut off = 0;
    for b in blocks {
        out.rows_mut(off, b.len()).copy_from(b);
        off += b.len();
    }
    out
}

/// Splits a stacked vector into `len / n` blocks of size `n`.
pub fn unstack(v: &DVector<f64>, n: usize) -> Vec<DVector<f64>> {
    assert!(n > 0 && v.len().is_multiple_of(n), "stacked length not a multiple of block size");
    (0..v.len() / n)
        .map(|k| v.rows(k * n, n).into_owned())
        .collect()
}
