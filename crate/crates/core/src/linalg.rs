//! Dense row-major `f64` matrices with the handful of kernels the autodiff
//! tape needs.
//!
//! All kernels are deterministic: every output element is accumulated by a
//! single task in a fixed index order, so results are bit-identical no matter
//! how rayon splits the row ranges.

use rayon::prelude::*;

/// Minimum number of multiply-adds before a kernel bothers with rayon.
const PAR_THRESHOLD: usize = 1 << 15;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    /// Single-row matrix from a slice.
    pub fn row_vector(data: &[f64]) -> Self {
        Matrix::from_vec(1, data.len(), data.to_vec())
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other^T`: `[n,k] x [m,k] -> [n,m]`.
    ///
    /// The transposed layout means both inner loops stream contiguous rows,
    /// which is the natural orientation for `y = x W^T + b` dense layers.
    /// The dot product runs over four independent accumulators so the
    /// reduction vectorizes; the lane order is fixed, keeping results
    /// bit-identical across runs and thread counts.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dim mismatch");
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = Matrix::zeros(n, m);
        let work = n * k * m;
        let body = |(orow, xrow): (&mut [f64], &[f64])| {
            for (j, ov) in orow.iter_mut().enumerate() {
                *ov = dot(xrow, &other.data[j * k..(j + 1) * k]);
            }
        };
        if work >= PAR_THRESHOLD {
            out.data
                .par_chunks_mut(m)
                .zip(self.data.par_chunks(k))
                .for_each(body);
        } else {
            out.data
                .chunks_mut(m)
                .zip(self.data.chunks(k))
                .for_each(body);
        }
        out
    }

    /// `self * other`: `[n,m] x [m,k] -> [n,k]`, ikj loop order.
    pub fn matmul_nn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul_nn inner dim mismatch");
        let (n, m, k) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, k);
        let work = n * m * k;
        let body = |(orow, arow): (&mut [f64], &[f64])| {
            for l in 0..m {
                let a = arow[l];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[l * k..(l + 1) * k];
                for j in 0..k {
                    orow[j] += a * brow[j];
                }
            }
        };
        if work >= PAR_THRESHOLD {
            out.data
                .par_chunks_mut(k)
                .zip(self.data.par_chunks(m))
                .for_each(body);
        } else {
            out.data
                .chunks_mut(k)
                .zip(self.data.chunks(m))
                .for_each(body);
        }
        out
    }

    /// `self^T * other`: `[n,m]^T x [n,k] -> [m,k]`.
    ///
    /// This is the weight-gradient kernel (`dW = dY^T X`); it parallelizes
    /// over output rows so each element keeps a fixed accumulation order.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_tn outer dim mismatch");
        let (n, m, k) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, k);
        let work = n * m * k;
        let body = |(o, orow): (usize, &mut [f64])| {
            for i in 0..n {
                let a = self.data[i * m + o];
                if a == 0.0 {
                    continue;
                }
                let xrow = &other.data[i * k..(i + 1) * k];
                for j in 0..k {
                    orow[j] += a * xrow[j];
                }
            }
        };
        if work >= PAR_THRESHOLD {
            out.data.par_chunks_mut(k).enumerate().for_each(body);
        } else {
            out.data.chunks_mut(k).enumerate().for_each(body);
        }
        out
    }

    /// Adds a `[1,m]` bias row to every row in place.
    pub fn add_bias_row(&mut self, bias: &Matrix) {
        assert_eq!(bias.rows, 1);
        assert_eq!(bias.cols, self.cols);
        for row in self.data.chunks_exact_mut(self.cols) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += *b;
            }
        }
    }

    /// Column sums as a `[1,m]` matrix.
    pub fn col_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for row in self.data.chunks_exact(self.cols) {
            for (o, v) in out.data.iter_mut().zip(row) {
                *o += *v;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Matrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// `self += scale * other`, elementwise.
    pub fn axpy(&mut self, scale: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// Elementwise product in place.
    pub fn hadamard_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "hadamard shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
    }

    /// Squared Frobenius norm.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Concatenates columns: `[n,a] ++ [n,b] -> [n,a+b]`.
    pub fn concat_cols(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "concat_cols row mismatch");
        let mut out = Matrix::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            let orow = out.row_mut(i);
            orow[..self.cols].copy_from_slice(self.row(i));
            orow[self.cols..].copy_from_slice(other.row(i));
        }
        out
    }

    /// Reorders columns: output column `j` takes input column `perm[j]`.
    pub fn permute_cols(&self, perm: &[usize]) -> Matrix {
        assert_eq!(perm.len(), self.cols, "permutation length mismatch");
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let src = self.row(i);
            let dst = out.row_mut(i);
            for (j, &p) in perm.iter().enumerate() {
                dst[j] = src[p];
            }
        }
        out
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (dst, &src) in idx.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    /// Copies a column range into a new matrix.
    pub fn slice_cols(&self, from: usize, to: usize) -> Matrix {
        assert!(from <= to && to <= self.cols, "slice_cols out of range");
        let mut out = Matrix::zeros(self.rows, to - from);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[from..to]);
        }
        out
    }
}

/// Fixed-order dot product over four independent accumulator lanes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for i in 0..chunks {
        let off = 4 * i;
        acc[0] += a[off] * b[off];
        acc[1] += a[off + 1] * b[off + 1];
        acc[2] += a[off + 2] * b[off + 2];
        acc[3] += a[off + 3] * b[off + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Inverts a permutation: `inv[perm[j]] = j`.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (j, &p) in perm.iter().enumerate() {
        inv[p] = j;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_nt_matches_naive() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]);
        let c = a.matmul_nt(&b);
        assert_eq!(c.shape(), (2, 2));
        assert_eq!(c.get(0, 0), 1.0 - 3.0);
        assert_eq!(c.get(0, 1), 0.5 + 1.0 + 1.5);
        assert_eq!(c.get(1, 0), 4.0 - 6.0);
        assert_eq!(c.get(1, 1), 2.0 + 2.5 + 3.0);
    }

    #[test]
    fn matmul_tn_is_transpose_product() {
        let a = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let c = a.matmul_tn(&b);
        // c[o][j] = sum_i a[i][o] * b[i][j]
        assert_eq!(c.get(0, 0), 1.0 + 6.0 + 15.0);
        assert_eq!(c.get(1, 1), 2.0 + 8.0 + 18.0);
    }

    #[test]
    fn permute_and_invert_round_trip() {
        let m = Matrix::from_vec(1, 4, vec![10.0, 11.0, 12.0, 13.0]);
        let perm = vec![3, 1, 0, 2];
        let p = m.permute_cols(&perm);
        assert_eq!(p.as_slice(), &[13.0, 11.0, 10.0, 12.0]);
        let back = p.permute_cols(&invert_permutation(&perm));
        assert_eq!(back.as_slice(), m.as_slice());
    }

    #[test]
    fn concat_and_slice() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Matrix::from_vec(2, 1, vec![9.0, 8.0]);
        let c = a.concat_cols(&b);
        assert_eq!(c.row(0), &[1.0, 2.0, 9.0]);
        assert_eq!(c.slice_cols(2, 3).as_slice(), &[9.0, 8.0]);
    }
}
