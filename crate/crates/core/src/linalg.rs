//! Small dense row-major matrices and the symmetric positive-definite
//! routines (Cholesky, solves, inverse, log-determinant) the rest of the
//! crate relies on.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data reinterpreted with a new row-major shape.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {}x{} into {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &Matrix<T>) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Matrix {
            rows: n,
            cols: m,
            data: out,
        }
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimension");
        let (n, m) = (self.rows, other.rows);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                out.push(dot(a, other.row(j)));
            }
        }
        Matrix {
            rows: n,
            cols: m,
            data: out,
        }
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.rows, other.rows, "matmul_tn inner dimension");
        let (n, m) = (self.cols, other.cols);
        let mut out = vec![T::zero(); n * m];
        for p in 0..self.rows {
            let a_row = self.row(p);
            let b_row = other.row(p);
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let o_row = &mut out[i * m..(i + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Matrix {
            rows: n,
            cols: m,
            data: out,
        }
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn l2_norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Shape(format!(
                "cholesky of non-square {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].as_f64()).collect();
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: d.as_f64(),
                    min_diag: diag.iter().cloned().fold(f64::INFINITY, f64::min),
                    max_diag: diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    /// `log det A = 2 Σ log Lᵢᵢ`
    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        two * (0..self.l.rows()).map(|i| self.l[(i, i)].ln()).sum::<T>()
    }

    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: &Matrix<T>) -> Matrix<T> {
        let n = self.l.rows();
        assert_eq!(b.rows(), n);
        let mut out = Matrix::zeros(n, b.cols());
        for j in 0..b.cols() {
            let col: Vec<T> = (0..n).map(|i| b[(i, j)]).collect();
            let x = self.solve_vec(&col);
            for i in 0..n {
                out[(i, j)] = x[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.l.rows();
        let mut inv = self.solve(&Matrix::identity(n));
        // symmetrize away round-off
        for i in 0..n {
            for j in 0..i {
                let avg = (inv[(i, j)] + inv[(j, i)]) * T::lit(0.5);
                inv[(i, j)] = avg;
                inv[(j, i)] = avg;
            }
        }
        inv
    }
}
