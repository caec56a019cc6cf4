//! Small dense and banded linear algebra used by the solvers.
//!
//! Network layers are tiny (widths of a few units) and the PDE Newton systems
//! are banded, so neither needs a general linear-algebra dependency.

use std::ops::{Index, IndexMut, Mul};

use crate::{Error, Result, Scalar};

pub type Vec2<T> = [T; 2];

/// 2×2 matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2<T>(pub [[T; 2]; 2]);

impl<T: Scalar> Mat2<T> {
    pub fn zero() -> Self {
        Mat2([[T::zero(); 2]; 2])
    }

    pub fn identity() -> Self {
        Mat2([[T::one(), T::zero()], [T::zero(), T::one()]])
    }

    pub fn diag(a: T, b: T) -> Self {
        Mat2([[a, T::zero()], [T::zero(), b]])
    }

    pub fn transpose(&self) -> Self {
        let m = self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn det(&self) -> T {
        let m = self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn scale(&self, s: T) -> Self {
        let m = self.0;
        Mat2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn add(&self, o: &Self) -> Self {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }

    pub fn apply(&self, v: Vec2<T>) -> Vec2<T> {
        let m = self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ]
    }

    /// Solves `self · x = rhs` by Cramer's rule; `None` when the determinant
    /// vanishes relative to the entry scale.
    pub fn solve(&self, rhs: Vec2<T>) -> Option<Vec2<T>> {
        let m = self.0;
        let det = self.det();
        let scale = m
            .iter()
            .flatten()
            .fold(T::zero(), |acc, x| acc.max(x.abs()));
        if !det.is_finite() || det.abs() <= T::epsilon() * scale * scale {
            return None;
        }
        Some([
            (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det,
            (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det,
        ])
    }
}

impl<T: Scalar> Mul for Mat2<T> {
    type Output = Mat2<T>;

    fn mul(self, o: Mat2<T>) -> Mat2<T> {
        let (a, b) = (self.0, o.0);
        let mut out = [[T::zero(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(out)
    }
}

pub fn dot2<T: Scalar>(a: Vec2<T>, b: Vec2<T>) -> T {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm_inf2<T: Scalar>(a: Vec2<T>) -> T {
    a[0].abs().max(a[1].abs())
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
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

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// `self · x`
    pub fn mul_vec(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
        }
    }

    /// `selfᵀ · y`
    pub fn mul_vec_transposed(&self, y: &[T], out: &mut [T]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = T::zero());
        for (i, &yi) in y.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
    }

    pub fn matmul(&self, o: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, o.rows, "matmul shape");
        let mut out = Matrix::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..o.cols {
                    out[(i, j)] += a * o[(k, j)];
                }
            }
        }
        out
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn to_mat2(&self) -> Option<Mat2<T>> {
        (self.rows == 2 && self.cols == 2).then(|| {
            Mat2([
                [self.data[0], self.data[1]],
                [self.data[2], self.data[3]],
            ])
        })
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Square band matrix with `lower`/`upper` bandwidths, factorized in place by
/// LU with partial pivoting (the LAPACK `gbtrf` storage layout: fill-in from
/// row exchanges widens the upper band to `lower + upper`).
#[derive(Clone, Debug)]
pub struct BandMatrix<T> {
    n: usize,
    lower: usize,
    upper: usize,
    /// `n` rows of width `2·lower + upper + 1`; entry (i, j) sits at offset
    /// `j + lower − i` within row i.
    data: Vec<T>,
    pivots: Vec<usize>,
    factored: bool,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        let width = 2 * lower + upper + 1;
        BandMatrix {
            n,
            lower,
            upper,
            data: vec![T::zero(); n * width],
            pivots: vec![0; n],
            factored: false,
        }
    }

    fn width(&self) -> usize {
        2 * self.lower + self.upper + 1
    }

    /// Row-relative offset: entry (i, j) with `i − lower ≤ j ≤ i + lower + upper`.
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.lower >= i && j <= i + self.lower + self.upper);
        i * self.width() + (j + self.lower - i)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if j + self.lower < i || j > i + self.upper {
            return T::zero();
        }
        self.data[self.slot(i, j)]
    }

    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(
            j + self.lower >= i && j <= i + self.upper,
            "entry ({i},{j}) outside band"
        );
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// `out = self · x` (valid before factorization only).
    pub fn mul_vec(&self, x: &[T], out: &mut [T]) {
        assert!(!self.factored);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.lower);
            let hi = (i + self.upper).min(self.n - 1);
            out[i] = (lo..=hi).map(|j| self.get(i, j) * x[j]).sum();
        }
    }

    /// In-place LU factorization with partial pivoting.
    pub fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let kl = self.lower;
        let reach = kl + self.upper;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(Error::Singular { step: k });
            }
            self.pivots[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last_row {
                let s = self.slot(i, k);
                let factor = self.data[s] / pivot;
                self.data[s] = factor;
                if factor != T::zero() {
                    for j in k + 1..=last_col {
                        let ukj = self.data[self.slot(k, j)];
                        let sij = self.slot(i, j);
                        self.data[sij] -= factor * ukj;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves in place after [`factor`](Self::factor).
    pub fn solve(&self, rhs: &mut [T]) {
        assert!(self.factored, "solve before factor");
        let n = self.n;
        let kl = self.lower;
        let reach = kl + self.upper;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                rhs.swap(k, p);
            }
            let bk = rhs[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                rhs[i] -= self.data[self.slot(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut s = rhs[k];
            for j in k + 1..=(k + reach).min(n - 1) {
                s -= self.data[self.slot(k, j)] * rhs[j];
            }
            rhs[k] = s / self.data[self.slot(k, k)];
        }
    }
}
