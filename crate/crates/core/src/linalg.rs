//! Small dense linear algebra: row-major matrices and a jittered Cholesky factorization.
//!
//! Problem sizes here are tiny (tens of rows), so everything is plain `Vec` storage.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn trace(&self) -> S {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn mat_vec(&self, v: &[S]) -> Vec<S> {
        (0..self.rows)
            .map(|i| dot(self.row(i), v))
            .collect()
    }
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Relative jitter schedule: the diagonal is loaded with `scale * trace/N`, starting at
/// `start` and multiplied by ten until it exceeds `max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    pub start: f64,
    pub max: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            start: 1e-10,
            max: 1e-4,
        }
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<S> {
    n: usize,
    l: Vec<S>,
    jitter: S,
}

impl<S: Scalar> Cholesky<S> {
    /// Plain factorization with a fixed diagonal shift. `None` if a pivot is not positive.
    pub fn factor_shifted(a: &Matrix<S>, shift: S) -> Option<Self> {
        let n = a.rows();
        debug_assert_eq!(n, a.cols());
        let mut l = vec![S::zero(); n * n];
        for j in 0..n {
            let mut d = a.get(j, j) + shift;
            for k in 0..j {
                d = d - l[j * n + k] * l[j * n + k];
            }
            if !(d > S::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Some(Cholesky { n, l, jitter: shift })
    }

    /// Factorization with the escalating jitter schedule.
    pub fn factor(a: &Matrix<S>, policy: JitterPolicy) -> Result<Self> {
        let n = a.rows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut base = a.trace().as_f64() / n as f64;
        if !(base > 0.0) || !base.is_finite() {
            base = 1.0;
        }
        let mut rel = policy.start;
        loop {
            if let Some(c) = Self::factor_shifted(a, S::lit(rel * base)) {
                return Ok(c);
            }
            rel *= 10.0;
            if rel > policy.max * (1.0 + 1e-9) {
                return Err(Error::NotPositiveDefinite {
                    max_jitter: policy.max * base,
                });
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> S {
        self.jitter
    }

    #[inline]
    pub fn l(&self, i: usize, j: usize) -> S {
        self.l[i * self.n + j]
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s = s - self.l[i * n + k] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s = s - self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log det(L Lᵀ)`.
    pub fn log_det(&self) -> S {
        let two = S::lit(2.0);
        (0..self.n).map(|i| two * self.l(i, i).ln()).sum()
    }

    /// Reconstructs `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix<S> {
        let n = self.n;
        Matrix::from_fn(n, n, |i, j| {
            (0..=i.min(j)).fold(S::zero(), |acc, k| acc + self.l(i, k) * self.l(j, k))
        })
    }
}
