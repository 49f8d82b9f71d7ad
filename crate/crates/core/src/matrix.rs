//! Small dense square matrices.
//!
//! Systems in this crate have at most a few tens of users, so a row-major
//! `Vec` is all that is needed.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds from row-major entries.
    pub fn from_row_major(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.n.max(1)).take(self.n)
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.n);
        self.rows()
            .map(|row| row.iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `xᵀ M x`.
    pub fn quadratic_form(&self, x: &[T]) -> T {
        x.iter()
            .zip(self.mul_vec(x))
            .map(|(&a, b)| a * b)
            .sum()
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Principal submatrix on `indices`.
    pub fn principal_submatrix(&self, indices: &[usize]) -> Self {
        let m = indices.len();
        let mut out = Self::zeros(m);
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }

    /// Lower-triangular `L` with `L Lᵀ = self` for a symmetric positive
    /// semidefinite matrix.
    ///
    /// Pivots in `[-tol, tol]` are clamped to zero and their column is
    /// dropped, so rank-deficient inputs such as `[[1, 1], [1, 1]]` factor
    /// cleanly. A pivot below `-tol`, or a nonzero residual in a clamped
    /// column, means the input is not PSD.
    pub fn psd_cholesky(&self) -> Result<Self> {
        let n = self.n;
        let tol = T::psd_tolerance();
        // residuals beside a zero pivot are O(sqrt(rounding))
        let column_tol = tol.sqrt() * T::of(10.0);
        let mut l = Self::zeros(n);
        for j in 0..n {
            let mut pivot = self[(j, j)];
            for k in 0..j {
                pivot = pivot - l[(j, k)] * l[(j, k)];
            }
            if pivot < -tol {
                return Err(Error::NotPositiveSemidefinite {
                    row: j,
                    pivot: pivot.as_f64(),
                });
            }
            if pivot <= tol {
                for i in (j + 1)..n {
                    let mut residual = self[(i, j)];
                    for k in 0..j {
                        residual = residual - l[(i, k)] * l[(j, k)];
                    }
                    if residual.abs() > column_tol {
                        return Err(Error::NotPositiveSemidefinite {
                            row: j,
                            pivot: pivot.as_f64(),
                        });
                    }
                }
                continue;
            }
            let root = pivot.sqrt();
            l[(j, j)] = root;
            for i in (j + 1)..n {
                let mut v = self[(i, j)];
                for k in 0..j {
                    v = v - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / root;
            }
        }
        Ok(l)
    }
}

impl<T> std::ops::Index<(usize, usize)> for SquareMatrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for SquareMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}
