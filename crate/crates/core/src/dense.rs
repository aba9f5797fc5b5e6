//! Small real dense matrices: determinants, linear solves and singular values
//! for Jacobians with at most a few dozen rows.

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> RMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows);
        Self::from_fn(self.rows, rhs.cols, |i, j| {
            (0..self.cols).map(|k| self[(i, k)] * rhs[(k, j)]).sum()
        })
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| *a * *b).sum())
            .collect()
    }

    /// `A^T v`.
    pub fn tmatvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.rows, v.len());
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)] * v[i]).sum())
            .collect()
    }

    /// Sub-matrix from row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Determinant by partial-pivot LU. Panics on non-square input.
    pub fn determinant(&self) -> T {
        assert!(self.is_square(), "determinant of non-square matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut det = T::one();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().partial_cmp(&a[(j, k)].abs()).unwrap())
                .unwrap();
            if a[(p, k)] == T::zero() {
                return T::zero();
            }
            if p != k {
                for j in 0..n {
                    let t = a[(k, j)];
                    a[(k, j)] = a[(p, j)];
                    a[(p, j)] = t;
                }
                det = -det;
            }
            let pivot = a[(k, k)];
            det *= pivot;
            for i in k + 1..n {
                let f = a[(i, k)] / pivot;
                if f != T::zero() {
                    for j in k..n {
                        let v = a[(k, j)];
                        a[(i, j)] -= f * v;
                    }
                }
            }
        }
        det
    }

    /// Solves `A x = b` for square `A` by partial-pivot Gaussian elimination.
    /// Returns `None` when a pivot is exactly zero.
    pub fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        assert!(self.is_square());
        let n = self.rows;
        assert_eq!(b.len(), n);
        let mut a = self.clone();
        let mut x = b.to_vec();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().partial_cmp(&a[(j, k)].abs()).unwrap())
                .unwrap();
            if a[(p, k)] == T::zero() || !a[(p, k)].is_finite() {
                return None;
            }
            if p != k {
                for j in 0..n {
                    let t = a[(k, j)];
                    a[(k, j)] = a[(p, j)];
                    a[(p, j)] = t;
                }
                x.swap(k, p);
            }
            let pivot = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / pivot;
                if f != T::zero() {
                    for j in k..n {
                        let v = a[(k, j)];
                        a[(i, j)] -= f * v;
                    }
                    let xk = x[k];
                    x[i] -= f * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let s: T = (k + 1..n).map(|j| a[(k, j)] * x[j]).sum();
            x[k] = (x[k] - s) / a[(k, k)];
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    /// Thin SVD by one-sided Jacobi. Singular values are returned in
    /// descending order together with `V` (columns are right singular vectors).
    pub fn svd(&self) -> Svd<T> {
        // work on the tall orientation so that columns are orthogonalized
        let transposed = self.rows < self.cols;
        let a = if transposed { self.transpose() } else { self.clone() };
        let (m, n) = (a.rows, a.cols);
        let mut u = a;
        let mut v = Self::identity(n);
        let eps = T::epsilon();
        for _ in 0..80 {
            let mut rotated = false;
            for p in 0..n.saturating_sub(1) {
                for q in p + 1..n {
                    let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                    for i in 0..m {
                        alpha += u[(i, p)] * u[(i, p)];
                        beta += u[(i, q)] * u[(i, q)];
                        gamma += u[(i, p)] * u[(i, q)];
                    }
                    if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma == T::zero() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (gamma + gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m {
                        let (up, uq) = (u[(i, p)], u[(i, q)]);
                        u[(i, p)] = c * up - s * uq;
                        u[(i, q)] = s * up + c * uq;
                    }
                    for i in 0..n {
                        let (vp, vq) = (v[(i, p)], v[(i, q)]);
                        v[(i, p)] = c * vp - s * vq;
                        v[(i, q)] = s * vp + c * vq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sv: Vec<(T, usize)> = (0..n)
            .map(|j| ((0..m).map(|i| u[(i, j)] * u[(i, j)]).sum::<T>().sqrt(), j))
            .collect();
        sv.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let values: Vec<T> = sv.iter().map(|(s, _)| *s).collect();
        let order: Vec<usize> = sv.iter().map(|(_, j)| *j).collect();
        let v_sorted = Self::from_fn(n, n, |i, k| v[(i, order[k])]);
        let u_sorted = Self::from_fn(m, n, |i, k| {
            let s = values[k];
            if s > T::zero() {
                u[(i, order[k])] / s
            } else {
                T::zero()
            }
        });
        if transposed {
            // A^T = U S V^T  =>  A = V S U^T
            Svd {
                values,
                u: v_sorted,
                v: u_sorted,
            }
        } else {
            Svd {
                values,
                u: u_sorted,
                v: v_sorted,
            }
        }
    }

    pub fn singular_values(&self) -> Vec<T> {
        self.svd().values
    }

    /// Least-squares solve `min |A x - b|` with a relative rank cutoff.
    /// Returns the solution and the numerical rank.
    pub fn lstsq(&self, b: &[T], rcond: T) -> (Vec<T>, usize) {
        assert_eq!(b.len(), self.rows);
        let svd = self.svd();
        let smax = svd.values.first().copied().unwrap_or(T::zero());
        let cutoff = rcond * smax;
        let k = svd.values.len();
        let mut x = vec![T::zero(); self.cols];
        let mut rank = 0;
        for idx in 0..k {
            let s = svd.values[idx];
            if s <= cutoff || s == T::zero() {
                continue;
            }
            rank += 1;
            let coef: T = (0..self.rows).map(|i| svd.u[(i, idx)] * b[i]).sum::<T>() / s;
            for (j, xj) in x.iter_mut().enumerate() {
                *xj += coef * svd.v[(j, idx)];
            }
        }
        (x, rank)
    }
}

impl<T: Scalar> Index<(usize, usize)> for RMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> IndexMut<(usize, usize)> for RMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// `A = U diag(values) V^T`, thin.
#[derive(Debug, Clone)]
pub struct Svd<T: Scalar> {
    pub values: Vec<T>,
    pub u: RMatrix<T>,
    pub v: RMatrix<T>,
}
