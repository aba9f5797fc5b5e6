//! Dense complex matrices of dimension 2..=8.
//!
//! Everything here is sized for density matrices and rotation generators of
//! a handful of levels, so storage is a flat row-major `Vec` and the Hermitian
//! eigensolver is a cyclic complex Jacobi sweep.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::scalar::Scalar;

pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 8;

/// Relative tolerance used when validating Hermitian inputs.
pub const HERMITIAN_INPUT_TOL: f64 = 1e-10;

const MAX_JACOBI_SWEEPS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (max asymmetry {asymmetry:e}, norm {norm:e})")]
    NonHermitianInput { asymmetry: f64, norm: f64 },
    #[error("Hermitian eigendecomposition did not converge after {sweeps} sweeps")]
    EigenFailure { sweeps: usize },
    #[error("dimension {0} outside supported range 2..=8")]
    BadDimension(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// Square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix<T: Scalar> {
    dim: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> fmt::Debug for CMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix({}x{}) [", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar> CMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        assert!(
            (MIN_DIM..=MAX_DIM).contains(&dim),
            "CMatrix dimension {dim} outside 2..=8"
        );
        Self {
            dim,
            data: vec![Complex::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = Complex::one();
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from row-major entries; `entries.len()` must be a square in range.
    pub fn from_rows(entries: Vec<Complex<T>>) -> Result<Self, LinalgError> {
        let dim = (entries.len() as f64).sqrt().round() as usize;
        if dim * dim != entries.len() || !(MIN_DIM..=MAX_DIM).contains(&dim) {
            return Err(LinalgError::BadDimension(dim));
        }
        Ok(Self { dim, data: entries })
    }

    pub fn from_real_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex::new(d, T::zero());
        }
        m
    }

    /// `|k><k|` in dimension `dim`.
    pub fn basis_projector(dim: usize, k: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(k, k)] = Complex::one();
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> Complex<T> {
        (0..self.dim).map(|i| self[(i, i)]).fold(Complex::zero(), |a, b| a + b)
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_complex(&self, s: Complex<T>) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(T::zero(), T::max)
    }

    fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.dim {
            for j in i..self.dim {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Hermiticity test with relative tolerance `tol * norm`.
    pub fn is_hermitian_within(&self, tol: T) -> bool {
        self.asymmetry() <= tol * self.norm().max(T::min_positive_value())
    }

    pub fn is_hermitian(&self) -> bool {
        self.is_hermitian_within(T::tol(1e-12))
    }

    /// `(M + M^dagger) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let half = T::lit(0.5);
        Self::from_fn(self.dim, |i, j| (self[(i, j)] + self[(j, i)].conj()) * half)
    }

    pub fn check_hermitian(&self) -> Result<(), LinalgError> {
        if self.is_hermitian_within(T::tol(HERMITIAN_INPUT_TOL)) {
            Ok(())
        } else {
            Err(LinalgError::NonHermitianInput {
                asymmetry: self.asymmetry().to_f64_lossy(),
                norm: self.norm().to_f64_lossy(),
            })
        }
    }

    pub fn try_mul(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.dim != rhs.dim {
            return Err(LinalgError::DimensionMismatch {
                left: self.dim,
                right: rhs.dim,
            });
        }
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] = out.data[i * n + j] + a * rhs.data[k * n + j];
                }
            }
        }
        Ok(out)
    }

    /// `self * rho * self^dagger`.
    pub fn conjugate(&self, rho: &Self) -> Result<Self, LinalgError> {
        self.try_mul(rho)?.try_mul(&self.adjoint())
    }

    /// Real part of `tr(self * rhs)` without forming the product.
    pub fn trace_product_re(&self, rhs: &Self) -> T {
        assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        let mut acc = T::zero();
        for i in 0..n {
            for k in 0..n {
                let p = self.data[i * n + k] * rhs.data[k * n + i];
                acc += p.re;
            }
        }
        acc
    }

    /// Hermitian eigendecomposition (symmetrizes first).
    pub fn eigh(&self) -> Result<HermitianEigen<T>, LinalgError> {
        self.check_hermitian()?;
        jacobi_eigh(&self.hermitian_part())
    }
}

impl<T: Scalar> Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[i * self.dim + j]
    }
}

impl<T: Scalar> IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[i * self.dim + j]
    }
}

impl<T: Scalar> Mul for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn mul(self, rhs: &CMatrix<T>) -> CMatrix<T> {
        self.try_mul(rhs).expect("dimension mismatch in matrix product")
    }
}

impl<T: Scalar> Add for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn add(self, rhs: &CMatrix<T>) -> CMatrix<T> {
        assert_eq!(self.dim, rhs.dim);
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<T: Scalar> Sub for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn sub(self, rhs: &CMatrix<T>) -> CMatrix<T> {
        assert_eq!(self.dim, rhs.dim);
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Eigenvalues in ascending order; column `k` of `vectors` belongs to `values[k]`.
#[derive(Debug, Clone)]
pub struct HermitianEigen<T: Scalar> {
    pub values: Vec<T>,
    pub vectors: CMatrix<T>,
}

impl<T: Scalar> HermitianEigen<T> {
    /// `V diag(f(lambda)) V^dagger`.
    pub fn map(&self, f: impl Fn(T) -> Complex<T>) -> CMatrix<T> {
        let n = self.vectors.dim();
        let fv: Vec<Complex<T>> = self.values.iter().map(|&l| f(l)).collect();
        CMatrix::from_fn(n, |i, j| {
            (0..n).fold(Complex::zero(), |acc, k| {
                acc + self.vectors[(i, k)] * fv[k] * self.vectors[(j, k)].conj()
            })
        })
    }
}

fn off_diagonal_norm<T: Scalar>(a: &CMatrix<T>) -> T {
    let n = a.dim();
    let mut s = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi for a Hermitian matrix (input assumed exactly Hermitian).
fn jacobi_eigh<T: Scalar>(input: &CMatrix<T>) -> Result<HermitianEigen<T>, LinalgError> {
    let n = input.dim();
    let mut a = input.clone();
    let mut v = CMatrix::identity(n);
    let scale = a.norm();
    let zero = T::zero();

    if scale == zero {
        return Ok(HermitianEigen {
            values: vec![zero; n],
            vectors: v,
        });
    }
    let target = T::epsilon() * scale;

    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= T::min_positive_value() || mag <= target * T::lit(1e-3) {
                    continue;
                }
                let e = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (mag + mag);
                let t = if theta >= zero {
                    T::one() / (theta + (T::one() + theta * theta).sqrt())
                } else {
                    -T::one() / (-theta + (T::one() + theta * theta).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                // W = diag(1, conj(e)) * [[c, s], [-s, c]] on the (p, q) plane
                let w_pp = Complex::new(c, zero);
                let w_pq = Complex::new(s, zero);
                let w_qp = e.conj() * (-s);
                let w_qq = e.conj() * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * w_pp + akq * w_qp;
                    a[(k, q)] = akp * w_pq + akq * w_qq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = w_pp.conj() * apk + w_qp.conj() * aqk;
                    a[(q, k)] = w_pq.conj() * apk + w_qq.conj() * aqk;
                }
                a[(p, q)] = Complex::zero();
                a[(q, p)] = Complex::zero();
                a[(p, p)] = Complex::new(a[(p, p)].re, zero);
                a[(q, q)] = Complex::new(a[(q, q)].re, zero);

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * w_pp + vkq * w_qp;
                    v[(k, q)] = vkp * w_pq + vkq * w_qq;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > target * T::lit(16.0) {
        return Err(LinalgError::EigenFailure {
            sweeps: MAX_JACOBI_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.partial_cmp(&a[(j, j)].re).unwrap());
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, |i, k| v[(i, order[k])]);
    Ok(HermitianEigen { values, vectors })
}

/// `exp(-i G)` for Hermitian `G`.
pub fn expi_neg<T: Scalar>(g: &CMatrix<T>) -> Result<CMatrix<T>, LinalgError> {
    let eig = g.eigh()?;
    Ok(eig.map(|l| Complex::new(l.cos(), -l.sin())))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue<T: Scalar>(m: &CMatrix<T>) -> Result<T, LinalgError> {
    Ok(m.eigh()?.values[0])
}

/// Sum of absolute eigenvalues.
pub fn trace_norm<T: Scalar>(m: &CMatrix<T>) -> Result<T, LinalgError> {
    Ok(m.eigh()?.values.iter().map(|l| l.abs()).sum())
}

/// Positive semidefinite within `1e-10 * trace norm`.
pub fn is_psd<T: Scalar>(m: &CMatrix<T>) -> Result<bool, LinalgError> {
    let eig = m.eigh()?;
    let tn: T = eig.values.iter().map(|l| l.abs()).sum();
    Ok(eig.values[0] >= -T::tol(1e-10) * tn)
}

/// Principal square root of a PSD matrix; negative eigenvalues are clamped to 0.
pub fn sqrt_psd<T: Scalar>(m: &CMatrix<T>) -> Result<CMatrix<T>, LinalgError> {
    let eig = m.eigh()?;
    Ok(eig.map(|l| Complex::new(l.max(T::zero()).sqrt(), T::zero())))
}

/// Projects onto the PSD cone by clipping negative eigenvalues and rescales to
/// the original trace. Returns the clipped matrix and the clip magnitude
/// (sum of removed negative eigenvalues, as a positive number).
pub fn clip_to_psd<T: Scalar>(m: &CMatrix<T>) -> Result<(CMatrix<T>, T), LinalgError> {
    let eig = m.eigh()?;
    let trace: T = eig.values.iter().copied().sum();
    let removed: T = eig
        .values
        .iter()
        .filter(|l| **l < T::zero())
        .map(|l| -*l)
        .sum();
    if removed == T::zero() {
        return Ok((m.clone(), T::zero()));
    }
    let kept: T = eig.values.iter().map(|l| l.max(T::zero())).sum();
    let rescale = if kept > T::zero() { trace / kept } else { T::one() };
    let out = eig.map(|l| Complex::new(l.max(T::zero()) * rescale, T::zero()));
    Ok((out, removed))
}

/// Uhlmann fidelity `(tr sqrt(sqrt(a) b sqrt(a)))^2` of two unit-trace states.
pub fn fidelity<T: Scalar>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<T, LinalgError> {
    let sa = sqrt_psd(a)?;
    let inner = sa.conjugate(b)?.hermitian_part();
    let s: T = inner
        .eigh()?
        .values
        .iter()
        .map(|l| l.max(T::zero()).sqrt())
        .sum();
    Ok(s * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    type CMatrix = super::CMatrix<f64>;
    use std::f64::consts::PI;

    type C = Complex<f64>;

    fn c(re: f64, im: f64) -> C {
        Complex::new(re, im)
    }

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw = CMatrix::from_fn(n, |_, _| c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
        raw.hermitian_part()
    }

    #[test]
    fn zero_generator_gives_identity() {
        let u = expi_neg(&CMatrix::zeros(2)).unwrap();
        assert!(u.max_abs_diff(&CMatrix::identity(2)) < 1e-15);
    }

    #[test]
    fn half_turn_about_x_swaps_basis() {
        // (pi/2) sigma_x
        let g = CMatrix::from_rows(vec![c(0.0, 0.0), c(PI / 2.0, 0.0), c(PI / 2.0, 0.0), c(0.0, 0.0)]).unwrap();
        let u = expi_neg(&g).unwrap();
        assert!((u[(0, 1)].norm() - 1.0).abs() < 1e-12);
        assert!(u[(0, 0)].norm() < 1e-12);
    }

    #[test]
    fn v_type_eigenphases() {
        // h1 = 3, h2 = 4: Omega = 5, spectrum {-2.5, 0, 2.5}
        let g = CMatrix::from_rows(vec![
            c(0.0, 0.0), c(1.5, 0.0), c(2.0, 0.0),
            c(1.5, 0.0), c(0.0, 0.0), c(0.0, 0.0),
            c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0),
        ])
        .unwrap();
        let eig = g.eigh().unwrap();
        for (got, want) in eig.values.iter().zip([-2.5, 0.0, 2.5]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        let u = expi_neg(&g).unwrap();
        let ueig_phases: Vec<f64> = {
            // U commutes with G; its eigenvalues on G's eigenvectors are exp(-i lambda)
            let v = &eig.vectors;
            (0..3)
                .map(|k| {
                    let col: Vec<C> = (0..3).map(|i| v[(i, k)]).collect();
                    let ucol: Vec<C> = (0..3).map(|i| (0..3).map(|j| u[(i, j)] * col[j]).sum()).collect();
                    let lam: C = (0..3).map(|i| col[i].conj() * ucol[i]).sum();
                    lam.arg()
                })
                .collect()
        };
        for (phase, want) in ueig_phases.iter().zip([2.5, 0.0, -2.5]) {
            assert!((phase - want).abs() < 1e-12);
        }
    }

    #[test]
    fn min_eigenvalue_examples() {
        let half = CMatrix::from_real_diagonal(&[0.5, 0.5]);
        assert!((min_eigenvalue(&half).unwrap() - 0.5).abs() < 1e-15);
        let m = CMatrix::from_rows(vec![c(0.5, 0.0), c(0.6, 0.0), c(0.6, 0.0), c(0.5, 0.0)]).unwrap();
        assert!((min_eigenvalue(&m).unwrap() + 0.1).abs() < 1e-14);
        assert!(!is_psd(&m).unwrap());
        let pure = CMatrix::from_real_diagonal(&[1.0, 0.0, 0.0]);
        assert_eq!(min_eigenvalue(&pure).unwrap(), 0.0);
        assert!(is_psd(&pure).unwrap());
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = CMatrix::from_rows(vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!(matches!(expi_neg(&m), Err(LinalgError::NonHermitianInput { .. })));
        assert!(matches!(min_eigenvalue(&m), Err(LinalgError::NonHermitianInput { .. })));
    }

    #[test]
    fn bad_dimension_rejected() {
        assert!(matches!(
            CMatrix::from_rows(vec![c(1.0, 0.0)]),
            Err(LinalgError::BadDimension(1))
        ));
        assert!(CMatrix::from_rows(vec![c(1.0, 0.0); 5]).is_err());
    }

    #[test]
    fn eigenvectors_reconstruct_matrix() {
        for n in 2..=8 {
            let h = random_hermitian(n, n as u64);
            let eig = h.eigh().unwrap();
            let back = eig.map(|l| c(l, 0.0));
            assert!(back.max_abs_diff(&h) < 1e-12 * h.norm().max(1.0), "n = {n}");
            let vv = &eig.vectors.adjoint() * &eig.vectors;
            assert!(vv.max_abs_diff(&CMatrix::identity(n)) < 1e-12);
        }
    }

    #[test]
    fn expi_neg_is_unitary_and_inverts() {
        for seed in 0..1000 {
            let n = 2 + (seed as usize % 3);
            let g = random_hermitian(n, seed);
            let u = expi_neg(&g).unwrap();
            let uinv = expi_neg(&g.scale(-1.0)).unwrap();
            let id = CMatrix::identity(n);
            assert!((&u * &u.adjoint()).max_abs_diff(&id) < 1e-12);
            assert!((&u * &uinv).max_abs_diff(&id) < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn qubit_exponential_matches_rodrigues() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            // G = (v . sigma) / 2
            let g = CMatrix::from_rows(vec![
                c(v[2] / 2.0, 0.0),
                c(v[0] / 2.0, -v[1] / 2.0),
                c(v[0] / 2.0, v[1] / 2.0),
                c(-v[2] / 2.0, 0.0),
            ])
            .unwrap();
            let omega = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let (co, si) = ((omega / 2.0).cos(), (omega / 2.0).sin());
            let n = [v[0] / omega, v[1] / omega, v[2] / omega];
            // cos(O/2) I - i sin(O/2) n.sigma
            let want = CMatrix::from_rows(vec![
                c(co, -si * n[2]),
                c(-si * n[1], -si * n[0]),
                c(si * n[1], -si * n[0]),
                c(co, si * n[2]),
            ])
            .unwrap();
            let got = expi_neg(&g).unwrap();
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn trace_is_cyclic() {
        for seed in 0..200 {
            let n = 2 + (seed as usize % 7);
            let a = random_hermitian(n, seed);
            let b = CMatrix::from_fn(n, |i, j| c((i * 3 + j) as f64 * 0.1, (seed as f64).sin() * j as f64));
            let ab = (&a * &b).trace();
            let ba = (&b * &a).trace();
            assert!((ab - ba).norm() < 1e-12 * (1.0 + ab.norm()));
        }
    }

    #[test]
    fn fidelity_of_equal_states_is_one() {
        let rho = CMatrix::from_rows(vec![c(0.6, 0.0), c(0.2, -0.1), c(0.2, 0.1), c(0.4, 0.0)]).unwrap();
        assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-12);
        let zero = CMatrix::from_real_diagonal(&[1.0, 0.0]);
        let one = CMatrix::from_real_diagonal(&[0.0, 1.0]);
        assert!(fidelity(&zero, &one).unwrap().abs() < 1e-12);
    }

    #[test]
    fn clip_restores_positivity_and_trace() {
        let m = CMatrix::from_rows(vec![c(0.5, 0.0), c(0.6, 0.0), c(0.6, 0.0), c(0.5, 0.0)]).unwrap();
        let (clipped, removed) = clip_to_psd(&m).unwrap();
        assert!((removed - 0.1).abs() < 1e-12);
        assert!(min_eigenvalue(&clipped).unwrap() > -1e-14);
        assert!((clipped.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_precision_path_works() {
        let g = super::CMatrix::<f32>::from_rows(vec![
            Complex::new(0.3, 0.0),
            Complex::new(0.4, -0.2),
            Complex::new(0.4, 0.2),
            Complex::new(-0.3, 0.0),
        ])
        .unwrap();
        let u = expi_neg(&g).unwrap();
        assert!((&u * &u.adjoint()).max_abs_diff(&super::CMatrix::identity(2)) < 1e-6);
    }
}
