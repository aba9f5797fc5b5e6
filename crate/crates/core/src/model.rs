//! Magnitude/phase parametrization of qubit and V-type qutrit states and of
//! the rotation generators acting on them, plus the diagonal-phase gauge
//! freedom shared by the pair.
//!
//! Conventions (basis `|0>, |1>, |2>`):
//! * state entry `(i, j)`, `i < j`, is `rho_ij * exp(-i gamma_ij)`;
//! * qubit generator is `0.5 * [[h_z, exp(-i phi) h_c], [exp(i phi) h_c, -h_z]]`;
//! * V-type generator has `(0, j)` entry `exp(-i phi_j) h_j / 2` for `j = 1, 2`
//!   and no `|1>-|2>` coupling.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{wrap_phase, Scalar};
use crate::smallmat::{min_eigenvalue, CMatrix, LinalgError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("wrong dimension: expected {expected}, got {got}")]
    WrongDimension { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Upper-triangle index pairs in storage order.
pub fn coherence_pairs(dim: usize) -> &'static [(usize, usize)] {
    match dim {
        2 => &[(0, 1)],
        3 => &[(0, 1), (0, 2), (1, 2)],
        _ => &[],
    }
}

/// Storage slot of the pair `(i, j)` with `i < j`.
pub fn pair_slot(dim: usize, i: usize, j: usize) -> Option<usize> {
    coherence_pairs(dim).iter().position(|&p| p == (i, j))
}

fn check_dim(dim: usize) -> Result<(), ModelError> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(ModelError::InvalidRange(format!("dimension {dim} (only 2 and 3 are supported)")))
    }
}

/// Unnormalized density matrix in magnitude/phase form. The overall scale
/// (detector efficiency, integration time, ...) is the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct DensityParams<T: Scalar> {
    pub dim: usize,
    /// `rho_ii`
    pub populations: Vec<T>,
    /// `rho_ij` for `i < j`, in [`coherence_pairs`] order.
    pub coherences: Vec<T>,
    /// `gamma_ij` in `[0, 2pi)`, same order as `coherences`.
    pub phases: Vec<T>,
}

impl<T: Scalar> DensityParams<T> {
    pub fn new(dim: usize, populations: Vec<T>, coherences: Vec<T>, phases: Vec<T>) -> Result<Self, ModelError> {
        let p = Self {
            dim,
            populations,
            coherences,
            phases: phases.into_iter().map(wrap_phase).collect(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn qubit(rho00: T, rho11: T, rho01: T, gamma: T) -> Result<Self, ModelError> {
        Self::new(2, vec![rho00, rho11], vec![rho01], vec![gamma])
    }

    /// `pops = [rho00, rho11, rho22]`, `coh = [rho01, rho02, rho12]`, `phases = [gamma01, gamma02, gamma12]`.
    pub fn qutrit(pops: [T; 3], coh: [T; 3], phases: [T; 3]) -> Result<Self, ModelError> {
        Self::new(3, pops.to_vec(), coh.to_vec(), phases.to_vec())
    }

    /// `scale * I / dim`.
    pub fn maximally_mixed(dim: usize, scale: T) -> Result<Self, ModelError> {
        check_dim(dim)?;
        let npairs = coherence_pairs(dim).len();
        Self::new(
            dim,
            vec![scale / T::from_usize_lossy(dim); dim],
            vec![T::zero(); npairs],
            vec![T::zero(); npairs],
        )
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_dim(self.dim)?;
        let npairs = coherence_pairs(self.dim).len();
        if self.populations.len() != self.dim || self.coherences.len() != npairs || self.phases.len() != npairs {
            return Err(ModelError::InvalidRange(format!(
                "expected {} populations and {} coherences/phases for dim {}",
                self.dim, npairs, self.dim
            )));
        }
        for (k, &p) in self.populations.iter().enumerate() {
            if !p.is_finite() || p < T::zero() {
                return Err(ModelError::InvalidRange(format!("population rho{k}{k} = {p}")));
            }
        }
        for (&(i, j), &c) in coherence_pairs(self.dim).iter().zip(&self.coherences) {
            if !c.is_finite() || c < T::zero() {
                return Err(ModelError::InvalidRange(format!("coherence magnitude rho{i}{j} = {c}")));
            }
        }
        if self.phases.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::InvalidRange("non-finite phase".into()));
        }
        Ok(())
    }

    /// The overall scale `N = tr(rho')`.
    pub fn scale(&self) -> T {
        self.populations.iter().copied().sum()
    }

    pub fn coherence(&self, i: usize, j: usize) -> T {
        pair_slot(self.dim, i, j).map_or(T::zero(), |k| self.coherences[k])
    }

    pub fn phase(&self, i: usize, j: usize) -> T {
        pair_slot(self.dim, i, j).map_or(T::zero(), |k| self.phases[k])
    }

    /// Rewrites negative magnitudes as positive ones with the phase shifted by pi,
    /// and wraps every phase.
    pub fn canonicalize(&mut self) {
        for (c, g) in self.coherences.iter_mut().zip(self.phases.iter_mut()) {
            if *c < T::zero() {
                *c = -*c;
                *g += T::PI();
            }
            *g = wrap_phase(*g);
        }
    }

    /// Same state divided by its trace.
    pub fn normalized(&self) -> Self {
        let n = self.scale();
        let mut out = self.clone();
        if n > T::zero() {
            out.populations.iter_mut().for_each(|p| *p /= n);
            out.coherences.iter_mut().for_each(|c| *c /= n);
        }
        out
    }

    /// Re-extracts magnitudes and phases from a Hermitian matrix.
    pub fn from_matrix(m: &CMatrix<T>) -> Result<Self, ModelError> {
        m.check_hermitian()?;
        let dim = m.dim();
        check_dim(dim)?;
        let pops = (0..dim).map(|i| m[(i, i)].re).collect();
        let mut coh = Vec::new();
        let mut ph = Vec::new();
        for &(i, j) in coherence_pairs(dim) {
            let z = m[(i, j)];
            coh.push(z.norm());
            // entry = |z| exp(-i gamma)
            ph.push(if z.norm() > T::zero() { -z.arg() } else { T::zero() });
        }
        Self::new(dim, pops, coh, ph)
    }

    /// Qubit Bloch vector `{2 rho01 cos g, 2 rho01 sin g, rho00 - rho11}`.
    pub fn bloch(&self) -> Result<[T; 3], ModelError> {
        if self.dim != 2 {
            return Err(ModelError::WrongDimension { expected: 2, got: self.dim });
        }
        let two = T::lit(2.0);
        let (r, g) = (self.coherences[0], self.phases[0]);
        Ok([two * r * g.cos(), two * r * g.sin(), self.populations[0] - self.populations[1]])
    }

    /// Physicality report; `physical` is false only when the negativity exceeds
    /// `1e-10 * N`.
    pub fn positivity(&self) -> Result<Positivity<T>, ModelError> {
        let m = assemble_state(self)?;
        let min = min_eigenvalue(&m)?;
        let n = self.scale();
        Ok(Positivity {
            min_eigenvalue: min,
            physical: min >= -T::tol(1e-10) * n.max(T::min_positive_value()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Positivity<T> {
    pub min_eigenvalue: T,
    pub physical: bool,
}

/// Rotation generator `G`; the applied unitary is `exp(-i G)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "kind", rename_all = "snake_case")]
pub enum GeneratorParams<T: Scalar> {
    Qubit { h_z: T, h_c: T, phi: T },
    /// Couplings of `|1>` and `|2>` to the common ground state `|0>`.
    VType { h: [T; 2], phi: [T; 2] },
}

impl<T: Scalar> GeneratorParams<T> {
    pub fn qubit(h_z: T, h_c: T, phi: T) -> Result<Self, ModelError> {
        let g = GeneratorParams::Qubit { h_z, h_c, phi: wrap_phase(phi) };
        g.validate()?;
        Ok(g)
    }

    pub fn vtype(h1: T, h2: T, phi1: T, phi2: T) -> Result<Self, ModelError> {
        let g = GeneratorParams::VType {
            h: [h1, h2],
            phi: [wrap_phase(phi1), wrap_phase(phi2)],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn zero(dim: usize) -> Self {
        match dim {
            2 => GeneratorParams::Qubit { h_z: T::zero(), h_c: T::zero(), phi: T::zero() },
            _ => GeneratorParams::VType { h: [T::zero(); 2], phi: [T::zero(); 2] },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorParams::Qubit { .. } => 2,
            GeneratorParams::VType { .. } => 3,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = |xs: &[T]| xs.iter().all(|x| x.is_finite());
        match *self {
            GeneratorParams::Qubit { h_z, h_c, phi } => {
                if !finite(&[h_z, h_c, phi]) || h_c < T::zero() {
                    return Err(ModelError::InvalidRange(format!("qubit generator h_z={h_z} h_c={h_c} phi={phi}")));
                }
            }
            GeneratorParams::VType { h, phi } => {
                if !finite(&h) || !finite(&phi) || h.iter().any(|x| *x < T::zero()) {
                    return Err(ModelError::InvalidRange(format!("V-type generator h={h:?} phi={phi:?}")));
                }
            }
        }
        Ok(())
    }

    /// Rotation angle: the spectral span of the generator.
    pub fn omega(&self) -> T {
        match *self {
            GeneratorParams::Qubit { h_z, h_c, .. } => h_c.hypot(h_z),
            GeneratorParams::VType { h, .. } => h[0].hypot(h[1]),
        }
    }

    /// Transverse coupling magnitudes and phases, one per coupled excited level.
    pub fn couplings(&self) -> Vec<(T, T)> {
        match *self {
            GeneratorParams::Qubit { h_c, phi, .. } => vec![(h_c, phi)],
            GeneratorParams::VType { h, phi } => vec![(h[0], phi[0]), (h[1], phi[1])],
        }
    }

    fn coupling_phase_mut(&mut self, k: usize) -> &mut T {
        match self {
            GeneratorParams::Qubit { phi, .. } => phi,
            GeneratorParams::VType { phi, .. } => &mut phi[k],
        }
    }

    /// Qubit generator Bloch vector `{h_c cos phi, h_c sin phi, h_z}`.
    pub fn bloch(&self) -> Result<[T; 3], ModelError> {
        match *self {
            GeneratorParams::Qubit { h_z, h_c, phi } => Ok([h_c * phi.cos(), h_c * phi.sin(), h_z]),
            GeneratorParams::VType { .. } => Err(ModelError::WrongDimension { expected: 2, got: 3 }),
        }
    }
}

/// Hermitian state matrix with trace `N`.
pub fn assemble_state<T: Scalar>(p: &DensityParams<T>) -> Result<CMatrix<T>, ModelError> {
    p.validate()?;
    let mut m = CMatrix::from_real_diagonal(&p.populations);
    for (k, &(i, j)) in coherence_pairs(p.dim).iter().enumerate() {
        let z = Complex::from_polar(p.coherences[k], -p.phases[k]);
        m[(i, j)] = z;
        m[(j, i)] = z.conj();
    }
    Ok(m)
}

pub fn assemble_generator<T: Scalar>(g: &GeneratorParams<T>) -> Result<CMatrix<T>, ModelError> {
    g.validate()?;
    let half = T::lit(0.5);
    Ok(match *g {
        GeneratorParams::Qubit { h_z, h_c, phi } => {
            let mut m = CMatrix::from_real_diagonal(&[h_z * half, -h_z * half]);
            let z = Complex::from_polar(h_c * half, -phi);
            m[(0, 1)] = z;
            m[(1, 0)] = z.conj();
            m
        }
        GeneratorParams::VType { h, phi } => {
            let mut m = CMatrix::zeros(3);
            for k in 0..2 {
                let z = Complex::from_polar(h[k] * half, -phi[k]);
                m[(0, k + 1)] = z;
                m[(k + 1, 0)] = z.conj();
            }
            m
        }
    })
}

/// Phase combinations and rotation quantities entering the closed-form statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedAngles<T> {
    /// Qubit: `[phi - gamma]`. Qutrit: `[phi1 - g01, phi2 - g02, g12 + phi1 - phi2]`.
    pub beta: Vec<T>,
    pub c: T,
    pub s: T,
    pub omega: T,
    /// Qubit: `[h_c, h_z] / Omega`. Qutrit: `[h1, h2] / Omega`. Zero when `Omega == 0`.
    pub h_tilde: Vec<T>,
}

pub fn derived_angles<T: Scalar>(state: &DensityParams<T>, gen: &GeneratorParams<T>) -> Result<DerivedAngles<T>, ModelError> {
    if state.dim != gen.dim() {
        return Err(ModelError::WrongDimension { expected: state.dim, got: gen.dim() });
    }
    let omega = gen.omega();
    let half = T::lit(0.5);
    let over = |x: T| if omega > T::zero() { x / omega } else { T::zero() };
    let (beta, h_tilde) = match *gen {
        GeneratorParams::Qubit { h_z, h_c, phi } => (vec![phi - state.phases[0]], vec![over(h_c), over(h_z)]),
        GeneratorParams::VType { h, phi } => (
            vec![
                phi[0] - state.phases[0],
                phi[1] - state.phases[1],
                state.phases[2] + phi[0] - phi[1],
            ],
            vec![over(h[0]), over(h[1])],
        ),
    };
    Ok(DerivedAngles {
        beta,
        c: (omega * half).cos(),
        s: (omega * half).sin(),
        omega,
        h_tilde,
    })
}

/// Applies `V(eta) = |0><0| + sum_j exp(i eta_j) |j><j|` to both the state and the
/// generator. Qubits take one phase, V-type systems two.
pub fn gauge_transform<T: Scalar>(
    state: &DensityParams<T>,
    gen: &GeneratorParams<T>,
    eta: &[T],
) -> Result<(DensityParams<T>, GeneratorParams<T>), ModelError> {
    let dim = state.dim;
    if gen.dim() != dim {
        return Err(ModelError::WrongDimension { expected: dim, got: gen.dim() });
    }
    if eta.len() != dim - 1 {
        return Err(ModelError::WrongDimension { expected: dim - 1, got: eta.len() });
    }
    // level phases: theta_0 = 0, theta_j = eta_{j-1}
    let level = |k: usize| if k == 0 { T::zero() } else { eta[k - 1] };
    let mut s = state.clone();
    for (slot, &(i, j)) in coherence_pairs(dim).iter().enumerate() {
        // V rho V^dagger at (i, j) multiplies by exp(i(theta_i - theta_j))
        s.phases[slot] = wrap_phase(s.phases[slot] + level(j) - level(i));
    }
    let mut g = *gen;
    for k in 0..dim - 1 {
        let p = g.coupling_phase_mut(k);
        *p = wrap_phase(*p + eta[k]);
    }
    Ok((s, g))
}

/// Result of [`gauge_fix`]. Levels whose coupling vanishes have no defined gauge.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeFixed<T: Scalar> {
    pub state: DensityParams<T>,
    pub generator: GeneratorParams<T>,
    /// Excited levels (1-based) with zero coupling; their phase was set to 0 and
    /// the state left unshifted for that level.
    pub undefined_levels: Vec<usize>,
}

/// Moves to the gauge where every coupling of the generator is real and
/// non-negative, i.e. applies `V(-phi)`.
pub fn gauge_fix<T: Scalar>(state: &DensityParams<T>, gen: &GeneratorParams<T>) -> Result<GaugeFixed<T>, ModelError> {
    let mut eta = Vec::new();
    let mut undefined = Vec::new();
    for (k, (h, phi)) in gen.couplings().into_iter().enumerate() {
        if h > T::zero() {
            eta.push(-phi);
        } else {
            eta.push(T::zero());
            undefined.push(k + 1);
        }
    }
    let (s, mut g) = gauge_transform(state, gen, &eta)?;
    for &lvl in &undefined {
        *g.coupling_phase_mut(lvl - 1) = T::zero();
    }
    Ok(GaugeFixed {
        state: s,
        generator: g,
        undefined_levels: undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    type CMatrix = crate::smallmat::CMatrix<f64>;
    type DensityParams = super::DensityParams<f64>;
    type GeneratorParams = super::GeneratorParams<f64>;
    use crate::smallmat::expi_neg;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    #[test]
    fn assemble_state_examples() {
        let p = DensityParams::qubit(1.0, 0.0, 0.0, 0.0).unwrap();
        let m = assemble_state(&p).unwrap();
        assert!(m.max_abs_diff(&CMatrix::from_real_diagonal(&[1.0, 0.0])) < 1e-15);

        let plus = DensityParams::qubit(0.5, 0.5, 0.5, 0.0).unwrap();
        let m = assemble_state(&plus).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((m[(i, j)] - Complex::new(0.5, 0.0)).norm() < 1e-15);
            }
        }

        let third = 1.0 / 3.0;
        let mixed = DensityParams::qutrit([third; 3], [0.0; 3], [0.0; 3]).unwrap();
        let m = assemble_state(&mixed).unwrap();
        assert!(m.max_abs_diff(&CMatrix::from_real_diagonal(&[third; 3])) < 1e-15);
        assert!((mixed.scale() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn upper_entry_carries_negative_phase() {
        let p = DensityParams::qubit(0.5, 0.5, 0.3, 0.7).unwrap();
        let m = assemble_state(&p).unwrap();
        assert!((m[(0, 1)] - Complex::from_polar(0.3, -0.7)).norm() < 1e-15);
    }

    #[test]
    fn negative_magnitude_rejected() {
        assert!(matches!(
            DensityParams::qubit(0.5, 0.5, -0.1, 0.0),
            Err(ModelError::InvalidRange(_))
        ));
        assert!(GeneratorParams::qubit(0.0, -1.0, 0.0).is_err());
        assert!(GeneratorParams::vtype(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn canonicalize_flips_sign_into_phase() {
        let mut p = DensityParams { dim: 2, populations: vec![0.5, 0.5], coherences: vec![-0.2], phases: vec![0.3] };
        p.canonicalize();
        assert!((p.coherences[0] - 0.2).abs() < 1e-15);
        assert!((p.phases[0] - (0.3 + PI)).abs() < 1e-15);
        // same matrix as the signed form
        let m = assemble_state(&p).unwrap();
        assert!((m[(0, 1)] - Complex::from_polar(-0.2, -0.3)).norm() < 1e-15);
    }

    #[test]
    fn nonphysical_state_is_flagged_not_rejected() {
        let p = DensityParams::qubit(0.5, 0.5, 0.6, 0.0).unwrap();
        let pos = p.positivity().unwrap();
        assert!(!pos.physical);
        assert!((pos.min_eigenvalue + 0.1).abs() < 1e-12);
        let q = DensityParams::qubit(0.5, 0.5, 0.5, 1.0).unwrap();
        assert!(q.positivity().unwrap().physical);
    }

    #[test]
    fn assemble_generator_examples() {
        let g = assemble_generator(&GeneratorParams::qubit(0.0, PI, 0.0).unwrap()).unwrap();
        let want = CMatrix::from_rows(vec![
            Complex::new(0.0, 0.0),
            Complex::new(FRAC_PI_2, 0.0),
            Complex::new(FRAC_PI_2, 0.0),
            Complex::new(0.0, 0.0),
        ])
        .unwrap();
        assert!(g.max_abs_diff(&want) < 1e-15);

        let v = assemble_generator(&GeneratorParams::vtype(3.0, 4.0, 0.0, 0.0).unwrap()).unwrap();
        let eig = v.eigh().unwrap();
        for (got, want) in eig.values.iter().zip([-2.5, 0.0, 2.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(v[(1, 2)], Complex::new(0.0, 0.0));

        for phi in [0.0, 1.0, 4.0] {
            let d = assemble_generator(&GeneratorParams::qubit(1.0, 0.0, phi).unwrap()).unwrap();
            assert!(d.max_abs_diff(&CMatrix::from_real_diagonal(&[0.5, -0.5])) < 1e-15);
        }
    }

    #[test]
    fn generators_are_hermitian_and_traceless() {
        for (i, phi) in [0.0, 0.4, 2.0, 5.5].iter().enumerate() {
            let q = assemble_generator(&GeneratorParams::qubit(0.3 * i as f64 - 0.5, 1.1, *phi).unwrap()).unwrap();
            assert!(q.is_hermitian());
            assert!(q.trace().norm() < 1e-15);
            let v = assemble_generator(&GeneratorParams::vtype(0.7, 1.9, *phi, 1.0 - phi).unwrap()).unwrap();
            assert!(v.is_hermitian());
            assert!(v.trace().norm() < 1e-15);
        }
    }

    #[test]
    fn bloch_examples() {
        let mixed = DensityParams::qubit(0.5, 0.5, 0.0, 0.0).unwrap();
        assert_eq!(mixed.bloch().unwrap(), [0.0, 0.0, 0.0]);
        let plus = DensityParams::qubit(0.5, 0.5, 0.5, 0.0).unwrap();
        let b = plus.bloch().unwrap();
        assert!((b[0] - 1.0).abs() < 1e-15 && b[1].abs() < 1e-15 && b[2].abs() < 1e-15);

        let g = GeneratorParams::qubit(1.0, 2.0, FRAC_PI_2).unwrap();
        let b = g.bloch().unwrap();
        assert!(b[0].abs() < 1e-15 && (b[1] - 2.0).abs() < 1e-15 && (b[2] - 1.0).abs() < 1e-15);
        assert!((g.omega() - 5f64.sqrt()).abs() < 1e-15);

        let q = DensityParams::qutrit([0.4, 0.3, 0.3], [0.0; 3], [0.0; 3]).unwrap();
        assert!(matches!(q.bloch(), Err(ModelError::WrongDimension { expected: 2, got: 3 })));
    }

    #[test]
    fn bloch_norm_bounded_by_scale() {
        // pure state on the boundary, mixed inside
        let pure = DensityParams::qubit(0.5, 0.5, 0.5, 1.3).unwrap();
        let b = pure.bloch().unwrap();
        let norm = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(min_eigenvalue(&assemble_state(&pure).unwrap()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn generator_exponential_matches_rotation_angle() {
        // cos(O/2) I - i sin(O/2) n.sigma with n = bloch(G) / O
        let g = GeneratorParams::qubit(0.4, 1.3, 0.9).unwrap();
        let v = g.bloch().unwrap();
        let om = g.omega();
        let u = expi_neg(&assemble_generator(&g).unwrap()).unwrap();
        let (c, s) = ((om / 2.0).cos(), (om / 2.0).sin());
        assert!((u[(0, 0)] - Complex::new(c, -s * v[2] / om)).norm() < 1e-12);
        assert!((u[(1, 0)] - Complex::new(s * v[1] / om, -s * v[0] / om)).norm() < 1e-12);
    }

    #[test]
    fn gauge_transform_examples() {
        let s = DensityParams::qubit(0.6, 0.4, 0.2, 0.2).unwrap();
        let g = GeneratorParams::qubit(0.0, 1.0, 0.5).unwrap();
        let (s2, g2) = gauge_transform(&s, &g, &[0.7]).unwrap();
        assert!((s2.phases[0] - 0.9).abs() < 1e-15);
        let GeneratorParams::Qubit { phi, .. } = g2 else { unreachable!() };
        assert!((phi - 1.2).abs() < 1e-15);
        let b1 = derived_angles(&s, &g).unwrap().beta[0];
        let b2 = derived_angles(&s2, &g2).unwrap().beta[0];
        assert!((b1 - 0.3).abs() < 1e-15 && (b2 - 0.3).abs() < 1e-15);

        let (s3, g3) = gauge_transform(&s, &g, &[0.0]).unwrap();
        assert_eq!((s3, g3), (s.clone(), g));

        let s = DensityParams::qubit(0.6, 0.4, 0.2, 6.0).unwrap();
        let g = GeneratorParams::qubit(0.0, 1.0, 6.0).unwrap();
        let (s4, g4) = gauge_transform(&s, &g, &[1.0]).unwrap();
        assert!((s4.phases[0] - (7.0 - TAU)).abs() < 1e-12);
        assert!((s4.phases[0] - 0.71681).abs() < 1e-5);
        let GeneratorParams::Qubit { phi, .. } = g4 else { unreachable!() };
        assert!((phi - 0.71681).abs() < 1e-5);
    }

    #[test]
    fn qutrit_gauge_preserves_excited_coherence_beta() {
        let s = DensityParams::qutrit([0.4, 0.3, 0.3], [0.1, 0.1, 0.05], [0.3, 1.0, 2.0]).unwrap();
        let g = GeneratorParams::vtype(1.0, 0.8, 0.2, 0.9).unwrap();
        let (s2, g2) = gauge_transform(&s, &g, &[0.5, -1.1]).unwrap();
        let b1 = derived_angles(&s, &g).unwrap().beta;
        let b2 = derived_angles(&s2, &g2).unwrap().beta;
        for (a, b) in b1.iter().zip(&b2) {
            assert!(crate::scalar::phase_distance(*a, *b).abs() < 1e-12);
        }
        assert!(gauge_transform(&s, &g, &[0.5]).is_err());
    }

    #[test]
    fn gauge_fix_examples() {
        let s = DensityParams::qubit(0.6, 0.4, 0.2, 0.4).unwrap();
        let g = GeneratorParams::qubit(0.0, 1.0, 1.1).unwrap();
        let fixed = gauge_fix(&s, &g).unwrap();
        let GeneratorParams::Qubit { phi, .. } = fixed.generator else { unreachable!() };
        assert_eq!(phi, 0.0);
        assert!((fixed.state.phases[0] - 5.58319).abs() < 1e-5);
        assert!(fixed.undefined_levels.is_empty());

        let again = gauge_fix(&fixed.state, &fixed.generator).unwrap();
        assert_eq!(again.state, fixed.state);

        let flat = GeneratorParams::qubit(0.3, 0.0, 2.0).unwrap();
        let f = gauge_fix(&s, &flat).unwrap();
        assert_eq!(f.state, s);
        assert_eq!(f.undefined_levels, vec![1]);
        let GeneratorParams::Qubit { phi, .. } = f.generator else { unreachable!() };
        assert_eq!(phi, 0.0);
    }

    #[test]
    fn round_trip_through_matrix() {
        let s = DensityParams::qutrit([0.4, 0.35, 0.25], [0.1, 0.12, 0.07], [0.3, 4.0, 6.1]).unwrap();
        let back = DensityParams::from_matrix(&assemble_state(&s).unwrap()).unwrap();
        for (a, b) in s.populations.iter().zip(&back.populations) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in s.phases.iter().zip(&back.phases) {
            assert!(crate::scalar::phase_distance(*a, *b).abs() < 1e-12);
        }
    }
}
