//! Forward measurement model.
//!
//! Statistics are computed by direct matrix algebra,
//! `n = tr(rho' U^dagger |j><j| U) = <j| U rho' U^dagger |j>`. The closed-form
//! coefficient families are evaluated separately in [`coefficients`] and are
//! only ever compared against the direct route.

use num_complex::Complex;
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{assemble_generator, assemble_state, derived_angles, DensityParams, GeneratorParams, ModelError};
use crate::protocol::{Protocol, ProtocolError, UnknownParams};
use crate::scalar::Scalar;
use crate::smallmat::{expi_neg, CMatrix, LinalgError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForwardError {
    #[error("dimension mismatch: state has dim {state}, generator/protocol has dim {other}")]
    DimensionMismatch { state: usize, other: usize },
    #[error("projector label {label} out of range for dim {dim}")]
    BadLabel { label: usize, dim: usize },
    #[error("invalid noise model: {0}")]
    BadNoise(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// `U rho U^dagger` with `U = exp(-i G)`.
pub fn evolve<T: Scalar>(rho: &CMatrix<T>, gen: &GeneratorParams<T>) -> Result<CMatrix<T>, ForwardError> {
    if rho.dim() != gen.dim() {
        return Err(ForwardError::DimensionMismatch { state: rho.dim(), other: gen.dim() });
    }
    let u = expi_neg(&assemble_generator(gen)?)?;
    Ok(u.conjugate(rho)?)
}

/// Row `<j| U` of the unitary for generator `gen`; the identity row when the
/// rotation angle vanishes.
pub fn measurement_row<T: Scalar>(gen: &GeneratorParams<T>, label: usize) -> Result<Vec<Complex<T>>, ForwardError> {
    let dim = gen.dim();
    if label >= dim {
        return Err(ForwardError::BadLabel { label, dim });
    }
    if gen.omega() == T::zero() {
        let mut row = vec![Complex::zero(); dim];
        row[label] = Complex::new(T::one(), T::zero());
        return Ok(row);
    }
    let u = expi_neg(&assemble_generator(gen)?)?;
    Ok((0..dim).map(|k| u[(label, k)]).collect())
}

/// `sum_ab row_a rho_ab conj(row_b)`.
pub fn row_expectation<T: Scalar>(row: &[Complex<T>], rho: &CMatrix<T>) -> T {
    let n = row.len();
    let mut acc = T::zero();
    for a in 0..n {
        let mut inner = Complex::zero();
        for b in 0..n {
            inner = inner + rho[(a, b)] * row[b].conj();
        }
        acc += (row[a] * inner).re;
    }
    acc
}

/// Statistic of projector `label` after evolution by `gen`.
pub fn probability<T: Scalar>(state: &DensityParams<T>, gen: &GeneratorParams<T>, label: usize) -> Result<T, ForwardError> {
    if state.dim != gen.dim() {
        return Err(ForwardError::DimensionMismatch { state: state.dim, other: gen.dim() });
    }
    if label >= state.dim {
        return Err(ForwardError::BadLabel { label, dim: state.dim });
    }
    let rho = assemble_state(state)?;
    if gen.omega() == T::zero() {
        return Ok(rho[(label, label)].re);
    }
    let evolved = evolve(&rho, gen)?;
    Ok(evolved[(label, label)].re)
}

/// How a closed-form coefficient family is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Convention {
    /// Multiplies every `beta` before it enters a sine or cosine (`+1` or `-1`).
    pub beta_sign: i8,
    pub roots: RootConvention,
}

/// Meaning of the square roots `sqrt(f_ii f_jj)` in the off-diagonal coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootConvention {
    /// Non-negative square root, as written.
    Principal,
    /// Product of the signed transition amplitudes whose squares are `f_ii`, `f_jj`.
    Signed,
}

impl Convention {
    pub const LITERAL: Convention = Convention { beta_sign: 1, roots: RootConvention::Principal };

    pub fn candidates() -> [Convention; 4] {
        [
            Convention { beta_sign: 1, roots: RootConvention::Principal },
            Convention { beta_sign: -1, roots: RootConvention::Principal },
            Convention { beta_sign: 1, roots: RootConvention::Signed },
            Convention { beta_sign: -1, roots: RootConvention::Signed },
        ]
    }
}

impl std::fmt::Display for Convention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let roots = match self.roots {
            RootConvention::Principal => "principal",
            RootConvention::Signed => "signed",
        };
        write!(f, "beta_sign={:+} roots={roots}", self.beta_sign)
    }
}

/// Closed-form coefficients `n = sum_{i<=j} c_ij rho_ij` for one projector.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet<T> {
    pub label: usize,
    /// `((i, j), c_ij)` with `i <= j`; diagonal entries first.
    pub entries: Vec<((usize, usize), T)>,
    /// Set when the rotation angle is zero and the identity limit was returned.
    pub degenerate: bool,
}

impl<T: Scalar> CoefficientSet<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries
            .iter()
            .find(|(k, _)| *k == (i, j))
            .map_or(T::zero(), |(_, v)| *v)
    }

    /// `sum c_ii rho_ii + sum_{i<j} c_ij rho_ij` with the magnitudes of `state`.
    pub fn contract(&self, state: &DensityParams<T>) -> T {
        self.entries
            .iter()
            .map(|&((i, j), c)| {
                if i == j {
                    c * state.populations[i]
                } else {
                    c * state.coherence(i, j)
                }
            })
            .sum()
    }
}

/// Evaluates the printed coefficient families.
///
/// Qubit: label 0 is the `f` family, label 1 the `g` family. V-type: labels 1
/// and 2 are the `f` and `g` families; label 0 (ground-state projector) uses the
/// same amplitude algebra (`a = (c, s h1~, s h2~)`, sine terms negated).
/// Only the phases of `state` are used (through `beta`).
pub fn coefficients<T: Scalar>(
    gen: &GeneratorParams<T>,
    state: &DensityParams<T>,
    label: usize,
    convention: Convention,
) -> Result<CoefficientSet<T>, ForwardError> {
    let dim = gen.dim();
    if state.dim != dim {
        return Err(ForwardError::DimensionMismatch { state: state.dim, other: dim });
    }
    if label >= dim {
        return Err(ForwardError::BadLabel { label, dim });
    }
    if gen.omega() == T::zero() {
        let entries = (0..dim)
            .map(|i| ((i, i), if i == label { T::one() } else { T::zero() }))
            .chain(crate::model::coherence_pairs(dim).iter().map(|&p| (p, T::zero())))
            .collect();
        return Ok(CoefficientSet { label, entries, degenerate: true });
    }
    let ang = derived_angles(state, gen)?;
    let sign = T::from_i8(convention.beta_sign).unwrap();
    let beta: Vec<T> = ang.beta.iter().map(|&b| sign * b).collect();
    let (c, s) = (ang.c, ang.s);
    let two = T::lit(2.0);
    // root(x, signed) picks between sqrt(x) and a signed amplitude product
    let root = |principal: T, signed: T| match convention.roots {
        RootConvention::Principal => principal.max(T::zero()).sqrt(),
        RootConvention::Signed => signed,
    };

    let entries = match dim {
        2 => {
            let (tc, tz) = (ang.h_tilde[0], ang.h_tilde[1]);
            let b = beta[0];
            let diag_same = c * c + s * s * tz * tz;
            let diag_flip = s * s * tc * tc;
            let cross = c * b.sin() + s * b.cos() * tz;
            let amp = s * tc;
            if label == 0 {
                vec![((0, 0), diag_same), ((1, 1), diag_flip), ((0, 1), two * cross * root(diag_flip, amp))]
            } else {
                vec![((0, 0), diag_flip), ((1, 1), diag_same), ((0, 1), -two * cross * root(diag_flip, amp))]
            }
        }
        _ => {
            let (t1, t2) = (ang.h_tilde[0], ang.h_tilde[1]);
            // signed amplitudes a_k with coefficient (k, k) = a_k^2
            let (a, sin_sign) = match label {
                1 => ([s * t1, t1 * t1 * c + t2 * t2, t1 * t2 * (c - T::one())], T::one()),
                2 => ([s * t2, t1 * t2 * (c - T::one()), t1 * t1 + t2 * t2 * c], T::one()),
                _ => ([c, s * t1, s * t2], -T::one()),
            };
            let d = [a[0] * a[0], a[1] * a[1], a[2] * a[2]];
            vec![
                ((0, 0), d[0]),
                ((1, 1), d[1]),
                ((2, 2), d[2]),
                ((0, 1), sin_sign * two * beta[0].sin() * root(d[0] * d[1], a[0] * a[1])),
                ((0, 2), sin_sign * two * beta[1].sin() * root(d[0] * d[2], a[0] * a[2])),
                ((1, 2), two * beta[2].cos() * root(d[1] * d[2], a[1] * a[2])),
            ]
        }
    };
    Ok(CoefficientSet { label, entries, degenerate: false })
}

/// Outcome of the empirical convention resolution for one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ConventionReport {
    pub dim: usize,
    pub draws: usize,
    /// `(candidate, max |closed form - direct|)` for every candidate.
    pub disagreements: Vec<(Convention, f64)>,
    pub chosen: Convention,
    pub chosen_max_error: f64,
}

/// Picks the reading of the closed forms that best agrees with the direct trace
/// over `draws` random `(state, generator, label)` triples.
pub fn resolve_convention(dim: usize, draws: usize, seed: u64) -> Result<ConventionReport, ForwardError> {
    use rand::Rng;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (state, gen) = random_pair(dim, &mut rng)?;
        let label = rng.random_range(0..dim);
        let direct = probability(&state, &gen, label)?;
        samples.push((state, gen, label, direct));
    }
    let mut disagreements = Vec::new();
    for conv in Convention::candidates() {
        let mut worst = 0.0_f64;
        for (state, gen, label, direct) in &samples {
            let cf = coefficients(gen, state, *label, conv)?.contract(state);
            worst = worst.max((cf - direct).abs());
        }
        disagreements.push((conv, worst));
    }
    let (chosen, chosen_max_error) = disagreements
        .iter()
        .copied()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    Ok(ConventionReport { dim, draws, disagreements, chosen, chosen_max_error })
}

/// Random state (not necessarily physical, magnitudes in `[0, 1)`) and
/// generator with rotation angles up to about `3 pi`.
pub fn random_pair<R: rand::Rng>(dim: usize, rng: &mut R) -> Result<(DensityParams<f64>, GeneratorParams<f64>), ForwardError> {
    let tau = std::f64::consts::TAU;
    let npairs = if dim == 2 { 1 } else { 3 };
    let state = DensityParams::new(
        dim,
        (0..dim).map(|_| rng.random_range(0.0..1.0)).collect(),
        (0..npairs).map(|_| rng.random_range(0.0..0.5)).collect(),
        (0..npairs).map(|_| rng.random_range(0.0..tau)).collect(),
    )?;
    let gen = if dim == 2 {
        GeneratorParams::qubit(rng.random_range(-6.0..6.0), rng.random_range(0.0..6.0), rng.random_range(0.0..tau))?
    } else {
        GeneratorParams::vtype(
            rng.random_range(0.0..6.5),
            rng.random_range(0.0..6.5),
            rng.random_range(0.0..tau),
            rng.random_range(0.0..tau),
        )?
    };
    Ok((state, gen))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Exact,
    Poisson,
    Gaussian,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Exact => "exact",
            NoiseKind::Poisson => "poisson",
            NoiseKind::Gaussian => "gaussian",
        }
    }
}

/// Sampling model for simulated statistics.
///
/// * `poisson`: value = `Poisson(S n / N) * N / S`;
/// * `gaussian`: value = `max(0, n + sigma * N * z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    #[serde(default)]
    pub shots: u64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseModel {
    pub fn exact() -> Self {
        Self { kind: NoiseKind::Exact, shots: 0, sigma: 0.0, seed: 0 }
    }

    pub fn poisson(shots: u64, seed: u64) -> Self {
        Self { kind: NoiseKind::Poisson, shots, sigma: 0.0, seed }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::Gaussian, shots: 0, sigma, seed }
    }

    pub fn validate(&self) -> Result<(), ForwardError> {
        match self.kind {
            NoiseKind::Exact => Ok(()),
            NoiseKind::Poisson if self.shots == 0 => Err(ForwardError::BadNoise("poisson noise needs shots > 0".into())),
            NoiseKind::Gaussian if !(self.sigma.is_finite() && self.sigma >= 0.0) => {
                Err(ForwardError::BadNoise(format!("gaussian sigma {}", self.sigma)))
            }
            _ => Ok(()),
        }
    }

    /// Independent generator for one setting: stream `index` of the seed.
    pub fn stream(&self, index: usize) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    /// Draws one observation around the exact statistic `n` for total scale `scale`.
    pub fn sample<T: Scalar>(&self, n: T, scale: T, index: usize) -> T {
        match self.kind {
            NoiseKind::Exact => n,
            NoiseKind::Poisson => {
                let (n, scale) = (n.to_f64_lossy(), scale.to_f64_lossy());
                let shots = self.shots as f64;
                let mean = if scale > 0.0 { shots * n.max(0.0) / scale } else { 0.0 };
                let k = if mean > 0.0 {
                    Poisson::new(mean).expect("finite positive mean").sample(&mut self.stream(index))
                } else {
                    0.0
                };
                T::lit(k * scale / shots)
            }
            NoiseKind::Gaussian => {
                let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut self.stream(index));
                let v = n.to_f64_lossy() + self.sigma * scale.to_f64_lossy() * z;
                T::lit(v.max(0.0))
            }
        }
    }
}

/// One observed statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct CountRecord<T: Scalar> {
    pub setting_index: usize,
    pub value: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    pub noise_kind: NoiseKind,
}

/// Simulates one record per setting of `protocol`.
pub fn simulate_counts<T: Scalar>(
    truth_state: &DensityParams<T>,
    truth_unknowns: &UnknownParams<T>,
    protocol: &Protocol<T>,
    noise: &NoiseModel,
) -> Result<Vec<CountRecord<T>>, ForwardError> {
    if truth_state.dim != protocol.dim {
        return Err(ForwardError::DimensionMismatch { state: truth_state.dim, other: protocol.dim });
    }
    if truth_unknowns.dim != protocol.dim {
        return Err(ForwardError::DimensionMismatch { state: truth_unknowns.dim, other: protocol.dim });
    }
    noise.validate()?;
    let scale = truth_state.scale();
    let rho = assemble_state(truth_state)?;
    protocol
        .settings
        .iter()
        .enumerate()
        .map(|(idx, setting)| {
            let gen = protocol.resolve(setting, truth_unknowns)?;
            let n = row_expectation(&measurement_row(&gen, setting.label)?, &rho);
            Ok(CountRecord {
                setting_index: idx,
                value: noise.sample(n, scale, idx),
                shots: (noise.kind == NoiseKind::Poisson).then_some(noise.shots),
                noise_kind: noise.kind,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    type CMatrix = crate::smallmat::CMatrix<f64>;
    type DensityParams = crate::model::DensityParams<f64>;
    type GeneratorParams = crate::model::GeneratorParams<f64>;
    use crate::protocol::scenario;
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn evolve_examples() {
        let rho = CMatrix::from_real_diagonal(&[1.0, 0.0]);
        let same = evolve(&rho, &GeneratorParams::zero(2)).unwrap();
        assert!(same.max_abs_diff(&rho) < 1e-15);

        let flipped = evolve(&rho, &GeneratorParams::qubit(0.0, PI, 0.0).unwrap()).unwrap();
        assert!(flipped.max_abs_diff(&CMatrix::from_real_diagonal(&[0.0, 1.0])) < 1e-12);

        let mixed = CMatrix::from_real_diagonal(&[0.5, 0.5]);
        let g = GeneratorParams::qubit(0.7, 2.2, 1.9).unwrap();
        assert!(evolve(&mixed, &g).unwrap().max_abs_diff(&mixed) < 1e-15);

        let q = CMatrix::from_real_diagonal(&[0.2, 0.3, 0.5]);
        assert!(matches!(evolve(&q, &g), Err(ForwardError::DimensionMismatch { .. })));
    }

    #[test]
    fn evolve_preserves_spectrum() {
        let s = DensityParams::qutrit([0.5, 0.3, 0.2], [0.1, 0.15, 0.05], [0.4, 2.0, 5.0]).unwrap();
        let rho = assemble_state(&s).unwrap();
        let out = evolve(&rho, &GeneratorParams::vtype(1.3, 2.1, 0.3, 4.0).unwrap()).unwrap();
        let (a, b) = (rho.eigh().unwrap().values, out.eigh().unwrap().values);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((out.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probability_examples() {
        let pure0 = DensityParams::qubit(1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(probability(&pure0, &GeneratorParams::zero(2), 0).unwrap(), 1.0);

        let mixed = DensityParams::qubit(0.5, 0.5, 0.0, 0.0).unwrap();
        let g = GeneratorParams::qubit(-0.4, 1.7, 2.5).unwrap();
        for label in 0..2 {
            assert!((probability(&mixed, &g, label).unwrap() - 0.5).abs() < 1e-15);
        }

        let s = DensityParams::qubit(0.3, 0.7, 0.0, 0.0).unwrap();
        let flip = GeneratorParams::qubit(0.0, PI, 0.0).unwrap();
        assert!((probability(&s, &flip, 0).unwrap() - 0.7).abs() < 1e-12);

        assert!(matches!(probability(&s, &flip, 2), Err(ForwardError::BadLabel { label: 2, dim: 2 })));
    }

    #[test]
    fn plus_state_example_is_zero_by_direct_trace() {
        let plus = DensityParams::qubit(0.5, 0.5, 0.5, 0.0).unwrap();
        let g = GeneratorParams::qubit(0.0, FRAC_PI_2, FRAC_PI_2).unwrap();
        assert!(probability(&plus, &g, 0).unwrap().abs() < 1e-15);
        // the literal closed form says 1 here; the mirrored-beta reading says 0
        let lit = coefficients(&g, &plus, 0, Convention::LITERAL).unwrap().contract(&plus);
        assert!((lit - 1.0).abs() < 1e-12);
        let mirrored = Convention { beta_sign: -1, roots: RootConvention::Principal };
        assert!(coefficients(&g, &plus, 0, mirrored).unwrap().contract(&plus).abs() < 1e-12);
    }

    #[test]
    fn row_path_matches_matrix_path() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for dim in [2, 3] {
            for _ in 0..200 {
                let (s, g) = random_pair(dim, &mut rng).unwrap();
                let rho = assemble_state(&s).unwrap();
                for label in 0..dim {
                    let a = probability(&s, &g, label).unwrap();
                    let b = row_expectation(&measurement_row(&g, label).unwrap(), &rho);
                    assert!((a - b).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn completeness_over_labels() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for dim in [2, 3] {
            for _ in 0..1000 {
                let (s, g) = random_pair(dim, &mut rng).unwrap();
                let total: f64 = (0..dim).map(|j| probability(&s, &g, j).unwrap()).sum();
                assert!((total - s.scale()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coefficient_examples() {
        let s = DensityParams::qubit(0.3, 0.7, 0.2, 0.4).unwrap();
        let g = GeneratorParams::qubit(0.0, PI, 0.0).unwrap();
        let f = coefficients(&g, &s, 0, Convention::LITERAL).unwrap();
        assert!(f.get(0, 0).abs() < 1e-15);
        assert!((f.get(1, 1) - 1.0).abs() < 1e-15);
        assert!(f.get(0, 1).abs() < 1e-15);

        let q = DensityParams::qutrit([0.4, 0.3, 0.3], [0.1, 0.1, 0.1], [0.2, 0.3, 0.4]).unwrap();
        let v = GeneratorParams::vtype(PI, 0.0, 0.0, 0.0).unwrap();
        let f = coefficients(&v, &q, 1, Convention::LITERAL).unwrap();
        assert!((f.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(f.get(1, 1).abs() < 1e-15);
        assert!(f.get(2, 2).abs() < 1e-15);
        assert!(f.get(1, 2).abs() < 1e-15);
    }

    #[test]
    fn complementary_diagonals_sum_to_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for dim in [2, 3] {
            for _ in 0..200 {
                let (s, g) = random_pair(dim, &mut rng).unwrap();
                let sets: Vec<_> = (0..dim)
                    .map(|j| coefficients(&g, &s, j, Convention::LITERAL).unwrap())
                    .collect();
                for i in 0..dim {
                    let total: f64 = sets.iter().map(|c| c.get(i, i)).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                    for c in &sets {
                        assert!((-1e-15..=1.0 + 1e-12).contains(&c.get(i, i)));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_rotation_is_identity_limit() {
        let s = DensityParams::qubit(0.3, 0.7, 0.2, 0.4).unwrap();
        let c = coefficients(&GeneratorParams::zero(2), &s, 1, Convention::LITERAL).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.get(1, 1), 1.0);
        assert_eq!(c.get(0, 0), 0.0);
        assert_eq!(c.contract(&s), 0.7);
    }

    #[test]
    fn resolution_finds_an_exact_reading_per_dimension() {
        for dim in [2, 3] {
            let rep = resolve_convention(dim, 300, 17).unwrap();
            assert!(rep.chosen_max_error < 1e-10, "dim {dim}: {:?}", rep.disagreements);
            assert_eq!(rep.chosen.roots, RootConvention::Signed);
        }
        assert_eq!(resolve_convention(2, 300, 1).unwrap().chosen.beta_sign, -1);
        assert_eq!(resolve_convention(3, 300, 1).unwrap().chosen.beta_sign, 1);
    }

    #[test]
    fn vtype_with_one_coupling_reduces_to_qubit() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..200 {
            let tau = std::f64::consts::TAU;
            let (r00, r11, r01, g01) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..0.4), rng.random_range(0.0..tau));
            let (h1, phi1) = (rng.random_range(0.0..6.0), rng.random_range(0.0..tau));
            let q = DensityParams::qutrit([r00, r11, 0.3], [r01, 0.1, 0.05], [g01, 1.0, 2.0]).unwrap();
            let v = GeneratorParams::vtype(h1, 0.0, phi1, 0.7).unwrap();
            let s = DensityParams::qubit(r00, r11, r01, g01).unwrap();
            let g = GeneratorParams::qubit(0.0, h1, phi1).unwrap();
            for label in 0..2 {
                let a = probability(&q, &v, label).unwrap();
                let b = probability(&s, &g, label).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn excited_coherence_needs_both_couplings() {
        let q = DensityParams::qutrit([0.4, 0.3, 0.3], [0.1, 0.1, 0.08], [0.2, 0.3, 1.1]).unwrap();
        let bump = |dg: f64, v: &GeneratorParams, label| {
            let mut s = q.clone();
            s.phases[2] += dg;
            probability(&s, v, label).unwrap()
        };
        let h = 1e-6;
        for v in [
            GeneratorParams::vtype(1.3, 0.0, 0.4, 0.0).unwrap(),
            GeneratorParams::vtype(0.0, 1.7, 0.0, 0.9).unwrap(),
        ] {
            for label in 0..3 {
                let d = (bump(h, &v, label) - bump(-h, &v, label)) / (2.0 * h);
                assert!(d.abs() < 1e-9, "label {label}: {d}");
            }
        }
        let both = GeneratorParams::vtype(1.3, 1.7, 0.4, 0.9).unwrap();
        let d = (bump(h, &both, 1) - bump(-h, &both, 1)) / (2.0 * h);
        assert!(d.abs() > 1e-3);
    }

    #[test]
    fn simulated_records_are_deterministic() {
        let p = scenario::<f64>("B").unwrap();
        let s = DensityParams::qubit(0.55, 0.45, 0.2, 2.0).unwrap();
        let u = UnknownParams::qubit(Some(1.3), None);
        let noise = NoiseModel::poisson(10_000, 42);
        let a = simulate_counts(&s, &u, &p, &noise).unwrap();
        let b = simulate_counts(&s, &u, &p, &noise).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|r| r.value >= 0.0 && r.shots == Some(10_000)));
        let other = simulate_counts(&s, &u, &p, &NoiseModel::poisson(10_000, 43)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn exact_records_for_mixed_state() {
        let p = scenario::<f64>("A").unwrap();
        let s = DensityParams::qubit(0.5, 0.5, 0.0, 0.0).unwrap();
        let recs = simulate_counts(&s, &UnknownParams::none(2), &p, &NoiseModel::exact()).unwrap();
        assert_eq!(recs.len(), 4);
        for r in recs {
            assert!((r.value - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn simulate_rejects_dimension_mismatch() {
        let p = scenario::<f64>("B").unwrap();
        let q = DensityParams::qutrit([0.4, 0.3, 0.3], [0.0; 3], [0.0; 3]).unwrap();
        assert!(matches!(
            simulate_counts(&q, &UnknownParams::vtype(Some(1.0), Some(1.0)), &p, &NoiseModel::exact()),
            Err(ForwardError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn poisson_sampler_mean_within_four_sigma() {
        // truth n = 0.25 N with N = 1, S = 1e6: sample mean over 1000 draws has
        // standard error sqrt(S n / N) / S / sqrt(1000)
        let noise = NoiseModel::poisson(1_000_000, 7);
        let n = 0.25_f64;
        let draws: Vec<f64> = (0..1000)
            .map(|i| NoiseModel { seed: 7 + i as u64, ..noise }.sample(n, 1.0, 3))
            .collect();
        let mean = draws.iter().sum::<f64>() / 1000.0;
        let se = (1e6 * n).sqrt() / 1e6 / 1000f64.sqrt();
        assert!((mean - n).abs() < 4.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn gaussian_noise_truncated_at_zero() {
        let noise = NoiseModel::gaussian(5.0, 1);
        for i in 0..100 {
            assert!(noise.sample(0.01_f64, 1.0, i) >= 0.0);
        }
    }
}
