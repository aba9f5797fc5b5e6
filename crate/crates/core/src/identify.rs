//! Local identifiability: Jacobians of the measurement map with respect to
//! the unknown set, their determinants, and scans for singular loci.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dense::RMatrix;
use crate::forward::ForwardError;
use crate::model::{DensityParams, ModelError};
use crate::protocol::{MeasurementMap, Param, Protocol, UnknownParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdentifyError {
    #[error("dimension mismatch: protocol has dim {protocol}, point has dim {point}")]
    DimensionMismatch { protocol: usize, point: usize },
    #[error("closed form {form} needs symbol {symbol}")]
    MissingSymbol { form: &'static str, symbol: &'static str },
    #[error("empty scan region: {0}")]
    EmptyRegion(String),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Relative step of the central differences.
pub const STEP: f64 = 1e-6;

/// `STEP * max(1, |x|)`, floored at the type's precision.
pub fn step_for<T: Scalar>(x: T, base: f64) -> T {
    T::tol(base) * x.abs().max(T::one())
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport<T: Scalar> {
    /// Rows follow the protocol's settings, columns its unknown set.
    pub matrix: RMatrix<T>,
    pub columns: Vec<String>,
    /// Only for square Jacobians.
    pub determinant: Option<T>,
    pub smallest_singular_value: T,
    pub condition_number: T,
    pub point: Vec<T>,
    pub steps: Vec<T>,
}

impl<T: Scalar> JacobianReport<T> {
    pub fn abs_det(&self) -> Option<T> {
        self.determinant.map(|d| d.abs())
    }
}

/// Central-difference Jacobian of `map` at `x`.
pub fn jacobian_of_map<T: Scalar>(map: &MeasurementMap<'_, T>, x: &[T], steps: &[T]) -> Result<RMatrix<T>, ForwardError> {
    let rows = map.protocol().settings.len();
    let mut m = RMatrix::zeros(rows, x.len());
    let mut probe = x.to_vec();
    let two = T::lit(2.0);
    for (k, &h) in steps.iter().enumerate() {
        probe[k] = x[k] + h;
        let up = map.eval(&probe)?;
        probe[k] = x[k] - h;
        let down = map.eval(&probe)?;
        probe[k] = x[k];
        for r in 0..rows {
            m[(r, k)] = (up[r] - down[r]) / (two * h);
        }
    }
    Ok(m)
}

/// Numeric Jacobian with the default step rule.
pub fn numeric_jacobian<T: Scalar>(
    protocol: &Protocol<T>,
    state: &DensityParams<T>,
    unknowns: &UnknownParams<T>,
) -> Result<JacobianReport<T>, IdentifyError> {
    numeric_jacobian_with_step(protocol, state, unknowns, STEP)
}

pub fn numeric_jacobian_with_step<T: Scalar>(
    protocol: &Protocol<T>,
    state: &DensityParams<T>,
    unknowns: &UnknownParams<T>,
    base_step: f64,
) -> Result<JacobianReport<T>, IdentifyError> {
    if state.dim != protocol.dim {
        return Err(IdentifyError::DimensionMismatch { protocol: protocol.dim, point: state.dim });
    }
    if unknowns.dim != protocol.dim {
        return Err(IdentifyError::DimensionMismatch { protocol: protocol.dim, point: unknowns.dim });
    }
    let map = protocol.measurement_map(state, unknowns);
    let x = protocol.read_gamma(state, unknowns);
    let steps: Vec<T> = x.iter().map(|&v| step_for(v, base_step)).collect();
    let matrix = jacobian_of_map(&map, &x, &steps)?;
    Ok(report_from_matrix(matrix, protocol.gamma_names(), x, steps))
}

pub fn report_from_matrix<T: Scalar>(matrix: RMatrix<T>, columns: Vec<String>, point: Vec<T>, steps: Vec<T>) -> JacobianReport<T> {
    let sv = matrix.singular_values();
    let smallest = sv.last().copied().unwrap_or(T::zero());
    let largest = sv.first().copied().unwrap_or(T::zero());
    let condition = if smallest > T::zero() { largest / smallest } else { T::infinity() };
    let determinant = (matrix.rows() == matrix.cols()).then(|| matrix.determinant());
    JacobianReport { matrix, columns, determinant, smallest_singular_value: smallest, condition_number: condition, point, steps }
}

/// Printed closed-form Jacobians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClosedForm {
    A,
    B,
    /// `6 lambda_z^2 rho00 J_B`, as printed for the six-setting qubit protocol.
    C,
    J1,
    J2,
    J3,
    /// `J1 J2 J3`.
    VTotal,
    /// The excited-coherence block of the V protocol with the `lambda1^2` and
    /// `lambda2^2` roles inside the squared factor exchanged.
    J3Swapped,
}

impl ClosedForm {
    pub fn name(self) -> &'static str {
        match self {
            ClosedForm::A => "A",
            ClosedForm::B => "B",
            ClosedForm::C => "C",
            ClosedForm::J1 => "J1",
            ClosedForm::J2 => "J2",
            ClosedForm::J3 => "J3",
            ClosedForm::VTotal => "Vtotal",
            ClosedForm::J3Swapped => "J3-swapped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "a" => ClosedForm::A,
            "b" => ClosedForm::B,
            "c" => ClosedForm::C,
            "j1" => ClosedForm::J1,
            "j2" => ClosedForm::J2,
            "j3" => ClosedForm::J3,
            "vtotal" => ClosedForm::VTotal,
            "j3-swapped" => ClosedForm::J3Swapped,
            _ => return None,
        })
    }
}

/// Whether phases enter a printed formula as written or mirrored (`gamma -> -gamma`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    Printed,
    Mirrored,
}

/// Symbols a closed form may draw on.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Symbols<T> {
    pub rho00: Option<T>,
    pub rho01: Option<T>,
    pub rho02: Option<T>,
    pub rho12: Option<T>,
    pub gamma01: Option<T>,
    pub gamma02: Option<T>,
    /// Transverse qubit scale or first V coupling.
    pub lambda1: Option<T>,
    pub lambda2: Option<T>,
    pub lambda_z: Option<T>,
}

impl<T: Scalar> Symbols<T> {
    pub fn from_point(state: &DensityParams<T>, unknowns: &UnknownParams<T>) -> Self {
        let mut s = Symbols { rho00: Some(state.populations[0]), ..Default::default() };
        s.rho01 = Some(state.coherence(0, 1));
        s.gamma01 = Some(state.phase(0, 1));
        s.lambda1 = unknowns.lambda[0];
        if state.dim == 3 {
            s.rho02 = Some(state.coherence(0, 2));
            s.rho12 = Some(state.coherence(1, 2));
            s.gamma02 = Some(state.phase(0, 2));
            s.lambda2 = unknowns.lambda[1];
        } else {
            s.lambda_z = unknowns.lambda[1];
        }
        s
    }
}

/// Evaluates a printed Jacobian expression.
pub fn closed_form_jacobian<T: Scalar>(form: ClosedForm, sym: &Symbols<T>, orientation: Orientation) -> Result<T, IdentifyError> {
    let need = |v: Option<T>, symbol: &'static str| v.ok_or(IdentifyError::MissingSymbol { form: form.name(), symbol });
    let orient = |g: T| match orientation {
        Orientation::Printed => g,
        Orientation::Mirrored => -g,
    };
    let half = T::lit(0.5);
    let qubit_like = |rho: T, lambda: T, gamma: T| {
        let g = orient(gamma);
        T::lit(64.0) * rho * rho * (lambda * half).sin().powi(6) * (lambda * half).cos().powi(4) * (g.sin() - g.cos())
    };
    let excited = |l1: T, l2: T, rho12: T, swapped: bool| {
        let omega = l1.hypot(l2);
        let c = (omega * half).cos();
        let inner = if swapped { l1 * l1 * c + l2 * l2 } else { l1 * l1 + l2 * l2 * c };
        -T::lit(16.0) * l1 * l1 * l2 * l2 * (omega * T::lit(0.25)).sin().powi(4) * rho12 * inner * inner / omega.powi(8)
    };
    let j1 = || -> Result<T, IdentifyError> {
        Ok(qubit_like(need(sym.rho01, "rho01")?, need(sym.lambda1, "lambda1")?, need(sym.gamma01, "gamma01")?))
    };
    let j2 = || -> Result<T, IdentifyError> {
        let (rho, lambda, g) = (need(sym.rho02, "rho02")?, need(sym.lambda2, "lambda2")?, orient(need(sym.gamma02, "gamma02")?));
        Ok(T::lit(2.0) * lambda.sin().powi(4) * lambda.cos() * rho * rho * (g.cos() - g.sin()))
    };
    let j3 = |swapped: bool| -> Result<T, IdentifyError> {
        Ok(excited(need(sym.lambda1, "lambda1")?, need(sym.lambda2, "lambda2")?, need(sym.rho12, "rho12")?, swapped))
    };
    match form {
        ClosedForm::A => need(sym.rho01, "rho01"),
        ClosedForm::B => Ok(qubit_like(need(sym.rho01, "rho01")?, need(sym.lambda1, "lambda_c")?, need(sym.gamma01, "gamma")?)),
        ClosedForm::C => {
            let lz = need(sym.lambda_z, "lambda_z")?;
            let b = qubit_like(need(sym.rho01, "rho01")?, need(sym.lambda1, "lambda_c")?, need(sym.gamma01, "gamma")?);
            Ok(T::lit(6.0) * lz * lz * need(sym.rho00, "rho00")? * b)
        }
        ClosedForm::J1 => j1(),
        ClosedForm::J2 => j2(),
        ClosedForm::J3 => j3(false),
        ClosedForm::J3Swapped => j3(true),
        ClosedForm::VTotal => Ok(j1()? * j2()? * j3(false)?),
    }
}

/// Outcome of comparing a closed form to numeric determinants in both orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationReport {
    pub form: ClosedForm,
    pub points: usize,
    /// Largest relative mismatch of `|closed form|` against `|numeric det|`.
    pub printed_max_rel: f64,
    pub mirrored_max_rel: f64,
    pub chosen: Orientation,
}

/// Relative mismatch `| |a| - |b| | / max(|b|, floor)`.
pub fn rel_abs_mismatch(a: f64, b: f64, floor: f64) -> f64 {
    (a.abs() - b.abs()).abs() / b.abs().max(floor)
}

/// Picks the orientation under which a closed form reproduces `|det|` at the
/// supplied `(symbols, numeric |det|)` samples.
pub fn resolve_orientation(form: ClosedForm, samples: &[(Symbols<f64>, f64)]) -> Result<OrientationReport, IdentifyError> {
    let worst = |o: Orientation| -> Result<f64, IdentifyError> {
        let mut w = 0.0_f64;
        for (sym, det) in samples {
            w = w.max(rel_abs_mismatch(closed_form_jacobian(form, sym, o)?, *det, 1e-300));
        }
        Ok(w)
    };
    let printed = worst(Orientation::Printed)?;
    let mirrored = worst(Orientation::Mirrored)?;
    let chosen = if mirrored < printed { Orientation::Mirrored } else { Orientation::Printed };
    Ok(OrientationReport { form, points: samples.len(), printed_max_rel: printed, mirrored_max_rel: mirrored, chosen })
}

/// Entries with magnitude below `tol`.
pub fn near_zero_mask<T: Scalar>(m: &RMatrix<T>, tol: T) -> Vec<Vec<bool>> {
    (0..m.rows()).map(|r| (0..m.cols()).map(|c| m[(r, c)].abs() < tol).collect()).collect()
}

/// Levels whose amplitudes reach the detector in setting `idx`.
fn support<T: Scalar>(protocol: &Protocol<T>, idx: usize) -> Vec<usize> {
    let s = &protocol.settings[idx];
    let on = |k: usize| match s.drives[k].amp {
        crate::protocol::Amp::Fixed(h) | crate::protocol::Amp::Scaled(h) => h != T::zero(),
    };
    let mut levels = vec![s.label];
    if protocol.dim == 2 {
        if on(0) {
            levels = vec![0, 1];
        }
    } else {
        if on(0) || on(1) {
            levels.push(0);
        }
        for k in 0..2 {
            if on(k) {
                levels.push(k + 1);
            }
        }
    }
    levels.sort_unstable();
    levels.dedup();
    levels
}

/// Entries that vanish identically because the setting cannot see the
/// parameter: `true` marks a structural zero.
pub fn structural_zero_mask<T: Scalar>(protocol: &Protocol<T>) -> Vec<Vec<bool>> {
    (0..protocol.settings.len())
        .map(|idx| {
            let sup = support(protocol, idx);
            let s = &protocol.settings[idx];
            protocol
                .gamma
                .iter()
                .map(|g| {
                    let seen = match *g {
                        Param::Population(i) => sup.contains(&i),
                        Param::Coherence(i, j) | Param::Phase(i, j) => sup.contains(&i) && sup.contains(&j),
                        Param::Lambda(k) => matches!(s.drives[k].amp, crate::protocol::Amp::Scaled(m) if m != T::zero()),
                    };
                    !seen
                })
                .collect()
        })
        .collect()
}

/// Diagonal blocks `(rows, cols)` of the V protocol in canonical order.
pub const V_BLOCKS: [(std::ops::Range<usize>, std::ops::Range<usize>); 3] = [(0..5, 0..5), (5..9, 5..9), (9..11, 9..11)];

/// True iff every entry right of its row's diagonal block is marked zero.
pub fn is_block_lower_triangular(mask: &[Vec<bool>], blocks: &[(std::ops::Range<usize>, std::ops::Range<usize>)]) -> bool {
    blocks.iter().all(|(rows, cols)| rows.clone().all(|r| (cols.end..mask[r].len()).all(|c| mask[r][c])))
}

/// Columns that are numerically zero at every supplied report.
pub fn zero_columns<T: Scalar>(reports: &[JacobianReport<T>], tol: T) -> Vec<String> {
    let Some(first) = reports.first() else { return Vec::new() };
    (0..first.matrix.cols())
        .filter(|&c| reports.iter().all(|r| (0..r.matrix.rows()).all(|row| r.matrix[(row, c)].abs() < tol)))
        .map(|c| first.columns[c].clone())
        .collect()
}

/// One scanned axis over the unknown set.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    /// Position in the protocol's unknown set.
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub values: Vec<f64>,
    pub abs_det: f64,
    pub flag: bool,
}

/// Relative threshold on `|det| / median |det|` below which a point is flagged.
pub const SINGULAR_REL: f64 = 1e-8;

/// Grid coordinates along one axis. Phase axes are periodic and half-open.
pub fn axis_points(axis: &Axis, periodic: bool, grid: usize) -> Vec<f64> {
    let span = axis.hi - axis.lo;
    if periodic {
        (0..grid).map(|k| axis.lo + span * k as f64 / grid as f64).collect()
    } else {
        (0..grid).map(|k| axis.lo + span * k as f64 / (grid - 1) as f64).collect()
    }
}

/// Evaluates `|det|` on the Cartesian grid of `axes` around a base point.
/// Rows come back in grid order (last axis fastest).
pub fn singularity_scan(
    protocol: &Protocol<f64>,
    state: &DensityParams<f64>,
    unknowns: &UnknownParams<f64>,
    axes: &[Axis],
    grid: usize,
) -> Result<Vec<ScanRow>, IdentifyError> {
    if grid < 2 {
        return Err(IdentifyError::EmptyRegion(format!("grid {grid} < 2")));
    }
    if axes.is_empty() {
        return Err(IdentifyError::EmptyRegion("no axes".into()));
    }
    for a in axes {
        if a.index >= protocol.gamma.len() || !(a.hi > a.lo) {
            return Err(IdentifyError::EmptyRegion(format!("axis {} [{}, {}]", a.index, a.lo, a.hi)));
        }
    }
    let coords: Vec<Vec<f64>> = axes.iter().map(|a| axis_points(a, protocol.gamma[a.index].is_phase(), grid)).collect();
    let total = grid.pow(axes.len() as u32);
    let base = protocol.read_gamma(state, unknowns);
    let dets: Vec<Result<(Vec<f64>, f64), IdentifyError>> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let mut values = vec![0.0; axes.len()];
            for k in (0..axes.len()).rev() {
                values[k] = coords[k][rem % grid];
                rem /= grid;
            }
            let mut x = base.clone();
            for (a, v) in axes.iter().zip(&values) {
                x[a.index] = *v;
            }
            let (s, u) = protocol.apply_gamma(&x, state, unknowns);
            let rep = numeric_jacobian(protocol, &s, &u)?;
            Ok((values, rep.abs_det().unwrap_or(rep.smallest_singular_value)))
        })
        .collect();
    let dets = dets.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut sorted: Vec<f64> = dets.iter().map(|d| d.1).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    Ok(dets
        .into_iter()
        .map(|(values, abs_det)| ScanRow { values, abs_det, flag: abs_det < SINGULAR_REL * median })
        .collect())
}

/// CSV rendering: `name1,...,nameK,abs_det,flag`, 17 significant digits.
pub fn scan_csv(names: &[String], rows: &[ScanRow]) -> String {
    let mut out = names.join(",");
    out.push_str(",abs_det,flag\n");
    for r in rows {
        for v in &r.values {
            out.push_str(&format!("{v:.16e},"));
        }
        out.push_str(&format!("{:.16e},{}\n", r.abs_det, u8::from(r.flag)));
    }
    out
}

/// Random truth for `protocol`: unit trace, physical, coherences of at least
/// `min_coherence`, process scales in `[0.5, 2.5]`. Qutrit states are drawn by
/// rejection on the smallest eigenvalue.
pub fn random_truth(protocol: &Protocol<f64>, rng: &mut ChaCha20Rng, min_coherence: f64) -> (DensityParams<f64>, UnknownParams<f64>) {
    let tau = std::f64::consts::TAU;
    let lam = |rng: &mut ChaCha20Rng| rng.random_range(0.5..2.5);
    let mut unknowns = UnknownParams::none(protocol.dim);
    for k in protocol.lambda_slots() {
        unknowns.lambda[k] = Some(lam(rng));
    }
    loop {
        let state = if protocol.dim == 2 {
            let p0: f64 = rng.random_range(0.2..0.8);
            let bound = (p0 * (1.0 - p0)).sqrt();
            let hi = (0.95 * bound).max(min_coherence + 1e-3);
            DensityParams::qubit(p0, 1.0 - p0, rng.random_range(min_coherence..hi), rng.random_range(0.0..tau))
        } else {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            let (lo, hi) = (a.min(b), a.max(b));
            let pops = [lo, hi - lo, 1.0 - hi];
            if pops.iter().any(|p| *p < 0.1) {
                continue;
            }
            let coh = [0; 3].map(|_| rng.random_range(min_coherence..0.3));
            let ph = [0; 3].map(|_| rng.random_range(0.0..tau));
            DensityParams::qutrit(pops, coh, ph)
        }
        .expect("sampled ranges are valid");
        if state.positivity().map(|p| p.min_eigenvalue >= 0.0).unwrap_or(false) {
            return (state, unknowns);
        }
    }
}

/// Deterministic generator for scans and sampled checks.
pub fn rng_from(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::scenario;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

    fn b_point(rho01: f64, lambda_c: f64, gamma: f64) -> (DensityParams<f64>, UnknownParams<f64>) {
        (DensityParams::qubit(0.55, 0.45, rho01, gamma).unwrap(), UnknownParams::qubit(Some(lambda_c), None))
    }

    #[test]
    fn scenario_a_determinant_is_coherence() {
        let a = scenario::<f64>("A").unwrap();
        let s = DensityParams::qubit(0.6, 0.4, 0.3, 1.0).unwrap();
        let rep = numeric_jacobian(&a, &s, &UnknownParams::none(2)).unwrap();
        assert!((rep.abs_det().unwrap() - 0.3).abs() < 1e-6);
        assert_eq!(rep.matrix.rows(), 4);
        assert_eq!(rep.steps.len(), 4);
    }

    #[test]
    fn scenario_b_examples() {
        let b = scenario::<f64>("B").unwrap();
        let (s, u) = b_point(0.0, 1.3, 2.0);
        assert!(numeric_jacobian(&b, &s, &u).unwrap().abs_det().unwrap() <= 1e-8);
        let (s, u) = b_point(0.25, FRAC_PI_2, 0.0);
        assert!((numeric_jacobian(&b, &s, &u).unwrap().abs_det().unwrap() - 0.125).abs() < 1e-5);
    }

    #[test]
    fn closed_form_examples() {
        let sym = Symbols { rho01: Some(0.25), lambda1: Some(FRAC_PI_2), gamma01: Some(0.0), ..Default::default() };
        assert!((closed_form_jacobian(ClosedForm::B, &sym, Orientation::Printed).unwrap() + 0.125).abs() < 1e-12);
        let sym = Symbols { lambda1: Some(1.0), lambda2: Some(1.0), rho12: Some(0.1), ..Default::default() };
        let j3: f64 = closed_form_jacobian(ClosedForm::J3, &sym, Orientation::Printed).unwrap();
        let hand = -16.0 * (2f64.sqrt() / 4.0).sin().powi(4) * 0.1 * (1.0 + (2f64.sqrt() / 2.0).cos()).powi(2) / 16.0;
        assert!((j3 - hand).abs() < 1e-15);
        assert!((j3 + 0.0044527).abs() < 5e-8, "{j3}");
        let sym = Symbols { rho01: Some(0.0), lambda1: Some(1.0), gamma01: Some(0.3), ..Default::default() };
        assert_eq!(closed_form_jacobian(ClosedForm::J1, &sym, Orientation::Printed).unwrap(), 0.0);
        assert!(matches!(
            closed_form_jacobian(ClosedForm::J2, &sym, Orientation::Printed),
            Err(IdentifyError::MissingSymbol { symbol: "rho02", .. })
        ));
    }

    #[test]
    fn b_matches_mirrored_closed_form() {
        let b = scenario::<f64>("B").unwrap();
        let mut rng = rng_from(3);
        let mut samples = Vec::new();
        for _ in 0..40 {
            let (s, u) = random_truth(&b, &mut rng, 0.05);
            let det = numeric_jacobian(&b, &s, &u).unwrap().abs_det().unwrap();
            samples.push((Symbols::from_point(&s, &u), det));
        }
        let rep = resolve_orientation(ClosedForm::B, &samples).unwrap();
        assert_eq!(rep.chosen, Orientation::Mirrored);
        assert!(rep.mirrored_max_rel < 1e-4, "{rep:?}");
        assert!(rep.printed_max_rel > 1e-2);
    }

    #[test]
    fn v_block_structure() {
        let v = scenario::<f64>("V").unwrap();
        let structural = structural_zero_mask(&v);
        assert!(is_block_lower_triangular(&structural, &V_BLOCKS));
        // unrotated projector sees only its own population
        assert_eq!(structural[0].iter().filter(|z| !**z).count(), 1);
        let mut rng = rng_from(4);
        for _ in 0..5 {
            let (s, u) = random_truth(&v, &mut rng, 0.05);
            let rep = numeric_jacobian(&v, &s, &u).unwrap();
            assert_eq!(near_zero_mask(&rep.matrix, 1e-10), structural);
        }
    }

    #[test]
    fn v_determinant_factorizes_over_blocks() {
        let v = scenario::<f64>("V").unwrap();
        let mut rng = rng_from(5);
        for _ in 0..5 {
            let (s, u) = random_truth(&v, &mut rng, 0.05);
            let rep = numeric_jacobian(&v, &s, &u).unwrap();
            let prod: f64 = V_BLOCKS
                .iter()
                .map(|(r, c)| rep.matrix.select(&r.clone().collect::<Vec<_>>(), &c.clone().collect::<Vec<_>>()).determinant())
                .product();
            let det = rep.determinant.unwrap();
            assert!((prod - det).abs() < 1e-8 * det.abs().max(1e-12));
            // the excited-coherence block follows the exchanged-weight factor
            let sym = Symbols::from_point(&s, &u);
            let j3s = closed_form_jacobian(ClosedForm::J3Swapped, &sym, Orientation::Printed).unwrap();
            let b3 = rep.matrix.select(&[9, 10], &[9, 10]).determinant();
            assert!(rel_abs_mismatch(j3s, b3, 1e-300) < 1e-5);
        }
    }

    #[test]
    fn scenario_c_last_column_vanishes() {
        let c = scenario::<f64>("C").unwrap();
        let alt = scenario::<f64>("C-alt").unwrap();
        let mut rng = rng_from(6);
        let mut reps = Vec::new();
        let mut alt_dets = Vec::new();
        for _ in 0..5 {
            let (s, u) = random_truth(&c, &mut rng, 0.05);
            reps.push(numeric_jacobian(&c, &s, &u).unwrap());
            alt_dets.push(numeric_jacobian(&alt, &s, &u).unwrap().abs_det().unwrap());
        }
        assert_eq!(zero_columns(&reps, 1e-10), ["lambda_z"]);
        assert!(alt_dets.iter().all(|d| *d > 1e-6), "{alt_dets:?}");
    }

    #[test]
    fn richardson_step_adequacy() {
        let b = scenario::<f64>("B").unwrap();
        let (s, u) = b_point(0.2, 1.3, 2.0);
        let full = numeric_jacobian_with_step(&b, &s, &u, STEP).unwrap().determinant.unwrap();
        let half = numeric_jacobian_with_step(&b, &s, &u, STEP / 2.0).unwrap().determinant.unwrap();
        assert!(((full - half) / full).abs() < 1e-3);
    }

    #[test]
    fn gamma_scan_flags_numeric_loci() {
        let b = scenario::<f64>("B").unwrap();
        let (s, u) = b_point(0.2, 1.3, 2.0);
        let rows = singularity_scan(&b, &s, &u, &[Axis { index: 4, lo: 0.0, hi: TAU }], 64).unwrap();
        assert_eq!(rows.len(), 64);
        let flagged: Vec<f64> = rows.iter().filter(|r| r.flag).map(|r| r.values[0]).collect();
        assert_eq!(flagged.len(), 2, "{flagged:?}");
        assert!((flagged[0] - 3.0 * FRAC_PI_4).abs() < 1e-12);
        assert!((flagged[1] - 7.0 * FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn lambda_scan_flags_zero_and_pi() {
        let b = scenario::<f64>("B").unwrap();
        let (s, u) = b_point(0.2, 1.3, 2.0);
        let rows = singularity_scan(&b, &s, &u, &[Axis { index: 3, lo: 0.0, hi: TAU }], 9).unwrap();
        let flagged: Vec<f64> = rows.iter().filter(|r| r.flag).map(|r| r.values[0]).collect();
        assert_eq!(flagged.len(), 3, "{flagged:?}");
        for (f, want) in flagged.iter().zip([0.0, PI, TAU]) {
            assert!((f - want).abs() < 1e-12);
        }
        assert!(!rows.iter().any(|r| r.flag && (r.values[0] - FRAC_PI_2).abs() < 1e-9));
    }

    #[test]
    fn scan_rejects_empty_regions() {
        let b = scenario::<f64>("B").unwrap();
        let (s, u) = b_point(0.2, 1.3, 2.0);
        assert!(singularity_scan(&b, &s, &u, &[Axis { index: 4, lo: 0.0, hi: TAU }], 1).is_err());
        assert!(singularity_scan(&b, &s, &u, &[Axis { index: 4, lo: 1.0, hi: 1.0 }], 4).is_err());
        assert!(singularity_scan(&b, &s, &u, &[], 4).is_err());
    }

    #[test]
    fn scan_csv_shape() {
        let rows = vec![ScanRow { values: vec![0.5], abs_det: 0.125, flag: false }];
        let csv = scan_csv(&["gamma".to_string()], &rows);
        assert_eq!(csv, "gamma,abs_det,flag\n5.0000000000000000e-1,1.2500000000000000e-1,0\n");
    }

    #[test]
    fn coherence_zero_kills_excited_block() {
        let v = scenario::<f64>("V").unwrap();
        let s = DensityParams::qutrit([0.4, 0.3, 0.3], [0.1, 0.1, 0.0], [0.3, 1.0, 0.0]).unwrap();
        let rep = numeric_jacobian(&v, &s, &UnknownParams::vtype(Some(1.1), Some(1.7))).unwrap();
        assert!(rep.matrix.select(&[9, 10], &[9, 10]).determinant().abs() < 1e-12);
    }
}
