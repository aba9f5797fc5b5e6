//! Measurement protocols: ordered control settings, the unknown set they are
//! meant to determine, and the map from unknown values to predicted statistics.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{measurement_row, row_expectation, ForwardError};
use crate::model::{coherence_pairs, pair_slot, DensityParams, GeneratorParams, ModelError};
use crate::scalar::{wrap_phase, Scalar};
use crate::smallmat::CMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("unknown scenario '{0}' (expected A, B, C, C-alt or V)")]
    UnknownScenario(String),
    #[error("setting {setting} scales coupling {coupling} but its unknown is not supplied")]
    MissingUnknown { setting: usize, coupling: usize },
    #[error("unknown parameter name '{0}'")]
    BadParamName(String),
    #[error("invalid protocol: {0}")]
    Invalid(String),
    #[error("dimension mismatch: protocol has dim {protocol}, input has dim {input}")]
    DimensionMismatch { protocol: usize, input: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Member of the unknown set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    Population(usize),
    Coherence(usize, usize),
    Phase(usize, usize),
    /// Process unknown. Qubit: 0 is the transverse scale, 1 the longitudinal.
    /// V-type: coupling of level `k + 1`.
    Lambda(usize),
}

impl Param {
    pub fn is_phase(self) -> bool {
        matches!(self, Param::Phase(..))
    }

    pub fn is_magnitude(self) -> bool {
        matches!(self, Param::Population(_) | Param::Coherence(..))
    }

    /// Display name; phases read as `beta` when the control phase offset is unknown.
    pub fn name(self, dim: usize, phase_known: bool) -> String {
        match self {
            Param::Population(i) => format!("rho{i}{i}"),
            Param::Coherence(i, j) => format!("rho{i}{j}"),
            Param::Phase(i, j) if phase_known => format!("gamma{i}{j}"),
            Param::Phase(i, j) => format!("beta{i}{j}"),
            Param::Lambda(0) if dim == 2 => "lambda_c".into(),
            Param::Lambda(1) if dim == 2 => "lambda_z".into(),
            Param::Lambda(k) => format!("lambda{}", k + 1),
        }
    }

    pub fn parse(name: &str, dim: usize) -> Result<Self, ProtocolError> {
        let bad = || ProtocolError::BadParamName(name.to_string());
        let digits = |s: &str| -> Result<(usize, usize), ProtocolError> {
            let b = s.as_bytes();
            if b.len() != 2 || !b.iter().all(u8::is_ascii_digit) {
                return Err(bad());
            }
            let (i, j) = ((b[0] - b'0') as usize, (b[1] - b'0') as usize);
            if i >= dim || j >= dim {
                return Err(bad());
            }
            Ok((i, j))
        };
        let p = match name {
            "lambda_c" if dim == 2 => Param::Lambda(0),
            "lambda_z" if dim == 2 => Param::Lambda(1),
            "lambda1" if dim == 3 => Param::Lambda(0),
            "lambda2" if dim == 3 => Param::Lambda(1),
            "gamma" if dim == 2 => Param::Phase(0, 1),
            _ => {
                if let Some(rest) = name.strip_prefix("rho") {
                    let (i, j) = digits(rest)?;
                    match i.cmp(&j) {
                        std::cmp::Ordering::Equal => Param::Population(i),
                        std::cmp::Ordering::Less => Param::Coherence(i, j),
                        std::cmp::Ordering::Greater => return Err(bad()),
                    }
                } else if let Some(rest) = name.strip_prefix("gamma").or_else(|| name.strip_prefix("beta")) {
                    let (i, j) = digits(rest)?;
                    if i >= j {
                        return Err(bad());
                    }
                    Param::Phase(i, j)
                } else {
                    return Err(bad());
                }
            }
        };
        Ok(p)
    }
}

/// Strength of one drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "snake_case")]
pub enum Amp<T: Scalar> {
    /// Known generator magnitude.
    Fixed(T),
    /// Controllable multiplier of the coupling's unknown scale.
    Scaled(T),
}

/// One drive: magnitude and control phase. The phase is ignored for the
/// longitudinal qubit drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct Drive<T: Scalar> {
    pub amp: Amp<T>,
    #[serde(default)]
    pub phase: T,
}

impl<T: Scalar> Drive<T> {
    pub fn off() -> Self {
        Drive { amp: Amp::Fixed(T::zero()), phase: T::zero() }
    }

    pub fn fixed(h: T, phase: T) -> Self {
        Drive { amp: Amp::Fixed(h), phase }
    }

    pub fn scaled(m: T, phase: T) -> Self {
        Drive { amp: Amp::Scaled(m), phase }
    }
}

/// Drives applied before projecting onto `|label>`. Qubit drives are
/// `[transverse, longitudinal]`; V-type drives are `[level 1, level 2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct MeasurementSetting<T: Scalar> {
    pub drives: [Drive<T>; 2],
    pub label: usize,
}

impl<T: Scalar> MeasurementSetting<T> {
    pub fn unrotated(label: usize) -> Self {
        MeasurementSetting { drives: [Drive::off(), Drive::off()], label }
    }
}

/// Values of the process unknowns, plus the offset between the control phase
/// and the actual coupling phase (zero when the phase is a known control).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct UnknownParams<T: Scalar> {
    pub dim: usize,
    /// Qubit: `[lambda_c, lambda_z]`. V-type: `[lambda1, lambda2]`.
    pub lambda: [Option<T>; 2],
    /// One per transverse coupling.
    #[serde(default)]
    pub phase_offset: Vec<T>,
}

impl<T: Scalar> UnknownParams<T> {
    pub fn none(dim: usize) -> Self {
        UnknownParams { dim, lambda: [None, None], phase_offset: vec![T::zero(); dim - 1] }
    }

    pub fn qubit(lambda_c: Option<T>, lambda_z: Option<T>) -> Self {
        UnknownParams { dim: 2, lambda: [lambda_c, lambda_z], phase_offset: vec![T::zero()] }
    }

    pub fn vtype(lambda1: Option<T>, lambda2: Option<T>) -> Self {
        UnknownParams { dim: 3, lambda: [lambda1, lambda2], phase_offset: vec![T::zero(); 2] }
    }

    pub fn with_offsets(mut self, offsets: &[T]) -> Self {
        self.phase_offset = offsets.to_vec();
        self
    }

    fn offset(&self, k: usize) -> T {
        self.phase_offset.get(k).copied().unwrap_or(T::zero())
    }
}

/// Ordered settings plus the declared unknown set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", into = "ProtocolRepr<T>", try_from = "ProtocolRepr<T>")]
pub struct Protocol<T: Scalar> {
    pub name: String,
    pub dim: usize,
    pub settings: Vec<MeasurementSetting<T>>,
    pub gamma: Vec<Param>,
    /// When false, coupling phase offsets are unknown and only `beta`
    /// combinations are identifiable; phases are then estimated in the gauge
    /// where the offsets vanish.
    pub phase_known: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct ProtocolRepr<T: Scalar> {
    name: String,
    dim: usize,
    #[serde(default = "yes")]
    phase_known: bool,
    unknowns: Vec<String>,
    settings: Vec<MeasurementSetting<T>>,
}

fn yes() -> bool {
    true
}

impl<T: Scalar> From<Protocol<T>> for ProtocolRepr<T> {
    fn from(p: Protocol<T>) -> Self {
        ProtocolRepr {
            unknowns: p.gamma.iter().map(|g| g.name(p.dim, true)).collect(),
            name: p.name,
            dim: p.dim,
            phase_known: p.phase_known,
            settings: p.settings,
        }
    }
}

impl<T: Scalar> TryFrom<ProtocolRepr<T>> for Protocol<T> {
    type Error = ProtocolError;

    fn try_from(r: ProtocolRepr<T>) -> Result<Self, Self::Error> {
        let gamma = r
            .unknowns
            .iter()
            .map(|n| Param::parse(n, r.dim))
            .collect::<Result<Vec<_>, _>>()?;
        let p = Protocol { name: r.name, dim: r.dim, settings: r.settings, gamma, phase_known: r.phase_known };
        p.validate()?;
        Ok(p)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // dimension-neutral rendering used in diagnostics
        match *self {
            Param::Lambda(k) => write!(f, "lambda[{k}]"),
            p => f.write_str(&p.name(3, true)),
        }
    }
}

impl FromStr for RootScenario {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(RootScenario::A),
            "B" => Ok(RootScenario::B),
            "C" => Ok(RootScenario::C),
            "C-ALT" | "C_ALT" | "CALT" => Ok(RootScenario::CAlt),
            "V" => Ok(RootScenario::V),
            _ => Err(ProtocolError::UnknownScenario(s.to_string())),
        }
    }
}

/// Shipped protocol catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootScenario {
    A,
    B,
    C,
    /// Scenario C with a sixth setting that actually depends on `lambda_z`.
    CAlt,
    V,
}

impl RootScenario {
    pub fn name(self) -> &'static str {
        match self {
            RootScenario::A => "A",
            RootScenario::B => "B",
            RootScenario::C => "C",
            RootScenario::CAlt => "C-alt",
            RootScenario::V => "V",
        }
    }
}

pub const SCENARIO_NAMES: [&str; 5] = ["A", "B", "C", "C-alt", "V"];

/// Looks up a shipped protocol by name (`A`, `B`, `C`, `C-alt`, `V`).
pub fn scenario<T: Scalar>(name: &str) -> Result<Protocol<T>, ProtocolError> {
    let which: RootScenario = name.parse()?;
    let zero = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    let half_pi = T::FRAC_PI_2();
    let quarter_set = [(one, zero), (two, zero), (one, half_pi), (two, half_pi)];
    let qubit_b = || {
        let mut s = vec![MeasurementSetting::unrotated(1)];
        for (m, th) in quarter_set {
            s.push(MeasurementSetting { drives: [Drive::scaled(m, th), Drive::off()], label: 1 });
        }
        s
    };
    let b_gamma = vec![
        Param::Population(0),
        Param::Coherence(0, 1),
        Param::Population(1),
        Param::Lambda(0),
        Param::Phase(0, 1),
    ];
    let (dim, settings, gamma) = match which {
        RootScenario::A => (
            2,
            vec![
                MeasurementSetting::unrotated(0),
                MeasurementSetting::unrotated(1),
                MeasurementSetting { drives: [Drive::fixed(half_pi, zero), Drive::off()], label: 1 },
                MeasurementSetting { drives: [Drive::fixed(half_pi, half_pi), Drive::off()], label: 1 },
            ],
            vec![Param::Population(0), Param::Coherence(0, 1), Param::Population(1), Param::Phase(0, 1)],
        ),
        RootScenario::B => (2, qubit_b(), b_gamma),
        RootScenario::C | RootScenario::CAlt => {
            let mut s = qubit_b();
            let transverse = if which == RootScenario::C { Drive::off() } else { Drive::scaled(one, zero) };
            s.push(MeasurementSetting { drives: [transverse, Drive::scaled(one, zero)], label: 1 });
            let mut g = b_gamma;
            g.push(Param::Lambda(1));
            (2, s, g)
        }
        RootScenario::V => {
            let mut s = vec![MeasurementSetting::unrotated(1)];
            for (m, th) in quarter_set {
                s.push(MeasurementSetting { drives: [Drive::scaled(m, th), Drive::off()], label: 1 });
            }
            for (m, th) in quarter_set {
                s.push(MeasurementSetting { drives: [Drive::off(), Drive::scaled(m, th)], label: 2 });
            }
            for th in [zero, half_pi] {
                s.push(MeasurementSetting { drives: [Drive::scaled(one, zero), Drive::scaled(one, th)], label: 1 });
            }
            let g = vec![
                Param::Population(0),
                Param::Population(1),
                Param::Coherence(0, 1),
                Param::Lambda(0),
                Param::Phase(0, 1),
                Param::Population(2),
                Param::Coherence(0, 2),
                Param::Lambda(1),
                Param::Phase(0, 2),
                Param::Coherence(1, 2),
                Param::Phase(1, 2),
            ];
            (3, s, g)
        }
    };
    Ok(Protocol { name: which.name().to_string(), dim, settings, gamma, phase_known: true })
}

impl<T: Scalar> Protocol<T> {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.dim != 2 && self.dim != 3 {
            return Err(ProtocolError::Invalid(format!("dimension {}", self.dim)));
        }
        if self.settings.len() < self.gamma.len() {
            return Err(ProtocolError::Invalid(format!(
                "{} settings cannot determine {} unknowns",
                self.settings.len(),
                self.gamma.len()
            )));
        }
        for (i, g) in self.gamma.iter().enumerate() {
            if self.gamma[..i].contains(g) {
                return Err(ProtocolError::Invalid(format!("unknown {} listed twice", g.name(self.dim, true))));
            }
            let ok = match *g {
                Param::Population(i) => i < self.dim,
                Param::Coherence(i, j) | Param::Phase(i, j) => pair_slot(self.dim, i, j).is_some(),
                Param::Lambda(k) => k < 2,
            };
            if !ok {
                return Err(ProtocolError::Invalid(format!("unknown {g} does not fit dim {}", self.dim)));
            }
        }
        for (idx, s) in self.settings.iter().enumerate() {
            if s.label >= self.dim {
                return Err(ProtocolError::Invalid(format!("setting {idx}: projector label {}", s.label)));
            }
            for (k, d) in s.drives.iter().enumerate() {
                let v = match d.amp {
                    Amp::Fixed(h) | Amp::Scaled(h) => h,
                };
                let transverse = self.dim == 3 || k == 0;
                if !v.is_finite() || !d.phase.is_finite() || (transverse && v < T::zero()) {
                    return Err(ProtocolError::Invalid(format!("setting {idx}: drive {k} out of range")));
                }
            }
        }
        Ok(())
    }

    pub fn lambda_slots(&self) -> Vec<usize> {
        self.gamma
            .iter()
            .filter_map(|g| if let Param::Lambda(k) = g { Some(*k) } else { None })
            .collect()
    }

    pub fn has_process_unknowns(&self) -> bool {
        !self.lambda_slots().is_empty()
    }

    pub fn gamma_names(&self) -> Vec<String> {
        self.gamma.iter().map(|g| g.name(self.dim, self.phase_known)).collect()
    }

    /// Generator applied by `setting`: `h_k = m_k lambda_k` (or a known `h_k`),
    /// `phi_k = theta_k + offset_k`.
    pub fn resolve(&self, setting: &MeasurementSetting<T>, unknowns: &UnknownParams<T>) -> Result<GeneratorParams<T>, ProtocolError> {
        let idx = self.settings.iter().position(|s| s == setting).unwrap_or(usize::MAX);
        self.resolve_indexed(idx, setting, unknowns)
    }

    fn resolve_indexed(
        &self,
        idx: usize,
        setting: &MeasurementSetting<T>,
        unknowns: &UnknownParams<T>,
    ) -> Result<GeneratorParams<T>, ProtocolError> {
        if unknowns.dim != self.dim {
            return Err(ProtocolError::DimensionMismatch { protocol: self.dim, input: unknowns.dim });
        }
        let amp = |k: usize| -> Result<T, ProtocolError> {
            match setting.drives[k].amp {
                Amp::Fixed(h) => Ok(h),
                Amp::Scaled(m) if m == T::zero() => Ok(T::zero()),
                Amp::Scaled(m) => unknowns.lambda[k]
                    .map(|l| m * l)
                    .ok_or(ProtocolError::MissingUnknown { setting: idx, coupling: k }),
            }
        };
        // a negative transverse amplitude is the same coupling with phase + pi
        let transverse = |k: usize| -> Result<(T, T), ProtocolError> {
            let h = amp(k)?;
            let phi = setting.drives[k].phase + unknowns.offset(k);
            Ok(if h < T::zero() { (-h, wrap_phase(phi + T::PI())) } else { (h, wrap_phase(phi)) })
        };
        let g = match self.dim {
            2 => {
                let (h_c, phi) = transverse(0)?;
                GeneratorParams::Qubit { h_z: amp(1)?, h_c, phi }
            }
            _ => {
                let ((h1, p1), (h2, p2)) = (transverse(0)?, transverse(1)?);
                GeneratorParams::VType { h: [h1, h2], phi: [p1, p2] }
            }
        };
        g.validate()?;
        Ok(g)
    }

    /// Exact statistics for every setting.
    pub fn predict(&self, state: &DensityParams<T>, unknowns: &UnknownParams<T>) -> Result<Vec<T>, ForwardError> {
        if state.dim != self.dim {
            return Err(ForwardError::DimensionMismatch { state: state.dim, other: self.dim });
        }
        let rho = crate::model::assemble_state(state)?;
        self.settings
            .iter()
            .enumerate()
            .map(|(idx, s)| {
                let g = self.resolve_indexed(idx, s, unknowns)?;
                Ok(row_expectation(&measurement_row(&g, s.label)?, &rho))
            })
            .collect()
    }

    /// Values of the unknown set at `(state, unknowns)`, in canonical order.
    /// Unset lambdas read as zero.
    pub fn read_gamma(&self, state: &DensityParams<T>, unknowns: &UnknownParams<T>) -> Vec<T> {
        self.gamma
            .iter()
            .map(|g| match *g {
                Param::Population(i) => state.populations[i],
                Param::Coherence(i, j) => state.coherence(i, j),
                Param::Phase(i, j) => state.phase(i, j),
                Param::Lambda(k) => unknowns.lambda[k].unwrap_or(T::zero()),
            })
            .collect()
    }

    /// Writes `values` into copies of the base point. Phases are wrapped and
    /// negative magnitudes are left as given (see [`DensityParams::canonicalize`]).
    pub fn apply_gamma(
        &self,
        values: &[T],
        state: &DensityParams<T>,
        unknowns: &UnknownParams<T>,
    ) -> (DensityParams<T>, UnknownParams<T>) {
        let mut s = state.clone();
        let mut u = unknowns.clone();
        for (g, &v) in self.gamma.iter().zip(values) {
            match *g {
                Param::Population(i) => s.populations[i] = v,
                Param::Coherence(i, j) => s.coherences[pair_slot(self.dim, i, j).unwrap()] = v,
                Param::Phase(i, j) => s.phases[pair_slot(self.dim, i, j).unwrap()] = wrap_phase(v),
                Param::Lambda(k) => u.lambda[k] = Some(v),
            }
        }
        (s, u)
    }

    /// Generator used to fix the gauge of an estimate: every coupling at unit
    /// multiplier (or its known magnitude) with zero control phase.
    pub fn reference_generator(&self, unknowns: &UnknownParams<T>) -> GeneratorParams<T> {
        let lam = |k: usize| unknowns.lambda[k].unwrap_or(T::one());
        match self.dim {
            2 => GeneratorParams::Qubit { h_z: T::zero(), h_c: lam(0), phi: unknowns.offset(0) },
            _ => GeneratorParams::VType { h: [lam(0), lam(1)], phi: [unknowns.offset(0), unknowns.offset(1)] },
        }
    }

    pub fn measurement_map<'a>(&'a self, base_state: &DensityParams<T>, base_unknowns: &UnknownParams<T>) -> MeasurementMap<'a, T> {
        MeasurementMap::new(self, base_state, base_unknowns)
    }
}

const ROW_CACHE: usize = 12;

/// Map from unknown-set values to predicted statistics around a base point.
///
/// State-only perturbations reuse the cached rows `<label| U` of each
/// setting; only generator changes trigger new exponentials. Magnitudes are
/// used as given, so points with negative coherences are evaluated as the
/// corresponding phase-shifted states.
pub struct MeasurementMap<'a, T: Scalar> {
    protocol: &'a Protocol<T>,
    base_state: DensityParams<T>,
    base_unknowns: UnknownParams<T>,
    cache: RefCell<Vec<Vec<(GeneratorParams<T>, Vec<Complex<T>>)>>>,
}

impl<'a, T: Scalar> Clone for MeasurementMap<'a, T> {
    fn clone(&self) -> Self {
        MeasurementMap {
            protocol: self.protocol,
            base_state: self.base_state.clone(),
            base_unknowns: self.base_unknowns.clone(),
            cache: RefCell::new(self.cache.borrow().clone()),
        }
    }
}

impl<'a, T: Scalar> MeasurementMap<'a, T> {
    pub fn new(protocol: &'a Protocol<T>, base_state: &DensityParams<T>, base_unknowns: &UnknownParams<T>) -> Self {
        MeasurementMap {
            protocol,
            base_state: base_state.clone(),
            base_unknowns: base_unknowns.clone(),
            cache: RefCell::new(vec![Vec::new(); protocol.settings.len()]),
        }
    }

    pub fn protocol(&self) -> &Protocol<T> {
        self.protocol
    }

    pub fn base_state(&self) -> &DensityParams<T> {
        &self.base_state
    }

    pub fn base_unknowns(&self) -> &UnknownParams<T> {
        &self.base_unknowns
    }

    pub fn point(&self, values: &[T]) -> (DensityParams<T>, UnknownParams<T>) {
        self.protocol.apply_gamma(values, &self.base_state, &self.base_unknowns)
    }

    fn row(&self, idx: usize, gen: GeneratorParams<T>) -> Result<Vec<Complex<T>>, ForwardError> {
        let mut cache = self.cache.borrow_mut();
        let slot = &mut cache[idx];
        if let Some(pos) = slot.iter().position(|(g, _)| *g == gen) {
            return Ok(slot[pos].1.clone());
        }
        let row = measurement_row(&gen, self.protocol.settings[idx].label)?;
        if slot.len() == ROW_CACHE {
            slot.remove(0);
        }
        slot.push((gen, row.clone()));
        Ok(row)
    }

    /// Rows `<label| U` of every setting at the generator implied by `values`.
    pub fn rows_at(&self, values: &[T]) -> Result<Vec<Vec<Complex<T>>>, ForwardError> {
        let (_, u) = self.point(values);
        self.protocol
            .settings
            .iter()
            .enumerate()
            .map(|(idx, setting)| {
                let gen = self.protocol.resolve_indexed(idx, setting, &u)?;
                self.row(idx, gen)
            })
            .collect()
    }

    /// Statistics at the point given by `values` in canonical order.
    pub fn eval(&self, values: &[T]) -> Result<Vec<T>, ForwardError> {
        let (s, u) = self.point(values);
        let rho = raw_state_matrix(&s);
        self.protocol
            .settings
            .iter()
            .enumerate()
            .map(|(idx, setting)| {
                let gen = self.protocol.resolve_indexed(idx, setting, &u)?;
                Ok(row_expectation(&self.row(idx, gen)?, &rho))
            })
            .collect()
    }
}

/// State matrix without range checks: negative magnitudes are allowed.
pub fn raw_state_matrix<T: Scalar>(s: &DensityParams<T>) -> CMatrix<T> {
    let mut m = CMatrix::from_real_diagonal(&s.populations);
    for (k, &(i, j)) in coherence_pairs(s.dim).iter().enumerate() {
        let z = Complex::from_polar(s.coherences[k], -s.phases[k]);
        m[(i, j)] = z;
        m[(j, i)] = z.conj();
    }
    m
}
