//! Acceptance checks shared by `sct validate` and the acceptance test target.
//!
//! Every check returns one or more [`Outcome`] lines. Tolerances are the
//! constants below; sample counts are arguments so a quick suite can shrink
//! them without touching the thresholds.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::forward::{probability, random_pair, resolve_convention, simulate_counts, ConventionReport, NoiseModel};
use crate::identify::{
    closed_form_jacobian, is_block_lower_triangular, near_zero_mask, numeric_jacobian, random_truth, rel_abs_mismatch,
    resolve_orientation, rng_from, structural_zero_mask, ClosedForm, Symbols, V_BLOCKS,
};
use crate::invert::{block_solve_v, grid_oracle, polish_from, reconstruct, InvertError, Objective, SolverOptions};
use crate::model::{assemble_generator, gauge_fix, gauge_transform, DensityParams, GeneratorParams};
use crate::protocol::{raw_state_matrix, scenario, Param, Protocol, UnknownParams};
use crate::scalar::phase_distance;
use crate::smallmat::fidelity;

pub const COMPLETENESS_TOL: f64 = 1e-12;
pub const CLOSED_FORM_TOL: f64 = 1e-10;
pub const JACOBIAN_A_TOL: f64 = 1e-6;
pub const JACOBIAN_B_REL: f64 = 1e-4;
pub const JACOBIAN_V_REL: f64 = 1e-3;
pub const MASK_TOL: f64 = 1e-10;
pub const GAUGE_STAT_TOL: f64 = 1e-12;
pub const GAUGE_RECON_TOL: f64 = 1e-6;
pub const ROUND_TRIP_TOL: f64 = 1e-5;
pub const BLOCK_AGREEMENT_TOL: f64 = 1e-6;
pub const ORACLE_OBJECTIVE_TOL: f64 = 1e-10;
pub const NOISE_FIDELITY: f64 = 0.99;
pub const NOISE_RATIO: f64 = 5.0;
pub const PHYSICAL_EIG: f64 = -0.02;
pub const PHYSICAL_FRACTION: f64 = 0.95;
pub const SPECTRUM_TOL: f64 = 1e-12;
/// Relative `|det|` below which a point counts as a zero of the Jacobian.
pub const LOCUS_REL: f64 = 1e-8;
/// Truths with a larger Jacobian condition number are redrawn.
pub const MAX_TRUTH_CONDITION: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: String,
    pub passed: bool,
    /// Reported for context; does not count toward the suite verdict.
    pub informational: bool,
    pub detail: String,
}

impl Outcome {
    fn check(id: &str, passed: bool, detail: String) -> Self {
        Outcome { id: id.into(), passed, informational: false, detail }
    }

    fn info(id: &str, detail: String) -> Self {
        Outcome { id: id.into(), passed: true, informational: true, detail }
    }

    fn error(id: &str, err: impl fmt::Display) -> Self {
        Outcome::check(id, false, format!("error: {err}"))
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.informational {
            "INFO"
        } else if self.passed {
            "PASS"
        } else {
            "FAIL"
        };
        write!(f, "{tag} {} {}", self.id, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Structural and formula checks only.
    Quick,
    /// Everything, including round trips, oracle runs and noise trials.
    Full,
}

/// Draws a random truth whose Jacobian condition number is at most
/// [`MAX_TRUTH_CONDITION`].
pub fn nonsingular_truth(protocol: &Protocol<f64>, rng: &mut ChaCha20Rng, min_coherence: f64) -> (DensityParams<f64>, UnknownParams<f64>) {
    loop {
        let (s, u) = random_truth(protocol, rng, min_coherence);
        if let Ok(rep) = numeric_jacobian(protocol, &s, &u) {
            if rep.condition_number.is_finite() && rep.condition_number <= MAX_TRUTH_CONDITION {
                return (s, u);
            }
        }
    }
}

/// Largest componentwise error over the unknown set, phases compared on the circle.
pub fn gamma_error(protocol: &Protocol<f64>, got: &[f64], want: &[f64]) -> f64 {
    protocol
        .gamma
        .iter()
        .zip(got.iter().zip(want))
        .map(|(g, (a, b))| if g.is_phase() { phase_distance(*a, *b) } else { (a - b).abs() })
        .fold(0.0, f64::max)
}

fn exact_counts(protocol: &Protocol<f64>, s: &DensityParams<f64>, u: &UnknownParams<f64>) -> Vec<crate::forward::CountRecord<f64>> {
    simulate_counts(s, u, protocol, &NoiseModel::exact()).expect("valid truth")
}

/// Reconstruction that keeps the best-effort result when no start converged.
fn reconstruct_any(
    counts: &[crate::forward::CountRecord<f64>],
    protocol: &Protocol<f64>,
    opts: &SolverOptions,
) -> Result<crate::invert::ReconstructionResult<f64>, InvertError<f64>> {
    match reconstruct(counts, protocol, opts) {
        Err(InvertError::NoConvergence(r)) => Ok(*r),
        other => other,
    }
}

/// 1. Statistics over all labels sum to the trace.
pub fn completeness(seed: u64, draws: usize) -> Outcome {
    let mut worst = 0.0_f64;
    for dim in [2, 3] {
        let mut rng = rng_from(seed ^ dim as u64);
        for _ in 0..draws {
            let (s, g) = match random_pair(dim, &mut rng) {
                Ok(p) => p,
                Err(e) => return Outcome::error("1", e),
            };
            let mut total = 0.0;
            for label in 0..dim {
                total += probability(&s, &g, label).unwrap();
            }
            worst = worst.max((total - s.scale()).abs());
        }
    }
    Outcome::check(
        "1",
        worst <= COMPLETENESS_TOL,
        format!("completeness: max |sum_j n_j - N| = {worst:.3e} over {draws} draws per dimension (tol {COMPLETENESS_TOL:e})"),
    )
}

/// 2. Closed-form statistics against the direct trace, after convention resolution.
pub fn closed_forms(seed: u64, draws: usize) -> (Outcome, Vec<ConventionReport>) {
    let mut reports = Vec::new();
    for dim in [2, 3] {
        match resolve_convention(dim, draws, seed.wrapping_add(dim as u64)) {
            Ok(r) => reports.push(r),
            Err(e) => return (Outcome::error("2", e), reports),
        }
    }
    let worst = reports.iter().map(|r| r.chosen_max_error).fold(0.0, f64::max);
    let chosen: Vec<String> = reports.iter().map(|r| format!("dim {}: {}", r.dim, r.chosen)).collect();
    let outcome = Outcome::check(
        "2",
        worst <= CLOSED_FORM_TOL,
        format!(
            "closed forms: max |closed - direct| = {worst:.3e} over {draws} draws per dimension (tol {CLOSED_FORM_TOL:e}); {}",
            chosen.join("; ")
        ),
    );
    (outcome, reports)
}

/// Text of the CONVENTIONS report.
pub fn conventions_report(reports: &[ConventionReport], orientations: &[crate::identify::OrientationReport]) -> String {
    let mut out = String::from("CONVENTIONS\n");
    for r in reports {
        out.push_str(&format!("dim {} ({} draws): chosen {} (max error {:.3e})\n", r.dim, r.draws, r.chosen, r.chosen_max_error));
        for (c, e) in &r.disagreements {
            out.push_str(&format!("  candidate {c}: max error {e:.3e}\n"));
        }
    }
    for o in orientations {
        out.push_str(&format!(
            "jacobian {} ({} points): printed max rel {:.3e}, mirrored max rel {:.3e}, chosen {:?}\n",
            o.form.name(),
            o.points,
            o.printed_max_rel,
            o.mirrored_max_rel,
            o.chosen
        ));
    }
    out
}

fn abs_det(protocol: &Protocol<f64>, s: &DensityParams<f64>, u: &UnknownParams<f64>) -> f64 {
    numeric_jacobian(protocol, s, u).map(|r| r.abs_det().unwrap_or(0.0)).unwrap_or(f64::NAN)
}

/// 3. Printed Jacobian determinants and zero loci.
pub fn jacobian_formulas(seed: u64, points: usize) -> (Vec<Outcome>, Vec<crate::identify::OrientationReport>) {
    let mut out = Vec::new();
    let mut orientations = Vec::new();
    let mut rng = rng_from(seed);

    let a = scenario::<f64>("A").unwrap();
    let mut worst_a = 0.0_f64;
    for _ in 0..points {
        let (s, u) = random_truth(&a, &mut rng, 0.0);
        worst_a = worst_a.max((abs_det(&a, &s, &u) - s.coherence(0, 1)).abs());
    }
    out.push(Outcome::check(
        "3a",
        worst_a <= JACOBIAN_A_TOL,
        format!("|J_A| = rho01: max abs error {worst_a:.3e} at {points} points (tol {JACOBIAN_A_TOL:e})"),
    ));

    let b = scenario::<f64>("B").unwrap();
    let samples: Vec<(Symbols<f64>, f64)> = (0..points)
        .map(|_| {
            let (s, u) = nonsingular_truth(&b, &mut rng, 0.05);
            (Symbols::from_point(&s, &u), abs_det(&b, &s, &u))
        })
        .collect();
    match resolve_orientation(ClosedForm::B, &samples) {
        Ok(rep) => {
            let best = rep.printed_max_rel.min(rep.mirrored_max_rel);
            out.push(Outcome::check(
                "3b",
                best <= JACOBIAN_B_REL,
                format!(
                    "|J_B|: max rel error {best:.3e} at {points} non-singular points, {:?} phase orientation (tol {JACOBIAN_B_REL:e}; printed orientation {:.3e})",
                    rep.chosen, rep.printed_max_rel
                ),
            ));
            orientations.push(rep);
        }
        Err(e) => out.push(Outcome::error("3b", e)),
    }

    let v = scenario::<f64>("V").unwrap();
    let v_points = points.min(60);
    let v_samples: Vec<(Symbols<f64>, f64)> = (0..v_points)
        .map(|_| {
            let (s, u) = nonsingular_truth(&v, &mut rng, 0.05);
            (Symbols::from_point(&s, &u), abs_det(&v, &s, &u))
        })
        .collect();
    match resolve_orientation(ClosedForm::VTotal, &v_samples) {
        Ok(rep) => {
            let best = rep.printed_max_rel.min(rep.mirrored_max_rel);
            out.push(Outcome::check(
                "3c",
                best <= JACOBIAN_V_REL,
                format!(
                    "|J1 J2 J3| vs 11x11 numeric det: max rel error {best:.3e} at {v_points} points (tol {JACOBIAN_V_REL:e})"
                ),
            ));
            let swapped = v_samples
                .iter()
                .map(|(sym, det)| {
                    let o = rep.chosen;
                    let p = closed_form_jacobian(ClosedForm::J1, sym, o).unwrap()
                        * closed_form_jacobian(ClosedForm::J2, sym, o).unwrap()
                        * closed_form_jacobian(ClosedForm::J3Swapped, sym, o).unwrap();
                    rel_abs_mismatch(p, *det, 1e-300)
                })
                .fold(0.0, f64::max);
            out.push(Outcome::info(
                "3c'",
                format!("|J1 J2 J3'| with the two scales exchanged inside the squared J3 factor: max rel error {swapped:.3e}"),
            ));
            orientations.push(rep);
        }
        Err(e) => out.push(Outcome::error("3c", e)),
    }

    out.extend(zero_loci());
    (out, orientations)
}

/// Zero loci of the scenario-B determinant around a generic base point.
pub fn zero_loci() -> Vec<Outcome> {
    let b = scenario::<f64>("B").unwrap();
    let base = DensityParams::qubit(0.55, 0.45, 0.2, 2.0).unwrap();
    let lam = 1.3;
    let reference = abs_det(&b, &base, &UnknownParams::qubit(Some(lam), None));
    let rel = |rho01: f64, gamma: f64, lambda: f64| {
        let s = DensityParams::qubit(0.55, 0.45, rho01, gamma).unwrap();
        abs_det(&b, &s, &UnknownParams::qubit(Some(lambda), None)) / reference
    };
    let coherence_zero = rel(0.0, 2.0, lam);
    let lambda_zero = rel(0.2, 2.0, 0.0);
    let lambda_pi = rel(0.2, 2.0, PI);
    let lambda_half_pi = rel(0.2, 2.0, FRAC_PI_2);
    let printed_gamma = [rel(0.2, FRAC_PI_4, lam), rel(0.2, 5.0 * FRAC_PI_4, lam)];
    let mirrored_gamma = [rel(0.2, 3.0 * FRAC_PI_4, lam), rel(0.2, 7.0 * FRAC_PI_4, lam)];
    let gamma_ok = printed_gamma.iter().all(|r| *r < LOCUS_REL) || mirrored_gamma.iter().all(|r| *r < LOCUS_REL);
    let ok = coherence_zero < LOCUS_REL && lambda_zero < LOCUS_REL && lambda_pi < LOCUS_REL && gamma_ok;
    vec![
        Outcome::check(
            "3d",
            ok,
            format!(
                "zero loci (|det| / |det at base| < {LOCUS_REL:e}): rho01=0 {coherence_zero:.1e}, lambda_c=0 {lambda_zero:.1e}, \
                 lambda_c=pi {lambda_pi:.1e}, gamma in {{pi/4, 5pi/4}} {:.1e}/{:.1e}, gamma in {{3pi/4, 7pi/4}} {:.1e}/{:.1e}",
                printed_gamma[0], printed_gamma[1], mirrored_gamma[0], mirrored_gamma[1]
            ),
        ),
        Outcome::info(
            "3d'",
            format!(
                "lambda_c = pi/2 is not a zero (ratio {lambda_half_pi:.3}); the numeric zero is at lambda_c = pi. \
                 The gamma zeros follow the phase orientation chosen for J_B"
            ),
        ),
    ]
}

/// 4. Near-zero pattern of the V Jacobian.
pub fn v_structure(seed: u64, points: usize) -> Outcome {
    let v = scenario::<f64>("V").unwrap();
    let mut rng = rng_from(seed);
    let structural = structural_zero_mask(&v);
    let mut mismatches = 0;
    let mut triangular = is_block_lower_triangular(&structural, &V_BLOCKS);
    for _ in 0..points {
        let (s, u) = random_truth(&v, &mut rng, 0.05);
        let rep = match numeric_jacobian(&v, &s, &u) {
            Ok(r) => r,
            Err(e) => return Outcome::error("4", e),
        };
        let mask = near_zero_mask(&rep.matrix, MASK_TOL);
        if mask != structural {
            mismatches += 1;
        }
        triangular &= is_block_lower_triangular(&mask, &V_BLOCKS);
    }
    Outcome::check(
        "4",
        mismatches == 0 && triangular,
        format!(
            "V Jacobian pattern (|entry| < {MASK_TOL:e}): {mismatches}/{points} points differ from the structural mask; \
             block lower-triangular 5/4/2: {triangular}"
        ),
    )
}

/// 5. Gauge invariance of statistics, idempotent fixing, gauge-invariant reconstruction.
pub fn gauge(seed: u64, draws: usize, reconstructions: usize) -> Vec<Outcome> {
    let mut rng = rng_from(seed);
    let mut worst_stat = 0.0_f64;
    let mut worst_fix = 0.0_f64;
    for dim in [2, 3] {
        for _ in 0..draws {
            let (s, g) = random_pair(dim, &mut rng).unwrap();
            let eta: Vec<f64> = (0..dim - 1).map(|_| rng.random_range(0.0..TAU)).collect();
            let (s2, g2) = gauge_transform(&s, &g, &eta).unwrap();
            for label in 0..dim {
                let d = (probability(&s, &g, label).unwrap() - probability(&s2, &g2, label).unwrap()).abs();
                worst_stat = worst_stat.max(d);
            }
            let once = gauge_fix(&s, &g).unwrap();
            let twice = gauge_fix(&once.state, &once.generator).unwrap();
            for (a, b) in once.state.phases.iter().zip(&twice.state.phases) {
                worst_fix = worst_fix.max(phase_distance(*a, *b));
            }
            for ((h1, p1), (h2, p2)) in once.generator.couplings().into_iter().zip(twice.generator.couplings()) {
                worst_fix = worst_fix.max((h1 - h2).abs()).max(phase_distance(p1, p2));
            }
        }
    }
    let mut out = vec![
        Outcome::check(
            "5a",
            worst_stat <= GAUGE_STAT_TOL,
            format!("statistics under gauge transforms: max change {worst_stat:.3e} over {draws} draws per dimension (tol {GAUGE_STAT_TOL:e})"),
        ),
        Outcome::check(
            "5b",
            worst_fix <= GAUGE_STAT_TOL,
            format!("gauge fixing idempotent: max change {worst_fix:.3e} (tol {GAUGE_STAT_TOL:e})"),
        ),
    ];
    if reconstructions > 0 {
        let mut b = scenario::<f64>("B").unwrap();
        b.phase_known = false;
        let opts = SolverOptions::default();
        let mut worst = 0.0_f64;
        let mut failures = 0;
        for _ in 0..reconstructions {
            let (s, u) = nonsingular_truth(&b, &mut rng, 0.05);
            let eta = rng.random_range(0.0..TAU);
            let (s2, _) = gauge_transform(&s, &GeneratorParams::zero(2), &[eta]).unwrap();
            let u2 = u.clone().with_offsets(&[eta]);
            let r1 = reconstruct(&exact_counts(&b, &s, &u), &b, &opts);
            let r2 = reconstruct(&exact_counts(&b, &s2, &u2), &b, &opts);
            match (r1, r2) {
                (Ok(r1), Ok(r2)) => {
                    let x1 = b.read_gamma(&r1.state, &r1.unknowns);
                    let x2 = b.read_gamma(&r2.state, &r2.unknowns);
                    worst = worst.max(gamma_error(&b, &x1, &x2));
                }
                _ => failures += 1,
            }
        }
        out.push(Outcome::check(
            "5c",
            failures == 0 && worst <= GAUGE_RECON_TOL,
            format!(
                "gauge-related truths reconstruct identically (hidden coupling phase, scenario B): max difference {worst:.3e} \
                 over {reconstructions} pairs, {failures} failures (tol {GAUGE_RECON_TOL:e})"
            ),
        ));
    }
    out
}

/// 6. Noiseless round trips for A, B, V and block/joint agreement on V.
pub fn identifiability(seed: u64, instances: usize) -> Vec<Outcome> {
    let opts = SolverOptions::default();
    let mut out = Vec::new();
    for (k, name) in ["A", "B", "V"].into_iter().enumerate() {
        let protocol = scenario::<f64>(name).unwrap();
        let mut rng = rng_from(seed.wrapping_add(k as u64));
        let truths: Vec<_> = (0..instances).map(|_| nonsingular_truth(&protocol, &mut rng, 0.05)).collect();
        let results: Vec<(f64, Option<f64>, bool)> = truths
            .par_iter()
            .map(|(s, u)| {
                let counts = exact_counts(&protocol, s, u);
                let want = protocol.read_gamma(s, u);
                let joint = match reconstruct(&counts, &protocol, &opts) {
                    Ok(r) => r,
                    Err(_) => return (f64::INFINITY, None, false),
                };
                let got = protocol.read_gamma(&joint.state, &joint.unknowns);
                let err = gamma_error(&protocol, &got, &want);
                let block = (name == "V").then(|| match block_solve_v(&counts, &protocol, &opts) {
                    Ok(r) => gamma_error(&protocol, &protocol.read_gamma(&r.state, &r.unknowns), &got),
                    Err(_) => f64::INFINITY,
                });
                (err, block, true)
            })
            .collect();
        let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
        let failed = results.iter().filter(|r| !r.2).count();
        out.push(Outcome::check(
            &format!("6{}", name.to_lowercase()),
            failed == 0 && worst <= ROUND_TRIP_TOL,
            format!(
                "noiseless round trip, scenario {name}: max error {worst:.3e} over {instances} truths, {failed} failures (tol {ROUND_TRIP_TOL:e})"
            ),
        ));
        if name == "V" {
            let worst_block = results.iter().filter_map(|r| r.1).fold(0.0, f64::max);
            out.push(Outcome::check(
                "6v-block",
                worst_block <= BLOCK_AGREEMENT_TOL,
                format!("block solve vs joint solve, scenario V: max difference {worst_block:.3e} (tol {BLOCK_AGREEMENT_TOL:e})"),
            ));
        }
    }
    out
}

/// Grid size used for the oracle-equivalence runs.
pub const ORACLE_GRID: usize = 15;
pub const ORACLE_REFINE: usize = 4;

/// 7. Grid oracle plus one local polish against multi-start reconstruction.
pub fn oracle_equivalence(seed: u64, instances: usize) -> Outcome {
    let b = scenario::<f64>("B").unwrap();
    let mut rng = rng_from(seed);
    let opts = SolverOptions::default();
    let mut worst = 0.0_f64;
    let mut failures = 0;
    for _ in 0..instances {
        let (s, u) = nonsingular_truth(&b, &mut rng, 0.05);
        let counts = exact_counts(&b, &s, &u);
        let oracle = grid_oracle(&counts, &b, ORACLE_GRID, ORACLE_REFINE).and_then(|o| polish_from(&counts, &b, &o.point, &opts));
        match (oracle, reconstruct(&counts, &b, &opts)) {
            (Ok(o), Ok(r)) => worst = worst.max((o.objective - r.residual).abs()),
            _ => failures += 1,
        }
    }
    Outcome::check(
        "7",
        failures == 0 && worst < ORACLE_OBJECTIVE_TOL,
        format!(
            "grid oracle ({ORACLE_GRID} per axis, {ORACLE_REFINE} refinements) + polish vs reconstruct, scenario B: \
             max objective difference {worst:.3e} over {instances} instances, {failures} failures (tol {ORACLE_OBJECTIVE_TOL:e})"
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// 8. Poisson noise: fidelity at high shot counts, error scaling, physicality.
pub fn noise_behavior(seed: u64, trials: usize) -> Vec<Outcome> {
    let b = scenario::<f64>("B").unwrap();
    let mut rng = rng_from(seed);
    let truths: Vec<_> = (0..trials).map(|_| nonsingular_truth(&b, &mut rng, 0.05)).collect();
    let opts = SolverOptions::with_objective(Objective::PoissonMle);
    let run = |shots: u64| -> Vec<(f64, f64)> {
        truths
            .par_iter()
            .enumerate()
            .map(|(i, (s, u))| {
                let noise = NoiseModel::poisson(shots, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
                let counts = simulate_counts(s, u, &b, &noise).unwrap();
                match reconstruct_any(&counts, &b, &opts) {
                    Ok(r) => {
                        let truth = raw_state_matrix(&s.normalized());
                        let est = raw_state_matrix(&r.state.normalized());
                        let f = fidelity(&truth, &est).unwrap_or(0.0);
                        (f.min(1.0), r.min_eigenvalue)
                    }
                    Err(_) => (0.0, f64::NEG_INFINITY),
                }
            })
            .collect()
    };
    let high = run(1_000_000);
    let low = run(10_000);
    let med_high = median(high.iter().map(|r| r.0).collect());
    let err_high = median(high.iter().map(|r| 1.0 - r.0).collect());
    let err_low = median(low.iter().map(|r| 1.0 - r.0).collect());
    let physical = high.iter().filter(|r| r.1 >= PHYSICAL_EIG).count() as f64 / trials.max(1) as f64;
    vec![
        Outcome::check(
            "8a",
            med_high >= NOISE_FIDELITY,
            format!("Poisson S=1e6, scenario B: median fidelity {med_high:.6} over {trials} trials (threshold {NOISE_FIDELITY})"),
        ),
        Outcome::check(
            "8b",
            err_low >= NOISE_RATIO * err_high,
            format!(
                "median infidelity S=1e4 {err_low:.3e} vs S=1e6 {err_high:.3e}: ratio {:.1} (threshold {NOISE_RATIO})",
                err_low / err_high
            ),
        ),
        Outcome::check(
            "8c",
            physical >= PHYSICAL_FRACTION,
            format!(
                "physicality at S=1e6: {:.0}% of raw estimates have min eigenvalue >= {PHYSICAL_EIG} (threshold {:.0}%)",
                100.0 * physical,
                100.0 * PHYSICAL_FRACTION
            ),
        ),
    ]
}

const ALT_ROUND_TRIPS: usize = 10;
/// Residual below which an exact-data fit reproduces every statistic.
pub const EXACT_FIT_RESIDUAL: f64 = 1e-16;

/// 9. The six-setting qubit protocol: nonsingular, or documented singular with the
/// alternative validated instead.
pub fn scenario_c(seed: u64, points: usize) -> Vec<Outcome> {
    let c = scenario::<f64>("C").unwrap();
    let alt = scenario::<f64>("C-alt").unwrap();
    let mut rng = rng_from(seed);
    let lambda_z = c.gamma.iter().position(|g| *g == Param::Lambda(1)).unwrap();
    let mut c_max_column = 0.0_f64;
    let mut alt_worst_cond = 0.0_f64;
    let mut alt_worst_residual = 0.0_f64;
    let mut alt_hits = 0;
    let mut alt_failures = 0;
    let opts = SolverOptions::default();
    for k in 0..points {
        let (s, u) = nonsingular_truth(&scenario::<f64>("B").unwrap(), &mut rng, 0.05);
        let u = UnknownParams::qubit(u.lambda[0], Some(rng.random_range(0.5..2.5)));
        let rep = numeric_jacobian(&c, &s, &u).unwrap();
        for r in 0..rep.matrix.rows() {
            c_max_column = c_max_column.max(rep.matrix[(r, lambda_z)].abs());
        }
        let alt_rep = numeric_jacobian(&alt, &s, &u).unwrap();
        alt_worst_cond = alt_worst_cond.max(alt_rep.condition_number);
        if k < ALT_ROUND_TRIPS {
            match reconstruct(&exact_counts(&alt, &s, &u), &alt, &opts) {
                Ok(r) => {
                    let got = alt.read_gamma(&r.state, &r.unknowns);
                    alt_worst_residual = alt_worst_residual.max(r.residual);
                    if gamma_error(&alt, &got, &alt.read_gamma(&s, &u)) <= ROUND_TRIP_TOL {
                        alt_hits += 1;
                    }
                }
                Err(_) => alt_failures += 1,
            }
        }
    }
    let singular = c_max_column < MASK_TOL;
    let refused = matches!(
        reconstruct(&exact_counts(&c, &DensityParams::qubit(0.55, 0.45, 0.2, 2.0).unwrap(), &UnknownParams::qubit(Some(1.3), Some(0.8))), &c, &opts),
        Err(InvertError::StructuralSingularity { .. })
    );
    let alt_ok = alt_worst_cond.is_finite() && alt_failures == 0 && alt_worst_residual <= EXACT_FIT_RESIDUAL;
    let passed = if singular { refused && alt_ok } else { true };
    vec![Outcome::check(
        "9",
        passed,
        format!(
            "scenario C: lambda_z column max |entry| {c_max_column:.1e} at {points} points ({}), reconstruct refuses: {refused}; \
             C-alt: max condition number {alt_worst_cond:.3e}; {ALT_ROUND_TRIPS} exact-data reconstructions: max residual \
             {alt_worst_residual:.1e} (tol {EXACT_FIT_RESIDUAL:e}), {alt_hits} equal to the truth within {ROUND_TRIP_TOL:e}, {alt_failures} failures",
            if singular { "structurally singular" } else { "nonsingular" }
        ),
    )]
}

/// 10. Spectrum of the V-type generator.
pub fn eigen_structure(seed: u64, draws: usize) -> Outcome {
    let mut rng = rng_from(seed);
    let mut worst = 0.0_f64;
    for _ in 0..draws {
        let g = GeneratorParams::vtype(
            rng.random_range(0.0..6.5),
            rng.random_range(0.0..6.5),
            rng.random_range(0.0..TAU),
            rng.random_range(0.0..TAU),
        )
        .unwrap();
        let half = 0.5 * g.omega();
        let values = assemble_generator(&g).unwrap().eigh().unwrap().values;
        for (v, w) in values.iter().zip([-half, 0.0, half]) {
            worst = worst.max((v - w).abs());
        }
    }
    Outcome::check(
        "10",
        worst <= SPECTRUM_TOL,
        format!("V generator spectrum {{-Omega/2, 0, Omega/2}}: max error {worst:.3e} over {draws} draws (tol {SPECTRUM_TOL:e})"),
    )
}

/// Runs a suite. The CONVENTIONS report is returned alongside the lines.
pub fn run(suite: Suite, seed: u64) -> (Vec<Outcome>, String) {
    let mut out = vec![completeness(seed, 1000)];
    let (c2, conventions) = closed_forms(seed, 1000);
    out.push(c2);
    let (c3, orientations) = jacobian_formulas(seed, 200);
    out.extend(c3);
    out.push(v_structure(seed, 50));
    let full = suite == Suite::Full;
    out.extend(gauge(seed, 200, if full { 10 } else { 2 }));
    if full {
        out.extend(identifiability(seed, 100));
        out.push(oracle_equivalence(seed, 25));
        out.extend(noise_behavior(seed, 50));
    }
    out.extend(scenario_c(seed, 50));
    out.push(eigen_structure(seed, 500));
    (out, conventions_report(&conventions, &orientations))
}

/// Suite verdict: every non-informational line passed.
pub fn all_passed(outcomes: &[Outcome]) -> bool {
    outcomes.iter().all(|o| o.informational || o.passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn outcome_lines() {
        assert!(Outcome::check("1", true, "x".into()).to_string().starts_with("PASS 1 "));
        assert!(Outcome::check("1", false, "x".into()).to_string().starts_with("FAIL 1 "));
        assert!(Outcome::info("3c'", "x".into()).to_string().starts_with("INFO 3c' "));
    }

    #[test]
    fn flipped_coefficient_signs_fail_the_cross_check() {
        let (outcome, reports) = closed_forms(11, 50);
        assert!(outcome.passed);
        for r in &reports {
            assert!(r.disagreements.len() > 1);
            for (c, e) in r.disagreements.iter().filter(|(c, _)| *c != r.chosen) {
                assert!(*e > CLOSED_FORM_TOL, "dim {} candidate {c} would pass ({e:e})", r.dim);
            }
        }
    }

    #[test]
    fn gamma_error_wraps_phases() {
        let b = scenario::<f64>("B").unwrap();
        let e = gamma_error(&b, &[0.5, 0.2, 0.5, 1.0, 0.01], &[0.5, 0.2, 0.5, 1.0, TAU - 0.01]);
        assert!((e - 0.02).abs() < 1e-12);
    }

    #[test]
    fn nonsingular_truth_respects_condition_bound() {
        let b = scenario::<f64>("B").unwrap();
        let mut rng = rng_from(5);
        for _ in 0..20 {
            let (s, u) = nonsingular_truth(&b, &mut rng, 0.05);
            assert!(numeric_jacobian(&b, &s, &u).unwrap().condition_number <= MAX_TRUTH_CONDITION);
        }
    }

    #[test]
    fn eigen_structure_quick() {
        assert!(eigen_structure(1, 20).passed);
    }

    #[test]
    fn completeness_quick() {
        assert!(completeness(1, 20).passed);
    }

    #[test]
    fn suite_verdict_ignores_info() {
        let lines = vec![Outcome::check("1", true, String::new()), Outcome::info("x", String::new())];
        assert!(all_passed(&lines));
    }
}
