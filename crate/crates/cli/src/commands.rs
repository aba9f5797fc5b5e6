use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use sct_core::criteria::{self, Suite};
use sct_core::forward::simulate_counts;
use sct_core::identify::{near_zero_mask, numeric_jacobian, random_truth, rng_from, scan_csv, singularity_scan, Axis};
use sct_core::invert::{reconstruct, InvertError, Objective, SolverOptions};
use sct_core::model::DensityParams;
use sct_core::protocol::{scenario, Param, Protocol, UnknownParams};

use crate::error::CliError;
use crate::schema::*;

/// Near-zero threshold of `jacobian --pattern`.
pub const PATTERN_TOL: f64 = 1e-10;

fn dims_agree(what: &str, expected: usize, got: usize) -> Result<(), CliError> {
    if expected == got {
        Ok(())
    } else {
        Err(CliError::Dimension(format!("{what} has dim {got}, expected {expected}")))
    }
}

fn check_point(file: &Path, protocol: &Protocol<f64>, state: &DensityParams<f64>, unknowns: &UnknownParams<f64>, prefix: &str) -> Result<(), CliError> {
    dims_agree(&format!("{prefix}state"), protocol.dim, state.dim)?;
    dims_agree(&format!("{prefix}unknowns"), protocol.dim, unknowns.dim)?;
    state.validate().map_err(|e| CliError::invalid(file, &format!("{prefix}state"), e))
}

pub fn simulate(config: &Path, out: &Path, seed: Option<u64>, stdout: &mut impl Write) -> Result<(), CliError> {
    let exp: ExperimentFile = read_json(config)?;
    check_version(config, exp.schema_version)?;
    let protocol = match (&exp.scenario, &exp.protocol) {
        (Some(name), None) => scenario(name).map_err(|e| CliError::invalid(config, "scenario", e))?,
        (None, Some(p)) => p.clone(),
        _ => return Err(CliError::invalid(config, "scenario", "give exactly one of `scenario` and `protocol`")),
    };
    dims_agree("protocol", exp.dim, protocol.dim)?;
    check_point(config, &protocol, &exp.truth.state, &exp.truth.unknowns, "truth.")?;
    let noise = exp.noise.model(seed.unwrap_or(exp.seed));
    noise.validate().map_err(|e| CliError::invalid(config, "noise", e))?;
    let records = simulate_counts(&exp.truth.state, &exp.truth.unknowns, &protocol, &noise)?;
    write_json(out, &CountsFile { schema_version: SCHEMA_VERSION, fingerprint: fingerprint(&protocol), records: records.clone() })?;
    let _ = writeln!(stdout, "setting_index\tvalue\tnoise_kind");
    for r in &records {
        let _ = writeln!(stdout, "{}\t{}\t{}", r.setting_index, num(r.value), r.noise_kind.name());
    }
    Ok(())
}

fn read_counts(path: &Path) -> Result<CountsFile, CliError> {
    let counts: CountsFile = read_json(path)?;
    check_version(path, counts.schema_version)?;
    for (k, pair) in counts.records.windows(2).enumerate() {
        if pair[1].setting_index <= pair[0].setting_index {
            return Err(CliError::invalid(path, &format!("records[{}].setting_index", k + 1), "setting indices must strictly increase"));
        }
    }
    Ok(counts)
}

pub fn reconstruct_cmd(counts: &Path, protocol: &str, objective: Objective, out: &Path, seed: Option<u64>, stdout: &mut impl Write) -> Result<(), CliError> {
    let counts_file = read_counts(counts)?;
    let protocol = load_protocol(protocol)?;
    let expected = fingerprint(&protocol);
    if counts_file.fingerprint != expected {
        return Err(CliError::Fingerprint { found: counts_file.fingerprint, expected });
    }
    let mut opts = SolverOptions::with_objective(objective);
    opts.seed = seed.unwrap_or(0);
    let (result, converged) = match reconstruct(&counts_file.records, &protocol, &opts) {
        Ok(r) => (r, true),
        Err(InvertError::NoConvergence(r)) => (*r, false),
        Err(InvertError::BadCounts(m)) => return Err(CliError::invalid(counts, "records", m)),
        Err(e) => return Err(e.into()),
    };
    let physical = result.min_eigenvalue >= -PHYSICAL_TOL;
    write_json(out, &ResultFile { schema_version: SCHEMA_VERSION, fingerprint: expected, physical, result: result.clone() })?;
    for (name, v) in result.gamma_names.iter().zip(&result.gamma_values) {
        let _ = writeln!(stdout, "{name}\t{}", num(*v));
    }
    let _ = writeln!(stdout, "residual\t{}", num(result.residual));
    let _ = writeln!(stdout, "abs_det\t{}", opt(result.jacobian_abs_det));
    let _ = writeln!(stdout, "condition_number\t{}", num(result.condition_number));
    let _ = writeln!(stdout, "min_eigenvalue\t{}", num(result.min_eigenvalue));
    let _ = writeln!(stdout, "physical\t{physical}");
    let _ = writeln!(stdout, "converged\t{converged}");
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    if converged {
        Ok(())
    } else {
        Err(CliError::NoConvergence(format!("result written to {} and flagged", out.display())))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

/// Shortest exact rendering, in exponent form outside `[1e-4, 1e15)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// The point in `path`, or a seeded generic point of the protocol.
fn load_point(protocol: &Protocol<f64>, path: Option<&Path>, seed: u64) -> Result<(DensityParams<f64>, UnknownParams<f64>), CliError> {
    match path {
        Some(path) => {
            let p: PointFile = read_json(path)?;
            check_version(path, p.schema_version)?;
            check_point(path, protocol, &p.state, &p.unknowns, "")?;
            Ok((p.state, p.unknowns))
        }
        None => Ok(random_truth(protocol, &mut rng_from(seed), 0.1)),
    }
}

pub fn jacobian(protocol: &str, point: Option<&Path>, pattern: bool, seed: u64, stdout: &mut impl Write) -> Result<(), CliError> {
    let protocol = load_protocol(protocol)?;
    let (state, unknowns) = load_point(&protocol, point, seed)?;
    let rep = numeric_jacobian(&protocol, &state, &unknowns)?;
    let _ = writeln!(stdout, "protocol\t{}", protocol.name);
    let _ = writeln!(stdout, "columns\t{}", rep.columns.join(","));
    let _ = writeln!(stdout, "abs_det\t{}", opt(rep.abs_det()));
    let _ = writeln!(stdout, "smallest_singular_value\t{}", num(rep.smallest_singular_value));
    let _ = writeln!(stdout, "condition_number\t{}", num(rep.condition_number));
    if pattern {
        // '.' marks |entry| < PATTERN_TOL
        for (k, row) in near_zero_mask(&rep.matrix, PATTERN_TOL).iter().enumerate() {
            let line: String = row.iter().map(|&zero| if zero { '.' } else { 'X' }).collect();
            let _ = writeln!(stdout, "pattern\t{k}\t{line}");
        }
    }
    Ok(())
}

/// `NAME` or `NAME:LO:HI`. Phases and scales default to `[0, 2pi]`, magnitudes to `[0, 1]`.
pub fn parse_axis(protocol: &Protocol<f64>, spec: &str) -> Result<Axis, CliError> {
    let bad = |m: String| CliError::Parse { file: "command line".into(), field: "--axis".into(), message: m };
    let parts: Vec<&str> = spec.split(':').collect();
    let names = protocol.gamma_names();
    let index = names
        .iter()
        .position(|n| n == parts[0])
        .ok_or_else(|| bad(format!("'{}' is not an unknown of {} ({})", parts[0], protocol.name, names.join(", "))))?;
    let (lo, hi) = match parts.len() {
        1 => match protocol.gamma[index] {
            Param::Population(_) | Param::Coherence(..) => (0.0, 1.0),
            _ => (0.0, TAU),
        },
        3 => {
            let parse = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("'{s}': {e}")));
            (parse(parts[1])?, parse(parts[2])?)
        }
        _ => return Err(bad(format!("'{spec}': expected NAME or NAME:LO:HI"))),
    };
    if !(hi > lo) {
        return Err(bad(format!("'{spec}': empty range")));
    }
    Ok(Axis { index, lo, hi })
}

pub fn sweep(protocol: &str, axes: &[String], grid: usize, point: Option<&Path>, out: &Path, seed: u64) -> Result<(), CliError> {
    let protocol = load_protocol(protocol)?;
    if grid < 2 {
        return Err(CliError::Parse { file: "command line".into(), field: "--grid".into(), message: format!("{grid} < 2") });
    }
    let axes = axes.iter().map(|a| parse_axis(&protocol, a)).collect::<Result<Vec<_>, _>>()?;
    let (state, unknowns) = load_point(&protocol, point, seed)?;
    let rows = singularity_scan(&protocol, &state, &unknowns, &axes, grid)?;
    let names: Vec<String> = axes.iter().map(|a| protocol.gamma_names()[a.index].clone()).collect();
    std::fs::write(out, scan_csv(&names, &rows)).map_err(|e| CliError::io(out, e))
}

/// Returns whether every criterion passed.
pub fn validate(suite: Suite, seed: u64, stdout: &mut impl Write) -> bool {
    let (outcomes, conventions) = criteria::run(suite, seed);
    let _ = write!(stdout, "{conventions}");
    for o in &outcomes {
        let _ = writeln!(stdout, "{o}");
    }
    criteria::all_passed(&outcomes)
}
