//! On-disk formats. Every file is one JSON object carrying `schema_version`.

use std::hash::Hasher;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sct_core::forward::{CountRecord, NoiseKind, NoiseModel};
use sct_core::invert::ReconstructionResult;
use sct_core::model::DensityParams;
use sct_core::protocol::{scenario, Protocol, UnknownParams, SCENARIO_NAMES};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truth {
    pub state: DensityParams<f64>,
    pub unknowns: UnknownParams<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub shots: u64,
    #[serde(default)]
    pub sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { kind: NoiseKind::Exact, shots: 0, sigma: 0.0 }
    }
}

impl NoiseSpec {
    pub fn model(&self, seed: u64) -> NoiseModel {
        NoiseModel { kind: self.kind, shots: self.shots, sigma: self.sigma, seed }
    }
}

/// Simulation input: a protocol (shipped name or inline), the truth and the noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub schema_version: u32,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol<f64>>,
    pub truth: Truth,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsFile {
    pub schema_version: u32,
    /// [`fingerprint`] of the protocol the records were taken with.
    pub fingerprint: String,
    pub records: Vec<CountRecord<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolFile {
    pub schema_version: u32,
    pub protocol: Protocol<f64>,
}

/// Evaluation point for `jacobian` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointFile {
    pub schema_version: u32,
    pub state: DensityParams<f64>,
    pub unknowns: UnknownParams<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub schema_version: u32,
    pub fingerprint: String,
    /// Raw estimate had no eigenvalue below `-PHYSICAL_TOL` before clipping.
    pub physical: bool,
    pub result: ReconstructionResult<f64>,
}

pub const PHYSICAL_TOL: f64 = 1e-10;

/// FNV-1a (64 bit) of the protocol's canonical JSON, as 16 hex digits.
pub fn fingerprint(protocol: &Protocol<f64>) -> String {
    let canonical = serde_json::to_string(protocol).expect("protocols serialize");
    let mut h = fnv::FnvHasher::default();
    h.write(canonical.as_bytes());
    format!("{:016x}", h.finish())
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        CliError::Parse { file: path.display().to_string(), field, message: e.into_inner().to_string() }
    })?;
    de.end().map_err(|e| CliError::Parse { file: path.display().to_string(), field: ".".into(), message: e.to_string() })?;
    Ok(value)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("file types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn check_version(file: &Path, found: u32) -> Result<(), CliError> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(CliError::Parse {
            file: file.display().to_string(),
            field: "schema_version".into(),
            message: format!("expected {SCHEMA_VERSION}, got {found}"),
        })
    }
}

/// A shipped scenario name, or the path of a protocol file.
pub fn load_protocol(spec: &str) -> Result<Protocol<f64>, CliError> {
    if SCENARIO_NAMES.contains(&spec) {
        return scenario(spec).map_err(|e| CliError::Failed(e.to_string()));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::Parse {
            file: spec.into(),
            field: "--protocol".into(),
            message: format!("neither a scenario ({}) nor an existing file", SCENARIO_NAMES.join(", ")),
        });
    }
    let file: ProtocolFile = read_json(path)?;
    check_version(path, file.schema_version)?;
    Ok(file.protocol)
}
