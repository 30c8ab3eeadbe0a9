//! Command pipeline behind the `mia-audit` binary: train, shadows,
//! sigma-search, audit and report, all driven by one JSON [`RunConfig`].

pub mod commands;
pub mod config;
pub mod plot;
pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attack::AttackError;
use crate::corpus::CorpusError;
use crate::lm::{CheckpointError, LmError};
use crate::metrics::MetricsError;

pub use commands::{
    cmd_audit, cmd_shadows, cmd_sigma_search, cmd_train, evaluation_pools, Pools, ShadowsOutput,
    SigmaSearchFile, TrainOutput, PEAK_NOISE,
};
pub use config::{RunConfig, Seeds, SigmaSetting};
pub use report::{cmd_report, AuditReport, StrategyReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(format!("corpus: {e}"))
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::Diverged { .. } | LmError::NonFinite => CliError::Numeric(format!("lm: {e}")),
            e => CliError::Data(format!("lm: {e}")),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(format!("checkpoint: {e}"))
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NonFiniteScore(_) => CliError::Numeric(format!("metrics: {e}")),
            e => CliError::Data(format!("metrics: {e}")),
        }
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::Lm(e) => e.into(),
            AttackError::Metrics(e) => e.into(),
            e => CliError::Data(format!("attack: {e}")),
        }
    }
}

pub(crate) fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| io_error(path, e))?))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Hashes of every artifact a run has produced, keyed by path relative to
/// the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config_hash: String,
    pub corpus_hash: String,
    pub seeds: Seeds,
    pub files: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(out_dir: &Path) -> Result<Self, CliError> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("{}: {e} (run `train` first)", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, out_dir: &Path) -> Result<(), CliError> {
        write_json(&out_dir.join(MANIFEST_FILE), self)
    }

    /// Writes `bytes` to `name` under `out_dir` and records its hash.
    pub fn put(&mut self, out_dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&out_dir.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Reads `name`, failing unless it matches the recorded hash.
    pub fn read_verified(&self, out_dir: &Path, name: &str) -> Result<Vec<u8>, CliError> {
        let want = self
            .files
            .get(name)
            .ok_or_else(|| CliError::Data(format!("{name} is not recorded in the run manifest")))?;
        let path = out_dir.join(name);
        let bytes = fs::read(&path).map_err(|e| io_error(&path, e))?;
        if &sha256_hex(&bytes) != want {
            return Err(CliError::Data(format!(
                "{} does not match its manifest hash",
                path.display()
            )));
        }
        Ok(bytes)
    }

    pub fn is_current(&self, out_dir: &Path, name: &str) -> bool {
        self.read_verified(out_dir, name).is_ok()
    }
}
