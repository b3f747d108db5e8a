//! Content-addressed run directories and run records.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::UsageError;

/// First 16 hex digits of the SHA-256 of the key's JSON form.
pub fn config_hash(key: &impl Serialize) -> anyhow::Result<String> {
    let bytes = serde_json::to_vec(key)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub tool_version: String,
    pub config: RunConfig,
    /// Command arguments not in the config, e.g. the genotype.
    pub arguments: serde_json::Value,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub metrics: serde_json::Value,
    pub artifacts: Vec<PathBuf>,
}

pub struct RunDir {
    pub path: PathBuf,
    pub command: String,
    pub started: f64,
}

pub enum Prepared {
    /// A finished run with this key already exists.
    Done(RunRecord),
    Fresh(RunDir),
    /// Partial outputs exist and `resume` was requested.
    Resume(RunDir),
}

/// Resolves `<output_dir>/<command>-<hash>`. A completed run is returned
/// as is unless `force`; partial outputs need `resume` or `force`.
pub fn prepare(
    output_dir: &Path,
    command: &str,
    key: &impl Serialize,
    force: bool,
    resume: bool,
) -> anyhow::Result<Prepared> {
    let path = output_dir.join(format!("{command}-{}", config_hash(key)?));
    let dir = RunDir {
        path: path.clone(),
        command: command.to_string(),
        started: now_unix(),
    };
    if force && path.exists() {
        std::fs::remove_dir_all(&path)?;
    }
    let record = path.join("run.json");
    if record.exists() {
        let r: RunRecord = serde_json::from_str(&std::fs::read_to_string(&record)?)?;
        return Ok(Prepared::Done(r));
    }
    let partial = path.exists() && std::fs::read_dir(&path)?.next().is_some();
    std::fs::create_dir_all(&path)?;
    match (partial, resume) {
        (false, _) => Ok(Prepared::Fresh(dir)),
        (true, true) => Ok(Prepared::Resume(dir)),
        (true, false) => Err(UsageError(format!(
            "{} holds an unfinished run; pass --resume to continue or --force to restart",
            path.display()
        ))
        .into()),
    }
}

impl RunDir {
    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn finish(
        &self,
        config: &RunConfig,
        arguments: serde_json::Value,
        metrics: serde_json::Value,
        artifacts: Vec<PathBuf>,
    ) -> anyhow::Result<RunRecord> {
        let record = RunRecord {
            command: self.command.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            arguments,
            started_unix: self.started,
            finished_unix: now_unix(),
            metrics,
            artifacts,
        };
        std::fs::write(self.file("run.json"), serde_json::to_string_pretty(&record)?)?;
        Ok(record)
    }
}
