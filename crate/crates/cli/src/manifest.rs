use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Record of one command run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub version: String,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a file, or of a directory as the hash of its sorted
/// `name:hash` lines.
pub fn sha256_path(path: &Path) -> CliResult<String> {
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        names.sort();
        let mut listing = String::new();
        for p in names {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            listing += &format!("{name}:{}\n", sha256_path(&p)?);
        }
        return Ok(sha256_bytes(listing.as_bytes()));
    }
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_bytes(&bytes))
}

pub struct Recorder {
    command: String,
    seed: u64,
    start: Instant,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Recorder {
    pub fn new(command: &str, seed: u64) -> Self {
        Self { command: command.into(), seed, start: Instant::now(), inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.insert(path.display().to_string(), sha256_path(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.insert(path.display().to_string(), sha256_path(path)?);
        Ok(())
    }

    /// Writes `<out_dir>/<command>.manifest.json`.
    pub fn finish(self, out_dir: &Path, config: serde_json::Value) -> CliResult<RunManifest> {
        let m = RunManifest {
            command: self.command.clone(),
            config,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_s: self.start.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").into(),
        };
        fs::write(out_dir.join(format!("{}.manifest.json", self.command)), serde_json::to_string_pretty(&m)?)?;
        Ok(m)
    }
}
