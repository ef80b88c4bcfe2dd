//! On-disk run management: atomic JSON checkpoints that reload to
//! bit-identical parameters, trajectory files as one-JSON-object-per-line,
//! content hashes for provenance, and the run manifest that makes a run
//! directory self-describing and reproducible.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::env::Trajectory;
use crate::error::{Error, Result};

/// Serialize `value` as pretty JSON and move it into place atomically:
/// the bytes land in a sibling temp file first, then a rename installs them,
/// so readers never observe a half-written checkpoint.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    write_atomic(path, json.as_bytes())
}

/// Load a JSON value written by `save_json`.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| {
        Error::MissingData(format!("cannot read {}: {e}", path.display()))
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Write trajectories as one JSON object per line.
pub fn save_trajectories(trajs: &[Trajectory], path: &Path) -> Result<()> {
    let mut out = String::new();
    for t in trajs {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Read a one-object-per-line trajectory file.
pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let f = fs::File::open(path).map_err(|e| {
        Error::MissingData(format!("cannot read {}: {e}", path.display()))
    })?;
    let mut trajs = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        trajs.push(serde_json::from_str(&line)?);
    }
    Ok(trajs)
}

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of a file.
pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Self-description of a run directory: the exact configuration, content
/// hashes of every input, paths of every artifact written, and when the run
/// started and finished. Written atomically at run start and finalized at
/// the end; re-running with the recorded config and seed reproduces the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub run_id: String,
    pub config: RunConfig,
    /// Input name → SHA-256 content hash.
    pub input_hashes: BTreeMap<String, String>,
    /// Artifact name → path relative to the run directory.
    pub checkpoints: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    /// Fresh manifest; the run id is derived from the configuration content,
    /// so identical configs name identical runs.
    pub fn new(config: &RunConfig) -> Result<Self> {
        let hash = sha256_hex(config.to_json()?.as_bytes());
        Ok(RunManifest {
            run_id: format!("run-{}", &hash[..12]),
            config: config.clone(),
            input_hashes: BTreeMap::new(),
            checkpoints: BTreeMap::new(),
            started_unix: unix_now(),
            finished_unix: None,
        })
    }

    /// Record an input file's content hash under `name`.
    pub fn record_input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.input_hashes.insert(name.to_string(), file_sha256(path)?);
        Ok(())
    }

    /// Record an artifact path (relative to the run directory) under `name`.
    pub fn record_checkpoint(&mut self, name: &str, relative: &str) {
        self.checkpoints.insert(name.to_string(), relative.to_string());
    }

    /// Stamp the end of the run.
    pub fn finalize(&mut self) {
        self.finished_unix = Some(unix_now());
    }

    /// Atomically (re)write `manifest.json` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        save_json(self, &path)?;
        Ok(path)
    }

    /// Load the manifest of a run directory.
    pub fn read(dir: &Path) -> Result<Self> {
        load_json(&dir.join(MANIFEST_FILE))
    }
}
