//! `manifest.json`: what ran, with which settings, on which inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Outcome;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// SHA-256 of every input file, keyed by the path given.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written next to the manifest.
    pub outputs: BTreeMap<String, String>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn digest(path: &Path) -> Outcome<String> {
    let bytes = fs::read(path).map_err(|e| crate::failure::Failure::data(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix: now(),
            finished_unix: 0,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Outcome {
        self.inputs.insert(path.display().to_string(), digest(path)?);
        Ok(())
    }

    /// Digests the named outputs in `dir` and writes the manifest there.
    pub fn finish(mut self, dir: &Path, outputs: &[&str]) -> Outcome {
        for name in outputs {
            self.outputs.insert((*name).into(), digest(&dir.join(name))?);
        }
        self.finished_unix = now();
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}
