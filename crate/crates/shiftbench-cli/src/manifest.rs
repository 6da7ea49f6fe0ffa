//! Run manifests: enough to replay any invocation byte-for-byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::{io, CliError};

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub input_digests: BTreeMap<String, String>,
    pub library_version: String,
    /// Seconds since the Unix epoch; the only field allowed to differ
    /// between a run and its replay.
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().skip(1).collect(),
            config,
            seeds: BTreeMap::new(),
            input_digests: BTreeMap::new(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(mut self, path: &Path) -> Result<Self, CliError> {
        self.input_digests
            .insert(path.display().to_string(), io::file_digest(path)?);
        Ok(self)
    }

    pub fn input_opt(self, path: Option<&PathBuf>) -> Result<Self, CliError> {
        match path {
            Some(p) => self.input(p),
            None => Ok(self),
        }
    }

    /// Write `<command>_manifest.json` into the output directory.
    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| CliError::input(format!("{}: {e}", out_dir.display())))?;
        let path = out_dir.join(format!("{}_manifest.json", self.command));
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        io::write_file(&path, &json)
    }
}
