use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use simusr::Error;

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written next to the outputs of every command.
#[derive(Debug, Serialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_ms: f64,
}

impl ExperimentManifest {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_ms: 0.0,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Error> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        self.inputs.push(InputRecord {
            path: path.to_owned(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json + "\n").map_err(|e| io_err(path, e))
    }
}

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::NotFound(path.to_owned())
    } else {
        Error::Io {
            path: path.to_owned(),
            source: e,
        }
    }
}
