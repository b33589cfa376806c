use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<InputDigest>,
}

#[derive(Serialize)]
struct Report<'a, T> {
    provenance: &'a Provenance,
    result: &'a T,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Fail before any work if a referenced file is missing.
pub fn check_inputs(paths: &[&Path]) -> Result<(), CliError> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "input files not found: {}",
            missing.join(", ")
        )))
    }
}

impl Provenance {
    pub fn new(command: &'static str, seed: u64, config: RunConfig, inputs: &[&Path]) -> Result<Self, CliError> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.to_path_buf(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_, CliError>>()?;
        Ok(Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            inputs,
        })
    }
}

pub struct Writer {
    dir: PathBuf,
    provenance: Provenance,
}

impl Writer {
    pub fn new(dir: &Path, provenance: Provenance) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            provenance,
        })
    }

    fn write(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text)
            .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
    }

    pub fn json<T: Serialize>(&self, name: &str, result: &T) -> Result<(), CliError> {
        let report = Report {
            provenance: &self.provenance,
            result,
        };
        let mut text = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Validation(format!("cannot serialize report: {e}")))?;
        text.push('\n');
        self.write(name, &text)
    }

    /// CSV body preceded by a `#` line carrying the provenance.
    pub fn csv(&self, name: &str, body: &str) -> Result<(), CliError> {
        let header = serde_json::to_string(&self.provenance).expect("provenance serializes");
        self.write(name, &format!("# provenance: {header}\n{body}"))
    }

    /// Plain data file (harmonized tables) without a comment header.
    pub fn data(&self, name: &str, body: &str) -> Result<(), CliError> {
        self.write(name, body)
    }
}
