//! Output directory, run report and timing records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use sbrl_core::certify::GainReport;
use sbrl_core::Certificate;

use crate::error::CliError;

/// Files written under one output directory, in write order.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self, CliError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)
            .map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root,
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Io(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write(name, text)
    }

    /// Files written so far, excluding the report itself.
    pub fn manifest(&self) -> Vec<String> {
        self.files.clone()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LabeledGain {
    pub ensemble: String,
    #[serde(flatten)]
    pub report: GainReport,
}

/// Everything a run decided. Timings live in a separate file so that this
/// document is byte-reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub toolkit: &'static str,
    pub version: &'static str,
    pub command: String,
    /// SHA-256 of `resolved_config.json`.
    pub config_hash: String,
    pub exit_code: i32,
    pub summary: BTreeMap<String, f64>,
    pub certificates: BTreeMap<String, Certificate>,
    pub gain_reports: Vec<LabeledGain>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_brl: Option<serde_json::Value>,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, config_hash: String) -> Self {
        Self {
            toolkit: "sbrl",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash,
            exit_code: 0,
            summary: BTreeMap::new(),
            certificates: BTreeMap::new(),
            gain_reports: Vec::new(),
            linear_brl: None,
            files: Vec::new(),
            notes: Vec::new(),
        }
    }
}

/// Wall-clock seconds per phase.
#[derive(Default)]
pub struct Timings {
    phases: Vec<(String, f64)>,
}

impl Timings {
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases
            .push((phase.to_string(), start.elapsed().as_secs_f64()));
        log::info!("{phase}: {:.3} s", self.phases.last().map_or(0.0, |p| p.1));
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .phases
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!(v)))
            .collect();
        serde_json::Value::Object(map)
    }
}

/// Combined exit code: any falsification wins, then any inconclusive.
pub fn combine_exit(codes: &[i32]) -> i32 {
    if codes.contains(&1) {
        1
    } else if codes.iter().any(|c| *c != 0) {
        2
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_combination() {
        assert_eq!(combine_exit(&[]), 0);
        assert_eq!(combine_exit(&[0, 0]), 0);
        assert_eq!(combine_exit(&[0, 2]), 2);
        assert_eq!(combine_exit(&[2, 1, 0]), 1);
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
