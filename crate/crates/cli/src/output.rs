//! Output files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::tasks::{Check, Tolerances};

pub const CSV_MAGIC: &str = "# cqm-csv v1";
pub const MANIFEST_FORMAT: u32 = 1;

/// Round-trip exact, locale independent number formatting.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.17e}")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct TaskEntry {
    pub id: String,
    pub kind: String,
    pub files: Vec<FileEntry>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Constants {
    pub m_over_hbar: f64,
    pub q_over_hbar: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub format_version: u32,
    pub cqm_version: String,
    pub config_sha256: String,
    pub profile: crate::tasks::Profile,
    pub tolerances: Tolerances,
    pub k_factor: f64,
    pub constants: Constants,
    pub tasks: Vec<TaskEntry>,
}

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<OutputDir, CliError> {
        fs::create_dir_all(root).map_err(|source| CliError::Write {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(OutputDir {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Write `bytes` under `name` and return its manifest entry.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<FileEntry, CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|source| CliError::Write { path, source })?;
        Ok(FileEntry {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        })
    }

    pub fn write_csv(&self, name: &str, body: &str) -> Result<FileEntry, CliError> {
        self.write(name, format!("{CSV_MAGIC}\n{body}").as_bytes())
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
        text.push('\n');
        self.write("manifest.json", text.as_bytes()).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.0, -1.5, 1e-300, std::f64::consts::PI, 6.02e23] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(f64::NAN), "nan");
    }

    #[test]
    fn hash_is_lowercase_hex() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
