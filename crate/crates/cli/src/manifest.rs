//! Experiment manifest: what was run, on which exact data, and where the
//! outputs went.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use transduce::dataset::{Split, SIDECAR};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Trained,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub run: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub error: Option<String>,
    pub results: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub id: String,
    pub tool_version: String,
    pub config: ExperimentConfig,
    /// SHA-256 of each dataset file, keyed by file name.
    pub dataset_digests: BTreeMap<String, String>,
    pub runs: Vec<RunEntry>,
    /// Index of the run with the best weighted test/gen score, once evaluated.
    pub best_run: Option<usize>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn dataset_files() -> Vec<String> {
    Split::ALL
        .iter()
        .map(|s| s.file_name())
        .chain(std::iter::once(SIDECAR.to_string()))
        .collect()
}

pub fn digest_dataset(dir: &Path) -> CliResult<BTreeMap<String, String>> {
    dataset_files()
        .into_iter()
        .map(|f| Ok((f.clone(), sha256_file(&dir.join(&f))?)))
        .collect()
}

impl ExperimentManifest {
    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("invalid manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Recomputes the dataset digests and compares them with the recorded ones.
    pub fn verify_digests(&self) -> CliResult<()> {
        let now = digest_dataset(&self.config.data_dir)?;
        for (file, recorded) in &self.dataset_digests {
            match now.get(file) {
                Some(d) if d == recorded => {}
                _ => return Err(CliError::Data(format!("dataset file {file} changed since training"))),
            }
        }
        Ok(())
    }
}
