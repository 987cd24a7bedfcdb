use std::path::{Path, PathBuf};

use sentifeed::genctrl::TrainReport;
use sentifeed::simeval::MetricReport;
use sentifeed::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// What one command ran on and produced, enough to rerun it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub config: RunConfig,
    pub inputs: Vec<InputHash>,
    /// Hash over the sorted `(hash, path)` lines of `inputs`.
    pub input_hash: String,
    pub metrics: Option<MetricReport>,
    pub train: Option<TrainReport>,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<PathBuf>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of `blob {len}\0` followed by the content, as git computes object ids.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

pub fn hash_file(path: &Path) -> Result<InputHash> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(InputHash { path: path.to_path_buf(), sha256: blob_hash(&bytes) })
}

pub fn combined_hash(inputs: &[InputHash]) -> String {
    let mut lines: Vec<String> = inputs.iter().map(|i| format!("{} {}\n", i.sha256, i.path.display())).collect();
    lines.sort();
    hex(&Sha256::digest(lines.concat().as_bytes()))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl ExperimentRecord {
    pub fn start(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            inputs: Vec::new(),
            input_hash: String::new(),
            metrics: None,
            train: None,
            started_at: now(),
            finished_at: String::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        if !self.inputs.iter().any(|i| i.path == path) {
            self.inputs.push(hash_file(path)?);
        }
        Ok(())
    }

    /// Stamps the finish time and writes `record_{command}.json` to `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.input_hash = combined_hash(&self.inputs);
        self.finished_at = now();
        let path = dir.join(format!("record_{}.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&self)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
