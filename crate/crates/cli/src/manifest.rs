//! Run manifests: what a command read, how it was configured, and the
//! SHA-256 of everything it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: Vec<String>,
    /// Command-specific settings after flags and config are merged.
    pub parameters: BTreeMap<String, String>,
    pub config: PipelineConfig,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

impl RunManifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub fn sha256_file(path: &Path) -> CliResult<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let hex = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((bytes.len() as u64, hex))
}

/// Collects the files and settings of one command run.
#[derive(Debug, Default)]
pub struct Recorder {
    parameters: BTreeMap<String, String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.insert(key.to_string(), value.to_string());
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn inputs(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.inputs.extend(paths);
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn outputs(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.outputs.extend(paths);
    }

    pub fn output_paths(&self) -> &[PathBuf] {
        &self.outputs
    }

    fn records(paths: &[PathBuf]) -> CliResult<Vec<FileRecord>> {
        let mut sorted: Vec<&PathBuf> = paths.iter().collect();
        sorted.sort();
        sorted.dedup();
        sorted
            .into_iter()
            .filter(|p| p.is_file())
            .map(|p| {
                let (bytes, sha256) = sha256_file(p)?;
                Ok(FileRecord {
                    path: p.to_string_lossy().into_owned(),
                    bytes,
                    sha256,
                })
            })
            .collect()
    }

    /// Hashes every recorded file and writes the manifest to `path`.
    pub fn finish(
        self,
        command: &str,
        args: &[String],
        config: &PipelineConfig,
        path: &Path,
    ) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: args.to_vec(),
            parameters: self.parameters,
            config: config.clone(),
            inputs: Self::records(&self.inputs)?,
            outputs: Self::records(&self.outputs)?,
        };
        let text =
            toml::to_string(&manifest).map_err(|e| CliError::invalid("manifest", e.to_string()))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, text).map_err(|e| CliError::io(path, e))?;
        Ok(manifest)
    }
}
