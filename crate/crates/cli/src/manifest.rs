use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use srm_core::io::{to_json_pretty, write_atomic};
use srm_core::SrmError;

use crate::CliError;

/// Record of one run, written as `<output>.manifest.json`. Everything except
/// `duration_secs` is a function of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// sha256 of each output file, keyed by path.
    pub output_sha256: BTreeMap<String, String>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &impl Serialize, start: Instant) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            output_sha256: BTreeMap::new(),
            duration_secs: start.elapsed().as_secs_f64(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn inputs<'a>(mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Self {
        self.inputs.extend(paths.into_iter().cloned());
        self
    }

    pub fn outputs(mut self, paths: &[PathBuf]) -> Self {
        for p in paths {
            if let Ok(bytes) = std::fs::read(p) {
                self.output_sha256.insert(p.display().to_string(), hex::encode(Sha256::digest(&bytes)));
            }
        }
        self.outputs.extend_from_slice(paths);
        self
    }

    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn write_next_to(self, output: &Path) -> Result<(), CliError> {
        let text = to_json_pretty(&self).map_err(CliError::from)?;
        write_atomic(&Self::path_for(output), text.as_bytes()).map_err(|e: SrmError| e.into())
    }
}
