use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliResult;

pub const MANIFEST_NAME: &str = "run_manifest.json";

/// Record of one invocation, written into the output directory before the
/// work starts. Holds no timestamps so identical runs produce identical
/// manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration, every default materialized.
    pub config: Value,
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    /// Other input files by role.
    pub inputs: Vec<(String, PathBuf)>,
    pub artifacts: Vec<PathBuf>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            command: command.into(),
            config,
            seed: None,
            dataset: None,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn write(&self, out: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        hamloc::io::write_atomic(&out.join(MANIFEST_NAME), text.as_bytes())?;
        Ok(())
    }
}
