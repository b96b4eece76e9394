use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use distillmt_core::model::write_atomic;
use serde::{Deserialize, Serialize};

use crate::config::ConfigMap;
use crate::CliError;

/// Record of one command run, written next to its artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved config, when the command takes one.
    pub config: Option<ConfigMap>,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Command-specific flags such as the fine-tuning direction.
    pub options: BTreeMap<String, String>,
    pub toolkit_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: None,
            seed: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            options: BTreeMap::new(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            finished_at: 0.0,
        }
    }

    /// `<artifact>.manifest.json`
    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut p = artifact.as_os_str().to_owned();
        p.push(".manifest.json");
        PathBuf::from(p)
    }

    pub fn finish_and_write(mut self, artifact: &Path) -> Result<(), CliError> {
        self.finished_at = now();
        let json = serde_json::to_vec_pretty(&self).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_atomic(&Self::path_for(artifact), &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("manifest {}: {e}", path.display())))
    }
}
