//! Run manifests: a JSON record of inputs, seeds and outputs, written
//! before any long computation so interrupted runs are still traceable.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub artifacts: Vec<PathBuf>,
    pub toolkit_version: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_paths: Vec::new(),
            seeds: Vec::new(),
            started_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            artifacts: Vec::new(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn config(mut self, path: Option<&Path>) -> Self {
        self.config_paths.extend(path.map(Path::to_path_buf));
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seeds.push(seed);
        self
    }

    pub fn artifact(mut self, path: impl Into<PathBuf>) -> Self {
        self.artifacts.push(path.into());
        self
    }

    /// Writes the manifest to `path`; the manifest lists itself.
    pub fn write(mut self, path: &Path) -> Result<()> {
        self.artifacts.push(path.to_path_buf());
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// `<out>.<suffix>`, next to an output file.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}
