//! Reproducibility record written next to every command's outputs.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: RunConfig,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: config.clone(),
        }
    }

    /// Text form. Contains no timestamps or host details, so identical runs
    /// produce identical manifests.
    pub fn render(&self) -> Result<String> {
        let mut s = String::new();
        s.push_str(&format!("command = {}\n", self.command));
        s.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
        s.push_str(&format!("seed = {}\n", self.config.seed));
        s.push_str(&format!("config_sha256 = {}\n", self.config.hash()));
        for p in &self.inputs {
            s.push_str(&format!("input = {} sha256:{}\n", p.display(), sha256_file(p)?));
        }
        for p in &self.outputs {
            s.push_str(&format!("output = {}\n", p.display()));
        }
        s.push_str("\n[config]\n");
        s.push_str(&self.config.render());
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }
}
