use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub summary: BTreeMap<String, String>,
}

/// Config snapshot with every default resolved, plus what the command wrote.
/// The file is itself a valid config, so `--config manifest.toml` reruns it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub config: RunConfig,
    pub manifest: ManifestHeader,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest {
            config: config.clone(),
            manifest: ManifestHeader {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: config.seed,
                outputs: Vec::new(),
                summary: BTreeMap::new(),
            },
        }
    }

    pub fn output(&mut self, name: &str) {
        self.manifest.outputs.push(name.into());
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.manifest.summary.insert(key.into(), value.to_string());
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let text = toml::to_string(self).context("serializing manifest")?;
        let path = dir.join("manifest.toml");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(toml::from_str(&text)?)
    }
}
