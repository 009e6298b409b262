//! TOML run configuration and the resolved-config record written next to
//! every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dkf::data::healing::HealingConfig;
use dkf::model::ModelConfig;
use dkf::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Contents of a `--config` file. Each table is optional; flags override it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Full model description; derived from the dataset when absent.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    /// Generator settings for `generate`.
    pub healing: Option<HealingConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

/// What a run actually used, written as `config.toml`.
#[derive(Debug, Serialize)]
pub struct Resolved<'a, T: Serialize> {
    pub version: &'a str,
    pub command: &'a str,
    pub inputs: Vec<(String, PathBuf)>,
    pub settings: &'a T,
}

impl<'a, T: Serialize> Resolved<'a, T> {
    pub fn new(command: &'a str, settings: &'a T) -> Self {
        Resolved { version: VERSION, command, inputs: Vec::new(), settings }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.push((name.to_string(), path.to_path_buf()));
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'b, T: Serialize> {
            version: &'b str,
            command: &'b str,
            inputs: toml::Table,
            settings: &'b T,
        }
        let inputs = self
            .inputs
            .iter()
            .map(|(k, p)| (k.clone(), toml::Value::String(p.display().to_string())))
            .collect();
        let out = Out { version: self.version, command: self.command, inputs, settings: self.settings };
        let text = toml::to_string(&out).context("serializing resolved config")?;
        fs::write(dir.join("config.toml"), text).with_context(|| format!("writing config to {}", dir.display()))
    }
}

/// Creates `dir` if needed; its parent must already exist.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            anyhow::bail!("output directory parent {} does not exist", parent.display());
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[train]\nlr = 0.01\nlearning_rate = 3\n").unwrap();
        let err = RunConfig::load(Some(&path)).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn partial_tables_fill_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[train]\nepochs = 3\n[model]\nlatent_dim = 4\n[model.recognition]\nvariant = \"q-lr\"\n").unwrap();
        let cfg = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr, TrainConfig::default().lr);
        let model = cfg.model.unwrap();
        assert_eq!(model.latent_dim, 4);
        assert_eq!(model.recognition.variant, dkf::model::Variant::QLr);
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { model: Some(ModelConfig::new(3, 5, 1)), ..RunConfig::default() };
        Resolved::new("train", &cfg).input("data", Path::new("d.ntc")).write(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("config.toml")).unwrap();
        let table: toml::Table = toml::from_str(&text).unwrap();
        assert_eq!(table["version"].as_str(), Some(VERSION));
        let back: RunConfig = table["settings"].clone().try_into().unwrap();
        assert_eq!(back, cfg);
    }
}
