//! Run configuration: one TOML file with `[data]`, `[model.*]` and `[train]` sections.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::AlignConfig;
use crate::corpus::Rational;
use crate::model::ModelConfig;
use crate::training::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub fps: Rational,
    pub sample_rate: u32,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { fps: Rational::integer(15), sample_rate: 16000 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !self.data.fps.is_positive() || self.data.sample_rate == 0 {
            return Err(Error::Config("data.fps and data.sample_rate must be positive".into()));
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(serde_json::to_vec(self).expect("run config serializes")).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn align_config(&self, load_audio: bool) -> AlignConfig {
        AlignConfig {
            fps: self.data.fps,
            sample_rate: self.data.sample_rate,
            image_size: self.model.vit.image_size,
            load_audio,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_hash() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
        let mut d = c.clone();
        d.train.seed += 1;
        assert_ne!(c.hash(), d.hash());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::from_toml("[train]\nepochs = 2\n[model.mode]\nmode = \"univ\"\n").unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.model.mode.mode, "univ");
        assert_eq!(c.train.batch_size, 16);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("[train]\nepoch = 2\n"), Err(Error::Config(_))));
    }
}
