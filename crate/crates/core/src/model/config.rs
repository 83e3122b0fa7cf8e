use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::attention::{attention_kinds, feature_maps};

/// Shape and architecture of a toy decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    #[serde(default = "default_attention")]
    pub attention_kind: String,
    #[serde(default = "default_feature_map")]
    pub feature_map: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_attention() -> String {
    "softmax".into()
}

fn default_feature_map() -> String {
    "identity".into()
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: crate::taskgen::Tokenizer::core().len(),
            max_len: 130,
            attention_kind: default_attention(),
            feature_map: default_feature_map(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        attention_kinds().get(&self.attention_kind)?;
        feature_maps().get(&self.feature_map)?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
