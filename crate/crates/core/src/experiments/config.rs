use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PairAggregation;
use crate::io::DType;
use crate::model::ModelConfig;
use crate::taskgen::{NoiseSpec, LETTER_TASKS};
use crate::theorem::TheoremConfig;
use crate::training::TrainConfig;

/// Shape of one model in a size sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSize {
    pub layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

/// Inputs of the `ingest` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestPaths {
    pub container: String,
    pub layout: String,
}

/// One experiment run, read from a TOML file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: String,
    pub seed: u64,
    /// Output directory; defaults to `$ICL_LENS_OUT/<kind>`.
    pub out_dir: Option<String>,
    /// Trained weights to load; without one, a model is trained from `model` and `train`.
    pub checkpoint: Option<String>,
    pub tasks: Vec<String>,
    /// Instances per task.
    pub n: usize,
    /// Demonstrations per prompt.
    pub k: usize,
    pub k_grid: Vec<usize>,
    /// Reference demonstration count for the bias term; defaults to the grid maximum.
    pub k_inf: Option<usize>,
    pub representation: String,
    pub aggregation: PairAggregation,
    /// Label noise applied to every prompt before measuring.
    pub noise: Option<NoiseSpec>,
    pub noise_ratios: Vec<f64>,
    /// Demonstrations perturbed at the start or end of the prompt in the position sweep.
    pub perturbed: usize,
    pub extend_from: usize,
    pub extend_to: usize,
    /// Optimal-layer override; measured from the TDNV curve when absent.
    pub layer: Option<usize>,
    pub sizes: Vec<ModelSize>,
    /// Fine-tuning steps per arm in the contrastive comparison.
    pub finetune_steps: usize,
    pub bootstrap_resamples: usize,
    /// Precision of representation dumps written by `trace`.
    pub dump_dtype: DType,
    pub ingest: Option<IngestPaths>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub theorem: TheoremConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: "tdnv".into(),
            seed: 0,
            out_dir: None,
            checkpoint: None,
            tasks: LETTER_TASKS.iter().map(|s| s.to_string()).collect(),
            n: 100,
            k: 15,
            k_grid: vec![0, 1, 2, 4, 8, 16, 32],
            k_inf: None,
            representation: "last_sep".into(),
            aggregation: PairAggregation::Mean,
            noise: None,
            noise_ratios: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            perturbed: 3,
            extend_from: 5,
            extend_to: 20,
            layer: None,
            sizes: vec![
                ModelSize {
                    layers: 4,
                    d_model: 32,
                    n_heads: 2,
                    d_ff: 128,
                },
                ModelSize {
                    layers: 8,
                    d_model: 64,
                    n_heads: 4,
                    d_ff: 256,
                },
            ],
            finetune_steps: 200,
            bootstrap_resamples: 2000,
            dump_dtype: DType::F32,
            ingest: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            theorem: TheoremConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.theorem.seed = seed;
    }

    pub fn output_dir(&self) -> PathBuf {
        match &self.out_dir {
            Some(d) => PathBuf::from(d),
            None => crate::io::output_dir(&self.kind),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("no tasks listed".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        self.model.validate()?;
        self.train.validate(self.model.layers)?;
        Ok(())
    }
}
