use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::adam::AdamHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    CeOnly,
    CePlusContrastive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub k_train: usize,
    /// Contrastive weight.
    pub beta: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Layer whose final-separator state feeds the contrastive term; `None` picks `⌈7L/12⌉`.
    pub contrast_layer: Option<usize>,
    pub loss_mode: LossMode,
    pub seed: u64,
    /// Evaluate every this many steps (0 disables periodic evaluation; the last step is always evaluated).
    pub eval_every: usize,
    pub eval_instances: usize,
    pub eval_k: usize,
    /// Where to drop a checkpoint if the loss goes non-finite.
    pub diagnostic_dir: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamHyper::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            warmup_steps: 100,
            clip_norm: 1.0,
            steps: 20_000,
            batch_size: 100,
            k_train: 20,
            beta: 0.1,
            tau: 0.07,
            contrast_layer: None,
            loss_mode: LossMode::CeOnly,
            seed: 0,
            eval_every: 500,
            eval_instances: 40,
            eval_k: 10,
            diagnostic_dir: None,
        }
    }
}

/// `⌈7L/12⌉`, at least 1.
pub fn default_contrast_layer(layers: usize) -> usize {
    (7 * layers).div_ceil(12).max(1)
}

impl TrainConfig {
    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn contrast_layer_for(&self, layers: usize) -> usize {
        self.contrast_layer
            .unwrap_or_else(|| default_contrast_layer(layers))
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.eps <= 0.0 || self.clip_norm <= 0.0 {
            return bad("eps and clip_norm must be positive".into());
        }
        if self.batch_size == 0 || self.k_train == 0 {
            return bad("batch_size and k_train must be positive".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be ≥ 0, got {}", self.beta));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        let lc = self.contrast_layer_for(layers);
        if lc == 0 || lc > layers {
            return bad(format!("contrast_layer {lc} outside [1, {layers}]"));
        }
        if self.eval_instances == 0 {
            return bad("eval_instances must be positive".into());
        }
        Ok(())
    }

    /// Learning rate at 1-based `step`: linear warmup then constant.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }
}
