//! Attention weightings and feature maps, selectable by name.

use std::sync::OnceLock;

use crate::autodiff::{AttentionLayout, Mask, NodeId, ScoreScale, Tape};
use crate::error::Result;
use crate::registry::Registry;

/// Positive (or identity) map applied to queries and keys before linear attention.
pub trait FeatureMap: Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn record(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId>;
}

pub struct Identity;

impl FeatureMap for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn record(&self, _tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        Ok(x)
    }
}

/// `elu(x) + 1`.
pub struct EluPlusOne;

impl FeatureMap for EluPlusOne {
    fn name(&self) -> &'static str {
        "elu1"
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&v| if v > 0.0 { v + 1.0 } else { v.exp() })
            .collect()
    }
    fn record(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        tape.elu1(x)
    }
}

pub fn feature_maps() -> &'static Registry<dyn FeatureMap> {
    static REG: OnceLock<Registry<dyn FeatureMap>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::<dyn FeatureMap>::new("feature map")
            .with("identity", Box::new(Identity))
            .with("elu1", Box::new(EluPlusOne))
    })
}

/// Turns projected queries and keys into causal mixing weights
/// `[batch·heads·seq × seq]` (zero above the diagonal).
pub trait AttentionKind: Send + Sync {
    fn name(&self) -> &'static str;
    fn weights(
        &self,
        tape: &mut Tape,
        q: NodeId,
        k: NodeId,
        layout: AttentionLayout,
        head_dim: usize,
        phi: &dyn FeatureMap,
    ) -> Result<NodeId>;
    /// Whether the weights are a softmax distribution (saliency maps need this).
    fn is_softmax(&self) -> bool;
}

pub struct SoftmaxAttention;

impl AttentionKind for SoftmaxAttention {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn weights(
        &self,
        tape: &mut Tape,
        q: NodeId,
        k: NodeId,
        layout: AttentionLayout,
        head_dim: usize,
        _phi: &dyn FeatureMap,
    ) -> Result<NodeId> {
        let scale = ScoreScale::Constant(1.0 / (head_dim as f64).sqrt());
        let s = tape.attn_scores(q, k, layout, scale)?;
        tape.softmax_rows(s, &Mask::Causal { period: layout.seq })
    }
    fn is_softmax(&self) -> bool {
        true
    }
}

/// `φ(q_i)ᵀφ(k_j) / (i + 1)`: weights divided by the number of visible tokens.
pub struct LinearNormalized;

impl AttentionKind for LinearNormalized {
    fn name(&self) -> &'static str {
        "linear_normalized"
    }
    fn weights(
        &self,
        tape: &mut Tape,
        q: NodeId,
        k: NodeId,
        layout: AttentionLayout,
        _head_dim: usize,
        phi: &dyn FeatureMap,
    ) -> Result<NodeId> {
        let fq = phi.record(tape, q)?;
        let fk = phi.record(tape, k)?;
        tape.attn_scores(fq, fk, layout, ScoreScale::CausalCount)
    }
    fn is_softmax(&self) -> bool {
        false
    }
}

pub fn attention_kinds() -> &'static Registry<dyn AttentionKind> {
    static REG: OnceLock<Registry<dyn AttentionKind>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::<dyn AttentionKind>::new("attention kind")
            .with("softmax", Box::new(SoftmaxAttention))
            .with("linear_normalized", Box::new(LinearNormalized))
    })
}
