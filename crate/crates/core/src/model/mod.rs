//! Toy decoder-only transformer and the single-layer linear-attention map.

pub mod attention;
mod config;
mod linear_attention;
mod transformer;

pub use attention::{attention_kinds, feature_maps, AttentionKind, FeatureMap};
pub use config::ModelConfig;
pub use linear_attention::{attention_terms, linear_attention_step, LinearAttentionParams};
pub use transformer::{argmax, ForwardTrace, Injection, Keep, TraceRequest, TransformerModel};
