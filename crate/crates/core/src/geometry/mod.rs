//! Layerwise geometry of task representations.

mod bias_variance;
mod curve;
mod metrics;
mod pca;
mod representations;
pub mod stats;

pub use bias_variance::{bias_variance_decompose, BiasVarianceReport, MIN_FIT_POINTS};
pub use curve::{compression_expression_ratios, optimal_layer, GridTdnv, TdnvCurve};
pub use metrics::{
    between_task_distance, mean_vector, squared_distance, task_statistics, tdnv, tdnv_grouped,
    within_task_variance, PairAggregation,
};
pub use pca::{covariance, pca_2d, Pca2};
pub use representations::{
    collect_representations, grid_tdnv, representation_kinds, tdnv_curve, LastSeparator,
    MeanAllTokens, MeanSeparators, RepresentationKind, RepresentationSet,
};
