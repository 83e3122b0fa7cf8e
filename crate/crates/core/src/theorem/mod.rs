//! Monte-Carlo checks of variance decay and mean interpolation for
//! single-layer normalized linear attention.

mod distribution;
mod harness;

pub use distribution::{
    distributions, ComponentSpec, DemoDistribution, DistributionSpec, Gaussian, Mixture,
    UniformSphere,
};
pub use harness::{
    closed_form_infinite_mean, default_k_grid, estimate_mean_shift, estimate_variance_decay,
    exact_variance_d1, run_theorem, GridStats, Harness, MeanShift, QuerySpec, TheoremConfig,
    TheoremReport, TheoremRow, VarianceDecay, WeightSpec,
};
