//! Matched-group variance estimation for subbagged ensembles and general
//! size-`k` kernels.
//!
//! A matched plan draws `B` groups of `M` mutually disjoint size-`k`
//! subsamples. The spread of predictions within groups estimates the
//! single-tree variance, the spread across all trees estimates its
//! conditional part, and their corrected difference is an unbiased estimate
//! of the variance of the ensemble prediction.

pub mod error;
pub mod forest;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod tree;
pub mod variance;

pub use error::{Error, Result};
pub use forest::{fit_forest, point_estimate, predict_matrix, Forest, PredictionMatrix};
pub use model::{
    validate_config, validate_for, ConfigViolation, Dataset, ForestConfig, Kernel, MeanKernel, OneNnKernel, Predictor,
    TargetPoint, DEFAULT_ALPHA,
};
pub use rng::RandomStream;
pub use sampling::{sample_bootstrap_plan, sample_matched_groups, sample_subset_plan, SamplingMode, SamplingPlan};
pub use tree::{fit_tree, predict_tree, Tree, TreeKernel};
pub use variance::{
    bootstrap_variance_estimate, confidence_interval, estimate_at, fit_bootstrap_ensemble, matched_variance_estimate,
    smoothed_variance_estimate, smoothed_variance_estimate_refit, EstimatorMode, VarianceReport,
};
