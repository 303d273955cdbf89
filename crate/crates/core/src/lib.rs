//! Sparse covariance regression.
//!
//! Models the conditional covariance of a response vector as a linear function
//! of subject-level covariates, `Σ(x) = B₀ + Σₗ xₗ Bₗ`, and estimates the
//! coefficient matrices by penalized least squares on the pairwise products
//! `z_ij z_ik` with an entrywise lasso plus a per-covariate group penalty.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod design;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod model;
pub mod simulate;
mod qp;
pub mod tuning;

pub use design::{center_data, CenteredDesign, Centering, CovariateScaling, MeanMode};
pub use error::{CovRegError, Result};
pub use model::{
    objective, pd_margin, penalty_value, split_pos_neg, CoefficientStack, CovariateBounds,
    PenaltyConfig,
};
pub use estimator::{fit, pd_adjust, soft_threshold, FitConfig, FitResult};
pub use tuning::{cv_select, CvGrid, CvResult, SelectionRule};
pub use inference::{
    confidence_intervals, debias, detect_edges, direction_matrix, infer, infer_with, theta_hat,
    Correction, DebiasResult, DirectionMatrix, Inference, InferenceConfig,
};
pub use baselines::{dense_covreg, dense_sample, sparse_sample, sparse_sample_cv};
pub use simulate::{run_experiment, ExperimentConfig, ExperimentReport, Method, Scenario, Setting, Structure};
