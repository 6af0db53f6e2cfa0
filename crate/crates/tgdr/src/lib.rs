//! Threshold gradient descent regularization for expression-based
//! classification.
//!
//! The fit follows a coefficient path from zero: at each step the
//! log-likelihood gradient is computed, coefficients whose gradient magnitude
//! reaches a fraction `tau` of their class block's maximum move by a small
//! step, and intercepts always move. The pair (tau, number of steps) is the
//! regularization setting, tuned by cross-validation. Multi-class problems
//! use one coefficient block per non-reference class with a shared active
//! set; multi-study problems threshold on gradients summed across studies
//! while each study keeps its own coefficients, which favors features whose
//! effect is consistent in sign across studies.
//!
//! On top of the fit sit coefficient pooling into a single predictor for
//! unseen studies, bagging-based selection frequencies with cutoff refits,
//! normalized Brier scoring, and a replicated simulation benchmark.

mod bagging;
mod cv;
mod dataset;
mod error;
mod meta;
mod metrics;
mod model;
mod rng;
mod simgen;
mod solver;

pub use bagging::{
    bagging_run, bootstrap_resample, default_cutoff_grid, ensemble_predict,
    refit_restricted, select_cutoff, BaggingReport, CutoffCandidate, CutoffSelection,
    MemberFailure,
};
pub use cv::{
    assign_folds, default_tau_grid, fit_with, k_fold_cv, CvGridPoint, CvOptions,
    CvResult, FitterKind,
};
pub use dataset::{ExpressionDataset, Standardization};
pub use error::{Result, TgdrError};
pub use meta::{
    estimate_study_variance, fit_meta_path, pool_coefficients, pool_with_variances,
    predict_new_study,
    PooledModel, VarianceDenominator,
};
pub use metrics::{evaluate, gbs, misclassification_rate, EvaluationReport};
pub use model::{
    class_probabilities, log_likelihood, negative_gradient, predict, predict_rows,
    GradientBlocks, ModelCoefficients, Predictions, LOGIT_CLAMP,
};
pub use simgen::{
    assigned_label, class_weights, generate, generate_replicate, run_replicates, CorrelationMode,
    CutoffSummary, ReplicateOptions, ReplicateRow, ReplicateSummary, SimDesign,
};
pub use solver::{
    fit_path, tgdr_step, threshold_vector, PathStep, RegularizationPath, StopReason,
    TgdrConfig, ThresholdVector, ZERO_GRADIENT_FLOOR,
};
