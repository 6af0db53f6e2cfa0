use thiserror::Error;

/// Errors produced by dataset construction, fitting, and downstream analysis.
#[derive(Debug, Clone, Error)]
pub enum TgdrError {
    /// Shapes of inputs disagree (rows vs labels, coefficient blocks vs data, ...).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An input value is outside its domain (NaN feature, label out of range, ...).
    #[error("invalid value: {0}")]
    InvalidValue(String),

    /// A configuration field is outside its documented domain.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The coefficient path produced a NaN or infinity; reports the first bad step.
    #[error("non-finite {quantity} at path step {step}")]
    NonFinitePath { quantity: &'static str, step: usize },

    /// Multi-study fitting requires every study to contain every class.
    #[error("study {study} has no samples of class {class}")]
    MissingClassInStudy { study: usize, class: usize },

    /// A study's mean fitted probability collapsed to 0 or 1, so its
    /// sampling variance cannot be estimated.
    #[error("degenerate study {study}: mean fitted probability {value:.3e} for contrast {contrast}")]
    DegenerateStudy {
        study: usize,
        contrast: usize,
        value: f64,
    },

    /// Stratified fold assignment cannot place at least one sample of every
    /// stratum in every fold.
    #[error("stratified folds infeasible: {0}")]
    Stratification(String),

    /// Bootstrap redraws kept missing a class (or study-class cell).
    #[error("bootstrap resample left a class empty after {attempts} attempts")]
    ResampleInfeasible { attempts: usize },

    /// More than the tolerated fraction of bagging member fits failed.
    #[error("bagging aborted: {failed} of {total} member fits failed")]
    BaggingFailures { failed: usize, total: usize },

    /// No cutoff in the grid left a nonempty feature set.
    #[error("cutoff selection failed: {0}")]
    CutoffSelection(String),
}

pub type Result<T> = std::result::Result<T, TgdrError>;
