//! On-disk model document: a versioned, human-inspectable JSON file that
//! round-trips byte-identically through save and load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tgdr::{ModelCoefficients, Standardization, TgdrConfig, VarianceDenominator};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    /// Two-class, single-study fit.
    Tgdr,
    /// Multi-class, single-study fit.
    Multi,
    /// Joint multi-study fit with per-study coefficient blocks.
    Meta,
    /// Weighted combination of a meta fit's study blocks into one block.
    Pooled,
    /// Refit restricted to features that survived a selection-frequency
    /// cutoff.
    Bagged,
}

impl ModelMode {
    pub fn label(self) -> &'static str {
        match self {
            ModelMode::Tgdr => "tgdr",
            ModelMode::Multi => "multi",
            ModelMode::Meta => "meta",
            ModelMode::Pooled => "pooled",
            ModelMode::Bagged => "bagged",
        }
    }
}

/// Fit settings the model was produced with, as materialized values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredConfig {
    pub tau: f64,
    pub delta_v: f64,
    pub steps: usize,
    pub standardize: bool,
    pub selection_tolerance: f64,
}

impl StoredConfig {
    pub fn from_config(config: &TgdrConfig) -> Self {
        Self {
            tau: config.tau,
            delta_v: config.delta_v,
            steps: config.max_steps,
            standardize: config.standardize,
            selection_tolerance: config.selection_tolerance,
        }
    }
}

/// Extra state carried by a pooled model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledBlock {
    /// Studies the pooled coefficients were combined from.
    pub source_study_levels: Vec<String>,
    /// Which of the two delta-method variance forms produced the weights.
    pub variance_denominator: String,
    /// Estimated variance per contrast (outer) and source study (inner).
    pub study_variances: Vec<Vec<f64>>,
    /// Names of the features the pooled regression ran on.
    pub shared_active: Vec<String>,
    pub underdetermined: bool,
    /// 1-based contrasts that fell back to uniform weights.
    pub uniform_weight_contrasts: Vec<usize>,
}

/// Extra state carried by a bagged model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaggingBlock {
    pub n_bootstrap: usize,
    /// Selection frequency per feature, aligned with `feature_names`.
    pub frequencies: Vec<f64>,
    pub cutoff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub mode: ModelMode,
    /// Class labels in model order; the last one is the reference class.
    pub class_levels: Vec<String>,
    pub feature_names: Vec<String>,
    /// Study labels in model order; absent for single-study models.
    pub study_levels: Option<Vec<String>>,
    pub standardization: Option<Standardization>,
    pub config: StoredConfig,
    pub seed: u64,
    /// Per study, per contrast.
    pub intercepts: Vec<Vec<f64>>,
    /// Per study, per contrast, per feature.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub pooled: Option<PooledBlock>,
    pub bagging: Option<BaggingBlock>,
}

impl ModelFile {
    pub fn new(
        mode: ModelMode,
        class_levels: Vec<String>,
        feature_names: Vec<String>,
        study_levels: Option<Vec<String>>,
        model: &ModelCoefficients,
        config: &TgdrConfig,
        seed: u64,
    ) -> Self {
        let intercepts = model
            .intercepts
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect();
        let coefficients = model
            .betas
            .iter()
            .map(|block| block.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            mode,
            class_levels,
            feature_names,
            study_levels,
            standardization: model.standardization.clone(),
            config: StoredConfig::from_config(config),
            seed,
            intercepts,
            coefficients,
            pooled: None,
            bagging: None,
        }
    }

    pub fn to_coefficients(&self) -> Result<ModelCoefficients, CliError> {
        let studies = self.intercepts.len();
        let contrasts = self.class_levels.len().saturating_sub(1);
        let d = self.feature_names.len();
        let mut intercepts = ndarray::Array2::zeros((studies, contrasts));
        for (m, row) in self.intercepts.iter().enumerate() {
            if row.len() != contrasts {
                return Err(CliError::Schema(format!(
                    "study {} has {} intercepts, expected {contrasts}",
                    m + 1,
                    row.len()
                )));
            }
            for (k, &v) in row.iter().enumerate() {
                intercepts[(m, k)] = v;
            }
        }
        let mut betas = Vec::with_capacity(studies);
        for (m, block) in self.coefficients.iter().enumerate() {
            if block.len() != contrasts {
                return Err(CliError::Schema(format!(
                    "study {} has {} coefficient rows, expected {contrasts}",
                    m + 1,
                    block.len()
                )));
            }
            let mut arr = ndarray::Array2::zeros((contrasts, d));
            for (k, row) in block.iter().enumerate() {
                if row.len() != d {
                    return Err(CliError::Schema(format!(
                        "study {} contrast {} has {} coefficients, expected {d}",
                        m + 1,
                        k + 1,
                        row.len()
                    )));
                }
                for (i, &v) in row.iter().enumerate() {
                    arr[(k, i)] = v;
                }
            }
            betas.push(arr);
        }
        Ok(ModelCoefficients {
            intercepts,
            betas,
            standardization: self.standardization.clone(),
        })
    }

    pub fn base_config(&self) -> TgdrConfig {
        TgdrConfig {
            tau: self.config.tau,
            delta_v: self.config.delta_v,
            max_steps: self.config.steps,
            snapshot_stride: self.config.steps.max(1),
            standardize: self.config.standardize,
            selection_tolerance: self.config.selection_tolerance,
            seed: self.seed,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        text.push('\n');
        std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(CliError::Schema(format!(
                "{}: schema version {} unsupported (expected {SCHEMA_VERSION})",
                path.display(),
                file.schema_version
            )));
        }
        if file.class_levels.len() < 2 {
            return Err(CliError::Schema(format!(
                "{}: fewer than two class levels",
                path.display()
            )));
        }
        if file.intercepts.len() != file.coefficients.len()
            || file.intercepts.is_empty()
        {
            return Err(CliError::Schema(format!(
                "{}: intercept and coefficient blocks disagree",
                path.display()
            )));
        }
        file.to_coefficients()?;
        Ok(file)
    }
}

pub fn denominator_label(denominator: VarianceDenominator) -> &'static str {
    match denominator {
        VarianceDenominator::Squared => "squared",
        VarianceDenominator::Linear => "linear",
    }
}
