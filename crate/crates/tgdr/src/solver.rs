use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{ExpressionDataset, Standardization};
use crate::error::{Result, TgdrError};
use crate::model::{likelihood_and_gradient, GradientBlocks, ModelCoefficients};

/// Coefficient gradients whose largest magnitude falls at or below this are
/// treated as identically zero, terminating the path early.
pub const ZERO_GRADIENT_FLOOR: f64 = 1e-14;

/// Tuning knobs of a threshold gradient descent fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgdrConfig {
    /// Threshold in [0, 1]: 0 updates every coefficient, 1 only those tied
    /// with the largest gradient magnitude in their class block.
    pub tau: f64,
    /// Step size of each update.
    pub delta_v: f64,
    /// Number of update steps; the pair (tau, max_steps) is the tuned
    /// regularization setting.
    pub max_steps: usize,
    /// Record every `snapshot_stride`-th step of the path (the initial and
    /// final states are always recorded).
    pub snapshot_stride: usize,
    /// Center and scale each feature from the training data before fitting;
    /// the transform is stored with the model and replayed at prediction.
    pub standardize: bool,
    /// Coefficients with magnitude strictly above this count as selected.
    pub selection_tolerance: f64,
    /// Base seed for the randomized stages built on top of the (itself
    /// deterministic) fit: fold assignment, resampling, simulation.
    pub seed: u64,
}

impl Default for TgdrConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            delta_v: 0.01,
            max_steps: 100,
            snapshot_stride: 1,
            standardize: true,
            selection_tolerance: 1e-12,
            seed: 0,
        }
    }
}

impl TgdrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(TgdrError::InvalidConfig(format!(
                "tau {} outside [0, 1]",
                self.tau
            )));
        }
        if !self.delta_v.is_finite() || self.delta_v <= 0.0 {
            return Err(TgdrError::InvalidConfig(format!(
                "delta_v {} must be positive",
                self.delta_v
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(TgdrError::InvalidConfig(
                "snapshot stride must be at least 1".into(),
            ));
        }
        if !self.selection_tolerance.is_finite() || self.selection_tolerance < 0.0 {
            return Err(TgdrError::InvalidConfig(format!(
                "selection tolerance {} must be nonnegative",
                self.selection_tolerance
            )));
        }
        Ok(())
    }
}

/// Indicator masks derived from one gradient block.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    /// One mask per class block: `per_class[k][i]` is true when
    /// `|g_ki| >= tau * max_l |g_kl|` within block `k`.
    pub per_class: Vec<Vec<bool>>,
    /// Featurewise union of the class masks; this single mask gates the
    /// update of every class block, keeping one shared active set.
    pub combined: Vec<bool>,
}

/// Thresholds a contrasts x features gradient block at level `tau`.
///
/// The comparison is `>=`, so ties with the block maximum are kept, `tau = 0`
/// keeps everything, and an all-zero block also keeps everything (0 >= 0).
pub fn threshold_vector(gradient: &Array2<f64>, tau: f64) -> ThresholdVector {
    let d = gradient.ncols();
    let mut per_class = Vec::with_capacity(gradient.nrows());
    let mut combined = vec![false; d];
    for row in gradient.rows() {
        let max_abs = row.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        let cut = tau * max_abs;
        let mask: Vec<bool> = row.iter().map(|&g| g.abs() >= cut).collect();
        for (i, &keep) in mask.iter().enumerate() {
            combined[i] |= keep;
        }
        per_class.push(mask);
    }
    ThresholdVector {
        per_class,
        combined,
    }
}

/// Why a path stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    /// Ran the configured number of steps.
    MaxSteps,
    /// Coefficient gradient vanished at the given step.
    ZeroGradient { step: usize },
}

/// One recorded state along a path.
#[derive(Debug, Clone)]
pub struct PathStep {
    /// Update count at this state; step 0 is the all-zero start.
    pub step: usize,
    /// Accumulated regularization parameter `step * delta_v`.
    pub v: f64,
    pub intercepts: Array2<f64>,
    pub betas: Vec<Array2<f64>>,
    /// Features with any coefficient above the selection tolerance.
    pub active: Vec<bool>,
    /// Training log-likelihood at this state.
    pub log_likelihood: f64,
}

impl PathStep {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// A fitted coefficient path: snapshots plus the context to turn any of them
/// into a standalone model.
#[derive(Debug, Clone)]
pub struct RegularizationPath {
    pub steps: Vec<PathStep>,
    pub config: TgdrConfig,
    /// Transform the path was fitted under; attached to extracted models.
    pub standardization: Option<Standardization>,
    pub stop: StopReason,
    /// Update steps actually performed (equals the last snapshot's step).
    pub completed_steps: usize,
}

impl RegularizationPath {
    fn to_model(&self, snapshot: &PathStep) -> ModelCoefficients {
        ModelCoefficients {
            intercepts: snapshot.intercepts.clone(),
            betas: snapshot.betas.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Model at the final recorded step.
    pub fn final_model(&self) -> ModelCoefficients {
        self.to_model(self.steps.last().expect("path records at least step 0"))
    }

    /// Model at exactly the given step, if that step was recorded.
    pub fn model_at(&self, step: usize) -> Option<ModelCoefficients> {
        self.steps
            .iter()
            .find(|s| s.step == step)
            .map(|s| self.to_model(s))
    }

    /// Model at the latest recorded step not beyond `step`. Covers paths that
    /// stopped early: asking for a step past the stop returns the final state.
    pub fn model_at_or_last(&self, step: usize) -> ModelCoefficients {
        let snapshot = self
            .steps
            .iter()
            .rev()
            .find(|s| s.step <= step)
            .unwrap_or_else(|| self.steps.first().expect("path records at least step 0"));
        self.to_model(snapshot)
    }

    pub fn snapshot_steps(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.step).collect()
    }
}

fn check_gradient_finite(grad: &GradientBlocks, step: usize) -> Result<()> {
    if grad.intercepts.iter().any(|v| !v.is_finite())
        || grad
            .coefficients
            .iter()
            .any(|b| b.iter().any(|v| !v.is_finite()))
    {
        return Err(TgdrError::NonFinitePath {
            quantity: "gradient",
            step,
        });
    }
    Ok(())
}

/// Shared path engine. Thresholds come from the coefficient gradients summed
/// over studies; each study's block then moves along its own gradient. With a
/// single study the sum is the plain gradient and this is ordinary threshold
/// gradient descent.
pub(crate) fn run_path_engine(
    data: &ExpressionDataset,
    config: &TgdrConfig,
) -> Result<RegularizationPath> {
    config.validate()?;
    let standardization = config
        .standardize
        .then(|| Standardization::fit(data.features()));
    let features = match &standardization {
        Some(s) => s.apply(data.features()),
        None => data.features().to_owned(),
    };
    let studies = data.study_count();
    let contrasts = data.class_count() - 1;
    let d = data.feature_count();
    let mut intercepts = Array2::zeros((studies, contrasts));
    let mut betas: Vec<Array2<f64>> = (0..studies)
        .map(|_| Array2::zeros((contrasts, d)))
        .collect();
    let mut steps: Vec<PathStep> = Vec::new();
    let mut stop = StopReason::MaxSteps;
    let mut completed = 0usize;
    for v in 0..=config.max_steps {
        let (ll, grad) = likelihood_and_gradient(
            &intercepts,
            &betas,
            features.view(),
            data.labels(),
            data.study_ids(),
            studies,
        )
        .map_err(|_| TgdrError::NonFinitePath {
            quantity: "log-likelihood",
            step: v,
        })?;
        check_gradient_finite(&grad, v)?;
        let meta = grad.summed_coefficients();
        let max_abs = meta.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        let vanished = max_abs <= ZERO_GRADIENT_FLOOR;
        let terminal = vanished || v == config.max_steps;
        if v % config.snapshot_stride == 0 || terminal {
            let active: Vec<bool> = (0..d)
                .map(|i| {
                    betas
                        .iter()
                        .any(|b| b.column(i).iter().any(|&x| x.abs() > config.selection_tolerance))
                })
                .collect();
            steps.push(PathStep {
                step: v,
                v: v as f64 * config.delta_v,
                intercepts: intercepts.clone(),
                betas: betas.clone(),
                active,
                log_likelihood: ll,
            });
        }
        completed = v;
        if terminal {
            if vanished {
                stop = StopReason::ZeroGradient { step: v };
            }
            break;
        }
        let mask = threshold_vector(&meta, config.tau);
        for m in 0..studies {
            for k in 0..contrasts {
                intercepts[(m, k)] -= config.delta_v * grad.intercepts[(m, k)];
                let g_row = grad.coefficients[m].row(k);
                let mut b_row = betas[m].row_mut(k);
                for (i, &keep) in mask.combined.iter().enumerate() {
                    if keep {
                        b_row[i] -= config.delta_v * g_row[i];
                    }
                }
            }
        }
    }
    Ok(RegularizationPath {
        steps,
        config: config.clone(),
        standardization,
        stop,
        completed_steps: completed,
    })
}

/// Fits a threshold gradient descent path on single-study data.
///
/// Multi-study data must either go through the meta fit or be pooled first
/// with [`ExpressionDataset::as_single_study`].
pub fn fit_path(data: &ExpressionDataset, config: &TgdrConfig) -> Result<RegularizationPath> {
    if data.study_count() != 1 {
        return Err(TgdrError::InvalidConfig(format!(
            "data spans {} studies; fit each study jointly with the meta fit \
             or pool them explicitly",
            data.study_count()
        )));
    }
    run_path_engine(data, config)
}

/// One thresholded update from the given coefficients. The data is moved onto
/// the model's scale (if it carries one) before the gradient is evaluated;
/// intercepts always move, coefficients only where the combined mask allows.
pub fn tgdr_step(
    coeffs: &ModelCoefficients,
    data: &ExpressionDataset,
    config: &TgdrConfig,
) -> Result<ModelCoefficients> {
    config.validate()?;
    let grad = crate::model::negative_gradient(coeffs, data)?;
    let meta = grad.summed_coefficients();
    let mask = threshold_vector(&meta, config.tau);
    let mut next = coeffs.clone();
    for m in 0..coeffs.study_count() {
        for k in 0..coeffs.contrast_count() {
            next.intercepts[(m, k)] -= config.delta_v * grad.intercepts[(m, k)];
            for (i, &keep) in mask.combined.iter().enumerate() {
                if keep {
                    next.betas[m][(k, i)] -= config.delta_v * grad.coefficients[m][(k, i)];
                }
            }
        }
    }
    Ok(next)
}
