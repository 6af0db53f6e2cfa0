use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::ExpressionDataset;
use crate::error::{Result, TgdrError};
use crate::model::{class_probabilities, predict_rows, ModelCoefficients, Predictions};
use crate::solver::{run_path_engine, RegularizationPath, TgdrConfig};

/// A mean fitted probability within this distance of 0 or 1 marks a study as
/// degenerate for variance estimation.
const DEGENERACY_MARGIN: f64 = 1e-12;

/// When some studies report zero sampling variance alongside positive ones,
/// their weight is capped at this multiple of the largest finite weight.
const ZERO_VARIANCE_WEIGHT_RATIO: f64 = 1e8;

/// Fits a joint path across studies. Thresholding and the stopping rule act
/// on coefficient gradients summed over studies, so a feature survives only
/// when its evidence adds up across studies; each study keeps its own
/// intercepts and coefficient block, updated along its own gradient. Every
/// study must contain every class.
pub fn fit_meta_path(
    data: &ExpressionDataset,
    config: &TgdrConfig,
) -> Result<RegularizationPath> {
    data.require_full_cells()?;
    run_path_engine(data, config)
}

/// How the binomial variance denominator is formed from the mean fitted
/// probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceDenominator {
    /// `(p(1-p))^2`, matching the delta-method variance of a log-odds.
    Squared,
    /// `p(1-p)^2`, an alternate convention kept for comparability.
    Linear,
}

/// Estimated sampling variance of one study's contrast, from the mean squared
/// residual of the one-vs-reference indicator against the fitted class
/// probability. `study` and `contrast` are 1-based.
pub fn estimate_study_variance(
    coeffs: &ModelCoefficients,
    data: &ExpressionDataset,
    study: usize,
    contrast: usize,
    denominator: VarianceDenominator,
) -> Result<f64> {
    coeffs.validate()?;
    if contrast < 1 || contrast > coeffs.contrast_count() {
        return Err(TgdrError::InvalidValue(format!(
            "contrast {contrast} outside 1..={}",
            coeffs.contrast_count()
        )));
    }
    if study < 1 || study > data.study_count() {
        return Err(TgdrError::InvalidValue(format!(
            "study {study} outside 1..={}",
            data.study_count()
        )));
    }
    let rows = data.study_rows(study);
    if rows.is_empty() {
        return Err(TgdrError::DimensionMismatch(format!(
            "study {study} has no samples"
        )));
    }
    let n = rows.len() as f64;
    let mut residual_ss = 0.0;
    let mut prob_sum = 0.0;
    for &j in &rows {
        let p = class_probabilities(coeffs, data.sample(j), study)?[contrast - 1];
        let y = if data.labels()[j] == contrast { 1.0 } else { 0.0 };
        residual_ss += (y - p) * (y - p);
        prob_sum += p;
    }
    let s = residual_ss / n;
    let p_bar = prob_sum / n;
    if p_bar <= DEGENERACY_MARGIN || p_bar >= 1.0 - DEGENERACY_MARGIN {
        return Err(TgdrError::DegenerateStudy {
            study,
            contrast,
            value: p_bar,
        });
    }
    let q = p_bar * (1.0 - p_bar);
    Ok(match denominator {
        VarianceDenominator::Squared => s / (q * q),
        VarianceDenominator::Linear => s / (p_bar * (1.0 - p_bar) * (1.0 - p_bar)),
    })
}

/// A single coefficient vector distilled from a multi-study fit, usable on
/// samples from studies never seen in training.
#[derive(Debug, Clone)]
pub struct PooledModel {
    /// One-study model holding the pooled intercepts and coefficients
    /// (zero outside the shared active set).
    pub coefficients: ModelCoefficients,
    /// Estimated variance per contrast (rows) and study (columns).
    pub study_variances: Array2<f64>,
    /// Features the pooled regression was run on.
    pub shared_active: Vec<bool>,
    /// True when any pooled regression had fewer observations than unknowns
    /// or a singular design; the minimum-norm solution was returned.
    pub underdetermined: bool,
    /// 1-based contrasts whose studies all reported zero variance; their
    /// pooled regression used uniform weights.
    pub uniform_weight_contrasts: Vec<usize>,
}

/// Pools a multi-study model into a single coefficient vector per contrast by
/// weighted least squares: each sample contributes its study's fitted linear
/// predictor as the target, weighted by the inverse estimated study variance.
pub fn pool_coefficients(
    coeffs: &ModelCoefficients,
    data: &ExpressionDataset,
    denominator: VarianceDenominator,
) -> Result<PooledModel> {
    check_pool_shapes(coeffs, data)?;
    let studies = data.study_count();
    let contrasts = coeffs.contrast_count();
    let mut study_variances = Array2::zeros((contrasts, studies));
    for kc in 0..contrasts {
        for m in 0..studies {
            study_variances[(kc, m)] =
                estimate_study_variance(coeffs, data, m + 1, kc + 1, denominator)?;
        }
    }
    pool_with_variances(coeffs, data, &study_variances)
}

fn check_pool_shapes(coeffs: &ModelCoefficients, data: &ExpressionDataset) -> Result<()> {
    coeffs.validate()?;
    if coeffs.study_count() != data.study_count() {
        return Err(TgdrError::DimensionMismatch(format!(
            "model has {} study blocks, data has {} studies",
            coeffs.study_count(),
            data.study_count()
        )));
    }
    if coeffs.feature_count() != data.feature_count() {
        return Err(TgdrError::DimensionMismatch(format!(
            "model covers {} features, data has {}",
            coeffs.feature_count(),
            data.feature_count()
        )));
    }
    if coeffs.contrast_count() + 1 != data.class_count() {
        return Err(TgdrError::DimensionMismatch(format!(
            "model distinguishes {} classes, data declares {}",
            coeffs.contrast_count() + 1,
            data.class_count()
        )));
    }
    Ok(())
}

/// Pooling with caller-supplied study variances, one row per contrast and one
/// column per study. Weights are inverse variances, so scaling every variance
/// by a common factor leaves the pooled coefficients unchanged.
pub fn pool_with_variances(
    coeffs: &ModelCoefficients,
    data: &ExpressionDataset,
    study_variances: &Array2<f64>,
) -> Result<PooledModel> {
    check_pool_shapes(coeffs, data)?;
    let n = data.n_samples();
    let d = data.feature_count();
    let studies = data.study_count();
    let contrasts = coeffs.contrast_count();
    if study_variances.dim() != (contrasts, studies) {
        return Err(TgdrError::DimensionMismatch(format!(
            "variance matrix is {:?}, expected ({contrasts}, {studies})",
            study_variances.dim()
        )));
    }
    if let Some(v) = study_variances.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(TgdrError::InvalidValue(format!(
            "study variances must be finite and non-negative, got {v}"
        )));
    }
    let tolerance = 1e-12;
    let shared_active = coeffs.active_set(tolerance);
    let active: Vec<usize> = shared_active
        .iter()
        .enumerate()
        .filter(|(_, &a)| a)
        .map(|(i, _)| i)
        .collect();
    let features = match &coeffs.standardization {
        Some(std) => std.apply(data.features()),
        None => data.features().to_owned(),
    };
    let mut pooled_intercepts = Array2::zeros((1, contrasts));
    let mut pooled_betas = Array2::zeros((contrasts, d));
    let mut underdetermined = false;
    let mut uniform_weight_contrasts = Vec::new();

    for kc in 0..contrasts {
        let variances: Vec<f64> = (0..studies).map(|m| study_variances[(kc, m)]).collect();
        let min_positive = variances
            .iter()
            .copied()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        let weights_by_study: Vec<f64> = if min_positive.is_finite() {
            let floor = min_positive / ZERO_VARIANCE_WEIGHT_RATIO;
            variances.iter().map(|&v| 1.0 / v.max(floor)).collect()
        } else {
            uniform_weight_contrasts.push(kc + 1);
            vec![1.0; studies]
        };

        let cols = active.len() + 1;
        let mut design = Array2::zeros((n, cols));
        let mut targets = Array1::zeros(n);
        let mut weights = Array1::zeros(n);
        for j in 0..n {
            let m = data.study_ids()[j] - 1;
            design[(j, 0)] = 1.0;
            for (c, &i) in active.iter().enumerate() {
                design[(j, c + 1)] = features[(j, i)];
            }
            let eta = coeffs.intercepts[(m, kc)]
                + coeffs.betas[m].row(kc).dot(&features.row(j));
            targets[j] = eta;
            weights[j] = weights_by_study[m];
        }
        let (solution, flagged) = weighted_least_squares(&design, &targets, &weights)?;
        underdetermined |= flagged;
        pooled_intercepts[(0, kc)] = solution[0];
        for (c, &i) in active.iter().enumerate() {
            pooled_betas[(kc, i)] = solution[c + 1];
        }
    }

    Ok(PooledModel {
        coefficients: ModelCoefficients {
            intercepts: pooled_intercepts,
            betas: vec![pooled_betas],
            standardization: coeffs.standardization.clone(),
        },
        study_variances: study_variances.clone(),
        shared_active,
        underdetermined,
        uniform_weight_contrasts,
    })
}

/// Solves `argmin sum_j w_j (z_j - a_j . x)^2`. Returns the minimum-norm
/// solution and a flag when the system was not positive definite.
fn weighted_least_squares(
    design: &Array2<f64>,
    targets: &Array1<f64>,
    weights: &Array1<f64>,
) -> Result<(Array1<f64>, bool)> {
    let n = design.nrows();
    let p = design.ncols();
    let mut b = nalgebra::DMatrix::<f64>::zeros(n, p);
    let mut c = nalgebra::DVector::<f64>::zeros(n);
    for j in 0..n {
        let w = weights[j];
        if !w.is_finite() || w <= 0.0 {
            return Err(TgdrError::InvalidValue(format!(
                "weight {w} of observation {j} must be positive"
            )));
        }
        let sw = w.sqrt();
        for i in 0..p {
            b[(j, i)] = sw * design[(j, i)];
        }
        c[j] = sw * targets[j];
    }
    if n >= p {
        let gram = b.tr_mul(&b);
        let rhs = b.tr_mul(&c);
        if let Some(chol) = gram.clone().cholesky() {
            let solution = chol.solve(&rhs);
            return Ok((Array1::from_iter(solution.iter().copied()), false));
        }
        let ridge = 1e-10 * (1.0 + gram.trace() / p as f64);
        let mut damped = gram;
        for i in 0..p {
            damped[(i, i)] += ridge;
        }
        if let Some(chol) = damped.cholesky() {
            let solution = chol.solve(&rhs);
            return Ok((Array1::from_iter(solution.iter().copied()), true));
        }
    }
    let svd = b.svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max();
    let solution = svd
        .solve(&c, cutoff)
        .map_err(|e| TgdrError::InvalidValue(format!("least squares failed: {e}")))?;
    Ok((Array1::from_iter(solution.iter().copied()), true))
}

/// Applies a pooled model to samples from a study absent at training time.
pub fn predict_new_study(
    pooled: &PooledModel,
    features: ArrayView2<'_, f64>,
) -> Result<Predictions> {
    predict_rows(&pooled.coefficients, features, None)
}
