use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::dataset::{ExpressionDataset, Standardization};
use crate::error::{Result, TgdrError};

/// Logits are clamped to this magnitude before exponentiation so extreme
/// coefficient-feature products saturate instead of overflowing.
pub const LOGIT_CLAMP: f64 = 700.0;

/// Coefficients of a (possibly multi-study) multinomial model.
///
/// With `K` classes the model carries `K - 1` contrast blocks against the
/// reference class `K`. `intercepts` is studies x contrasts; `betas` holds one
/// contrasts x features block per study. A single-study model is the `M = 1`
/// special case and may be applied to data from any study.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCoefficients {
    pub intercepts: Array2<f64>,
    pub betas: Vec<Array2<f64>>,
    /// Feature transform learned at fit time and replayed on inputs here;
    /// `None` means coefficients act on raw feature values.
    pub standardization: Option<Standardization>,
}

impl ModelCoefficients {
    pub fn zeros(studies: usize, contrasts: usize, features: usize) -> Self {
        Self {
            intercepts: Array2::zeros((studies, contrasts)),
            betas: (0..studies)
                .map(|_| Array2::zeros((contrasts, features)))
                .collect(),
            standardization: None,
        }
    }

    pub fn study_count(&self) -> usize {
        self.intercepts.nrows()
    }

    pub fn contrast_count(&self) -> usize {
        self.intercepts.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.contrast_count() + 1
    }

    pub fn feature_count(&self) -> usize {
        self.betas.first().map_or(0, |b| b.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.len() != self.study_count() {
            return Err(TgdrError::DimensionMismatch(format!(
                "{} coefficient blocks for {} studies",
                self.betas.len(),
                self.study_count()
            )));
        }
        let d = self.feature_count();
        for (m, block) in self.betas.iter().enumerate() {
            if block.nrows() != self.contrast_count() || block.ncols() != d {
                return Err(TgdrError::DimensionMismatch(format!(
                    "coefficient block of study {} is {}x{}, expected {}x{}",
                    m + 1,
                    block.nrows(),
                    block.ncols(),
                    self.contrast_count(),
                    d
                )));
            }
        }
        if let Some(std) = &self.standardization {
            if std.feature_count() != d {
                return Err(TgdrError::DimensionMismatch(format!(
                    "standardization covers {} features, model has {}",
                    std.feature_count(),
                    d
                )));
            }
        }
        Ok(())
    }

    /// Feature mask: true where any study or contrast carries a coefficient
    /// with magnitude strictly above `tolerance`.
    pub fn active_set(&self, tolerance: f64) -> Vec<bool> {
        let mut active = vec![false; self.feature_count()];
        for block in &self.betas {
            for row in block.rows() {
                for (i, &b) in row.iter().enumerate() {
                    if b.abs() > tolerance {
                        active[i] = true;
                    }
                }
            }
        }
        active
    }

    pub fn active_count(&self, tolerance: f64) -> usize {
        self.active_set(tolerance).iter().filter(|&&a| a).count()
    }

    pub fn active_features(&self, tolerance: f64) -> Vec<usize> {
        self.active_set(tolerance)
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(i, _)| i)
            .collect()
    }

}

/// Negative log-likelihood gradients, in the same block layout as
/// [`ModelCoefficients`]. Entry `(m, k)` or `coefficients[m][(k, i)]` is
/// minus the derivative of the log-likelihood with respect to the matching
/// coefficient, so a gradient-descent step on these performs likelihood ascent.
#[derive(Debug, Clone)]
pub struct GradientBlocks {
    pub intercepts: Array2<f64>,
    pub coefficients: Vec<Array2<f64>>,
}

impl GradientBlocks {
    pub fn zeros(studies: usize, contrasts: usize, features: usize) -> Self {
        Self {
            intercepts: Array2::zeros((studies, contrasts)),
            coefficients: (0..studies)
                .map(|_| Array2::zeros((contrasts, features)))
                .collect(),
        }
    }

    /// Coefficient gradients summed over studies: the meta-gradient that
    /// drives thresholding and the stopping rule.
    pub fn summed_coefficients(&self) -> Array2<f64> {
        let mut total = self.coefficients[0].clone();
        for block in &self.coefficients[1..] {
            total += block;
        }
        total
    }
}

/// Computes the log-likelihood and negative gradient in one pass over the
/// data. Features are taken as already being on the model's scale; callers
/// owning a standardized model apply the transform first.
pub(crate) fn likelihood_and_gradient(
    intercepts: &Array2<f64>,
    betas: &[Array2<f64>],
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    study_ids: &[usize],
    data_studies: usize,
) -> Result<(f64, GradientBlocks)> {
    let contrasts = intercepts.ncols();
    let d = features.ncols();
    let mut grad = GradientBlocks::zeros(intercepts.nrows(), contrasts, d);
    let mut ll = 0.0;
    let mut eta = vec![0.0; contrasts];
    for (j, x) in features.rows().into_iter().enumerate() {
        let block = if intercepts.nrows() == 1 {
            0
        } else {
            study_ids[j] - 1
        };
        let y = labels[j];
        let beta = &betas[block];
        let mut eta_max = 0.0f64;
        for k in 0..contrasts {
            let e = (intercepts[(block, k)] + beta.row(k).dot(&x))
                .clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            eta[k] = e;
            if e > eta_max {
                eta_max = e;
            }
        }
        // eta_max >= 0 covers the reference class logit of 0, so every
        // exponent below is <= 0 and the sum cannot overflow.
        let mut denom = (-eta_max).exp();
        for &e in eta.iter() {
            denom += (e - eta_max).exp();
        }
        let log_norm = eta_max + denom.ln();
        ll += if y <= contrasts { eta[y - 1] } else { 0.0 } - log_norm;
        for k in 0..contrasts {
            let p = (eta[k] - eta_max).exp() / denom;
            let r = p - if y == k + 1 { 1.0 } else { 0.0 };
            grad.intercepts[(block, k)] += r;
            grad.coefficients[block].row_mut(k).scaled_add(r, &x);
        }
    }
    let _ = data_studies;
    if !ll.is_finite() {
        return Err(TgdrError::InvalidValue(
            "log-likelihood is not finite".into(),
        ));
    }
    Ok((ll, grad))
}

fn checked_features<'a>(
    coeffs: &ModelCoefficients,
    data: &'a ExpressionDataset,
) -> Result<Array2<f64>> {
    coeffs.validate()?;
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
    if coeffs.study_count() > 1 && coeffs.study_count() != data.study_count() {
        return Err(TgdrError::DimensionMismatch(format!(
            "model has {} study blocks, data has {} studies",
            coeffs.study_count(),
            data.study_count()
        )));
    }
    Ok(match &coeffs.standardization {
        Some(std) => std.apply(data.features()),
        None => data.features().to_owned(),
    })
}

/// Log-likelihood of the data under the model. Multi-study models require
/// matching study structure; a single-study model scores all samples with its
/// one coefficient block.
pub fn log_likelihood(coeffs: &ModelCoefficients, data: &ExpressionDataset) -> Result<f64> {
    let features = checked_features(coeffs, data)?;
    let (ll, _) = likelihood_and_gradient(
        &coeffs.intercepts,
        &coeffs.betas,
        features.view(),
        data.labels(),
        data.study_ids(),
        data.study_count(),
    )?;
    Ok(ll)
}

/// Negative log-likelihood gradient blocks at the given coefficients.
pub fn negative_gradient(
    coeffs: &ModelCoefficients,
    data: &ExpressionDataset,
) -> Result<GradientBlocks> {
    let features = checked_features(coeffs, data)?;
    let (_, grad) = likelihood_and_gradient(
        &coeffs.intercepts,
        &coeffs.betas,
        features.view(),
        data.labels(),
        data.study_ids(),
        data.study_count(),
    )?;
    Ok(grad)
}

/// Class membership probabilities for one sample. `study` is 1-based and only
/// consulted when the model is study-specific.
pub fn class_probabilities(
    coeffs: &ModelCoefficients,
    x: ArrayView1<'_, f64>,
    study: usize,
) -> Result<Array1<f64>> {
    coeffs.validate()?;
    if x.len() != coeffs.feature_count() {
        return Err(TgdrError::DimensionMismatch(format!(
            "sample has {} features, model covers {}",
            x.len(),
            coeffs.feature_count()
        )));
    }
    if study < 1 || (coeffs.study_count() > 1 && study > coeffs.study_count()) {
        return Err(TgdrError::InvalidValue(format!(
            "study {study} outside 1..={}",
            coeffs.study_count()
        )));
    }
    let z;
    let x = match &coeffs.standardization {
        Some(std) => {
            z = std.apply_row(x);
            z.view()
        }
        None => x,
    };
    let block = if coeffs.study_count() == 1 { 0 } else { study - 1 };
    let contrasts = coeffs.contrast_count();
    let beta = &coeffs.betas[block];
    let mut eta = vec![0.0; contrasts];
    let mut eta_max = 0.0f64;
    for k in 0..contrasts {
        let e = (coeffs.intercepts[(block, k)] + beta.row(k).dot(&x))
            .clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        eta[k] = e;
        if e > eta_max {
            eta_max = e;
        }
    }
    let mut denom = (-eta_max).exp();
    for &e in eta.iter() {
        denom += (e - eta_max).exp();
    }
    let mut probs = Array1::zeros(contrasts + 1);
    for k in 0..contrasts {
        probs[k] = (eta[k] - eta_max).exp() / denom;
    }
    probs[contrasts] = (-eta_max).exp() / denom;
    Ok(probs)
}

/// Hard labels and full probability rows for a batch of samples.
#[derive(Debug, Clone)]
pub struct Predictions {
    /// Predicted 1-based class per sample; probability ties break toward the
    /// smaller class index.
    pub labels: Vec<usize>,
    /// Samples x classes probability matrix; rows sum to one.
    pub probabilities: Array2<f64>,
}

/// Predicts every sample of a dataset, routing samples to their study's
/// coefficient block when the model is study-specific.
pub fn predict(coeffs: &ModelCoefficients, data: &ExpressionDataset) -> Result<Predictions> {
    if coeffs.study_count() > 1 && coeffs.study_count() != data.study_count() {
        return Err(TgdrError::DimensionMismatch(format!(
            "model has {} study blocks, data has {} studies",
            coeffs.study_count(),
            data.study_count()
        )));
    }
    predict_rows(coeffs, data.features(), Some(data.study_ids()))
}

/// Predicts raw feature rows. `study_ids` may be omitted for single-study
/// models.
pub fn predict_rows(
    coeffs: &ModelCoefficients,
    features: ArrayView2<'_, f64>,
    study_ids: Option<&[usize]>,
) -> Result<Predictions> {
    coeffs.validate()?;
    if coeffs.study_count() > 1 && study_ids.is_none() {
        return Err(TgdrError::InvalidValue(
            "study-specific model needs study ids to predict".into(),
        ));
    }
    let n = features.nrows();
    if let Some(ids) = study_ids {
        if ids.len() != n {
            return Err(TgdrError::DimensionMismatch(format!(
                "{} study ids for {} samples",
                ids.len(),
                n
            )));
        }
    }
    let kk = coeffs.class_count();
    let mut probabilities = Array2::zeros((n, kk));
    let mut labels = Vec::with_capacity(n);
    for (j, x) in features.rows().into_iter().enumerate() {
        let study = study_ids.map_or(1, |ids| ids[j]);
        let p = class_probabilities(coeffs, x, study)?;
        let mut best = 0usize;
        for k in 1..kk {
            if p[k] > p[best] {
                best = k;
            }
        }
        labels.push(best + 1);
        probabilities.row_mut(j).assign(&p);
    }
    Ok(Predictions {
        labels,
        probabilities,
    })
}
