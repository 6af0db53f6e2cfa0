use ndarray::{Array2, ArrayView2};

use crate::error::{Result, TgdrError};
use crate::model::Predictions;

fn check_probability_matrix(labels: &[usize], probabilities: ArrayView2<'_, f64>) -> Result<()> {
    let n = probabilities.nrows();
    let kk = probabilities.ncols();
    if labels.len() != n {
        return Err(TgdrError::DimensionMismatch(format!(
            "{} labels for {} probability rows",
            labels.len(),
            n
        )));
    }
    if n == 0 || kk < 2 {
        return Err(TgdrError::DimensionMismatch(format!(
            "probability matrix is {n}x{kk}; need samples and at least two classes"
        )));
    }
    for (j, &y) in labels.iter().enumerate() {
        if y < 1 || y > kk {
            return Err(TgdrError::InvalidValue(format!(
                "label {y} of sample {j} outside 1..={kk}"
            )));
        }
    }
    for (j, row) in probabilities.rows().into_iter().enumerate() {
        let mut sum = 0.0;
        for &p in row.iter() {
            if !p.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&p) {
                return Err(TgdrError::InvalidValue(format!(
                    "probability {p} of sample {j} outside [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-8 {
            return Err(TgdrError::InvalidValue(format!(
                "probability row of sample {j} sums to {sum}"
            )));
        }
    }
    Ok(())
}

/// Generalized Brier score, normalized to [0, 1]:
/// the squared distance between one-hot labels and predicted probability
/// rows, averaged over samples and halved. 0 means certainty on the correct
/// class everywhere; a uniform K-class prediction scores (K-1)/(2K).
pub fn gbs(labels: &[usize], probabilities: ArrayView2<'_, f64>) -> Result<f64> {
    check_probability_matrix(labels, probabilities)?;
    let n = probabilities.nrows() as f64;
    let mut total = 0.0;
    for (j, row) in probabilities.rows().into_iter().enumerate() {
        for (k, &p) in row.iter().enumerate() {
            let y = if labels[j] == k + 1 { 1.0 } else { 0.0 };
            total += (y - p) * (y - p);
        }
    }
    Ok(total / (2.0 * n))
}

/// Fraction of samples whose predicted label differs from the truth.
pub fn misclassification_rate(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(TgdrError::DimensionMismatch(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(TgdrError::DimensionMismatch("no samples to score".into()));
    }
    let wrong = truth
        .iter()
        .zip(predicted)
        .filter(|(t, p)| t != p)
        .count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Error rate, Brier score, and confusion counts for one prediction batch.
#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub n_samples: usize,
    pub error_rate: f64,
    pub error_percent: f64,
    pub gbs: f64,
    /// `confusion[(t, p)]` counts samples of true class `t + 1` predicted as
    /// class `p + 1`.
    pub confusion: Array2<usize>,
}

/// Scores predictions against true labels. `class_count` fixes the confusion
/// matrix size and must cover both label sets.
pub fn evaluate(
    truth: &[usize],
    predictions: &Predictions,
    class_count: usize,
) -> Result<EvaluationReport> {
    if predictions.probabilities.ncols() != class_count {
        return Err(TgdrError::DimensionMismatch(format!(
            "probability rows have {} classes, expected {}",
            predictions.probabilities.ncols(),
            class_count
        )));
    }
    let rate = misclassification_rate(truth, &predictions.labels)?;
    let score = gbs(truth, predictions.probabilities.view())?;
    let mut confusion = Array2::zeros((class_count, class_count));
    for (&t, &p) in truth.iter().zip(&predictions.labels) {
        if p < 1 || p > class_count {
            return Err(TgdrError::InvalidValue(format!(
                "predicted label {p} outside 1..={class_count}"
            )));
        }
        confusion[(t - 1, p - 1)] += 1;
    }
    Ok(EvaluationReport {
        n_samples: truth.len(),
        error_rate: rate,
        error_percent: 100.0 * rate,
        gbs: score,
        confusion,
    })
}
