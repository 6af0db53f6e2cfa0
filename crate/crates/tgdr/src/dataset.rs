use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgdrError};

/// A labeled expression matrix, optionally split across studies.
///
/// Rows are samples, columns are features. Labels are 1-based class indices
/// in `1..=class_count`, with the largest index acting as the reference class
/// throughout. Study ids are 1-based indices in `1..=study_count`; single-study
/// data simply uses study 1 everywhere.
#[derive(Debug, Clone)]
pub struct ExpressionDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    study_ids: Vec<usize>,
    feature_names: Vec<String>,
    class_count: usize,
    study_count: usize,
}

impl ExpressionDataset {
    /// Builds a dataset, validating shapes, label and study ranges, and that
    /// every feature value is finite.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        class_count: usize,
        study_ids: Vec<usize>,
        study_count: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        let d = features.ncols();
        if n == 0 || d == 0 {
            return Err(TgdrError::DimensionMismatch(format!(
                "feature matrix is {n}x{d}; need at least one sample and one feature"
            )));
        }
        if labels.len() != n {
            return Err(TgdrError::DimensionMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                n
            )));
        }
        if study_ids.len() != n {
            return Err(TgdrError::DimensionMismatch(format!(
                "{} study ids for {} samples",
                study_ids.len(),
                n
            )));
        }
        if feature_names.len() != d {
            return Err(TgdrError::DimensionMismatch(format!(
                "{} feature names for {} features",
                feature_names.len(),
                d
            )));
        }
        if class_count < 2 {
            return Err(TgdrError::InvalidValue(format!(
                "class count {class_count} is below 2"
            )));
        }
        if study_count < 1 {
            return Err(TgdrError::InvalidValue("study count is zero".into()));
        }
        for (j, &y) in labels.iter().enumerate() {
            if y < 1 || y > class_count {
                return Err(TgdrError::InvalidValue(format!(
                    "label {y} of sample {j} is outside 1..={class_count}"
                )));
            }
        }
        for (j, &s) in study_ids.iter().enumerate() {
            if s < 1 || s > study_count {
                return Err(TgdrError::InvalidValue(format!(
                    "study id {s} of sample {j} is outside 1..={study_count}"
                )));
            }
        }
        if let Some(((j, i), v)) = features
            .indexed_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(ix, v)| (ix, *v))
        {
            return Err(TgdrError::InvalidValue(format!(
                "feature value {v} at sample {j}, feature {i} is not finite"
            )));
        }
        Ok(Self {
            features,
            labels,
            study_ids,
            feature_names,
            class_count,
            study_count,
        })
    }

    /// Convenience constructor for single-study data with generated feature names.
    pub fn single_study(
        features: Array2<f64>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        let names = default_feature_names(features.ncols());
        Self::new(features, labels, class_count, vec![1; n], 1, names)
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_count(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn study_count(&self) -> usize {
        self.study_count
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn sample(&self, j: usize) -> ArrayView1<'_, f64> {
        self.features.row(j)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn study_ids(&self) -> &[usize] {
        &self.study_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Number of samples per class, indexed by `class - 1`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count];
        for &y in &self.labels {
            counts[y - 1] += 1;
        }
        counts
    }

    /// Samples per study-class cell; `cell[(m, k)]` counts study `m + 1`,
    /// class `k + 1`.
    pub fn cell_counts(&self) -> Array2<usize> {
        let mut cells = Array2::zeros((self.study_count, self.class_count));
        for (&s, &y) in self.study_ids.iter().zip(&self.labels) {
            cells[(s - 1, y - 1)] += 1;
        }
        cells
    }

    /// Row indices belonging to the given 1-based study.
    pub fn study_rows(&self, study: usize) -> Vec<usize> {
        self.study_ids
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == study)
            .map(|(j, _)| j)
            .collect()
    }

    /// New dataset containing the given rows (duplicates allowed, as in
    /// bootstrap resampling). Class and study counts are inherited.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(TgdrError::DimensionMismatch(
                "row subset is empty".into(),
            ));
        }
        for &j in rows {
            if j >= self.n_samples() {
                return Err(TgdrError::InvalidValue(format!(
                    "row index {j} out of range for {} samples",
                    self.n_samples()
                )));
            }
        }
        let features = self.features.select(Axis(0), rows);
        let labels = rows.iter().map(|&j| self.labels[j]).collect();
        let study_ids = rows.iter().map(|&j| self.study_ids[j]).collect();
        Self::new(
            features,
            labels,
            self.class_count,
            study_ids,
            self.study_count,
            self.feature_names.clone(),
        )
    }

    /// New dataset restricted to the given feature columns.
    pub fn select_features(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(TgdrError::DimensionMismatch(
                "feature subset is empty".into(),
            ));
        }
        for &i in columns {
            if i >= self.feature_count() {
                return Err(TgdrError::InvalidValue(format!(
                    "feature index {i} out of range for {} features",
                    self.feature_count()
                )));
            }
        }
        let features = self.features.select(Axis(1), columns);
        let names = columns
            .iter()
            .map(|&i| self.feature_names[i].clone())
            .collect();
        Self::new(
            features,
            self.labels.clone(),
            self.class_count,
            self.study_ids.clone(),
            self.study_count,
            names,
        )
    }

    /// Same samples with study structure erased: every sample in study 1.
    /// Used to fit a pooled model on multi-study data.
    pub fn as_single_study(&self) -> Self {
        let mut pooled = self.clone();
        pooled.study_ids = vec![1; self.n_samples()];
        pooled.study_count = 1;
        pooled
    }

    /// Errors unless every study contains at least one sample of every class.
    pub fn require_full_cells(&self) -> Result<()> {
        let cells = self.cell_counts();
        for m in 0..self.study_count {
            for k in 0..self.class_count {
                if cells[(m, k)] == 0 {
                    return Err(TgdrError::MissingClassInStudy {
                        study: m + 1,
                        class: k + 1,
                    });
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn default_feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("X{i}")).collect()
}

/// Per-feature centering and scaling learned from training data and replayed
/// verbatim at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    /// Column means and sample standard deviations of a feature matrix.
    /// Constant columns keep their zero sd; `scale` treats them as 1 so the
    /// transformed column is exactly zero.
    pub fn fit(features: ArrayView2<'_, f64>) -> Self {
        let n = features.nrows();
        let means: Vec<f64> = features
            .axis_iter(Axis(1))
            .map(|col| col.sum() / n as f64)
            .collect();
        let sds: Vec<f64> = features
            .axis_iter(Axis(1))
            .zip(&means)
            .map(|(col, &m)| {
                if n < 2 {
                    return 0.0;
                }
                let ss: f64 = col.iter().map(|&v| (v - m) * (v - m)).sum();
                (ss / (n as f64 - 1.0)).sqrt()
            })
            .collect();
        Self { means, sds }
    }

    pub fn feature_count(&self) -> usize {
        self.means.len()
    }

    fn scale(&self, i: usize) -> f64 {
        let sd = self.sds[i];
        if sd > 0.0 {
            sd
        } else {
            1.0
        }
    }

    /// Transforms a full matrix (trains and test sets alike).
    pub fn apply(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = features.to_owned();
        for (i, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let m = self.means[i];
            let s = self.scale(i);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    /// Transforms a single sample row.
    pub fn apply_row(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_iter(
            x.iter()
                .enumerate()
                .map(|(i, &v)| (v - self.means[i]) / self.scale(i)),
        )
    }
}
