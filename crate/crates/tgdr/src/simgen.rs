use ndarray::{Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagging::{bagging_run, refit_restricted};
use crate::cv::{k_fold_cv, CvOptions, FitterKind};
use crate::dataset::{default_feature_names, ExpressionDataset};
use crate::error::{Result, TgdrError};
use crate::model::{predict, ModelCoefficients};
use crate::rng::{derive_seed, stream_rng};
use crate::solver::{fit_path, TgdrConfig};

/// Dependence structure of the simulated features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrelationMode {
    /// All features independent standard normal.
    Independent,
    /// Each informative feature X1..X4 is paired with a correlated partner:
    /// cor(X1,X5) = cor(X3,X7) = 0.8 and cor(X2,X6) = cor(X4,X8) = -0.8.
    CorrelatedPairs,
}

/// A three-class simulation design with four informative features.
///
/// Class weights are proportional to (1, e^f1, e^f2) for classes (1, 2, 3)
/// with f1 = 0.5 - 2 X1 + 1.2 X2 + 0.8 X3 and
/// f2 = -1.5 + 1.7 X1 - 1.5 X2 - X4, so the informative features are X1..X4
/// and everything else is noise. Each sample is labeled with the class whose
/// weight is largest, which makes the label a deterministic function of the
/// features: a model that recovers the four informative coefficients can
/// classify perfectly, and observed test error measures estimation quality
/// alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimDesign {
    pub n_train: usize,
    pub n_test: usize,
    pub feature_count: usize,
    pub mode: CorrelationMode,
    pub seed: u64,
}

impl SimDesign {
    pub fn independent(seed: u64) -> Self {
        Self {
            n_train: 100,
            n_test: 200,
            feature_count: 100,
            mode: CorrelationMode::Independent,
            seed,
        }
    }

    pub fn correlated(seed: u64) -> Self {
        Self {
            mode: CorrelationMode::CorrelatedPairs,
            ..Self::independent(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(TgdrError::InvalidConfig(
                "train and test sizes must be positive".into(),
            ));
        }
        let needed = match self.mode {
            CorrelationMode::Independent => 4,
            CorrelationMode::CorrelatedPairs => 8,
        };
        if self.feature_count < needed {
            return Err(TgdrError::InvalidConfig(format!(
                "{} features; this design needs at least {needed}",
                self.feature_count
            )));
        }
        Ok(())
    }
}

/// 0-based (source, partner, correlation) triples of the paired design.
const CORRELATED_PAIRS: [(usize, usize, f64); 4] =
    [(0, 4, 0.8), (1, 5, -0.8), (2, 6, 0.8), (3, 7, -0.8)];

/// Checks the feature covariance implied by the pairs is positive definite
/// before any sampling happens.
fn validate_covariance(d: usize, pairs: &[(usize, usize, f64)]) -> Result<()> {
    let mut cov = nalgebra::DMatrix::<f64>::identity(d, d);
    for &(a, b, rho) in pairs {
        cov[(a, b)] = rho;
        cov[(b, a)] = rho;
    }
    let eigen = nalgebra::SymmetricEigen::new(cov);
    let min = eigen.eigenvalues.min();
    if min <= 0.0 {
        return Err(TgdrError::InvalidValue(format!(
            "feature covariance is not positive definite (smallest eigenvalue {min})"
        )));
    }
    Ok(())
}

/// Per-class log-weights of the generator for one feature row; class 1 is
/// the reference with log-weight 0.
fn generator_logits(x: ArrayView1<'_, f64>) -> [f64; 3] {
    let f1 = 0.5 - 2.0 * x[0] + 1.2 * x[1] + 0.8 * x[2];
    let f2 = -1.5 + 1.7 * x[0] - 1.5 * x[1] - x[3];
    [0.0, f1, f2]
}

/// The generator's normalized class weights for one feature row.
pub fn class_weights(x: ArrayView1<'_, f64>) -> [f64; 3] {
    let logits = generator_logits(x);
    let shift = logits[0].max(logits[1]).max(logits[2]);
    let w = [
        (logits[0] - shift).exp(),
        (logits[1] - shift).exp(),
        (logits[2] - shift).exp(),
    ];
    let z = w[0] + w[1] + w[2];
    [w[0] / z, w[1] / z, w[2] / z]
}

/// The 1-based label of a feature row: the class with the largest weight.
/// Ties break toward the lowest class index; with continuous features they
/// occur with probability zero.
pub fn assigned_label(x: ArrayView1<'_, f64>) -> usize {
    let logits = generator_logits(x);
    let mut best = 0;
    for (k, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = k;
        }
    }
    best + 1
}

fn draw_samples(
    design: &SimDesign,
    rng: &mut rand_chacha::ChaCha8Rng,
    n: usize,
) -> Result<ExpressionDataset> {
    let d = design.feature_count;
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        for i in 0..d {
            features[(j, i)] = StandardNormal.sample(rng);
        }
        if design.mode == CorrelationMode::CorrelatedPairs {
            for &(a, b, rho) in &CORRELATED_PAIRS {
                features[(j, b)] =
                    rho * features[(j, a)] + (1.0 - rho * rho).sqrt() * features[(j, b)];
            }
        }
        labels.push(assigned_label(features.row(j)));
    }
    ExpressionDataset::new(
        features,
        labels,
        3,
        vec![1; n],
        1,
        default_feature_names(d),
    )
}

/// Draws one train/test pair from the replicate's own random stream, so any
/// replicate is reproducible without generating the ones before it.
pub fn generate_replicate(
    design: &SimDesign,
    replicate: u64,
) -> Result<(ExpressionDataset, ExpressionDataset)> {
    design.validate()?;
    if design.mode == CorrelationMode::CorrelatedPairs {
        validate_covariance(design.feature_count, &CORRELATED_PAIRS)?;
    }
    let mut rng = stream_rng(design.seed, replicate);
    let train = draw_samples(design, &mut rng, design.n_train)?;
    let test = draw_samples(design, &mut rng, design.n_test)?;
    Ok((train, test))
}

/// Single train/test draw (replicate 0).
pub fn generate(design: &SimDesign) -> Result<(ExpressionDataset, ExpressionDataset)> {
    generate_replicate(design, 0)
}

/// Controls of one replicated benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateOptions {
    pub replicates: usize,
    pub folds: usize,
    pub tau_grid: Vec<f64>,
    pub cv_max_steps: usize,
    pub cv_stride: usize,
    pub n_bootstrap: usize,
    /// Selection-frequency cutoffs reported as extra model columns.
    pub cutoffs: Vec<f64>,
    pub base: TgdrConfig,
}

impl Default for ReplicateOptions {
    fn default() -> Self {
        Self {
            replicates: 50,
            folds: 5,
            tau_grid: crate::cv::default_tau_grid(),
            cv_max_steps: 1500,
            cv_stride: 25,
            n_bootstrap: 100,
            cutoffs: vec![0.4, 0.8],
            base: TgdrConfig::default(),
        }
    }
}

/// Per-replicate outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub tau: f64,
    pub steps: usize,
    pub active_size: usize,
    pub error_percent: f64,
    /// Whether each of X1..X4 was selected by the tuned fit.
    pub informative_selected: [bool; 4],
    /// Bagging selection frequency of X1..X4.
    pub informative_bf: [f64; 4],
    /// Refit model size at each requested cutoff.
    pub cutoff_sizes: Vec<usize>,
    /// Test error percent at each requested cutoff.
    pub cutoff_errors: Vec<f64>,
}

/// Mean outcome of one frequency cutoff across replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutoffSummary {
    pub cutoff: f64,
    pub mean_size: f64,
    pub mean_error_percent: f64,
}

/// Aggregated benchmark over replicated simulated datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub rows: Vec<ReplicateRow>,
    /// Percent of replicates selecting each of X1..X4.
    pub selection_percent: [f64; 4],
    pub mean_active_size: f64,
    pub mean_error_percent: f64,
    pub mean_informative_bf: [f64; 4],
    pub cutoffs: Vec<CutoffSummary>,
    /// Replicates dropped from the averages, with the error that excluded
    /// them.
    pub failures: Vec<(usize, String)>,
}

impl ReplicateSummary {
    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "replicates: {} completed, {} failed\n",
            self.rows.len(),
            self.failures.len()
        ));
        out.push_str("selection %:");
        for (i, pct) in self.selection_percent.iter().enumerate() {
            out.push_str(&format!(" X{}={pct:.1}", i + 1));
        }
        out.push('\n');
        out.push_str(&format!(
            "tuned model: mean size {:.2}, mean test error {:.2}%\n",
            self.mean_active_size, self.mean_error_percent
        ));
        out.push_str("mean BF:");
        for (i, bf) in self.mean_informative_bf.iter().enumerate() {
            out.push_str(&format!(" X{}={bf:.2}", i + 1));
        }
        out.push('\n');
        for c in &self.cutoffs {
            out.push_str(&format!(
                "BF > {:.0}%: mean size {:.2}, mean test error {:.2}%\n",
                100.0 * c.cutoff,
                c.mean_size,
                c.mean_error_percent
            ));
        }
        for (r, message) in &self.failures {
            out.push_str(&format!("replicate {r} failed: {message}\n"));
        }
        out
    }
}

fn run_one_replicate(
    design: &SimDesign,
    options: &ReplicateOptions,
    r: usize,
) -> Result<ReplicateRow> {
    let (train, test) = generate_replicate(design, r as u64)?;
    let cv_options = CvOptions {
        folds: options.folds,
        tau_grid: options.tau_grid.clone(),
        max_steps: options.cv_max_steps,
        stride: options.cv_stride,
        stratified: true,
        fitter: FitterKind::Tgdr,
        base: TgdrConfig {
            seed: derive_seed(design.seed, 1, r as u64),
            ..options.base.clone()
        },
    };
    let cv = k_fold_cv(&train, &cv_options)?;
    let tuned_config = TgdrConfig {
        tau: cv.best_tau,
        max_steps: cv.best_steps,
        snapshot_stride: cv.best_steps.max(1),
        seed: derive_seed(design.seed, 2, r as u64),
        ..options.base.clone()
    };
    let tuned = fit_path(&train, &tuned_config)?.final_model();
    let active = tuned.active_set(tuned_config.selection_tolerance);
    let preds = predict(&tuned, &test)?;
    let error_percent = 100.0
        * crate::metrics::misclassification_rate(test.labels(), &preds.labels)?;

    let report = bagging_run(&train, &tuned_config, options.n_bootstrap, FitterKind::Tgdr)?;
    let mut cutoff_sizes = Vec::with_capacity(options.cutoffs.len());
    let mut cutoff_errors = Vec::with_capacity(options.cutoffs.len());
    for &cutoff in &options.cutoffs {
        let keep: Vec<usize> = report
            .frequencies
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > cutoff)
            .map(|(i, _)| i)
            .collect();
        let model = if keep.is_empty() {
            ModelCoefficients::zeros(1, 2, train.feature_count())
        } else {
            refit_restricted(&train, &keep, FitterKind::Tgdr, &tuned_config)?
        };
        let cut_preds = predict(&model, &test)?;
        cutoff_sizes.push(model.active_count(tuned_config.selection_tolerance));
        cutoff_errors.push(
            100.0
                * crate::metrics::misclassification_rate(
                    test.labels(),
                    &cut_preds.labels,
                )?,
        );
    }
    Ok(ReplicateRow {
        replicate: r,
        tau: cv.best_tau,
        steps: cv.best_steps,
        active_size: active.iter().filter(|&&a| a).count(),
        error_percent,
        informative_selected: [active[0], active[1], active[2], active[3]],
        informative_bf: [
            report.frequencies[0],
            report.frequencies[1],
            report.frequencies[2],
            report.frequencies[3],
        ],
        cutoff_sizes,
        cutoff_errors,
    })
}

/// Replicated end-to-end benchmark: per replicate, generate a train/test
/// pair, tune (tau, steps) by cross-validation, refit, score the test set,
/// and run a bagging pass; then average across replicates. Failed replicates
/// are excluded from averages and listed.
pub fn run_replicates(
    design: &SimDesign,
    options: &ReplicateOptions,
) -> Result<ReplicateSummary> {
    design.validate()?;
    if options.replicates == 0 {
        return Err(TgdrError::InvalidConfig(
            "replicate count must be at least 1".into(),
        ));
    }
    let outcomes: Vec<(usize, std::result::Result<ReplicateRow, String>)> = (0..options
        .replicates)
        .into_par_iter()
        .map(|r| {
            (
                r,
                run_one_replicate(design, options, r).map_err(|e| e.to_string()),
            )
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(message) => failures.push((r, message)),
        }
    }
    if rows.is_empty() {
        return Err(TgdrError::InvalidValue(format!(
            "all {} replicates failed; first failure: {}",
            options.replicates,
            failures
                .first()
                .map(|(_, m)| m.as_str())
                .unwrap_or("unknown")
        )));
    }
    let count = rows.len() as f64;
    let mut selection_percent = [0.0f64; 4];
    let mut mean_bf = [0.0f64; 4];
    for row in &rows {
        for i in 0..4 {
            if row.informative_selected[i] {
                selection_percent[i] += 1.0;
            }
            mean_bf[i] += row.informative_bf[i];
        }
    }
    for i in 0..4 {
        selection_percent[i] *= 100.0 / count;
        mean_bf[i] /= count;
    }
    let mean_active_size = rows.iter().map(|r| r.active_size as f64).sum::<f64>() / count;
    let mean_error_percent = rows.iter().map(|r| r.error_percent).sum::<f64>() / count;
    let cutoffs = options
        .cutoffs
        .iter()
        .enumerate()
        .map(|(c, &cutoff)| CutoffSummary {
            cutoff,
            mean_size: rows.iter().map(|r| r.cutoff_sizes[c] as f64).sum::<f64>() / count,
            mean_error_percent: rows.iter().map(|r| r.cutoff_errors[c]).sum::<f64>()
                / count,
        })
        .collect();
    Ok(ReplicateSummary {
        rows,
        selection_percent,
        mean_active_size,
        mean_error_percent,
        mean_informative_bf: mean_bf,
        cutoffs,
        failures,
    })
}
