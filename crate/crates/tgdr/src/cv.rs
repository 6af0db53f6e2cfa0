use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ExpressionDataset;
use crate::error::{Result, TgdrError};
use crate::metrics::{gbs, misclassification_rate};
use crate::model::predict;
use crate::rng::stream_rng;
use crate::solver::{fit_path, RegularizationPath, TgdrConfig};

/// Which fit backs a cross-validation, bagging, or replication run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitterKind {
    /// Single-study threshold gradient descent; multi-study data is pooled
    /// into one study first.
    Tgdr,
    /// Joint multi-study fit with summed-gradient thresholding.
    Meta,
}

/// Dispatches to the fitter, pooling studies when the plain fit meets
/// multi-study data.
pub fn fit_with(
    fitter: FitterKind,
    data: &ExpressionDataset,
    config: &TgdrConfig,
) -> Result<RegularizationPath> {
    match fitter {
        FitterKind::Tgdr => {
            if data.study_count() > 1 {
                fit_path(&data.as_single_study(), config)
            } else {
                fit_path(data, config)
            }
        }
        FitterKind::Meta => crate::meta::fit_meta_path(data, config),
    }
}

/// The default threshold grid 0, 0.1, ..., 1.0.
pub fn default_tau_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Cross-validation settings on top of a base fit configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub tau_grid: Vec<f64>,
    /// Longest path tried; the step grid is every `stride`-th step up to it.
    pub max_steps: usize,
    pub stride: usize,
    /// Keep class (and, for the meta fitter, study-class) proportions equal
    /// across folds. Plain random assignment is the fallback for tiny data.
    pub stratified: bool,
    pub fitter: FitterKind,
    /// Supplies delta_v, standardization, tolerance, and the seed that
    /// drives fold assignment.
    pub base: TgdrConfig,
}

impl CvOptions {
    pub fn new(fitter: FitterKind) -> Self {
        Self {
            folds: 5,
            tau_grid: default_tau_grid(),
            max_steps: 300,
            stride: 10,
            stratified: true,
            fitter,
            base: TgdrConfig::default(),
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvGridPoint {
    pub tau: f64,
    pub steps: usize,
    pub error_percent: f64,
    pub gbs: f64,
}

/// Cross-validation outcome: the full grid, the chosen setting, and the
/// out-of-fold predictions behind the chosen scores.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub grid: Vec<CvGridPoint>,
    pub best_tau: f64,
    pub best_steps: usize,
    pub best_error_percent: f64,
    pub best_gbs: f64,
    pub folds: usize,
    pub seed: u64,
    /// Fold index (0-based) each sample was held out in.
    pub fold_assignment: Vec<usize>,
    /// Out-of-fold predicted label per sample at the chosen setting.
    pub oof_predicted: Vec<usize>,
    /// Out-of-fold probability rows at the chosen setting.
    pub oof_probabilities: Array2<f64>,
}

impl CvResult {
    /// The chosen setting as a ready-to-use fit configuration.
    pub fn best_config(&self, base: &TgdrConfig) -> TgdrConfig {
        TgdrConfig {
            tau: self.best_tau,
            max_steps: self.best_steps,
            snapshot_stride: self.best_steps.max(1),
            ..base.clone()
        }
    }
}

/// Assigns samples to folds. Stratified assignment shuffles within each
/// stratum (class, or study-class pair when `by_study`) and deals strata
/// through a rolling fold counter, so both stratum and overall fold sizes
/// stay within one of each other.
pub fn assign_folds(
    data: &ExpressionDataset,
    folds: usize,
    seed: u64,
    stratified: bool,
    by_study: bool,
) -> Result<Vec<usize>> {
    let n = data.n_samples();
    if folds < 2 {
        return Err(TgdrError::InvalidConfig(format!(
            "{folds} folds; need at least 2"
        )));
    }
    if folds > n {
        return Err(TgdrError::InvalidConfig(format!(
            "{folds} folds for {n} samples"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut assignment = vec![0usize; n];
    if !stratified {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for (pos, &j) in order.iter().enumerate() {
            assignment[j] = pos % folds;
        }
        return Ok(assignment);
    }
    let mut strata: std::collections::BTreeMap<(usize, usize), Vec<usize>> =
        std::collections::BTreeMap::new();
    for j in 0..n {
        let key = (
            if by_study { data.study_ids()[j] } else { 0 },
            data.labels()[j],
        );
        strata.entry(key).or_default().push(j);
    }
    for ((study, class), members) in &strata {
        if members.len() < folds {
            let what = if by_study {
                format!("study {study}, class {class}")
            } else {
                format!("class {class}")
            };
            return Err(TgdrError::Stratification(format!(
                "{what} has {} samples for {folds} folds",
                members.len()
            )));
        }
    }
    let mut counter = rng.random_range(0..folds);
    for members in strata.into_values() {
        let mut members = members;
        members.shuffle(&mut rng);
        for j in members {
            assignment[j] = counter % folds;
            counter += 1;
        }
    }
    Ok(assignment)
}

/// Grid search over (tau, steps) by k-fold cross-validation.
///
/// Every fold fits one path per tau and scores its held-out samples at every
/// recorded step, so the whole step grid costs one fit. Scores pool the
/// out-of-fold predictions of all folds. The winner minimizes error percent,
/// breaking ties by lower Brier score, then fewer steps, then smaller tau.
pub fn k_fold_cv(data: &ExpressionDataset, options: &CvOptions) -> Result<CvResult> {
    options.base.validate()?;
    if options.tau_grid.is_empty() {
        return Err(TgdrError::InvalidConfig("empty tau grid".into()));
    }
    for &t in &options.tau_grid {
        if !(0.0..=1.0).contains(&t) {
            return Err(TgdrError::InvalidConfig(format!(
                "tau {t} outside [0, 1]"
            )));
        }
    }
    if options.stride == 0 {
        return Err(TgdrError::InvalidConfig("stride must be at least 1".into()));
    }
    let by_study = options.fitter == FitterKind::Meta && data.study_count() > 1;
    let assignment = assign_folds(
        data,
        options.folds,
        options.base.seed,
        options.stratified,
        by_study,
    )?;
    let n = data.n_samples();
    let kk = data.class_count();
    let mut step_grid: Vec<usize> = (0..=options.max_steps)
        .step_by(options.stride)
        .collect();
    if *step_grid.last().unwrap() != options.max_steps {
        step_grid.push(options.max_steps);
    }

    let fold_rows: Vec<Vec<usize>> = (0..options.folds)
        .map(|f| {
            (0..n)
                .filter(|&j| assignment[j] == f)
                .collect()
        })
        .collect();
    let train_rows: Vec<Vec<usize>> = (0..options.folds)
        .map(|f| {
            (0..n)
                .filter(|&j| assignment[j] != f)
                .collect()
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..options.folds)
        .flat_map(|f| (0..options.tau_grid.len()).map(move |t| (f, t)))
        .collect();
    let per_job: Vec<Result<Vec<crate::model::Predictions>>> = jobs
        .par_iter()
        .map(|&(f, t)| {
            let train = data.subset(&train_rows[f])?;
            let held_out = data.subset(&fold_rows[f])?;
            let config = TgdrConfig {
                tau: options.tau_grid[t],
                max_steps: options.max_steps,
                snapshot_stride: options.stride,
                ..options.base.clone()
            };
            let path = fit_with(options.fitter, &train, &config)?;
            step_grid
                .iter()
                .map(|&k| predict(&path.model_at_or_last(k), &held_out))
                .collect()
        })
        .collect();

    // (tau, step) -> pooled out-of-fold predictions across folds.
    let mut oof_labels =
        vec![vec![vec![0usize; n]; step_grid.len()]; options.tau_grid.len()];
    let mut oof_probs =
        vec![vec![Array2::zeros((n, kk)); step_grid.len()]; options.tau_grid.len()];
    for (&(f, t), outcome) in jobs.iter().zip(per_job) {
        let by_step = outcome?;
        for (s, preds) in by_step.iter().enumerate() {
            for (pos, &j) in fold_rows[f].iter().enumerate() {
                oof_labels[t][s][j] = preds.labels[pos];
                oof_probs[t][s]
                    .row_mut(j)
                    .assign(&preds.probabilities.row(pos));
            }
        }
    }

    let mut grid = Vec::with_capacity(options.tau_grid.len() * step_grid.len());
    let mut best: Option<(f64, f64, usize, f64, usize, usize)> = None;
    for (t, &tau) in options.tau_grid.iter().enumerate() {
        for (s, &steps) in step_grid.iter().enumerate() {
            let error_percent =
                100.0 * misclassification_rate(data.labels(), &oof_labels[t][s])?;
            let score = gbs(data.labels(), oof_probs[t][s].view())?;
            grid.push(CvGridPoint {
                tau,
                steps,
                error_percent,
                gbs: score,
            });
            let key = (error_percent, score, steps, tau, t, s);
            let better = match &best {
                None => true,
                Some(b) => (key.0, key.1, key.2, key.3) < (b.0, b.1, b.2, b.3),
            };
            if better {
                best = Some(key);
            }
        }
    }
    let (best_error_percent, best_gbs, best_steps, best_tau, bt, bs) =
        best.expect("nonempty grid");
    Ok(CvResult {
        grid,
        best_tau,
        best_steps,
        best_error_percent,
        best_gbs,
        folds: options.folds,
        seed: options.base.seed,
        fold_assignment: assignment,
        oof_predicted: oof_labels[bt][bs].clone(),
        oof_probabilities: oof_probs[bt][bs].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labeled_dataset(n: usize, d: usize, seed: u64) -> ExpressionDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Array2::zeros((n, d));
        let mut labels = Vec::new();
        for j in 0..n {
            for i in 0..d {
                features[(j, i)] = rng.random::<f64>() * 2.0 - 1.0;
            }
            let p = 1.0 / (1.0 + (-3.0 * features[(j, 0)]).exp());
            labels.push(if rng.random::<f64>() < p { 1 } else { 2 });
        }
        ExpressionDataset::single_study(features, labels, 2).unwrap()
    }

    #[test]
    fn leave_one_out_partitions_every_sample() {
        let data = labeled_dataset(6, 2, 3);
        let assignment = assign_folds(&data, 6, 9, false, false).unwrap();
        let mut seen = vec![0usize; 6];
        for &f in &assignment {
            seen[f] += 1;
        }
        assert_eq!(seen, vec![1; 6]);
    }

    #[test]
    fn stratified_folds_balance_classes_and_sizes() {
        let mut labels = vec![1; 7];
        labels.extend(vec![2; 5]);
        labels.extend(vec![3; 3]);
        let n = labels.len();
        let features = Array2::from_shape_fn((n, 2), |(j, i)| (j * 2 + i) as f64);
        let data = ExpressionDataset::single_study(features, labels, 3).unwrap();
        let assignment = assign_folds(&data, 3, 4, true, false).unwrap();
        let mut fold_sizes = vec![0usize; 3];
        let mut per_class = vec![vec![0usize; 3]; 3];
        for j in 0..n {
            fold_sizes[assignment[j]] += 1;
            per_class[data.labels()[j] - 1][assignment[j]] += 1;
        }
        assert!(fold_sizes.iter().max().unwrap() - fold_sizes.iter().min().unwrap() <= 1);
        for counts in per_class {
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(max - min <= 1, "class spread {counts:?}");
        }
    }

    #[test]
    fn stratification_rejects_scarce_classes() {
        let features = Array2::zeros((5, 1));
        let data =
            ExpressionDataset::single_study(features, vec![1, 1, 1, 1, 2], 2).unwrap();
        assert!(matches!(
            assign_folds(&data, 2, 0, true, false),
            Err(TgdrError::Stratification(_))
        ));
        assert!(assign_folds(&data, 2, 0, false, false).is_ok());
    }

    fn quick_options() -> CvOptions {
        CvOptions {
            folds: 3,
            tau_grid: vec![0.0, 0.5, 1.0],
            max_steps: 40,
            stride: 20,
            ..CvOptions::new(FitterKind::Tgdr)
        }
    }

    #[test]
    fn best_scores_match_stored_fold_predictions() {
        let data = labeled_dataset(24, 4, 8);
        let result = k_fold_cv(&data, &quick_options()).unwrap();
        let recomputed_error = 100.0
            * misclassification_rate(data.labels(), &result.oof_predicted).unwrap();
        assert_eq!(recomputed_error, result.best_error_percent);
        let recomputed_gbs =
            gbs(data.labels(), result.oof_probabilities.view()).unwrap();
        assert_eq!(recomputed_gbs, result.best_gbs);
        // Chosen point exists in the reported grid with the same scores.
        assert!(result.grid.iter().any(|g| g.tau == result.best_tau
            && g.steps == result.best_steps
            && g.error_percent == result.best_error_percent));
    }

    #[test]
    fn memorizable_features_do_not_leak_across_folds() {
        // One indicator column per sample: a fit can memorize its training
        // rows but carries no information about held-out rows, so honest
        // cross-validation cannot score well.
        let n = 8;
        let mut features = Array2::zeros((n, n));
        for j in 0..n {
            features[(j, j)] = 5.0;
        }
        let labels = vec![1, 2, 1, 2, 1, 2, 1, 2];
        let data = ExpressionDataset::single_study(features, labels, 2).unwrap();
        let options = CvOptions {
            folds: 4,
            tau_grid: vec![0.0],
            max_steps: 200,
            stride: 50,
            base: TgdrConfig {
                standardize: false,
                ..TgdrConfig::default()
            },
            ..CvOptions::new(FitterKind::Tgdr)
        };
        let result = k_fold_cv(&data, &options).unwrap();
        assert!(
            result.best_error_percent >= 25.0,
            "cross-validation error {} suggests fold leakage",
            result.best_error_percent
        );
    }

    #[test]
    fn same_seed_reproduces_the_result() {
        let data = labeled_dataset(21, 3, 12);
        let a = k_fold_cv(&data, &quick_options()).unwrap();
        let b = k_fold_cv(&data, &quick_options()).unwrap();
        assert_eq!(a.fold_assignment, b.fold_assignment);
        assert_eq!(a.best_tau, b.best_tau);
        assert_eq!(a.best_steps, b.best_steps);
        assert_eq!(a.oof_probabilities, b.oof_probabilities);
        let mut other = quick_options();
        other.base.seed = 99;
        let c = k_fold_cv(&data, &other).unwrap();
        assert_ne!(a.fold_assignment, c.fold_assignment);
    }

    #[test]
    fn informative_data_beats_the_null_setting() {
        let data = labeled_dataset(36, 3, 21);
        let result = k_fold_cv(&data, &quick_options()).unwrap();
        assert!(result.best_steps > 0);
        assert_abs_diff_eq!(
            result.best_gbs,
            gbs(data.labels(), result.oof_probabilities.view()).unwrap()
        );
        assert!(result.best_error_percent < 50.0);
    }
}
