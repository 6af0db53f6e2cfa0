use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{fit_with, FitterKind};
use crate::dataset::{ExpressionDataset, Standardization};
use crate::error::{Result, TgdrError};
use crate::metrics::{gbs, misclassification_rate};
use crate::model::{predict, ModelCoefficients, Predictions};
use crate::rng::stream_rng;
use crate::solver::TgdrConfig;

/// Redraw limit before a bootstrap replicate gives up on covering every
/// class.
const MAX_RESAMPLE_ATTEMPTS: usize = 1000;

/// Member fits may fail on up to this fraction of replicates before the
/// whole run aborts.
const FAILURE_BUDGET: f64 = 0.10;

/// Draws `n` samples with replacement. A draw leaving any originally
/// populated class empty (or any study-class cell, for multi-study data) is
/// rejected and redrawn. Replicates index independent random streams, so
/// members can be regenerated individually.
pub fn bootstrap_resample(
    data: &ExpressionDataset,
    seed: u64,
    replicate: u64,
) -> Result<ExpressionDataset> {
    let n = data.n_samples();
    let mut rng = stream_rng(seed, replicate.wrapping_add(1));
    let class_present: Vec<bool> = data.class_counts().iter().map(|&c| c > 0).collect();
    let check_cells = data.study_count() > 1;
    let cells_present = data.cell_counts().mapv(|c| c > 0);
    for _ in 0..MAX_RESAMPLE_ATTEMPTS {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut class_seen = vec![false; data.class_count()];
        let mut cells_seen = Array2::from_elem(cells_present.dim(), false);
        for &j in &rows {
            class_seen[data.labels()[j] - 1] = true;
            cells_seen[(data.study_ids()[j] - 1, data.labels()[j] - 1)] = true;
        }
        let classes_ok = class_present
            .iter()
            .zip(&class_seen)
            .all(|(&need, &got)| !need || got);
        let cells_ok = !check_cells
            || cells_present
                .iter()
                .zip(cells_seen.iter())
                .all(|(&need, &got)| !need || got);
        if classes_ok && cells_ok {
            return data.subset(&rows);
        }
    }
    Err(TgdrError::ResampleInfeasible {
        attempts: MAX_RESAMPLE_ATTEMPTS,
    })
}

/// A member fit that was dropped, with the replicate it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberFailure {
    pub replicate: usize,
    pub message: String,
}

/// Outcome of a bagging pass: selection frequencies over bootstrap member
/// fits, the members themselves, and (once a cutoff is chosen) the final
/// refit model.
#[derive(Debug, Clone)]
pub struct BaggingReport {
    pub n_bootstrap: usize,
    /// Fraction of bootstrap replicates selecting each feature. The
    /// denominator is always `n_bootstrap`, so failed members count as
    /// not selecting.
    pub frequencies: Vec<f64>,
    pub members: Vec<ModelCoefficients>,
    /// Replicate index behind each member, aligned with `members`.
    pub member_replicates: Vec<usize>,
    pub failures: Vec<MemberFailure>,
    pub fitter: FitterKind,
    pub config: TgdrConfig,
    pub cutoff: Option<f64>,
    pub final_model: Option<ModelCoefficients>,
}

/// Fits one model per bootstrap resample under a fixed configuration and
/// tallies how often each feature is selected.
pub fn bagging_run(
    data: &ExpressionDataset,
    config: &TgdrConfig,
    n_bootstrap: usize,
    fitter: FitterKind,
) -> Result<BaggingReport> {
    config.validate()?;
    if n_bootstrap == 0 {
        return Err(TgdrError::InvalidConfig(
            "bootstrap count must be at least 1".into(),
        ));
    }
    let member_config = TgdrConfig {
        snapshot_stride: config.max_steps.max(1),
        ..config.clone()
    };
    let outcomes: Vec<(usize, std::result::Result<ModelCoefficients, String>)> = (0
        ..n_bootstrap)
        .into_par_iter()
        .map(|m| {
            let fit = bootstrap_resample(data, config.seed, m as u64)
                .and_then(|resampled| fit_with(fitter, &resampled, &member_config))
                .map(|path| path.final_model())
                .map_err(|e| e.to_string());
            (m, fit)
        })
        .collect();
    let mut members = Vec::new();
    let mut member_replicates = Vec::new();
    let mut failures = Vec::new();
    for (m, outcome) in outcomes {
        match outcome {
            Ok(model) => {
                members.push(model);
                member_replicates.push(m);
            }
            Err(message) => failures.push(MemberFailure {
                replicate: m,
                message,
            }),
        }
    }
    if (failures.len() as f64) > FAILURE_BUDGET * n_bootstrap as f64 {
        return Err(TgdrError::BaggingFailures {
            failed: failures.len(),
            total: n_bootstrap,
        });
    }
    let d = data.feature_count();
    let mut counts = vec![0usize; d];
    for model in &members {
        for (i, selected) in model
            .active_set(config.selection_tolerance)
            .into_iter()
            .enumerate()
        {
            if selected {
                counts[i] += 1;
            }
        }
    }
    let frequencies = counts
        .into_iter()
        .map(|c| c as f64 / n_bootstrap as f64)
        .collect();
    Ok(BaggingReport {
        n_bootstrap,
        frequencies,
        members,
        member_replicates,
        failures,
        fitter,
        config: config.clone(),
        cutoff: None,
        final_model: None,
    })
}

/// Ensemble prediction over the member fits: hard labels by majority vote
/// (ties toward the smaller class index), probabilities by averaging member
/// probability rows.
pub fn ensemble_predict(
    report: &BaggingReport,
    data: &ExpressionDataset,
) -> Result<Predictions> {
    if report.members.is_empty() {
        return Err(TgdrError::InvalidValue(
            "no successful members to predict with".into(),
        ));
    }
    let n = data.n_samples();
    let kk = data.class_count();
    let mut votes = Array2::<usize>::zeros((n, kk));
    let mut probabilities = Array2::<f64>::zeros((n, kk));
    for member in &report.members {
        let preds = predict(member, data)?;
        for j in 0..n {
            votes[(j, preds.labels[j] - 1)] += 1;
        }
        probabilities += &preds.probabilities;
    }
    probabilities /= report.members.len() as f64;
    let labels = (0..n)
        .map(|j| {
            let mut best = 0usize;
            for k in 1..kk {
                if votes[(j, k)] > votes[(j, best)] {
                    best = k;
                }
            }
            best + 1
        })
        .collect();
    Ok(Predictions {
        labels,
        probabilities,
    })
}

/// Refits on the features kept by `keep`, then widens the model back to the
/// full feature list with zeros elsewhere so it applies to unrestricted data.
pub fn refit_restricted(
    data: &ExpressionDataset,
    keep: &[usize],
    fitter: FitterKind,
    config: &TgdrConfig,
) -> Result<ModelCoefficients> {
    let restricted = data.select_features(keep)?;
    let narrow_config = TgdrConfig {
        snapshot_stride: config.max_steps.max(1),
        ..config.clone()
    };
    let narrow = fit_with(fitter, &restricted, &narrow_config)?.final_model();
    let d = data.feature_count();
    let contrasts = narrow.contrast_count();
    let mut betas = Vec::with_capacity(narrow.study_count());
    for block in &narrow.betas {
        let mut wide = Array2::zeros((contrasts, d));
        for (c, &i) in keep.iter().enumerate() {
            for k in 0..contrasts {
                wide[(k, i)] = block[(k, c)];
            }
        }
        betas.push(wide);
    }
    let standardization = narrow.standardization.as_ref().map(|narrow_std| {
        let mut means = vec![0.0; d];
        let mut sds = vec![1.0; d];
        for (c, &i) in keep.iter().enumerate() {
            means[i] = narrow_std.means[c];
            sds[i] = narrow_std.sds[c];
        }
        Standardization { means, sds }
    });
    Ok(ModelCoefficients {
        intercepts: narrow.intercepts,
        betas,
        standardization,
    })
}

/// One evaluated cutoff.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutoffCandidate {
    pub cutoff: f64,
    /// Features passing the frequency cutoff.
    pub kept: usize,
    /// Active features of the refit model (may be fewer than `kept`).
    pub size: usize,
    pub error_percent: f64,
    pub gbs: f64,
    /// True when no feature passed the cutoff and no refit was attempted.
    pub skipped: bool,
}

/// A chosen cutoff with its refit model and the full candidate table.
#[derive(Debug, Clone)]
pub struct CutoffSelection {
    pub cutoff: f64,
    pub model: ModelCoefficients,
    pub size: usize,
    pub error_percent: f64,
    pub gbs: f64,
    pub candidates: Vec<CutoffCandidate>,
}

/// The default cutoff grid 0.05, 0.10, ..., 0.50.
pub fn default_cutoff_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 0.05).collect()
}

/// For each cutoff, refits on the features whose selection frequency exceeds
/// it (strictly) and scores the refit on `data`. The winner minimizes error,
/// then Brier score, then model size, preferring the larger cutoff on full
/// ties.
pub fn select_cutoff(
    report: &BaggingReport,
    data: &ExpressionDataset,
    cutoffs: &[f64],
    config: &TgdrConfig,
) -> Result<CutoffSelection> {
    if cutoffs.is_empty() {
        return Err(TgdrError::InvalidConfig("empty cutoff grid".into()));
    }
    for &c in cutoffs {
        if !(0.0..1.0).contains(&c) {
            return Err(TgdrError::InvalidConfig(format!(
                "cutoff {c} outside [0, 1)"
            )));
        }
    }
    if report.frequencies.len() != data.feature_count() {
        return Err(TgdrError::DimensionMismatch(format!(
            "report covers {} features, data has {}",
            report.frequencies.len(),
            data.feature_count()
        )));
    }
    let evaluated: Vec<Result<(CutoffCandidate, Option<ModelCoefficients>)>> = cutoffs
        .par_iter()
        .map(|&cutoff| {
            let keep: Vec<usize> = report
                .frequencies
                .iter()
                .enumerate()
                .filter(|(_, &f)| f > cutoff)
                .map(|(i, _)| i)
                .collect();
            if keep.is_empty() {
                return Ok((
                    CutoffCandidate {
                        cutoff,
                        kept: 0,
                        size: 0,
                        error_percent: f64::NAN,
                        gbs: f64::NAN,
                        skipped: true,
                    },
                    None,
                ));
            }
            let model = refit_restricted(data, &keep, report.fitter, config)?;
            let preds = predict(&model, data)?;
            let error_percent =
                100.0 * misclassification_rate(data.labels(), &preds.labels)?;
            let score = gbs(data.labels(), preds.probabilities.view())?;
            Ok((
                CutoffCandidate {
                    cutoff,
                    kept: keep.len(),
                    size: model.active_count(config.selection_tolerance),
                    error_percent,
                    gbs: score,
                    skipped: false,
                },
                Some(model),
            ))
        })
        .collect();
    let mut candidates = Vec::with_capacity(cutoffs.len());
    let mut best: Option<(CutoffCandidate, ModelCoefficients)> = None;
    for entry in evaluated {
        let (candidate, model) = entry?;
        if let Some(model) = model {
            let better = match &best {
                None => true,
                Some((b, _)) => {
                    (
                        candidate.error_percent,
                        candidate.gbs,
                        candidate.size,
                        -candidate.cutoff,
                    ) < (b.error_percent, b.gbs, b.size, -b.cutoff)
                }
            };
            if better {
                best = Some((candidate.clone(), model));
            }
        }
        candidates.push(candidate);
    }
    let (chosen, model) = best.ok_or_else(|| {
        TgdrError::CutoffSelection(
            "every cutoff left the feature set empty".into(),
        )
    })?;
    Ok(CutoffSelection {
        cutoff: chosen.cutoff,
        model,
        size: chosen.size,
        error_percent: chosen.error_percent,
        gbs: chosen.gbs,
        candidates,
    })
}
