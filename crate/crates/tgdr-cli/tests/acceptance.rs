//! Acceptance gate: one test per shipped requirement. Each test prints the
//! measured quantities it checked, and the harness result line for each
//! `criterion_*` test is the pass/fail verdict for that requirement.
//!
//! The simulated-benchmark criteria (01-03) run the full 50-replicate
//! pipeline and take a couple of minutes each; everything else is fast.

#[path = "../../tgdr/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tgdr::{
    evaluate, fit_meta_path, fit_path, gbs, log_likelihood, negative_gradient,
    pool_coefficients, pool_with_variances, predict, run_replicates,
    ExpressionDataset, GradientBlocks, ModelCoefficients, ReplicateOptions,
    ReplicateSummary, SimDesign, TgdrConfig, VarianceDenominator,
};

// ---------------------------------------------------------------------------
// Shared benchmark runs (criteria 01 and 02 inspect the same run).
// ---------------------------------------------------------------------------

static INDEPENDENT_RUN: OnceLock<(ReplicateSummary, f64)> = OnceLock::new();

fn independent_benchmark() -> &'static (ReplicateSummary, f64) {
    INDEPENDENT_RUN.get_or_init(|| {
        let start = Instant::now();
        let summary = run_replicates(
            &SimDesign::independent(0),
            &ReplicateOptions::default(),
        )
        .expect("independent-design benchmark");
        (summary, start.elapsed().as_secs_f64())
    })
}

/// 50 replicates of the independent-feature design: the four informative
/// features are recovered nearly always, tuned models stay moderately sized,
/// test error lands in the expected band, and the whole run fits the time
/// budget.
#[test]
fn criterion_01_independent_benchmark_hits_selection_size_error_and_time_targets() {
    let (summary, seconds) = independent_benchmark();
    let seconds = *seconds;
    println!(
        "criterion 01: selection {:?}%, mean size {:.2}, mean error {:.2}%, {} replicates in {:.0}s",
        summary.selection_percent,
        summary.mean_active_size,
        summary.mean_error_percent,
        summary.rows.len(),
        seconds
    );
    assert!(
        summary.failures.is_empty(),
        "replicates failed: {:?}",
        summary.failures
    );
    assert_eq!(summary.rows.len(), 50);
    for (i, &pct) in summary.selection_percent.iter().enumerate() {
        let floor = if i < 3 { 95.0 } else { 90.0 };
        assert!(
            pct >= floor,
            "X{} selected in {pct}% of replicates, need at least {floor}%",
            i + 1
        );
    }
    assert!(
        (15.0..=45.0).contains(&summary.mean_active_size),
        "mean active size {} outside [15, 45]",
        summary.mean_active_size
    );
    assert!(
        (9.0..=20.0).contains(&summary.mean_error_percent),
        "mean test error {}% outside [9, 20]%",
        summary.mean_error_percent
    );
    assert!(
        seconds <= 900.0,
        "benchmark took {seconds:.0}s, budget is 900s"
    );
}

/// Bagging-frequency cutoffs on the same run: keeping features selected in
/// more than 40% of bootstrap fits shrinks the model without losing accuracy,
/// and the aggressive 80% cutoff leaves only a handful of features while
/// staying within two error points of the unrestricted fit.
#[test]
fn criterion_02_bagging_cutoffs_shrink_models_without_costing_accuracy() {
    let (summary, _) = independent_benchmark();
    let raw_error = summary.mean_error_percent;
    let cutoff = |value: f64| {
        summary
            .cutoffs
            .iter()
            .find(|c| (c.cutoff - value).abs() < 1e-12)
            .unwrap_or_else(|| panic!("cutoff {value} missing from summary"))
    };
    let moderate = cutoff(0.4);
    let aggressive = cutoff(0.8);
    println!(
        "criterion 02: cutoff 0.4 size {:.2} error {:.2}%, cutoff 0.8 size {:.2} error {:.2}%, raw error {:.2}%",
        moderate.mean_size,
        moderate.mean_error_percent,
        aggressive.mean_size,
        aggressive.mean_error_percent,
        raw_error
    );
    assert!(
        (12.0..=32.0).contains(&moderate.mean_size),
        "cutoff-0.4 mean size {} outside [12, 32]",
        moderate.mean_size
    );
    assert!(
        (moderate.mean_error_percent - raw_error).abs() <= 3.0,
        "cutoff-0.4 error {}% drifts more than 3 points from raw {}%",
        moderate.mean_error_percent,
        raw_error
    );
    assert!(
        (3.0..=10.0).contains(&aggressive.mean_size),
        "cutoff-0.8 mean size {} outside [3, 10]",
        aggressive.mean_size
    );
    assert!(
        aggressive.mean_error_percent <= raw_error + 2.0,
        "cutoff-0.8 error {}% exceeds raw {}% by more than 2 points",
        aggressive.mean_error_percent,
        raw_error
    );
}

/// 50 replicates of the correlated-pairs design: selection, size, and error
/// all land in their bands even though each informative feature drags a
/// correlated partner along.
#[test]
fn criterion_03_correlated_benchmark_hits_selection_size_and_error_targets() {
    let summary = run_replicates(
        &SimDesign::correlated(0),
        &ReplicateOptions::default(),
    )
    .expect("correlated-design benchmark");
    println!(
        "criterion 03: selection {:?}%, mean size {:.2}, mean error {:.2}%",
        summary.selection_percent, summary.mean_active_size, summary.mean_error_percent
    );
    assert!(
        summary.failures.is_empty(),
        "replicates failed: {:?}",
        summary.failures
    );
    for (i, &pct) in summary.selection_percent.iter().enumerate() {
        assert!(
            pct >= 90.0,
            "X{} selected in {pct}% of replicates, need at least 90%",
            i + 1
        );
    }
    assert!(
        (16.0..=48.0).contains(&summary.mean_active_size),
        "mean active size {} outside [16, 48]",
        summary.mean_active_size
    );
    assert!(
        (9.0..=20.0).contains(&summary.mean_error_percent),
        "mean test error {}% outside [9, 20]%",
        summary.mean_error_percent
    );
}

/// With the threshold at zero and a long path, the descent solves plain
/// maximum likelihood: on 20 verified non-separable low-dimensional datasets
/// the final log-likelihood sits within 1e-3 of a Newton-Raphson fit and
/// every coefficient within 1e-2.
#[test]
fn criterion_04_long_unthresholded_paths_match_newton_maximum_likelihood() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4040);
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < 20 {
        attempts += 1;
        assert!(
            attempts <= 400,
            "could not draw 20 non-separable instances in 400 attempts"
        );
        let d = 2 + attempts % 4;
        let classes = 2 + attempts % 2;
        let data = support::random_dataset(&mut rng, 200, d, classes, 1);
        let features = data.features().to_owned();
        // A Newton fit that converges with bounded coefficients doubles as
        // the non-separability check: separable data walks off to infinity.
        let Some(oracle) = support::newton_multinomial_mle(
            &features,
            data.labels(),
            classes,
            200,
            1e-10,
        ) else {
            continue;
        };
        accepted += 1;
        let config = TgdrConfig {
            tau: 0.0,
            delta_v: 0.01,
            max_steps: 20_000,
            snapshot_stride: 20_000,
            standardize: false,
            selection_tolerance: 1e-12,
            seed: 0,
        };
        let path = fit_path(&data, &config).expect("unthresholded path");
        let model = path.final_model();
        let path_ll = log_likelihood(&model, &data).expect("log-likelihood");
        assert!(
            (path_ll - oracle.log_likelihood).abs() <= 1e-3,
            "instance {accepted}: path log-likelihood {path_ll} vs Newton {}",
            oracle.log_likelihood
        );
        for k in 0..classes - 1 {
            let base = k * (d + 1);
            assert!(
                (model.intercepts[(0, k)] - oracle.theta[base]).abs() <= 1e-2,
                "instance {accepted}: intercept {k} {} vs Newton {}",
                model.intercepts[(0, k)],
                oracle.theta[base]
            );
            for i in 0..d {
                assert!(
                    (model.betas[0][(k, i)] - oracle.theta[base + 1 + i]).abs() <= 1e-2,
                    "instance {accepted}: coefficient ({k}, {i}) {} vs Newton {}",
                    model.betas[0][(k, i)],
                    oracle.theta[base + 1 + i]
                );
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    println!(
        "criterion 04: 20 instances matched Newton in {seconds:.1}s ({attempts} draws)"
    );
    assert!(seconds <= 60.0, "oracle comparison took {seconds:.1}s, budget 60s");
}

fn pack_blocks(intercepts: &Array2<f64>, blocks: &[Array2<f64>]) -> Vec<f64> {
    let (studies, contrasts) = intercepts.dim();
    let d = blocks[0].ncols();
    let mut out = Vec::with_capacity(studies * contrasts * (d + 1));
    for m in 0..studies {
        for k in 0..contrasts {
            out.push(intercepts[(m, k)]);
            for i in 0..d {
                out.push(blocks[m][(k, i)]);
            }
        }
    }
    out
}

fn unpack_model(theta: &[f64], studies: usize, contrasts: usize, d: usize) -> ModelCoefficients {
    let mut model = ModelCoefficients::zeros(studies, contrasts, d);
    let mut next = theta.iter().copied();
    for m in 0..studies {
        for k in 0..contrasts {
            model.intercepts[(m, k)] = next.next().expect("theta length");
            for i in 0..d {
                model.betas[m][(k, i)] = next.next().expect("theta length");
            }
        }
    }
    model
}

/// The analytic negative log-likelihood gradient agrees with central finite
/// differences at 100 random coefficient points across single- and
/// multi-study, two- and three-class shapes.
#[test]
fn criterion_05_analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5050);
    let mut worst = 0.0f64;
    for draw in 0..100 {
        let n = 20 + (draw % 3) * 15;
        let d = 2 + draw % 5;
        let classes = 2 + draw % 2;
        let studies = 1 + draw % 2;
        let data = support::random_dataset(&mut rng, n, d, classes, studies);
        let contrasts = classes - 1;
        let theta: Vec<f64> = (0..studies * contrasts * (d + 1))
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        let model = unpack_model(&theta, studies, contrasts, d);
        let analytic: GradientBlocks =
            negative_gradient(&model, &data).expect("analytic gradient");
        let packed_analytic = pack_blocks(&analytic.intercepts, &analytic.coefficients);
        let numeric = support::central_difference(
            |t| {
                let m = unpack_model(t, studies, contrasts, d);
                -log_likelihood(&m, &data).expect("log-likelihood")
            },
            &theta,
            1e-5,
        );
        for (a, f) in packed_analytic.iter().zip(&numeric) {
            let err = (a - f).abs() / f.abs().max(1.0);
            worst = worst.max(err);
            assert!(
                err <= 1e-5,
                "draw {draw}: analytic {a} vs finite-difference {f} (relative error {err:.2e})"
            );
        }
    }
    println!("criterion 05: worst relative gradient error {worst:.2e} over 100 draws");
}

/// The general engine collapses to its special cases exactly: a one-study
/// multi-study fit walks the same path as the plain fit, and a two-class fit
/// walks the same path as an independently written binary implementation.
#[test]
fn criterion_06_meta_and_multiclass_paths_collapse_to_their_special_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let taus = [0.0, 0.4, 0.8];
    for t in 0..10 {
        let n = 40 + 8 * t;
        let d = 3 + t % 5;
        let classes = 2 + t % 2;
        let data = support::random_dataset_full_cells(&mut rng, n, d, classes, 1);
        let config = TgdrConfig {
            tau: taus[t % 3],
            delta_v: 0.01,
            max_steps: 150,
            snapshot_stride: 1,
            standardize: t % 2 == 0,
            selection_tolerance: 1e-12,
            seed: 0,
        };
        let plain = fit_path(&data, &config).expect("plain path");
        let meta = fit_meta_path(&data, &config).expect("one-study meta path");
        assert_eq!(plain.steps.len(), meta.steps.len(), "dataset {t}: step counts");
        for (a, b) in plain.steps.iter().zip(&meta.steps) {
            assert_eq!(a.step, b.step);
            for (x, y) in a.intercepts.iter().zip(b.intercepts.iter()) {
                assert!(
                    (x - y).abs() <= 1e-12,
                    "dataset {t} step {}: intercept {x} vs {y}",
                    a.step
                );
            }
            for (ba, bb) in a.betas.iter().zip(&b.betas) {
                for (x, y) in ba.iter().zip(bb.iter()) {
                    assert!(
                        (x - y).abs() <= 1e-12,
                        "dataset {t} step {}: coefficient {x} vs {y}",
                        a.step
                    );
                }
            }
        }
    }
    for (t, &tau) in taus.iter().enumerate() {
        let n = 60 + 20 * t;
        let d = 4 + t;
        let data = support::random_dataset_full_cells(&mut rng, n, d, 2, 1);
        let config = TgdrConfig {
            tau,
            delta_v: 0.01,
            max_steps: 200,
            snapshot_stride: 1,
            standardize: false,
            selection_tolerance: 1e-12,
            seed: 0,
        };
        let path = fit_path(&data, &config).expect("two-class path");
        assert_eq!(path.completed_steps, 200, "tau {tau}: path stopped early");
        let features = data.features().to_owned();
        let oracle = support::binary_tgdr_path(&features, data.labels(), tau, 0.01, 200);
        for snap in &path.steps {
            let (step, b0, beta) = &oracle.steps[snap.step];
            assert_eq!(snap.step, *step);
            assert!(
                (snap.intercepts[(0, 0)] - b0).abs() <= 1e-12,
                "tau {tau} step {step}: intercept {} vs binary {b0}",
                snap.intercepts[(0, 0)]
            );
            for i in 0..d {
                assert!(
                    (snap.betas[0][(0, i)] - beta[i]).abs() <= 1e-12,
                    "tau {tau} step {step}: coefficient {i} {} vs binary {}",
                    snap.betas[0][(0, i)],
                    beta[i]
                );
            }
        }
    }
    println!("criterion 06: one-study meta and two-class reductions are exact");
}

/// Coefficient pooling reproduces known structure: a one-study model pools to
/// itself, identical per-study blocks pool to the common block, and scaling
/// every study variance by a constant leaves the pooled coefficients alone.
#[test]
fn criterion_07_pooling_reproduces_known_coefficient_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);

    // One study: pooling is an exact interpolation of the fitted predictor.
    let single = support::random_dataset_full_cells(&mut rng, 120, 8, 3, 1);
    let config = TgdrConfig {
        tau: 0.5,
        delta_v: 0.01,
        max_steps: 200,
        snapshot_stride: 200,
        standardize: false,
        selection_tolerance: 1e-12,
        seed: 0,
    };
    let model = fit_path(&single, &config).expect("one-study fit").final_model();
    let pooled = pool_coefficients(&model, &single, VarianceDenominator::Squared)
        .expect("one-study pooling");
    for k in 0..model.intercepts.ncols() {
        assert!(
            (pooled.coefficients.intercepts[(0, k)] - model.intercepts[(0, k)]).abs() <= 1e-8,
            "one-study intercept {k} changed under pooling"
        );
        for i in 0..single.feature_count() {
            assert!(
                (pooled.coefficients.betas[0][(k, i)] - model.betas[0][(k, i)]).abs() <= 1e-8,
                "one-study coefficient ({k}, {i}) changed under pooling"
            );
        }
    }

    // Identical blocks across three studies pool back to the common block.
    let multi = support::random_dataset_full_cells(&mut rng, 150, 6, 3, 3);
    let fitted = fit_meta_path(&multi, &config).expect("three-study fit").final_model();
    let contrasts = fitted.intercepts.ncols();
    let mut common = ModelCoefficients::zeros(3, contrasts, multi.feature_count());
    for m in 0..3 {
        for k in 0..contrasts {
            common.intercepts[(m, k)] = fitted.intercepts[(0, k)];
        }
        common.betas[m] = fitted.betas[0].clone();
    }
    let pooled_common =
        pool_coefficients(&common, &multi, VarianceDenominator::Squared).expect("common pooling");
    for k in 0..contrasts {
        assert!(
            (pooled_common.coefficients.intercepts[(0, k)] - fitted.intercepts[(0, k)]).abs()
                <= 1e-8,
            "common-block intercept {k} not recovered"
        );
        for i in 0..multi.feature_count() {
            assert!(
                (pooled_common.coefficients.betas[0][(k, i)] - fitted.betas[0][(k, i)]).abs()
                    <= 1e-8,
                "common-block coefficient ({k}, {i}) not recovered"
            );
        }
    }

    // Scaling all study variances by one constant cannot move the pooled fit.
    let base = pool_coefficients(&fitted, &multi, VarianceDenominator::Squared)
        .expect("three-study pooling");
    let scaled_variances = base.study_variances.mapv(|v| v * 3.7);
    let rescaled =
        pool_with_variances(&fitted, &multi, &scaled_variances).expect("rescaled pooling");
    let reference = pool_with_variances(&fitted, &multi, &base.study_variances)
        .expect("reference pooling");
    for (a, b) in reference
        .coefficients
        .intercepts
        .iter()
        .chain(reference.coefficients.betas[0].iter())
        .zip(
            rescaled
                .coefficients
                .intercepts
                .iter()
                .chain(rescaled.coefficients.betas[0].iter()),
        )
    {
        assert!(
            (a - b).abs() <= 1e-10,
            "pooled coefficient moved under a common variance rescale: {a} vs {b}"
        );
    }
    println!("criterion 07: pooling identities hold to 1e-8 (1e-10 for rescaling)");
}

/// The normalized squared-error score hits its closed forms (perfect
/// predictions score 0, uniform two- and three-class predictions score 1/4
/// and 1/3) and stays inside [0, 1] on ten thousand random inputs.
#[test]
fn criterion_08_brier_score_matches_closed_forms_and_stays_bounded() {
    let perfect_probs =
        Array2::from_shape_vec((3, 3), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
    let perfect = gbs(&[1, 2, 3], perfect_probs.view()).expect("perfect score");
    assert!(perfect.abs() <= 1e-12, "perfect predictions score {perfect}");

    let uniform2 = Array2::from_elem((4, 2), 0.5);
    let score2 = gbs(&[1, 2, 1, 2], uniform2.view()).expect("uniform two-class");
    assert!(
        (score2 - 0.25).abs() <= 1e-12,
        "uniform two-class score {score2}"
    );

    let uniform3 = Array2::from_elem((6, 3), 1.0 / 3.0);
    let score3 = gbs(&[1, 2, 3, 1, 2, 3], uniform3.view()).expect("uniform three-class");
    assert!(
        (score3 - 1.0 / 3.0).abs() <= 1e-12,
        "uniform three-class score {score3}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut low = f64::INFINITY;
    let mut high = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let n = 1 + rng.random_range(0..30);
        let classes = 2 + rng.random_range(0..3);
        let labels: Vec<usize> = (0..n).map(|_| 1 + rng.random_range(0..classes)).collect();
        let mut probs = Array2::zeros((n, classes));
        for j in 0..n {
            let mut total = 0.0;
            for k in 0..classes {
                let u = rng.random::<f64>() + 1e-9;
                probs[(j, k)] = u;
                total += u;
            }
            for k in 0..classes {
                probs[(j, k)] /= total;
            }
        }
        let score = gbs(&labels, probs.view()).expect("random score");
        assert!(
            (0.0..=1.0).contains(&score),
            "score {score} escaped [0, 1] (n={n}, classes={classes})"
        );
        low = low.min(score);
        high = high.max(score);
    }
    println!("criterion 08: closed forms exact; 10000 random scores spanned [{low:.4}, {high:.4}]");
}

// ---------------------------------------------------------------------------
// Worker-count invariance (criterion 09).
// ---------------------------------------------------------------------------

fn run_cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_tgdr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn tgdr binary");
    assert!(
        out.status.success(),
        "command {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Builds a two-study training file by tagging two simulated draws.
fn write_merged_two_study(dir: &Path, first: &str, second: &str, out: &str) {
    let a = std::fs::read_to_string(dir.join(first)).expect("first part");
    let b = std::fs::read_to_string(dir.join(second)).expect("second part");
    let mut merged = String::new();
    let mut lines_a = a.lines();
    let header = lines_a.next().expect("header");
    let (label, rest) = header.split_once(',').expect("header columns");
    merged.push_str(&format!("{label},study,{rest}\n"));
    for line in lines_a {
        let (l, r) = line.split_once(',').expect("data columns");
        merged.push_str(&format!("{l},s1,{r}\n"));
    }
    for line in b.lines().skip(1) {
        let (l, r) = line.split_once(',').expect("data columns");
        merged.push_str(&format!("{l},s2,{r}\n"));
    }
    std::fs::write(dir.join(out), merged).expect("write merged file");
}

/// Runs every subcommand once in the given directory with the given worker
/// count, producing a fixed set of output files.
fn drive_all_commands(dir: &Path, jobs: &str) {
    run_cli(
        dir,
        &[
            "--jobs", jobs, "simulate", "--example", "1", "--n-train", "40",
            "--n-test", "30", "--features", "12", "--seed", "5",
            "--out-train", "train.csv", "--out-test", "test.csv",
        ],
    );
    run_cli(
        dir,
        &[
            "--jobs", jobs, "fit", "train.csv", "--tau", "0.6", "--steps",
            "120", "--seed", "9", "--out-model", "model.json", "--out-report",
            "fit_report.csv",
        ],
    );
    run_cli(
        dir,
        &[
            "--jobs", jobs, "cv", "train.csv", "--folds", "3", "--taus",
            "0.3,0.7", "--steps", "60", "--stride", "20", "--seed", "11",
            "--out-csv", "grid.csv", "--out-config", "chosen.json",
        ],
    );
    run_cli(
        dir,
        &[
            "--jobs", jobs, "bag", "train.csv", "--tau", "0.7", "--steps",
            "80", "--bootstrap", "12", "--cutoff", "0.3", "--seed", "13",
            "--out-report", "frequencies.csv", "--out-model", "bagged.json",
        ],
    );
    write_merged_two_study(dir, "train.csv", "test.csv", "merged.csv");
    run_cli(
        dir,
        &[
            "--jobs", jobs, "fit", "merged.csv", "--study-col", "study",
            "--tau", "0.6", "--steps", "100", "--seed", "17", "--out-model",
            "meta.json", "--out-report", "meta_report.csv",
        ],
    );
    run_cli(
        dir,
        &[
            "--jobs", jobs, "pool", "meta.json", "merged.csv", "--study-col",
            "study", "--out-model", "pooled.json",
        ],
    );
    run_cli(
        dir,
        &[
            "--jobs", jobs, "predict", "model.json", "test.csv", "--out",
            "predictions.csv",
        ],
    );
    run_cli(
        dir,
        &[
            "--jobs", jobs, "evaluate", "test.csv", "--predictions",
            "predictions.csv", "--out", "evaluation.csv",
        ],
    );
    run_cli(
        dir,
        &[
            "--jobs", jobs, "replicate-table1", "--example", "1",
            "--replicates", "2", "--n-train", "40", "--n-test", "30",
            "--features", "12", "--folds", "3", "--taus", "0.2,0.5,0.8",
            "--cv-steps", "60", "--cv-stride", "20", "--bootstrap", "8",
            "--seed", "3", "--out-dir", "bench",
        ],
    );
}

fn collect_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).expect("read dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("relative path")
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, std::fs::read(&path).expect("read file")));
            }
        }
    }
    let mut files = Vec::new();
    walk(root, root, &mut files);
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

/// Every subcommand produces byte-identical output files whether it runs on
/// one worker or eight.
#[test]
fn criterion_09_worker_count_never_changes_output_bytes() {
    let serial = tempfile::tempdir().unwrap();
    let parallel = tempfile::tempdir().unwrap();
    drive_all_commands(serial.path(), "1");
    drive_all_commands(parallel.path(), "8");
    let files_serial = collect_files(serial.path());
    let files_parallel = collect_files(parallel.path());
    let names: Vec<&str> = files_serial.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        files_parallel.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        "the two runs produced different file sets"
    );
    for ((name, bytes_serial), (_, bytes_parallel)) in
        files_serial.iter().zip(&files_parallel)
    {
        assert_eq!(
            bytes_serial, bytes_parallel,
            "{name} differs between --jobs 1 and --jobs 8"
        );
    }
    println!(
        "criterion 09: {} files byte-identical across worker counts",
        files_serial.len()
    );
}

// ---------------------------------------------------------------------------
// Study-consistency screening (criterion 10).
// ---------------------------------------------------------------------------

/// Per-contrast weights of the five features whose effect is the same in all
/// three studies. The two score vectors correlate at about +0.5, which keeps
/// the three generated classes near-equally frequent.
const CONSISTENT_WEIGHTS: [[f64; 5]; 2] = [
    [1.8, -1.6, 1.7, -1.5, 1.6],
    [1.6, 1.8, 1.5, 1.7, 1.4],
];

/// Study-sign patterns of the five features whose effect flips between
/// studies; each row sums to zero so the effects cancel across studies.
const FLIPPED_SIGNS: [[f64; 3]; 5] = [
    [1.0, -1.0, 0.0],
    [-1.0, 1.0, 0.0],
    [1.0, 0.0, -1.0],
    [0.0, -1.0, 1.0],
    [-1.0, 0.0, 1.0],
];

/// Three studies, three classes, 100 samples per study: features 1-5 carry
/// the same strong signal everywhere, features 6-10 carry a strong signal
/// whose sign depends on the study, and the rest is noise. Labels go to the
/// class with the largest generating score.
fn planted_three_study(seed: u64, per_study: usize, d: usize) -> ExpressionDataset {
    let studies = 3;
    let n = per_study * studies;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut study_ids = Vec::with_capacity(n);
    for row in 0..n {
        let study = row / per_study;
        for col in 0..d {
            features[(row, col)] = rng.sample::<f64, _>(StandardNormal);
        }
        let mut scores = [0.0f64; 2];
        for (contrast, score) in scores.iter_mut().enumerate() {
            for i in 0..5 {
                *score += CONSISTENT_WEIGHTS[contrast][i] * features[(row, i)];
            }
            for i in 0..5 {
                *score += 1.5 * FLIPPED_SIGNS[i][study] * features[(row, 5 + i)];
            }
        }
        let label = if scores[0] >= scores[1] && scores[0] >= 0.0 {
            1
        } else if scores[1] >= 0.0 {
            2
        } else {
            3
        };
        labels.push(label);
        study_ids.push(study + 1);
    }
    ExpressionDataset::new(
        features,
        labels,
        3,
        study_ids,
        studies,
        (1..=d).map(|i| format!("X{i}")).collect(),
    )
    .expect("planted dataset construction")
}

/// On three-study data where five features flip sign between studies, the
/// joint multi-study fit never selects a sign-flipping feature (their
/// combined gradients cancel) across five seeds, while a pooled fit of the
/// same data still classifies far better than guessing the majority class.
#[test]
fn criterion_10_study_consistent_signals_survive_meta_selection() {
    // The tightest threshold with a short path: the sparse operating regime
    // where only block-maximal gradients are followed.
    let config = TgdrConfig {
        tau: 1.0,
        delta_v: 0.01,
        max_steps: 20,
        snapshot_stride: 20,
        standardize: true,
        selection_tolerance: 1e-12,
        seed: 0,
    };
    let mut worst_margin = f64::INFINITY;
    for seed in 0..5u64 {
        let train = planted_three_study(100 + seed, 100, 500);
        let test = planted_three_study(200 + seed, 100, 500);

        let meta = fit_meta_path(&train, &config).expect("multi-study fit");
        let active = &meta.steps.last().expect("final step").active;
        let selected: Vec<usize> = active
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect();
        assert!(
            !selected.is_empty(),
            "seed {seed}: the multi-study fit selected nothing"
        );
        for i in 5..10 {
            assert!(
                !active[i],
                "seed {seed}: sign-flipping feature X{} was selected (active set {selected:?})",
                i + 1
            );
        }

        let merged = train.as_single_study();
        let pooled_fit = fit_path(&merged, &config).expect("pooled fit");
        let predictions = predict(&pooled_fit.final_model(), &test.as_single_study())
            .expect("test predictions");
        let report = evaluate(test.labels(), &predictions, 3).expect("test evaluation");
        let counts = test.class_counts();
        let majority = *counts.iter().max().expect("class counts") as f64;
        let no_information = 100.0 * (1.0 - majority / test.n_samples() as f64);
        let margin = no_information - report.error_percent;
        worst_margin = worst_margin.min(margin);
        assert!(
            margin >= 30.0,
            "seed {seed}: error {:.2}% only {margin:.2} points under the no-information rate {no_information:.2}%",
            report.error_percent
        );
    }
    println!(
        "criterion 10: no sign-flipping feature selected in 5 seeds; worst error margin {worst_margin:.1} points"
    );
}

