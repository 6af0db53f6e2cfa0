//! One function per subcommand. Each prints a `config:` line with every
//! resolved setting, runs the work, writes its artifacts, and keeps stdout
//! to a few summary lines.

use std::fmt::Write as _;

use serde_json::json;
use tgdr::{
    bagging_run, evaluate, fit_meta_path, fit_path, k_fold_cv, pool_coefficients,
    predict, refit_restricted, run_replicates, select_cutoff, CvOptions,
    ExpressionDataset, FitterKind, Predictions, RegularizationPath,
    ReplicateOptions, SimDesign, StopReason, TgdrConfig, TgdrError,
    VarianceDenominator,
};

use crate::data::{
    self, full_precision, load_dataset, read_predictions, write_dataset,
    write_metric_report, write_predictions, LoadOptions, LoadedDataset,
};
use crate::model_file::{
    denominator_label, BaggingBlock, ModelFile, ModelMode, PooledBlock,
};
use crate::{
    BagArgs, CliError, CvArgs, DataArgs, EvaluateArgs, FitArgs, FitTuning,
    PoolArgs, PredictArgs, ReplicateArgs, SimulateArgs,
};

fn load_options(args: &DataArgs) -> Result<LoadOptions, CliError> {
    Ok(LoadOptions {
        label_col: args.label_col.clone(),
        study_col: args.study_col.clone(),
        classes: args.classes.clone(),
        delimiter: data::Delimiter::parse(&args.delimiter)?,
    })
}

fn tuning_config(tune: &FitTuning) -> TgdrConfig {
    TgdrConfig {
        tau: tune.tau,
        delta_v: tune.delta_v,
        max_steps: tune.steps,
        snapshot_stride: tune.steps.max(1),
        standardize: !tune.no_standardize,
        seed: tune.seed,
        ..TgdrConfig::default()
    }
}

fn mode_for(loaded: &LoadedDataset) -> ModelMode {
    if loaded.data.study_count() > 1 {
        ModelMode::Meta
    } else if loaded.data.class_count() == 2 {
        ModelMode::Tgdr
    } else {
        ModelMode::Multi
    }
}

fn fitter_for(data: &ExpressionDataset) -> FitterKind {
    if data.study_count() > 1 {
        FitterKind::Meta
    } else {
        FitterKind::Tgdr
    }
}

fn fit_by_mode(
    data: &ExpressionDataset,
    config: &TgdrConfig,
) -> Result<RegularizationPath, CliError> {
    if data.study_count() > 1 {
        Ok(fit_meta_path(data, config)?)
    } else {
        Ok(fit_path(data, config)?)
    }
}

fn stop_line(path: &RegularizationPath) -> String {
    match path.stop {
        StopReason::MaxSteps => format!("stop: completed {} steps", path.completed_steps),
        StopReason::ZeroGradient { step } => {
            format!("stop: gradient vanished at step {step}")
        }
    }
}

fn echo(value: serde_json::Value) {
    println!("config: {value}");
}

fn design_for(
    example: u8,
    n_train: usize,
    n_test: usize,
    features: usize,
    seed: u64,
) -> Result<SimDesign, CliError> {
    let mut design = match example {
        1 => SimDesign::independent(seed),
        2 => SimDesign::correlated(seed),
        other => {
            return Err(CliError::Parse(format!(
                "--example must be 1 or 2, got {other}"
            )))
        }
    };
    design.n_train = n_train;
    design.n_test = n_test;
    design.feature_count = features;
    Ok(design)
}

fn check_features_match(
    model: &ModelFile,
    data: &ExpressionDataset,
) -> Result<(), CliError> {
    if model.feature_names.len() != data.feature_count() {
        return Err(CliError::Lib(TgdrError::DimensionMismatch(format!(
            "model covers {} features, data has {}",
            model.feature_names.len(),
            data.feature_count()
        ))));
    }
    for (i, (expected, got)) in model
        .feature_names
        .iter()
        .zip(data.feature_names())
        .enumerate()
    {
        if expected != got {
            return Err(CliError::Lib(TgdrError::DimensionMismatch(format!(
                "feature column {} is '{got}', model expects '{expected}'",
                i + 1
            ))));
        }
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let design = design_for(args.example, args.n_train, args.n_test, args.features, args.seed)?;
    echo(json!({
        "command": "simulate",
        "example": args.example,
        "n_train": args.n_train,
        "n_test": args.n_test,
        "features": args.features,
        "replicate": args.replicate,
        "seed": args.seed,
    }));
    let (train, test) = tgdr::generate_replicate(&design, args.replicate)?;
    write_dataset(&args.out_train, &train)?;
    write_dataset(&args.out_test, &test)?;
    let counts = train.class_counts();
    println!(
        "train: {} samples, class counts {:?}",
        train.n_samples(),
        counts
    );
    println!("test: {} samples", test.n_samples());
    println!("wrote {} and {}", args.out_train.display(), args.out_test.display());
    Ok(())
}

fn fit_report_rows(
    report: &tgdr::EvaluationReport,
    active_names: &[String],
) -> Vec<(String, String)> {
    let mut rows = vec![
        ("n_samples".to_string(), report.n_samples.to_string()),
        (
            "error_percent".to_string(),
            full_precision(report.error_percent),
        ),
        ("gbs".to_string(), full_precision(report.gbs)),
        ("active_count".to_string(), active_names.len().to_string()),
    ];
    for name in active_names {
        rows.push(("active_feature".to_string(), name.clone()));
    }
    rows
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let loaded = load_dataset(&args.data.data, &load_options(&args.data)?)?;
    let config = tuning_config(&args.tune);
    let mode = mode_for(&loaded);
    echo(json!({
        "command": "fit",
        "mode": mode.label(),
        "tau": config.tau,
        "steps": config.max_steps,
        "delta_v": config.delta_v,
        "standardize": config.standardize,
        "seed": config.seed,
        "classes": loaded.class_levels,
        "studies": loaded.study_levels,
    }));

    let path = fit_by_mode(&loaded.data, &config)?;
    let model = path.final_model();
    let predictions = predict(&model, &loaded.data)?;
    let report = evaluate(loaded.data.labels(), &predictions, loaded.data.class_count())?;
    let active_names: Vec<String> = model
        .active_features(config.selection_tolerance)
        .into_iter()
        .map(|i| loaded.data.feature_names()[i].clone())
        .collect();

    let file = ModelFile::new(
        mode,
        loaded.class_levels.clone(),
        loaded.data.feature_names().to_vec(),
        loaded.study_levels.clone(),
        &model,
        &config,
        config.seed,
    );
    file.save(&args.out_model)?;

    println!("{}", stop_line(&path));
    println!(
        "training error: {:.2}% gbs {:.4} on {} samples",
        report.error_percent, report.gbs, report.n_samples
    );
    println!("active ({}): {}", active_names.len(), active_names.join(" "));
    println!("model: {}", args.out_model.display());
    if let Some(out) = &args.out_report {
        write_metric_report(out, &fit_report_rows(&report, &active_names))?;
        println!("report: {}", out.display());
    }
    Ok(())
}

pub fn cv(args: &CvArgs) -> Result<(), CliError> {
    let loaded = load_dataset(&args.data.data, &load_options(&args.data)?)?;
    let fitter = fitter_for(&loaded.data);
    let tau_grid = match &args.taus {
        Some(taus) => taus.clone(),
        None => tgdr::default_tau_grid(),
    };
    let base = TgdrConfig {
        delta_v: args.delta_v,
        max_steps: args.steps,
        snapshot_stride: args.stride.max(1),
        standardize: !args.no_standardize,
        seed: args.seed,
        ..TgdrConfig::default()
    };
    let options = CvOptions {
        folds: args.folds,
        tau_grid: tau_grid.clone(),
        max_steps: args.steps,
        stride: args.stride,
        stratified: !args.no_stratify,
        fitter,
        base,
    };
    echo(json!({
        "command": "cv",
        "folds": args.folds,
        "taus": tau_grid,
        "max_steps": args.steps,
        "stride": args.stride,
        "stratified": !args.no_stratify,
        "delta_v": args.delta_v,
        "standardize": !args.no_standardize,
        "seed": args.seed,
        "fitter": match fitter { FitterKind::Meta => "meta", FitterKind::Tgdr => "tgdr" },
    }));

    let result = k_fold_cv(&loaded.data, &options)?;

    let mut out = String::from("tau,steps,error_percent,gbs\n");
    for point in &result.grid {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            point.tau, point.steps, point.error_percent, point.gbs
        );
    }
    std::fs::write(&args.out_csv, out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out_csv.display())))?;

    println!(
        "best: tau {} steps {} (cv error {:.2}%, gbs {:.4})",
        result.best_tau, result.best_steps, result.best_error_percent, result.best_gbs
    );
    println!("grid: {}", args.out_csv.display());
    if let Some(out_config) = &args.out_config {
        let chosen = json!({
            "tau": result.best_tau,
            "steps": result.best_steps,
            "error_percent": result.best_error_percent,
            "gbs": result.best_gbs,
            "folds": result.folds,
            "seed": result.seed,
        });
        let mut text = serde_json::to_string_pretty(&chosen)
            .map_err(|e| CliError::Io(format!("{}: {e}", out_config.display())))?;
        text.push('\n');
        std::fs::write(out_config, text)
            .map_err(|e| CliError::Io(format!("{}: {e}", out_config.display())))?;
        println!("chosen config: {}", out_config.display());
    }
    Ok(())
}

pub fn bag(args: &BagArgs) -> Result<(), CliError> {
    let loaded = load_dataset(&args.data.data, &load_options(&args.data)?)?;
    let config = tuning_config(&args.tune);
    let fitter = fitter_for(&loaded.data);
    let cutoff_grid = match &args.cutoffs {
        Some(c) => c.clone(),
        None => tgdr::default_cutoff_grid(),
    };
    echo(json!({
        "command": "bag",
        "bootstrap": args.bootstrap,
        "tau": config.tau,
        "steps": config.max_steps,
        "delta_v": config.delta_v,
        "standardize": config.standardize,
        "seed": config.seed,
        "cutoff": args.cutoff,
        "auto_cutoff": args.auto_cutoff,
        "cutoffs": if args.auto_cutoff { Some(&cutoff_grid) } else { None },
    }));

    let report = bagging_run(&loaded.data, &config, args.bootstrap, fitter)?;

    let mut out = String::from("feature,frequency\n");
    for (name, freq) in loaded.data.feature_names().iter().zip(&report.frequencies) {
        let _ = writeln!(out, "{name},{freq}");
    }
    std::fs::write(&args.out_report, out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out_report.display())))?;
    println!(
        "bootstrap: {} members fitted, {} failed",
        report.members.len(),
        report.failures.len()
    );
    for failure in &report.failures {
        println!("  replicate {}: {}", failure.replicate, failure.message);
    }
    println!("frequencies: {}", args.out_report.display());

    let chosen = if let Some(cutoff) = args.cutoff {
        let keep: Vec<usize> = report
            .frequencies
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > cutoff)
            .map(|(i, _)| i)
            .collect();
        if keep.is_empty() {
            return Err(CliError::Lib(TgdrError::CutoffSelection(format!(
                "no feature has selection frequency above {cutoff}"
            ))));
        }
        let model = refit_restricted(&loaded.data, &keep, fitter, &config)?;
        Some((cutoff, model))
    } else if args.auto_cutoff {
        let selection = select_cutoff(&report, &loaded.data, &cutoff_grid, &config)?;
        println!("cutoff candidates (cutoff kept size error% gbs):");
        for c in &selection.candidates {
            if c.skipped {
                println!("  {} - skipped, nothing kept", c.cutoff);
            } else {
                println!(
                    "  {} {} {} {:.2} {:.4}",
                    c.cutoff, c.kept, c.size, c.error_percent, c.gbs
                );
            }
        }
        println!(
            "chosen cutoff {} (size {}, error {:.2}%)",
            selection.cutoff, selection.size, selection.error_percent
        );
        Some((selection.cutoff, selection.model))
    } else {
        None
    };

    match (&args.out_model, chosen) {
        (Some(out_model), Some((cutoff, model))) => {
            let mut file = ModelFile::new(
                ModelMode::Bagged,
                loaded.class_levels.clone(),
                loaded.data.feature_names().to_vec(),
                loaded.study_levels.clone(),
                &model,
                &config,
                config.seed,
            );
            file.bagging = Some(BaggingBlock {
                n_bootstrap: report.n_bootstrap,
                frequencies: report.frequencies.clone(),
                cutoff,
            });
            file.save(out_model)?;
            let predictions = predict(&model, &loaded.data)?;
            let fit_report =
                evaluate(loaded.data.labels(), &predictions, loaded.data.class_count())?;
            println!(
                "restricted refit: {} active, training error {:.2}%",
                model.active_count(config.selection_tolerance),
                fit_report.error_percent
            );
            println!("model: {}", out_model.display());
        }
        (Some(_), None) => {
            return Err(CliError::Lib(TgdrError::InvalidConfig(
                "--out-model needs --cutoff or --auto-cutoff".into(),
            )));
        }
        (None, _) => {}
    }
    Ok(())
}

pub fn pool(args: &PoolArgs) -> Result<(), CliError> {
    let file = ModelFile::load(&args.model)?;
    if file.mode != ModelMode::Meta {
        return Err(CliError::Mode(format!(
            "pool needs a meta model, got mode '{}'",
            file.mode.label()
        )));
    }
    let source_studies = file.study_levels.clone().ok_or_else(|| {
        CliError::Schema("meta model lists no study levels".into())
    })?;

    let mut options = load_options(&args.data)?;
    options.classes = Some(file.class_levels.clone());
    let loaded = load_dataset(&args.data.data, &options)?;
    check_features_match(&file, &loaded.data)?;
    match &loaded.study_levels {
        Some(levels) if *levels == source_studies => {}
        _ => {
            return Err(CliError::Mode(format!(
                "data studies {:?} do not match the model's studies {:?}",
                loaded.study_levels, source_studies
            )))
        }
    }

    let denominator = if args.paper_literal_variance {
        VarianceDenominator::Linear
    } else {
        VarianceDenominator::Squared
    };
    echo(json!({
        "command": "pool",
        "variance_denominator": denominator_label(denominator),
        "studies": source_studies,
        "seed": file.seed,
    }));

    let coeffs = file.to_coefficients()?;
    let pooled = pool_coefficients(&coeffs, &loaded.data, denominator)?;

    let shared_names: Vec<String> = pooled
        .shared_active
        .iter()
        .enumerate()
        .filter(|(_, &a)| a)
        .map(|(i, _)| loaded.data.feature_names()[i].clone())
        .collect();
    let mut out = ModelFile::new(
        ModelMode::Pooled,
        file.class_levels.clone(),
        file.feature_names.clone(),
        None,
        &pooled.coefficients,
        &file.base_config(),
        file.seed,
    );
    out.pooled = Some(PooledBlock {
        source_study_levels: source_studies.clone(),
        variance_denominator: denominator_label(denominator).to_string(),
        study_variances: pooled
            .study_variances
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        shared_active: shared_names.clone(),
        underdetermined: pooled.underdetermined,
        uniform_weight_contrasts: pooled.uniform_weight_contrasts.clone(),
    });
    out.save(&args.out_model)?;

    for (k, row) in pooled.study_variances.rows().into_iter().enumerate() {
        let values: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        println!("contrast {} study variances: {}", k + 1, values.join(" "));
    }
    println!("pooled over ({}): {}", shared_names.len(), shared_names.join(" "));
    if pooled.underdetermined {
        println!("note: underdetermined pooled regression, minimum-norm solution");
    }
    if !pooled.uniform_weight_contrasts.is_empty() {
        println!(
            "note: uniform weights on contrasts {:?} (all variances zero)",
            pooled.uniform_weight_contrasts
        );
    }
    println!("model: {}", args.out_model.display());
    Ok(())
}

pub fn predict_cmd(args: &PredictArgs) -> Result<(), CliError> {
    let file = ModelFile::load(&args.model)?;
    let mut options = load_options(&args.data)?;
    if let Some(classes) = &options.classes {
        if *classes != file.class_levels {
            return Err(CliError::Label(format!(
                "--classes {:?} conflicts with the model's levels {:?}",
                classes, file.class_levels
            )));
        }
    }
    options.classes = Some(file.class_levels.clone());
    let loaded = load_dataset(&args.data.data, &options)?;
    check_features_match(&file, &loaded.data)?;

    let coeffs = file.to_coefficients()?;
    if coeffs.study_count() > 1 {
        match (&file.study_levels, &loaded.study_levels) {
            (Some(expected), Some(got)) if expected == got => {}
            (expected, got) => {
                return Err(CliError::Mode(format!(
                    "multi-study model expects studies {expected:?}, data has {got:?}"
                )))
            }
        }
    }
    echo(json!({
        "command": "predict",
        "mode": file.mode.label(),
        "samples": loaded.data.n_samples(),
        "seed": file.seed,
    }));

    let predictions = predict(&coeffs, &loaded.data)?;
    write_predictions(&args.out, &file.class_levels, &predictions)?;
    println!(
        "predicted {} samples over classes [{}]",
        loaded.data.n_samples(),
        file.class_levels.join(", ")
    );
    println!("predictions: {}", args.out.display());
    Ok(())
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<(), CliError> {
    let predictions = read_predictions(&args.predictions)?;
    let mut options = load_options(&args.data)?;
    options.classes = Some(predictions.class_levels.clone());
    let loaded = load_dataset(&args.data.data, &options)?;
    if loaded.data.n_samples() != predictions.predicted.len() {
        return Err(CliError::Lib(TgdrError::DimensionMismatch(format!(
            "{} truth rows vs {} prediction rows",
            loaded.data.n_samples(),
            predictions.predicted.len()
        ))));
    }
    let mut predicted_ids = Vec::with_capacity(predictions.predicted.len());
    for (r, level) in predictions.predicted.iter().enumerate() {
        let id = predictions
            .class_levels
            .iter()
            .position(|l| l == level)
            .ok_or_else(|| {
                CliError::Label(format!(
                    "row {}: predicted level '{level}' has no prob_ column",
                    r + 1
                ))
            })?;
        predicted_ids.push(id + 1);
    }
    echo(json!({
        "command": "evaluate",
        "samples": loaded.data.n_samples(),
        "classes": predictions.class_levels,
    }));

    let preds = Predictions {
        labels: predicted_ids,
        probabilities: predictions.probabilities.clone(),
    };
    let report = evaluate(loaded.data.labels(), &preds, predictions.class_levels.len())?;

    println!(
        "error: {:.2}% gbs {:.6} on {} samples",
        report.error_percent, report.gbs, report.n_samples
    );
    println!("confusion (rows true, columns predicted):");
    for (k, row) in report.confusion.rows().into_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        println!("  {}: {}", predictions.class_levels[k], cells.join(" "));
    }
    if let Some(out) = &args.out {
        let mut rows = vec![
            ("n_samples".to_string(), report.n_samples.to_string()),
            (
                "error_percent".to_string(),
                full_precision(report.error_percent),
            ),
            ("gbs".to_string(), full_precision(report.gbs)),
        ];
        for (t, row) in report.confusion.rows().into_iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                rows.push((
                    format!(
                        "confusion_{}_{}",
                        predictions.class_levels[t], predictions.class_levels[p]
                    ),
                    count.to_string(),
                ));
            }
        }
        write_metric_report(out, &rows)?;
        println!("report: {}", out.display());
    }
    Ok(())
}

fn quote_csv(text: &str) -> String {
    format!("\"{}\"", text.replace('"', "\"\""))
}

pub fn replicate_table1(args: &ReplicateArgs) -> Result<(), CliError> {
    let design = design_for(args.example, args.n_train, args.n_test, args.features, args.seed)?;
    let tau_grid = match &args.taus {
        Some(t) => t.clone(),
        None => tgdr::default_tau_grid(),
    };
    let options = ReplicateOptions {
        replicates: args.replicates,
        folds: args.folds,
        tau_grid: tau_grid.clone(),
        cv_max_steps: args.cv_steps,
        cv_stride: args.cv_stride,
        n_bootstrap: args.bootstrap,
        cutoffs: args.cutoffs.clone(),
        base: TgdrConfig {
            delta_v: args.delta_v,
            standardize: !args.no_standardize,
            seed: args.seed,
            ..TgdrConfig::default()
        },
    };
    echo(json!({
        "command": "replicate-table1",
        "example": args.example,
        "replicates": args.replicates,
        "n_train": args.n_train,
        "n_test": args.n_test,
        "features": args.features,
        "folds": args.folds,
        "taus": tau_grid,
        "cv_steps": args.cv_steps,
        "cv_stride": args.cv_stride,
        "bootstrap": args.bootstrap,
        "cutoffs": args.cutoffs,
        "delta_v": args.delta_v,
        "standardize": !args.no_standardize,
        "seed": args.seed,
    }));

    let summary = run_replicates(&design, &options)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out_dir.display())))?;

    let mut rows = String::from("replicate,tau,steps,active_size,error_percent");
    for i in 1..=4 {
        let _ = write!(rows, ",x{i}_selected");
    }
    for i in 1..=4 {
        let _ = write!(rows, ",x{i}_bf");
    }
    for c in &args.cutoffs {
        let _ = write!(rows, ",size_at_{c},error_at_{c}");
    }
    rows.push('\n');
    for row in &summary.rows {
        let _ = write!(
            rows,
            "{},{},{},{},{}",
            row.replicate, row.tau, row.steps, row.active_size, row.error_percent
        );
        for selected in row.informative_selected {
            let _ = write!(rows, ",{}", u8::from(selected));
        }
        for bf in row.informative_bf {
            let _ = write!(rows, ",{bf}");
        }
        for (size, error) in row.cutoff_sizes.iter().zip(&row.cutoff_errors) {
            let _ = write!(rows, ",{size},{error}");
        }
        rows.push('\n');
    }
    let replicates_path = args.out_dir.join("replicates.csv");
    std::fs::write(&replicates_path, rows)
        .map_err(|e| CliError::Io(format!("{}: {e}", replicates_path.display())))?;

    let mut metrics: Vec<(String, String)> = vec![
        ("completed".into(), summary.rows.len().to_string()),
        ("failed".into(), summary.failures.len().to_string()),
    ];
    for (i, pct) in summary.selection_percent.iter().enumerate() {
        metrics.push((format!("selection_percent_x{}", i + 1), pct.to_string()));
    }
    metrics.push(("mean_active_size".into(), summary.mean_active_size.to_string()));
    metrics.push((
        "mean_error_percent".into(),
        summary.mean_error_percent.to_string(),
    ));
    for (i, bf) in summary.mean_informative_bf.iter().enumerate() {
        metrics.push((format!("mean_bf_x{}", i + 1), bf.to_string()));
    }
    for cutoff in &summary.cutoffs {
        metrics.push((
            format!("cutoff_{}_mean_size", cutoff.cutoff),
            cutoff.mean_size.to_string(),
        ));
        metrics.push((
            format!("cutoff_{}_mean_error_percent", cutoff.cutoff),
            cutoff.mean_error_percent.to_string(),
        ));
    }
    for (replicate, message) in &summary.failures {
        metrics.push((format!("failure_{replicate}"), quote_csv(message)));
    }
    let summary_path = args.out_dir.join("summary.csv");
    write_metric_report(&summary_path, &metrics)?;

    print!("{}", summary.table());
    println!("replicate rows: {}", replicates_path.display());
    println!("summary: {}", summary_path.display());
    Ok(())
}
