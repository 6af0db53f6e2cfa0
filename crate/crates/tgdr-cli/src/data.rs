//! Delimited-text ingestion and report emission. Input files are comma- or
//! tab-separated with a mandatory header row; samples are rows, one column
//! holds the class label, an optional column holds the study label, and
//! every other column is a numeric feature.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use tgdr::{ExpressionDataset, Predictions};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Auto,
    Comma,
    Tab,
}

impl Delimiter {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        match text {
            "auto" => Ok(Delimiter::Auto),
            "comma" => Ok(Delimiter::Comma),
            "tab" => Ok(Delimiter::Tab),
            other => Err(CliError::Parse(format!(
                "unknown delimiter '{other}' (expected auto, comma, or tab)"
            ))),
        }
    }

    fn resolve(self, first_line: &str) -> u8 {
        match self {
            Delimiter::Comma => b',',
            Delimiter::Tab => b'\t',
            Delimiter::Auto => {
                if first_line.contains('\t') {
                    b'\t'
                } else {
                    b','
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub label_col: String,
    pub study_col: Option<String>,
    /// Explicit class level order; the last level is the reference class.
    /// When absent, levels are sorted (numerically when every level parses
    /// as an integer) and the largest becomes the reference.
    pub classes: Option<Vec<String>>,
    pub delimiter: Delimiter,
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub data: ExpressionDataset,
    /// Level behind each internal class 1..K; the last is the reference.
    pub class_levels: Vec<String>,
    /// Level behind each internal study 1..M when a study column was given.
    pub study_levels: Option<Vec<String>>,
}

/// Sorts distinct level strings numerically when they all parse as
/// integers, lexicographically otherwise.
fn sort_levels(mut levels: Vec<String>) -> Vec<String> {
    let numeric: Option<Vec<i64>> =
        levels.iter().map(|s| s.trim().parse::<i64>().ok()).collect();
    match numeric {
        Some(_) => levels.sort_by_key(|s| {
            (s.trim().parse::<i64>().expect("checked above"), s.clone())
        }),
        None => levels.sort(),
    }
    levels
}

fn level_index(
    levels: &[String],
    value: &str,
    row: usize,
    what: &str,
) -> Result<usize, CliError> {
    levels
        .iter()
        .position(|l| l == value)
        .ok_or_else(|| {
            CliError::Label(format!(
                "row {row}: {what} '{value}' is not among the declared levels \
                 [{}]",
                levels.join(", ")
            ))
        })
        .map(|i| i + 1)
}

pub fn load_dataset(path: &Path, options: &LoadOptions) -> Result<LoadedDataset, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let first_line = text.lines().next().unwrap_or("");
    if first_line.is_empty() {
        return Err(CliError::Parse(format!("{}: empty file", path.display())));
    }
    let delimiter = options.delimiter.resolve(first_line);

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let label_idx = headers
        .iter()
        .position(|h| *h == options.label_col)
        .ok_or_else(|| {
            CliError::Parse(format!(
                "label column '{}' not found in header",
                options.label_col
            ))
        })?;
    let study_idx = match &options.study_col {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(
            || CliError::Parse(format!("study column '{name}' not found in header")),
        )?),
        None => None,
    };

    let mut feature_cols = Vec::new();
    let mut feature_names = Vec::new();
    for (i, name) in headers.iter().enumerate() {
        if i == label_idx || Some(i) == study_idx {
            continue;
        }
        if feature_names.contains(name) {
            return Err(CliError::Parse(format!(
                "duplicate feature column '{name}'"
            )));
        }
        feature_cols.push(i);
        feature_names.push(name.clone());
    }
    if feature_cols.is_empty() {
        return Err(CliError::Parse("no feature columns in header".into()));
    }

    let mut raw_labels: Vec<String> = Vec::new();
    let mut raw_studies: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record =
            record.map_err(|e| CliError::Parse(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(CliError::Parse(format!(
                "row {row}: {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        raw_labels.push(record[label_idx].trim().to_string());
        if let Some(s) = study_idx {
            raw_studies.push(record[s].trim().to_string());
        }
        for (&col, name) in feature_cols.iter().zip(&feature_names) {
            let cell = record[col].trim();
            let value: f64 = cell.parse().map_err(|_| {
                CliError::Parse(format!(
                    "row {row}, column '{name}': cannot parse '{cell}' as a number"
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::Parse(format!(
                    "row {row}, column '{name}': non-finite value '{cell}'"
                )));
            }
            values.push(value);
        }
    }
    let n = raw_labels.len();
    if n == 0 {
        return Err(CliError::Parse(format!("{}: no data rows", path.display())));
    }

    let class_levels = match &options.classes {
        Some(levels) => {
            let mut distinct = BTreeMap::new();
            for l in levels {
                if distinct.insert(l.clone(), ()).is_some() {
                    return Err(CliError::Label(format!(
                        "class level '{l}' listed twice"
                    )));
                }
            }
            if levels.len() < 2 {
                return Err(CliError::Label(
                    "at least two class levels are required".into(),
                ));
            }
            levels.clone()
        }
        None => {
            let mut distinct: Vec<String> = raw_labels.clone();
            distinct.sort();
            distinct.dedup();
            sort_levels(distinct)
        }
    };
    let mut labels = Vec::with_capacity(n);
    for (r, value) in raw_labels.iter().enumerate() {
        labels.push(level_index(&class_levels, value, r + 1, "label")?);
    }

    let (study_ids, study_count, study_levels) = if study_idx.is_some() {
        let mut distinct: Vec<String> = raw_studies.clone();
        distinct.sort();
        distinct.dedup();
        let levels = sort_levels(distinct);
        let mut ids = Vec::with_capacity(n);
        for (r, value) in raw_studies.iter().enumerate() {
            ids.push(level_index(&levels, value, r + 1, "study")?);
        }
        let count = levels.len();
        (ids, count, Some(levels))
    } else {
        (vec![1; n], 1, None)
    };

    let features = Array2::from_shape_vec((n, feature_names.len()), values)
        .expect("row-major cells collected above");
    let data = ExpressionDataset::new(
        features,
        labels,
        class_levels.len(),
        study_ids,
        study_count,
        feature_names,
    )
    .map_err(CliError::Lib)?;
    Ok(LoadedDataset {
        data,
        class_levels,
        study_levels,
    })
}

/// 17 significant digits: enough to reparse the exact double.
pub fn full_precision(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn write_dataset(path: &Path, data: &ExpressionDataset) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str("label");
    if data.study_count() > 1 {
        out.push_str(",study");
    }
    for name in data.feature_names() {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for j in 0..data.n_samples() {
        let _ = write!(out, "{}", data.labels()[j]);
        if data.study_count() > 1 {
            let _ = write!(out, ",{}", data.study_ids()[j]);
        }
        for value in data.features().row(j) {
            let _ = write!(out, ",{}", full_precision(*value));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_predictions(
    path: &Path,
    class_levels: &[String],
    predictions: &Predictions,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str("row,predicted");
    for level in class_levels {
        let _ = write!(out, ",prob_{level}");
    }
    out.push('\n');
    for (j, &label) in predictions.labels.iter().enumerate() {
        let _ = write!(out, "{},{}", j + 1, class_levels[label - 1]);
        for p in predictions.probabilities.row(j) {
            let _ = write!(out, ",{}", full_precision(*p));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug)]
pub struct PredictionFile {
    pub class_levels: Vec<String>,
    pub predicted: Vec<String>,
    pub probabilities: Array2<f64>,
}

pub fn read_predictions(path: &Path) -> Result<PredictionFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.len() < 3 || headers[0] != "row" || headers[1] != "predicted" {
        return Err(CliError::Parse(format!(
            "{}: expected header row,predicted,prob_*",
            path.display()
        )));
    }
    let mut class_levels = Vec::new();
    for h in &headers[2..] {
        match h.strip_prefix("prob_") {
            Some(level) => class_levels.push(level.to_string()),
            None => {
                return Err(CliError::Parse(format!(
                    "{}: unexpected column '{h}'",
                    path.display()
                )))
            }
        }
    }
    let mut predicted = Vec::new();
    let mut values = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record =
            record.map_err(|e| CliError::Parse(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(CliError::Parse(format!(
                "row {row}: {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        predicted.push(record[1].to_string());
        for (c, level) in class_levels.iter().enumerate() {
            let cell = record[c + 2].trim();
            let value: f64 = cell.parse().map_err(|_| {
                CliError::Parse(format!(
                    "row {row}, column 'prob_{level}': cannot parse '{cell}'"
                ))
            })?;
            values.push(value);
        }
    }
    if predicted.is_empty() {
        return Err(CliError::Parse(format!("{}: no data rows", path.display())));
    }
    let probabilities =
        Array2::from_shape_vec((predicted.len(), class_levels.len()), values)
            .expect("row-major cells collected above");
    Ok(PredictionFile {
        class_levels,
        predicted,
        probabilities,
    })
}

/// Writes a two-column metric,value report.
pub fn write_metric_report(
    path: &Path,
    rows: &[(String, String)],
) -> Result<(), CliError> {
    let mut out = String::from("metric,value\n");
    for (key, value) in rows {
        let _ = writeln!(out, "{key},{value}");
    }
    std::fs::write(path, out).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
