//! CSV loading/writing for trial datasets, JSON run configurations, and
//! report serialization in the tables' layouts.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::el_core::SolverOptions;
use crate::estimators::{EstimatorSpec, Method, TrialData};
use crate::inference::WaldSummary;
use crate::models::{ModelFamily, ModelSpec};
use crate::simlab::MetricsRow;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("parse error at row {row}, column '{column}': {message}")]
    ParseError { row: usize, column: String, message: String },
    #[error("config error at {path}: {message}")]
    ConfigError { path: String, message: String },
    #[error("invalid data: {0}")]
    InvalidData(String),
}

/// Column mapping for a trial CSV. The outcome cell equal to
/// `missing_token` (or empty) marks a missing outcome.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub treatment_column: String,
    pub outcome_column: String,
    #[serde(default = "default_missing_token")]
    pub missing_token: String,
    pub covariate_columns: Vec<String>,
    #[serde(default)]
    pub baseline_column: Option<String>,
}

fn default_missing_token() -> String {
    "NA".to_string()
}

impl CsvSchema {
    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_columns.iter().position(|c| c == name)
    }
}

/// Parses a trial CSV against the schema. Header row required; treatment
/// must be 0/1; the outcome is missing exactly when its cell equals the
/// missing token or is empty.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<TrialData, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| {
        match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            },
            _ => DataError::Csv(e),
        }
    })?;
    let headers = reader.headers()?.clone();
    let col_index = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::SchemaMismatch(format!("column '{name}' not found in header")))
    };
    let w_col = col_index(&schema.treatment_column)?;
    let y_col = col_index(&schema.outcome_column)?;
    let x_cols: Vec<usize> = schema
        .covariate_columns
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_, _>>()?;

    let mut w = Vec::new();
    let mut r = Vec::new();
    let mut y = Vec::new();
    let mut x_flat = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 2; // 1-based, after the header
        let get = |col: usize, name: &str| -> Result<&str, DataError> {
            record.get(col).ok_or_else(|| DataError::ParseError {
                row,
                column: name.to_string(),
                message: "missing field".into(),
            })
        };

        let w_cell = get(w_col, &schema.treatment_column)?.trim();
        let w_val = match w_cell {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(DataError::ParseError {
                    row,
                    column: schema.treatment_column.clone(),
                    message: format!("treatment must be 0 or 1, got '{other}'"),
                })
            }
        };
        w.push(w_val);

        let y_cell = get(y_col, &schema.outcome_column)?.trim();
        if y_cell.is_empty() || y_cell == schema.missing_token {
            r.push(0u8);
            y.push(None);
        } else {
            let value: f64 = y_cell.parse().map_err(|_| DataError::ParseError {
                row,
                column: schema.outcome_column.clone(),
                message: format!("cannot parse outcome '{y_cell}'"),
            })?;
            r.push(1u8);
            y.push(Some(value));
        }

        for (k, &col) in x_cols.iter().enumerate() {
            let name = &schema.covariate_columns[k];
            let cell = get(col, name)?.trim();
            let value: f64 = cell.parse().map_err(|_| DataError::ParseError {
                row,
                column: name.clone(),
                message: format!("cannot parse covariate '{cell}'"),
            })?;
            x_flat.push(value);
        }
    }

    let n = w.len();
    let x = nalgebra::DMatrix::from_row_slice(n, x_cols.len(), &x_flat);
    TrialData::new(w, r, y, x).map_err(|e| DataError::InvalidData(e.to_string()))
}

/// Writes a dataset back out under the same schema. Floats use the
/// shortest round-trip representation, so load/write cycles are lossless.
pub fn write_csv(path: &Path, data: &TrialData, schema: &CsvSchema) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
    })?;
    let mut header = vec![schema.treatment_column.clone(), schema.outcome_column.clone()];
    header.extend(schema.covariate_columns.iter().cloned());
    writer.write_record(&header)?;
    for i in 0..data.n_total() {
        let mut record = Vec::with_capacity(2 + schema.covariate_columns.len());
        record.push(data.treatment()[i].to_string());
        record.push(match data.outcome(i) {
            Some(v) => format!("{v}"),
            None => schema.missing_token.clone(),
        });
        for j in 0..schema.covariate_columns.len() {
            record.push(format!("{}", data.covariates()[(i, j)]));
        }
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

/// Report serialization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    #[default]
    Markdown,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSpec {
    arm: crate::estimators::Arm,
    family: ModelFamily,
    features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimatorSpec {
    method: Method,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    models: Vec<RawModelSpec>,
    #[serde(default)]
    baseline_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    spec_version: String,
    schema: CsvSchema,
    estimators: Vec<RawEstimatorSpec>,
    #[serde(default)]
    solver: SolverOptions,
    #[serde(default)]
    bootstrap: BootstrapConfig,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    output_format: OutputFormat,
}

/// Bootstrap settings for the estimate command.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub stratified: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 500, stratified: false }
    }
}

/// A fully validated run configuration: schema, resolved estimator specs
/// (feature names mapped to column indices), solver and bootstrap options.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub schema: CsvSchema,
    pub estimators: Vec<EstimatorSpec>,
    pub bootstrap: BootstrapConfig,
    pub seed: Option<u64>,
    pub output_format: OutputFormat,
}

/// Parses and validates a JSON run configuration. Unknown keys are
/// rejected; any invalid reference reports the JSON path of the offender.
pub fn parse_config(text: &str) -> Result<RunConfig, DataError> {
    let raw: RawConfig = serde_json::from_str(text)
        .map_err(|e| DataError::ConfigError { path: "$".into(), message: e.to_string() })?;
    if raw.spec_version != "1" {
        return Err(DataError::ConfigError {
            path: "$.spec_version".into(),
            message: format!("unsupported spec_version '{}'", raw.spec_version),
        });
    }
    if raw.estimators.is_empty() {
        return Err(DataError::ConfigError {
            path: "$.estimators".into(),
            message: "at least one estimator is required".into(),
        });
    }
    raw.solver.validate().map_err(|e| DataError::ConfigError {
        path: "$.solver".into(),
        message: e.to_string(),
    })?;

    let mut estimators = Vec::with_capacity(raw.estimators.len());
    for (i, est) in raw.estimators.iter().enumerate() {
        let mut models = Vec::with_capacity(est.models.len());
        for (j, m) in est.models.iter().enumerate() {
            let mut features = Vec::with_capacity(m.features.len());
            for (k, name) in m.features.iter().enumerate() {
                let idx = raw.schema.covariate_index(name).ok_or_else(|| DataError::ConfigError {
                    path: format!("$.estimators[{i}].models[{j}].features[{k}]"),
                    message: format!("column '{name}' is not in schema.covariate_columns"),
                })?;
                features.push(idx);
            }
            models.push(ModelSpec { arm: m.arm, family: m.family, features });
        }
        let baseline_column = match (&est.baseline_column, &raw.schema.baseline_column) {
            (Some(name), _) | (None, Some(name)) if est.method == Method::ChangeScore => {
                Some(raw.schema.covariate_index(name).ok_or_else(|| DataError::ConfigError {
                    path: format!("$.estimators[{i}].baseline_column"),
                    message: format!("column '{name}' is not in schema.covariate_columns"),
                })?)
            }
            _ => None,
        };
        if est.method == Method::ChangeScore && baseline_column.is_none() {
            return Err(DataError::ConfigError {
                path: format!("$.estimators[{i}]"),
                message: "change_score requires a baseline_column".into(),
            });
        }
        estimators.push(EstimatorSpec {
            method: est.method,
            models,
            baseline_column,
            solver: raw.solver.clone(),
            label: est.label.clone(),
        });
    }
    Ok(RunConfig {
        schema: raw.schema,
        estimators,
        bootstrap: raw.bootstrap,
        seed: raw.seed,
        output_format: raw.output_format,
    })
}

pub fn parse_config_file(path: &Path) -> Result<RunConfig, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// One line of the estimate report (the real-data table layout).
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReportRow {
    pub estimator: String,
    pub wald: WaldSummary,
    /// (unadjusted SE)^2 / (this SE)^2; 1 for the unadjusted row itself.
    pub relative_efficiency: f64,
}

fn fmt3(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "Inf".to_string() } else { "-Inf".to_string() }
    } else {
        format!("{v:.3}")
    }
}

fn render_table(header: &[&str], rows: &[Vec<String>], format: OutputFormat) -> String {
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            let _ = writeln!(out, "{}", header.join(","));
            for row in rows {
                let _ = writeln!(out, "{}", row.join(","));
            }
        }
        OutputFormat::Markdown => {
            let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for row in rows {
                for (k, cell) in row.iter().enumerate() {
                    widths[k] = widths[k].max(cell.len());
                }
            }
            let line = |cells: Vec<String>| -> String {
                let padded: Vec<String> = cells
                    .iter()
                    .enumerate()
                    .map(|(k, c)| format!("{:width$}", c, width = widths[k]))
                    .collect();
                format!("| {} |", padded.join(" | "))
            };
            let _ = writeln!(out, "{}", line(header.iter().map(|s| s.to_string()).collect()));
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", line(rule));
            for row in rows {
                let _ = writeln!(out, "{}", line(row.clone()));
            }
        }
    }
    out
}

/// Estimate report: Estimate, Boot.SE, Test stat., Rel. eff. — rows in
/// declaration order, three decimals.
pub fn write_estimate_report(rows: &[EstimateReportRow], format: OutputFormat) -> String {
    let header = ["Estimator", "Estimate", "Boot.SE", "Test stat.", "Rel.eff."];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.estimator.clone(),
                fmt3(r.wald.estimate),
                fmt3(r.wald.se),
                fmt3(r.wald.test_stat),
                fmt3(r.relative_efficiency),
            ]
        })
        .collect();
    render_table(&header, &body, format)
}

/// Metrics report: Bias, Ave.Boot.SE, Cov.prob.boot., MSE — rows in
/// declaration order, three decimals.
pub fn write_metrics_report(rows: &[MetricsRow], format: OutputFormat) -> String {
    let header = ["Estimator", "Bias", "Ave.Boot.SE", "Cov.prob.boot.", "MSE"];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.estimator.clone(),
                fmt3(r.bias),
                fmt3(r.ave_boot_se),
                fmt3(r.cov_prob_boot),
                fmt3(r.mse),
            ]
        })
        .collect();
    render_table(&header, &body, format)
}

/// Reparses a CSV metrics report into (estimator, values) pairs.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<(String, Vec<f64>)>, DataError> {
    let mut out = Vec::new();
    let mut lines = text.lines();
    let _header = lines.next();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let values = cells[1..]
            .iter()
            .map(|c| {
                if *c == "NA" {
                    Ok(f64::NAN)
                } else {
                    c.parse::<f64>().map_err(|_| DataError::ParseError {
                        row: i + 2,
                        column: "value".into(),
                        message: format!("bad number '{c}'"),
                    })
                }
            })
            .collect::<Result<Vec<f64>, _>>()?;
        out.push((cells[0].to_string(), values));
    }
    Ok(out)
}

/// Convenience used by tests: map covariate names to indices for a schema.
pub fn feature_indices(schema: &CsvSchema, names: &[&str]) -> Option<Vec<usize>> {
    names.iter().map(|n| schema.covariate_index(n)).collect()
}

/// Builds the name->index map once for callers that resolve many columns.
pub fn column_map(schema: &CsvSchema) -> HashMap<String, usize> {
    schema
        .covariate_columns
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::wald;

    fn schema() -> CsvSchema {
        CsvSchema {
            treatment_column: "w".into(),
            outcome_column: "y".into(),
            missing_token: "NA".into(),
            covariate_columns: vec!["x1".into(), "x2".into()],
            baseline_column: Some("x1".into()),
        }
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_with_missing_outcome() {
        let f = write_temp("w,y,x1,x2\n1,1.5,0.1,2\n1,NA,0.3,1\n1,3.5,0.6,5\n0,2.5,0.2,3\n0,0.5,0.4,4\n");
        let data = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(data.n_total(), 5);
        assert_eq!(data.observed(), &[1, 0, 1, 1, 1]);
        assert_eq!(data.outcome(1), None);
        assert_eq!(data.outcome(3), Some(2.5));
    }

    #[test]
    fn load_csv_rejects_bad_treatment() {
        let f = write_temp("w,y,x1,x2\n2,1.5,0.1,2\n0,2.5,0.2,3\n");
        let err = load_csv(f.path(), &schema()).unwrap_err();
        match err {
            DataError::ParseError { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "w");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn load_csv_rejects_missing_column() {
        let f = write_temp("w,y,x1\n1,1.5,0.1\n0,2.5,0.2\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(DataError::SchemaMismatch(_))));
    }

    #[test]
    fn csv_round_trip_is_field_identical() {
        let original = "w,y,x1,x2\n1,1.5,0.125,2\n1,NA,0.25,1\n1,2.75,0.5,6\n0,2.5,-0.0625,3\n0,0.5,0.375,4\n";
        let f = write_temp(original);
        let data = load_csv(f.path(), &schema()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(out.path(), &data, &schema()).unwrap();
        let written = std::fs::read_to_string(out.path()).unwrap();
        assert_eq!(written, original);
        let reloaded = load_csv(out.path(), &schema()).unwrap();
        assert_eq!(reloaded, data);
    }

    #[test]
    fn minimal_config_parses() {
        let text = r#"{
            "spec_version": "1",
            "schema": {"treatment_column": "w", "outcome_column": "y", "covariate_columns": ["x1"]},
            "estimators": [{"method": "unadjusted"}]
        }"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.estimators.len(), 1);
        assert_eq!(cfg.estimators[0].method, Method::Unadjusted);
        assert_eq!(cfg.bootstrap.replicates, 500);
    }

    #[test]
    fn config_rejects_unknown_key() {
        let text = r#"{
            "spec_version": "1",
            "schema": {"treatment_column": "w", "outcome_column": "y", "covariate_columns": ["x1"]},
            "estimators": [{"method": "unadjusted"}],
            "extra_key": 1
        }"#;
        assert!(matches!(parse_config(text), Err(DataError::ConfigError { .. })));
    }

    #[test]
    fn config_reports_path_of_unknown_feature() {
        let text = r#"{
            "spec_version": "1",
            "schema": {"treatment_column": "w", "outcome_column": "y", "covariate_columns": ["x1"]},
            "estimators": [
                {"method": "unadjusted"},
                {"method": "elw", "models": [
                    {"arm": "treated", "family": "identity", "features": ["x1"]},
                    {"arm": "control", "family": "identity", "features": ["nope"]}
                ]}
            ]
        }"#;
        match parse_config(text).unwrap_err() {
            DataError::ConfigError { path, .. } => {
                assert_eq!(path, "$.estimators[1].models[1].features[0]");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn config_builds_eight_model_set_shape() {
        let text = r#"{
            "spec_version": "1",
            "schema": {"treatment_column": "w", "outcome_column": "y",
                       "covariate_columns": ["x1","x2","x3","x4","s1","s2","s3"]},
            "estimators": [{"method": "elw_mr", "models": [
                {"arm": "treated", "family": "logistic", "features": ["s2"]},
                {"arm": "treated", "family": "logistic", "features": ["x1","x2","x3","x4","s1"]},
                {"arm": "treated", "family": "linear", "features": ["x1","x2","x3","x4","s1"]},
                {"arm": "treated", "family": "linear", "features": ["s1","s2","s3"]},
                {"arm": "control", "family": "logistic", "features": ["s2"]},
                {"arm": "control", "family": "logistic", "features": ["x1","x2","x3","x4","s1"]},
                {"arm": "control", "family": "linear", "features": ["x1","x2","x3","x4","s1"]},
                {"arm": "control", "family": "linear", "features": ["s1","s2","s3"]}
            ]}]
        }"#;
        let cfg = parse_config(text).unwrap();
        let spec = &cfg.estimators[0];
        let treated_logistic = spec
            .models
            .iter()
            .filter(|m| m.family == ModelFamily::Logistic && m.arm == crate::estimators::Arm::Treated)
            .count();
        assert_eq!(treated_logistic, 2);
        assert_eq!(spec.models.len(), 8);
    }

    #[test]
    fn estimate_report_has_table_shape() {
        let rows = vec![
            EstimateReportRow {
                estimator: "unadjusted".into(),
                wald: wald(46.81, 7.055),
                relative_efficiency: 1.0,
            },
            EstimateReportRow {
                estimator: "elw".into(),
                wald: wald(50.006, 5.288),
                relative_efficiency: 1.78,
            },
        ];
        let md = write_estimate_report(&rows, OutputFormat::Markdown);
        assert!(md.contains("Estimate"));
        assert!(md.contains("Rel.eff."));
        assert!(md.contains("46.810"));
        let csv_text = write_estimate_report(&rows, OutputFormat::Csv);
        assert!(csv_text.starts_with("Estimator,Estimate,Boot.SE,Test stat.,Rel.eff."));
    }

    #[test]
    fn metrics_report_round_trips_at_three_decimals() {
        let rows = vec![
            MetricsRow {
                estimator: "elw".into(),
                bias: 0.0284,
                ave_boot_se: 0.6493,
                cov_prob_boot: 0.952,
                mse: 0.4001,
                replicates_used: 1000,
                failures: 0,
            },
            MetricsRow {
                estimator: "unadjusted".into(),
                bias: 0.2169,
                ave_boot_se: 3.7891,
                cov_prob_boot: 0.944,
                mse: 15.2288,
                replicates_used: 1000,
                failures: 0,
            },
        ];
        let text = write_metrics_report(&rows, OutputFormat::Csv);
        let parsed = parse_metrics_csv(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].0, "elw");
        assert_eq!(parsed[1].0, "unadjusted");
        for (row, (_, values)) in rows.iter().zip(&parsed) {
            for (a, b) in [row.bias, row.ave_boot_se, row.cov_prob_boot, row.mse].iter().zip(values)
            {
                assert!((a - b).abs() <= 0.0005 + 1e-12);
            }
        }
    }

    #[test]
    fn rows_keep_declaration_order() {
        let rows = vec![
            MetricsRow {
                estimator: "zeta".into(),
                bias: 1.0,
                ave_boot_se: 1.0,
                cov_prob_boot: 0.9,
                mse: 2.0,
                replicates_used: 10,
                failures: 0,
            },
            MetricsRow {
                estimator: "alpha".into(),
                bias: 0.1,
                ave_boot_se: 0.5,
                cov_prob_boot: 0.95,
                mse: 0.3,
                replicates_used: 10,
                failures: 0,
            },
        ];
        let text = write_metrics_report(&rows, OutputFormat::Csv);
        let first = text.lines().nth(1).unwrap();
        assert!(first.starts_with("zeta"));
    }
}
