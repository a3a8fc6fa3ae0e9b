//! Panel ingestion: per-series stationarity transforms, window alignment,
//! standardization, and the CSV/JSON panel formats.
//!
//! Transform codes follow the usual monthly-macro convention:
//! 1 no transformation, 2 first difference, 3 second difference,
//! 4 log, 5 first difference of log, 6 second difference of log.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standardization divisor is the sample one (`T − 1`); recorded in the
/// metadata sidecar so downstream unit recovery is unambiguous.
pub const STANDARDIZATION_DIVISOR: &str = "T-1";

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("unknown transform code {0}; valid codes are 1..=6")]
    UnknownCode(u8),
    #[error("series too short for transform code {code}: length {len}, need at least {need}")]
    SeriesTooShort { code: u8, len: usize, need: usize },
    #[error("non-positive value {value} at position {index}; log transforms require positive data")]
    NonPositiveForLog { index: usize, value: f64 },
    #[error("series '{id}' has zero sample variance and cannot be standardized")]
    ZeroVarianceSeries { id: String },
    #[error("series '{0}' not found in the panel")]
    MissingSeries(String),
    #[error("duplicate series id '{0}' in the panel header")]
    DuplicateSeries(String),
    #[error("ragged CSV: row {row} has {got} fields, expected {expected}")]
    RaggedCsv { row: usize, got: usize, expected: usize },
    #[error("missing or non-numeric value for series '{id}' at row {row}")]
    MissingValue { id: String, row: usize },
    #[error("usable window too short after trimming: {t} periods for {r2} observed factors")]
    WindowTooShort { t: usize, r2: usize },
    #[error("panel invariant violated: {0}")]
    InvariantViolated(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Identity, transform code and label of a single series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub id: String,
    pub transform_code: u8,
    pub display_name: String,
}

impl SeriesSpec {
    pub fn new(id: impl Into<String>, transform_code: u8) -> Self {
        let id = id.into();
        SeriesSpec {
            display_name: id.clone(),
            id,
            transform_code,
        }
    }
}

/// A standardized `N × T` panel alongside the metadata needed to map results
/// back to original units.
#[derive(Debug, Clone)]
pub struct TimePanel {
    /// Series-by-period values, each row standardized.
    pub values: DMatrix<f64>,
    pub specs: Vec<SeriesSpec>,
    /// Pre-standardization means, one per series.
    pub means: DVector<f64>,
    /// Pre-standardization sample standard deviations (strictly positive).
    pub stds: DVector<f64>,
    pub period_labels: Vec<String>,
}

impl TimePanel {
    pub fn n_series(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.values.ncols()
    }

    /// Checks the standardization invariants: row means within 1e-10 of zero,
    /// sample variances within 1e-8 of one, all entries finite, stds positive.
    pub fn validate(&self) -> Result<(), PanelError> {
        let (n, t) = self.values.shape();
        if self.specs.len() != n || self.means.len() != n || self.stds.len() != n {
            return Err(PanelError::InvariantViolated(
                "metadata length disagrees with the value matrix".into(),
            ));
        }
        if self.period_labels.len() != t {
            return Err(PanelError::InvariantViolated(
                "period labels disagree with the number of columns".into(),
            ));
        }
        for i in 0..n {
            if self.stds[i] <= 0.0 {
                return Err(PanelError::InvariantViolated(format!(
                    "non-positive std for series '{}'",
                    self.specs[i].id
                )));
            }
            let row = self.values.row(i);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(PanelError::InvariantViolated(format!(
                    "non-finite value in series '{}'",
                    self.specs[i].id
                )));
            }
            let mean = row.sum() / t as f64;
            if mean.abs() > 1e-10 {
                return Err(PanelError::InvariantViolated(format!(
                    "series '{}' has mean {mean:e} after standardization",
                    self.specs[i].id
                )));
            }
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (t as f64 - 1.0);
            if (var - 1.0).abs() > 1e-8 {
                return Err(PanelError::InvariantViolated(format!(
                    "series '{}' has variance {var} after standardization",
                    self.specs[i].id
                )));
            }
        }
        Ok(())
    }
}

/// Number of leading observations a transform consumes.
pub fn differencing_order(code: u8) -> Result<usize, PanelError> {
    match code {
        1 | 4 => Ok(0),
        2 | 5 => Ok(1),
        3 | 6 => Ok(2),
        _ => Err(PanelError::UnknownCode(code)),
    }
}

fn first_difference(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

fn log_values(values: &[f64]) -> Result<Vec<f64>, PanelError> {
    for (index, &value) in values.iter().enumerate() {
        if value <= 0.0 {
            return Err(PanelError::NonPositiveForLog { index, value });
        }
    }
    Ok(values.iter().map(|v| v.ln()).collect())
}

/// Applies a stationarity transform. Output length shrinks by the
/// differencing order of the code. Code 5 is exactly code 4 followed by
/// code 2, and code 6 is code 4 followed by code 3.
pub fn apply_transform(raw: &[f64], code: u8) -> Result<Vec<f64>, PanelError> {
    let order = differencing_order(code)?;
    let need = 1 + order;
    if raw.len() < need {
        return Err(PanelError::SeriesTooShort {
            code,
            len: raw.len(),
            need,
        });
    }
    Ok(match code {
        1 => raw.to_vec(),
        2 => first_difference(raw),
        3 => first_difference(&first_difference(raw)),
        4 => log_values(raw)?,
        5 => first_difference(&log_values(raw)?),
        6 => first_difference(&first_difference(&log_values(raw)?)),
        _ => unreachable!("code validated above"),
    })
}

/// Row-wise standardization with divisor `T − 1`. Returns the standardized
/// matrix plus per-row means and standard deviations.
pub fn standardize(
    values: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>), PanelError> {
    let (n, t) = values.shape();
    assert!(t >= 2, "standardization needs at least two periods");
    let mut out = values.clone();
    let mut means = DVector::zeros(n);
    let mut stds = DVector::zeros(n);
    for i in 0..n {
        let mean = values.row(i).sum() / t as f64;
        let ss: f64 = values.row(i).iter().map(|v| (v - mean) * (v - mean)).sum();
        let var = ss / (t as f64 - 1.0);
        if var <= 0.0 || !var.is_finite() {
            // Callers with id context re-wrap; the row index is all we know here.
            return Err(PanelError::ZeroVarianceSeries {
                id: format!("row {i}"),
            });
        }
        let std = var.sqrt();
        means[i] = mean;
        stds[i] = std;
        for j in 0..t {
            out[(i, j)] = (values[(i, j)] - mean) / std;
        }
    }
    Ok((out, means, stds))
}

/// Original-unit scale of an observed factor, kept separate from the x-block
/// so shock sizes can be stated in original units later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservedScale {
    pub id: String,
    pub transform_code: u8,
    pub mean: f64,
    pub std: f64,
}

/// Result of [`load_panel`]: standardized x-block, standardized observed
/// factors and their original-unit scales.
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub x: TimePanel,
    /// `T × r2` standardized observed factors.
    pub g: DMatrix<f64>,
    pub g_meta: Vec<ObservedScale>,
    /// Leading periods dropped to align all series to one time index.
    pub trim_count: usize,
}

struct RawPanel {
    ids: Vec<String>,
    labels: Vec<String>,
    /// One column per series, full raw length.
    columns: Vec<Vec<f64>>,
}

fn read_raw_panel(path: &Path) -> Result<RawPanel, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(PanelError::RaggedCsv {
            row: 0,
            got: headers.len(),
            expected: 2,
        });
    }
    let ids: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
    for (k, id) in ids.iter().enumerate() {
        if ids[..k].contains(id) {
            return Err(PanelError::DuplicateSeries(id.clone()));
        }
    }
    let expected = headers.len();
    let mut labels = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != expected {
            return Err(PanelError::RaggedCsv {
                row: row_idx + 1,
                got: record.len(),
                expected,
            });
        }
        labels.push(record[0].trim().to_string());
        for (k, field) in record.iter().skip(1).enumerate() {
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|_| PanelError::MissingValue {
                    id: ids[k].clone(),
                    row: row_idx + 1,
                })?;
            if !value.is_finite() {
                return Err(PanelError::MissingValue {
                    id: ids[k].clone(),
                    row: row_idx + 1,
                });
            }
            columns[k].push(value);
        }
    }
    Ok(RawPanel { ids, labels, columns })
}

/// Reads a two-column `id,transform_code` CSV.
pub fn read_spec_csv(path: &Path) -> Result<Vec<(String, u8)>, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut out = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(PanelError::RaggedCsv {
                row: row_idx + 1,
                got: record.len(),
                expected: 2,
            });
        }
        let id = record[0].trim().to_string();
        let code: u8 = record[1].trim().parse().map_err(|_| PanelError::MissingValue {
            id: id.clone(),
            row: row_idx + 1,
        })?;
        differencing_order(code)?;
        out.push((id, code));
    }
    Ok(out)
}

/// Loads a raw CSV panel, applies per-series transforms, aligns every series
/// to the common usable window, and standardizes the x-block and observed
/// factors separately.
///
/// When `spec_path` is `None` every series gets code 1 (already stationary).
/// Series named in `observed_ids` are removed from the x-block and returned
/// as the `T × r2` observed-factor matrix with their original-unit scales.
pub fn load_panel(
    panel_path: &Path,
    spec_path: Option<&Path>,
    observed_ids: &[String],
) -> Result<LoadedPanel, PanelError> {
    let raw = read_raw_panel(panel_path)?;
    let codes: Vec<u8> = match spec_path {
        Some(path) => {
            let spec = read_spec_csv(path)?;
            raw.ids
                .iter()
                .map(|id| {
                    spec.iter()
                        .find(|(sid, _)| sid == id)
                        .map(|&(_, code)| code)
                        .ok_or_else(|| PanelError::MissingSeries(id.clone()))
                })
                .collect::<Result<_, _>>()?
        }
        None => vec![1; raw.ids.len()],
    };
    for id in observed_ids {
        if !raw.ids.contains(id) {
            return Err(PanelError::MissingSeries(id.clone()));
        }
    }

    // The maximum differencing order governs the shared window.
    let mut trim = 0usize;
    for &code in &codes {
        trim = trim.max(differencing_order(code)?);
    }
    let t_common = raw
        .labels
        .len()
        .checked_sub(trim)
        .filter(|&t| t >= 2)
        .ok_or(PanelError::WindowTooShort {
            t: raw.labels.len().saturating_sub(trim),
            r2: observed_ids.len(),
        })?;
    if t_common <= observed_ids.len() + 1 {
        return Err(PanelError::WindowTooShort {
            t: t_common,
            r2: observed_ids.len(),
        });
    }

    let mut x_rows: Vec<(SeriesSpec, Vec<f64>)> = Vec::new();
    let mut g_cols: Vec<(SeriesSpec, Vec<f64>)> = Vec::new();
    for (k, id) in raw.ids.iter().enumerate() {
        let code = codes[k];
        let transformed = apply_transform(&raw.columns[k], code)?;
        let skip = trim - differencing_order(code)?;
        let aligned: Vec<f64> = transformed[skip..].to_vec();
        debug_assert_eq!(aligned.len(), t_common);
        let spec = SeriesSpec::new(id.clone(), code);
        if observed_ids.contains(id) {
            g_cols.push((spec, aligned));
        } else {
            x_rows.push((spec, aligned));
        }
    }
    // Observed factors keep the order requested by the caller.
    g_cols.sort_by_key(|(spec, _)| {
        observed_ids
            .iter()
            .position(|id| *id == spec.id)
            .expect("observed series checked above")
    });

    let n = x_rows.len();
    let x_raw = DMatrix::from_fn(n, t_common, |i, j| x_rows[i].1[j]);
    let (x_std, means, stds) = standardize(&x_raw).map_err(|e| match e {
        PanelError::ZeroVarianceSeries { id } => {
            let idx: usize = id.trim_start_matches("row ").parse().unwrap_or(0);
            PanelError::ZeroVarianceSeries {
                id: x_rows[idx].0.id.clone(),
            }
        }
        other => other,
    })?;

    let r2 = g_cols.len();
    let mut g = DMatrix::zeros(t_common, r2);
    let mut g_meta = Vec::with_capacity(r2);
    if r2 > 0 {
        let g_raw = DMatrix::from_fn(r2, t_common, |i, j| g_cols[i].1[j]);
        let (g_std, g_means, g_stds) = standardize(&g_raw).map_err(|e| match e {
            PanelError::ZeroVarianceSeries { id } => {
                let idx: usize = id.trim_start_matches("row ").parse().unwrap_or(0);
                PanelError::ZeroVarianceSeries {
                    id: g_cols[idx].0.id.clone(),
                }
            }
            other => other,
        })?;
        for (i, (spec, _)) in g_cols.iter().enumerate() {
            g_meta.push(ObservedScale {
                id: spec.id.clone(),
                transform_code: spec.transform_code,
                mean: g_means[i],
                std: g_stds[i],
            });
        }
        g = g_std.transpose();
    }

    let panel = TimePanel {
        values: x_std,
        specs: x_rows.into_iter().map(|(spec, _)| spec).collect(),
        means,
        stds,
        period_labels: raw.labels[trim..].to_vec(),
    };
    panel.validate()?;
    Ok(LoadedPanel {
        x: panel,
        g,
        g_meta,
        trim_count: trim,
    })
}

/// JSON sidecar written next to panel CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelMetadata {
    pub ids: Vec<String>,
    pub transform_codes: Vec<u8>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub trim_count: usize,
    pub standardization_divisor: String,
    pub observed: Vec<ObservedScale>,
}

/// Writes a panel CSV: header `period,<ids...>`, one row per period.
/// `values` is series-by-period; columns come out period-by-period.
pub fn write_panel_csv(
    path: &Path,
    ids: &[String],
    labels: &[String],
    values: &DMatrix<f64>,
) -> Result<(), PanelError> {
    assert_eq!(values.nrows(), ids.len());
    assert_eq!(values.ncols(), labels.len());
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["period".to_string()];
    header.extend_from_slice(ids);
    writer.write_record(&header)?;
    for j in 0..values.ncols() {
        let mut record = vec![labels[j].clone()];
        for i in 0..values.nrows() {
            record.push(format_float(values[(i, j)]));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Serializes a standardized panel to CSV plus its JSON metadata sidecar.
pub fn save_panel(
    csv_path: &Path,
    metadata_path: &Path,
    panel: &TimePanel,
    trim_count: usize,
    observed: &[ObservedScale],
) -> Result<(), PanelError> {
    let ids: Vec<String> = panel.specs.iter().map(|s| s.id.clone()).collect();
    write_panel_csv(csv_path, &ids, &panel.period_labels, &panel.values)?;
    let meta = PanelMetadata {
        ids,
        transform_codes: panel.specs.iter().map(|s| s.transform_code).collect(),
        means: panel.means.iter().copied().collect(),
        stds: panel.stds.iter().copied().collect(),
        trim_count,
        standardization_divisor: STANDARDIZATION_DIVISOR.to_string(),
        observed: observed.to_vec(),
    };
    fs::write(metadata_path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Shortest round-trippable decimal image of an `f64`.
pub fn format_float(v: f64) -> String {
    let mut buffer = ryu_format(v);
    if buffer.ends_with(".0") {
        buffer.truncate(buffer.len() - 2);
    }
    buffer
}

fn ryu_format(v: f64) -> String {
    // serde_json uses ryu internally; going through Number keeps CSV and
    // JSON artifacts byte-consistent for the same value.
    serde_json::Number::from_f64(v)
        .map(|n| n.to_string())
        .unwrap_or_else(|| format!("{v}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    #[test]
    fn first_difference_example() {
        assert_eq!(apply_transform(&[3.0, 5.0, 9.0], 2).unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn identity_example() {
        assert_eq!(
            apply_transform(&[7.0, 7.0, 7.0], 1).unwrap(),
            vec![7.0, 7.0, 7.0]
        );
    }

    #[test]
    fn log_diff_example() {
        // [1, e, e^2] -> log -> [0, 1, 2] -> diff -> [1, 1]
        let raw = [1.0, std::f64::consts::E, std::f64::consts::E * std::f64::consts::E];
        let out = apply_transform(&raw, 5).unwrap();
        assert_eq!(out.len(), 2);
        assert_abs_diff_eq!(out[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn code5_is_code4_then_code2_exactly() {
        let raw = [1.3, 2.7, 0.9, 5.5, 4.2];
        let direct = apply_transform(&raw, 5).unwrap();
        let composed = apply_transform(&apply_transform(&raw, 4).unwrap(), 2).unwrap();
        assert_eq!(direct, composed, "bit-exact composition required");
    }

    #[test]
    fn transform_errors() {
        assert!(matches!(
            apply_transform(&[1.0, -1.0], 4),
            Err(PanelError::NonPositiveForLog { index: 1, .. })
        ));
        assert!(matches!(
            apply_transform(&[1.0], 2),
            Err(PanelError::SeriesTooShort { .. })
        ));
        assert!(matches!(
            apply_transform(&[1.0, 2.0], 9),
            Err(PanelError::UnknownCode(9))
        ));
        assert!(matches!(
            apply_transform(&[1.0, 2.0], 3),
            Err(PanelError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn standardize_symmetric_row() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let (out, means, stds) = standardize(&m).unwrap();
        assert_abs_diff_eq!(means[0], 2.0, epsilon = 0.0);
        assert_abs_diff_eq!(stds[0], 1.0, epsilon = 0.0);
        assert_eq!(out, DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 1.0]));
    }

    #[test]
    fn standardize_two_pass_oracle() {
        // row [0,0,4,4]: mean 2, var 16/3 with divisor T-1
        let m = DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 4.0, 4.0]);
        let (out, means, stds) = standardize(&m).unwrap();
        assert_abs_diff_eq!(means[0], 2.0, epsilon = 0.0);
        assert_abs_diff_eq!(stds[0], (16.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        let mean = out.row(0).sum() / 4.0;
        let var = out.row(0).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn standardize_idempotent() {
        let m = DMatrix::from_row_slice(2, 5, &[1.0, 4.0, 2.0, 8.0, 3.0, -1.0, 0.5, 2.0, 1.5, 0.0]);
        let (once, _, _) = standardize(&m).unwrap();
        let (twice, means2, stds2) = standardize(&once).unwrap();
        assert!((&twice - &once).amax() < 1e-12);
        assert!(means2.amax() < 1e-12);
        assert!((stds2.add_scalar(-1.0)).amax() < 1e-12);
    }

    #[test]
    fn standardize_zero_variance() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]);
        assert!(matches!(
            standardize(&m),
            Err(PanelError::ZeroVarianceSeries { .. })
        ));
    }

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn load_panel_partitions_and_trims() {
        let dir = tempfile::tempdir().unwrap();
        // A: code 3 (loses 2), B: code 2 (loses 1), FFR: code 1.
        let panel = write_file(
            dir.path(),
            "panel.csv",
            "period,A,B,FFR\n\
             1985-01,1,10,3.0\n\
             1985-02,2,12,3.5\n\
             1985-03,4,15,2.5\n\
             1985-04,8,17,4.0\n\
             1985-05,11,22,3.2\n\
             1985-06,16,24,3.9\n",
        );
        let spec = write_file(dir.path(), "spec.csv", "id,transform_code\nA,3\nB,2\nFFR,1\n");
        let loaded = load_panel(&panel, Some(&spec), &["FFR".to_string()]).unwrap();
        assert_eq!(loaded.trim_count, 2);
        // x-block has N-1 = 2 rows, the observed block 1 column
        assert_eq!(loaded.x.n_series(), 2);
        assert_eq!(loaded.x.n_periods(), 4);
        assert_eq!(loaded.g.shape(), (4, 1));
        assert_eq!(loaded.g_meta[0].id, "FFR");
        assert_eq!(loaded.x.period_labels[0], "1985-03");
        loaded.x.validate().unwrap();
    }

    #[test]
    fn load_panel_missing_series() {
        let dir = tempfile::tempdir().unwrap();
        let panel = write_file(dir.path(), "p.csv", "period,A\n2000-01,1\n2000-02,2\n2000-03,3\n");
        let err = load_panel(&panel, None, &["FFR".to_string()]).unwrap_err();
        assert!(matches!(err, PanelError::MissingSeries(_)));
    }

    #[test]
    fn load_panel_ragged() {
        let dir = tempfile::tempdir().unwrap();
        let panel = write_file(dir.path(), "p.csv", "period,A,B\n2000-01,1\n");
        let err = load_panel(&panel, None, &[]).unwrap_err();
        assert!(matches!(err, PanelError::RaggedCsv { .. }));
    }

    #[test]
    fn save_and_reload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        // Simulated already-stationary panel, all codes 1.
        let n = 3;
        let t = 40;
        let mut values = DMatrix::zeros(n, t);
        for i in 0..n {
            for j in 0..t {
                values[(i, j)] = ((i + 1) as f64 * 0.37 + j as f64 * 0.91).sin() + 2.0;
            }
        }
        let ids: Vec<String> = (0..n).map(|i| format!("S{i}")).collect();
        let labels: Vec<String> = (0..t).map(|j| format!("2000-{:02}", j % 12 + 1)).collect();
        let path = dir.path().join("sim.csv");
        write_panel_csv(&path, &ids, &labels, &values).unwrap();
        let loaded = load_panel(&path, None, &[]).unwrap();
        // Compare against standardizing in memory.
        let (expected, _, _) = standardize(&values).unwrap();
        assert!((&loaded.x.values - &expected).amax() < 1e-9);
        assert_eq!(loaded.trim_count, 0);
    }
}
