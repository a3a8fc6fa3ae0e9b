//! On-disk artifact formats shared by the commands: CSV matrices with a
//! label column, JSON models, and the manifest tying a run together.
//! All floats print in their shortest round-trippable form, so re-reading
//! an artifact reproduces the exact bits.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use rfavar::em::{IcSurface, PenaltyPair, RfavarFit};
use rfavar::identify::{IdentifiedModel, Scheme};
use rfavar::irf::IrfResult;
use rfavar::panel::{format_float, ObservedScale, PanelMetadata};
use rfavar::var::VarModel;

use crate::AppError;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| AppError::Analysis(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| AppError::Analysis(format!("write {}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, AppError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::Analysis(format!("read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| AppError::Analysis(format!("parse {}: {e}", path.display())))
}

/// Reads a panel-layout CSV (`period` label column plus one column per id)
/// back into series-by-period form without re-standardizing.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>), AppError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AppError::Analysis(format!("read {}: {e}", path.display())))?;
    let ids: Vec<String> = reader
        .headers()
        .map_err(|e| AppError::Analysis(format!("read {}: {e}", path.display())))?
        .iter()
        .skip(1)
        .map(|s| s.to_string())
        .collect();
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| AppError::Analysis(format!("read {}: {e}", path.display())))?;
        labels.push(record[0].to_string());
        let row: Result<Vec<f64>, _> = record.iter().skip(1).map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| {
            AppError::Analysis(format!("parse {}: {e}", path.display()))
        })?);
    }
    let t = rows.len();
    let n = ids.len();
    let values = DMatrix::from_fn(n, t, |i, j| rows[j][i]);
    Ok((ids, labels, values))
}

/// Wide loadings table: one row per series, latent columns `f1..`, then the
/// observed-factor columns named by their ids.
pub fn write_loadings_csv(
    path: &Path,
    ids: &[String],
    loadings: &rfavar::LoadingsMatrix,
    observed_ids: &[String],
) -> Result<(), AppError> {
    let mut out = String::from("id");
    for k in 0..loadings.r1() {
        out.push_str(&format!(",f{}", k + 1));
    }
    for id in observed_ids {
        out.push_str(&format!(",{id}"));
    }
    out.push('\n');
    let combined = loadings.combined();
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for k in 0..combined.ncols() {
            out.push(',');
            out.push_str(&format_float(combined[(i, k)]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| AppError::Analysis(format!("write {}: {e}", path.display())))
}

pub fn write_ic_surface_csv(path: &Path, surface: &IcSurface) -> Result<(), AppError> {
    let mut out = String::from("mu1,mu2,ic,kappa,error\n");
    for cell in &surface.cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            format_float(cell.mu1),
            format_float(cell.mu2),
            cell.ic.map(format_float).unwrap_or_default(),
            cell.kappa,
            cell.error.clone().unwrap_or_default()
        ));
    }
    fs::write(path, out).map_err(|e| AppError::Analysis(format!("write {}: {e}", path.display())))
}

/// Square matrix with id row/column labels (covariance exports).
pub fn write_square_matrix_csv(
    path: &Path,
    ids: &[String],
    m: &DMatrix<f64>,
) -> Result<(), AppError> {
    let mut out = String::from("id");
    for id in ids {
        out.push_str(&format!(",{id}"));
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for j in 0..m.ncols() {
            out.push(',');
            out.push_str(&format_float(m[(i, j)]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| AppError::Analysis(format!("write {}: {e}", path.display())))
}

/// Composite factor path `[F̃ G]`: latent columns first, then observed ids.
pub fn write_factors_csv(
    path: &Path,
    labels: &[String],
    factors_f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    observed_ids: &[String],
) -> Result<(), AppError> {
    let r1 = factors_f.ncols();
    let mut out = String::from("period");
    for k in 0..r1 {
        out.push_str(&format!(",f{}", k + 1));
    }
    for id in observed_ids {
        out.push_str(&format!(",{id}"));
    }
    out.push('\n');
    for t in 0..factors_f.nrows() {
        out.push_str(&labels[t]);
        for k in 0..r1 {
            out.push(',');
            out.push_str(&format_float(factors_f[(t, k)]));
        }
        for l in 0..g.ncols() {
            out.push(',');
            out.push_str(&format_float(g[(t, l)]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| AppError::Analysis(format!("write {}: {e}", path.display())))
}

/// Long-format IRF export: `series,horizon,point[,lower,upper]`.
pub fn write_irf_csv(
    path: &Path,
    names: &[String],
    track: &rfavar::irf::IrfTrack,
) -> Result<(), AppError> {
    let with_bands = track.lower.is_some();
    let mut out = String::from(if with_bands {
        "series,horizon,point,lower,upper\n"
    } else {
        "series,horizon,point\n"
    });
    for (j, name) in names.iter().enumerate() {
        for h in 0..track.point.nrows() {
            out.push_str(&format!("{name},{h},{}", format_float(track.point[(h, j)])));
            if let (Some(lower), Some(upper)) = (&track.lower, &track.upper) {
                out.push_str(&format!(
                    ",{},{}",
                    format_float(lower[(h, j)]),
                    format_float(upper[(h, j)])
                ));
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| AppError::Analysis(format!("write {}: {e}", path.display())))
}

/// Everything the estimate command records about a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateManifest {
    pub command: String,
    pub seed: u64,
    pub n_series: usize,
    pub n_periods: usize,
    pub trim_count: usize,
    pub r1: usize,
    pub r1_selected_by_criterion: bool,
    pub r2: usize,
    pub p: usize,
    pub intercept: bool,
    pub scheme: Scheme,
    pub naming_ids: Vec<String>,
    pub penalties: PenaltyPair,
    pub grid_search: bool,
    pub converged: bool,
    pub iterations: usize,
    pub guard_events: usize,
    pub observed: Vec<ObservedScale>,
}

/// IRF manifest; records the shock definition and the bootstrap design,
/// including the fact that loadings-estimation uncertainty does not enter
/// the bands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrfManifest {
    pub command: String,
    pub scheme: Scheme,
    pub shock_series: Option<String>,
    pub shock_index: usize,
    pub magnitude: f64,
    pub target_std: f64,
    pub shock_size_standardized: f64,
    pub h_max: usize,
    pub boot: usize,
    pub ci_level: Option<f64>,
    pub seed: u64,
    pub accumulated: bool,
    pub series_units: bool,
    pub dropped_replications: usize,
    pub warnings: Vec<String>,
    /// Factors are treated as known in the residual bootstrap; bands carry
    /// VAR-estimation uncertainty only.
    pub loadings_uncertainty: String,
}

pub struct EstimatePaths {
    pub panel_csv: PathBuf,
    pub panel_meta: PathBuf,
    pub factors_csv: PathBuf,
    pub fit_json: PathBuf,
    pub var_json: PathBuf,
    pub identified_json: PathBuf,
    pub loadings_csv: PathBuf,
    pub ic_surface_csv: PathBuf,
    pub poet_csv: PathBuf,
    pub diagnostics_json: PathBuf,
    pub manifest_json: PathBuf,
}

impl EstimatePaths {
    pub fn new(dir: &Path) -> Self {
        EstimatePaths {
            panel_csv: dir.join("panel_standardized.csv"),
            panel_meta: dir.join("panel_metadata.json"),
            factors_csv: dir.join("factors.csv"),
            fit_json: dir.join("fit.json"),
            var_json: dir.join("var.json"),
            identified_json: dir.join("identified.json"),
            loadings_csv: dir.join("loadings.csv"),
            ic_surface_csv: dir.join("ic_surface.csv"),
            poet_csv: dir.join("sigma_e_poet.csv"),
            diagnostics_json: dir.join("diagnostics.json"),
            manifest_json: dir.join("manifest.json"),
        }
    }
}

/// A full estimate-run output read back for analysis.
pub struct ModelArtifacts {
    pub x: DMatrix<f64>,
    pub ids: Vec<String>,
    pub metadata: PanelMetadata,
    pub g: DMatrix<f64>,
    pub fit: RfavarFit,
    pub var: VarModel,
    pub identified: IdentifiedModel,
    pub manifest: EstimateManifest,
}

pub fn load_model_artifacts(dir: &Path) -> Result<ModelArtifacts, AppError> {
    let paths = EstimatePaths::new(dir);
    let (ids, _labels, x) = read_matrix_csv(&paths.panel_csv)?;
    let metadata: PanelMetadata = read_json(&paths.panel_meta)?;
    let fit: RfavarFit = read_json(&paths.fit_json)?;
    let var: VarModel = read_json(&paths.var_json)?;
    let identified: IdentifiedModel = read_json(&paths.identified_json)?;
    let manifest: EstimateManifest = read_json(&paths.manifest_json)?;

    // Observed factors come back out of the factors table.
    let (factor_ids, _, factors_by_row) = read_matrix_csv(&paths.factors_csv)?;
    let r1 = fit.r1();
    let r2 = factor_ids.len() - r1;
    let t = factors_by_row.ncols();
    let g = DMatrix::from_fn(t, r2, |tt, l| factors_by_row[(r1 + l, tt)]);

    Ok(ModelArtifacts {
        x,
        ids,
        metadata,
        g,
        fit,
        var,
        identified,
        manifest,
    })
}

/// Serializable wrapper for the IRF outputs.
pub fn write_irf_outputs(
    dir: &Path,
    factor_names: &[String],
    series_names: &[String],
    irf: &IrfResult,
    manifest: &IrfManifest,
) -> Result<(), AppError> {
    write_irf_csv(&dir.join("irf_factors.csv"), factor_names, &irf.factor)?;
    write_irf_csv(
        &dir.join("irf_observables.csv"),
        series_names,
        &irf.observable,
    )?;
    write_json(&dir.join("irf_manifest.json"), manifest)
}
