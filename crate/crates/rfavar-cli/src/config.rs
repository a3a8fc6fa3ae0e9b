//! Run configuration: one JSON document plus command-line overrides.
//! Flags win over the file; every field has a documented default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rfavar::dgp::DgpConfig;
use rfavar::identify::Scheme;
use rfavar::mc::{McDgpSettings, PenaltyMode};

use crate::AppError;

/// Top-level configuration document. Sections apply to their commands;
/// unknown fields are rejected to catch typos early.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub simulate: Option<DgpConfig>,
    pub estimate: Option<EstimateConfig>,
    pub irf: Option<IrfConfig>,
    pub montecarlo: Option<McSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub panel: Option<PathBuf>,
    /// Two-column `id,transform_code` CSV; absent means code 1 everywhere.
    pub spec: Option<PathBuf>,
    pub observed_ids: Vec<String>,
    /// Fixed latent factor count; `None` selects by information criterion.
    pub r1: Option<usize>,
    pub r_max: usize,
    pub p: usize,
    pub intercept: bool,
    pub scheme: Scheme,
    /// Naming series ids for the named-factor scheme.
    pub naming_ids: Vec<String>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub mu1_grid: Option<Vec<f64>>,
    pub mu2_grid: Option<Vec<f64>>,
    /// Cap on adaptively grown grid lengths.
    pub adaptive_grid_len: usize,
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            panel: None,
            spec: None,
            observed_ids: Vec::new(),
            r1: None,
            r_max: 10,
            p: 12,
            intercept: true,
            scheme: Scheme::Ira,
            naming_ids: Vec::new(),
            mu1: None,
            mu2: None,
            mu1_grid: None,
            mu2_grid: None,
            adaptive_grid_len: 16,
            c: 0.01,
            tol: 1e-6,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrfConfig {
    /// Directory holding `estimate` artifacts; absent runs the estimate
    /// section inline into the output directory.
    pub model_dir: Option<PathBuf>,
    pub h_max: usize,
    /// Observed series to shock; default is the last structural innovation.
    pub shock: Option<String>,
    /// Explicit structural innovation index, overridden by `shock`.
    pub shock_index: Option<usize>,
    /// Shock magnitude in the shocked series' original units (1.0 means a
    /// full unit, e.g. one percentage point for a rate in percent).
    pub magnitude: f64,
    /// Bootstrap replications; 0 writes point estimates only.
    pub boot: usize,
    pub ci_level: f64,
    /// Accumulate responses of differenced series to levels.
    pub accumulate: bool,
    /// Additionally rescale every series' responses by its own
    /// pre-standardization std.
    pub series_units: bool,
}

impl Default for IrfConfig {
    fn default() -> Self {
        IrfConfig {
            model_dir: None,
            h_max: 48,
            shock: None,
            shock_index: None,
            magnitude: 1.0,
            boot: 500,
            ci_level: 0.68,
            accumulate: true,
            series_units: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub sizes: Vec<(usize, usize)>,
    pub replications: usize,
    pub dgp: McDgpSettings,
    pub penalties: PenaltyMode,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for McSection {
    fn default() -> Self {
        let base = rfavar::mc::McConfig::consistency_ladder(0, 20);
        McSection {
            sizes: base.sizes,
            replications: base.replications,
            dgp: base.dgp,
            penalties: base.penalties,
            tol: base.fit.tol,
            max_iter: base.fit.max_iter,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, AppError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    AppError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| AppError::Config(format!("config {}: {e}", p.display())))
            }
        }
    }
}
