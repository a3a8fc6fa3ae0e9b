//! The four batch commands: simulate, estimate, irf, montecarlo.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use rfavar::dgp::{self, DgpConfig};
use rfavar::em::{self, FitOptions, PenaltyPair};
use rfavar::identify::{self, Scheme};
use rfavar::init::{select_num_factors, InitSeed};
use rfavar::irf::{self, BootstrapOptions};
use rfavar::mc;
use rfavar::panel::{self, load_panel, save_panel};
use rfavar::poet;
use rfavar::var::fit_var;

use crate::artifacts::{
    load_model_artifacts, write_factors_csv, write_ic_surface_csv, write_irf_outputs, write_json,
    write_loadings_csv, write_square_matrix_csv, EstimateManifest, EstimatePaths, IrfManifest,
};
use crate::config::{EstimateConfig, IrfConfig, RunConfig};
use crate::AppError;

fn ensure_dir(dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir)
        .map_err(|e| AppError::Config(format!("cannot create output dir {}: {e}", dir.display())))
}

fn month_labels(t: usize) -> Vec<String> {
    (0..t)
        .map(|i| format!("{:04}-{:02}", 1990 + i / 12, i % 12 + 1))
        .collect()
}

/// Simulated panel plus its truth sidecar.
#[derive(Serialize)]
struct TruthSidecar<'a> {
    config: &'a DgpConfig,
    truth: &'a dgp::DgpTruth,
}

/// Writes `panel.csv` (x series and observed factors as columns, codes
/// implicitly 1) and `truth.json`.
pub fn cmd_simulate(config: &RunConfig, out_dir: &Path, seed: u64) -> Result<(), AppError> {
    let mut dgp_config = config
        .simulate
        .clone()
        .ok_or_else(|| AppError::Config("config field `simulate` is required".into()))?;
    dgp_config.seed = seed;
    dgp_config
        .validate()
        .map_err(|e| AppError::Config(e.to_string()))?;
    ensure_dir(out_dir)?;

    let truth = dgp::simulate(&dgp_config).map_err(|e| AppError::Config(e.to_string()))?;
    let n = truth.n_series();
    let t = truth.n_periods();
    let r2 = dgp_config.r2;

    let mut ids: Vec<String> = (0..n).map(|i| format!("X{:03}", i + 1)).collect();
    ids.extend((0..r2).map(|l| format!("G{}", l + 1)));
    let mut values = DMatrix::zeros(n + r2, t);
    values.view_mut((0, 0), (n, t)).copy_from(&truth.x);
    for l in 0..r2 {
        for j in 0..t {
            values[(n + l, j)] = truth.g[(j, l)];
        }
    }
    panel::write_panel_csv(&out_dir.join("panel.csv"), &ids, &month_labels(t), &values)
        .map_err(|e| AppError::Config(e.to_string()))?;
    write_json(
        &out_dir.join("truth.json"),
        &TruthSidecar {
            config: &dgp_config,
            truth: &truth,
        },
    )?;
    Ok(())
}

fn naming_rows_from_ids(ids: &[String], naming_ids: &[String]) -> Result<Vec<usize>, AppError> {
    naming_ids
        .iter()
        .map(|id| {
            ids.iter()
                .position(|s| s == id)
                .ok_or_else(|| AppError::Config(format!("naming series '{id}' not in the panel")))
        })
        .collect()
}

fn resolve_grids(
    est: &EstimateConfig,
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    r1: usize,
    opts: &FitOptions,
) -> Result<(Vec<f64>, Vec<f64>), AppError> {
    let need_adaptive = (est.mu1.is_none() && est.mu1_grid.is_none())
        || (est.mu2.is_none() && est.mu2_grid.is_none());
    let adaptive = if need_adaptive {
        Some(
            em::adaptive_grids(x, g, r1, opts, est.adaptive_grid_len)
                .map_err(|e| AppError::Estimation(e.to_string()))?,
        )
    } else {
        None
    };
    let grid1 = match (&est.mu1, &est.mu1_grid) {
        (Some(v), _) => vec![*v],
        (None, Some(grid)) => grid.clone(),
        (None, None) => adaptive.as_ref().expect("computed above").0.clone(),
    };
    let grid2 = match (&est.mu2, &est.mu2_grid) {
        (Some(v), _) => vec![*v],
        (None, Some(grid)) => grid.clone(),
        (None, None) => adaptive.as_ref().expect("computed above").1.clone(),
    };
    Ok((grid1, grid2))
}

/// Runs the estimation pipeline end to end: load/transform/standardize,
/// initialize, penalized fit (fixed pair or grid search), POET covariance,
/// factor VAR, identification, artifacts.
pub fn cmd_estimate(config: &RunConfig, out_dir: &Path, seed: u64) -> Result<(), AppError> {
    let est = config.estimate.clone().unwrap_or_default();
    let panel_path = est
        .panel
        .clone()
        .ok_or_else(|| AppError::Config("estimate.panel (or --panel) is required".into()))?;
    ensure_dir(out_dir)?;

    let loaded = load_panel(&panel_path, est.spec.as_deref(), &est.observed_ids)
        .map_err(|e| AppError::Config(e.to_string()))?;
    let x = loaded.x.values.clone();
    let g = loaded.g.clone();
    let (n, t) = x.shape();
    let r2 = g.ncols();
    let ids: Vec<String> = loaded.x.specs.iter().map(|s| s.id.clone()).collect();

    let (r1, r1_selected) = match est.r1 {
        Some(r) => (r, false),
        None => {
            let cap = (n.min(t) / 2).max(1);
            (select_num_factors(&x, est.r_max.clamp(1, cap)), true)
        }
    };
    if t <= r1 + r2 {
        return Err(AppError::Config(format!(
            "usable window too short: T = {t} with r1 + r2 = {}",
            r1 + r2
        )));
    }

    let opts = FitOptions {
        c: est.c,
        tol: est.tol,
        max_iter: est.max_iter,
        inner_steps: 1,
        monotone_guard: true,
        seed: InitSeed::Pca,
    };

    let fixed_pair = match (est.mu1, est.mu2) {
        (Some(mu1), Some(mu2)) => Some(
            PenaltyPair::new(mu1, mu2).map_err(|e| AppError::Config(e.to_string()))?,
        ),
        _ => None,
    };
    let (fit, surface) = match fixed_pair {
        Some(pair) => {
            let fit = em::fit(&x, &g, r1, &pair, &opts)
                .map_err(|e| AppError::Estimation(e.to_string()))?;
            (fit, None)
        }
        None => {
            let (grid1, grid2) = resolve_grids(&est, &x, &g, r1, &opts)?;
            let selection = em::select_penalties(&x, &g, r1, &grid1, &grid2, &opts)
                .map_err(|e| AppError::Estimation(e.to_string()))?;
            (selection.fit, Some(selection.surface))
        }
    };

    // Residual covariance, thresholded.
    let mut h = DMatrix::zeros(t, r1 + r2);
    h.columns_mut(0, r1).copy_from(&fit.factors_f);
    h.columns_mut(r1, r2).copy_from(&g);
    let s_e = poet::residual_cov(&x, &fit.loadings, &h)
        .map_err(|e| AppError::Estimation(e.to_string()))?;
    let thresholded = poet::poet_threshold(&s_e, n, t, true);

    // Factor VAR and identification.
    let var = fit_var(&h, est.p, est.intercept)
        .map_err(|e| AppError::Estimation(e.to_string()))?;
    let naming_rows = naming_rows_from_ids(&ids, &est.naming_ids)?;
    let identified = match est.scheme {
        Scheme::Ira => identify::apply_ira(&fit, &x, &g, &var),
        Scheme::Irb => identify::apply_irb(&fit, &g, &var, &naming_rows),
    }
    .map_err(|e| AppError::Estimation(e.to_string()))?;
    let diagnostic = identify::identification_diagnostic(&fit.loadings, r1, r2);

    let paths = EstimatePaths::new(out_dir);
    save_panel(
        &paths.panel_csv,
        &paths.panel_meta,
        &loaded.x,
        loaded.trim_count,
        &loaded.g_meta,
    )
    .map_err(|e| AppError::Estimation(e.to_string()))?;
    let observed_ids: Vec<String> = loaded.g_meta.iter().map(|m| m.id.clone()).collect();
    write_factors_csv(
        &paths.factors_csv,
        &loaded.x.period_labels,
        &fit.factors_f,
        &g,
        &observed_ids,
    )?;
    write_json(&paths.fit_json, &fit)?;
    write_json(&paths.var_json, &var)?;
    write_json(&paths.identified_json, &identified)?;
    write_loadings_csv(&paths.loadings_csv, &ids, &fit.loadings, &observed_ids)?;
    if let Some(surface) = &surface {
        write_ic_surface_csv(&paths.ic_surface_csv, surface)?;
    }
    write_square_matrix_csv(&paths.poet_csv, &ids, &thresholded.matrix)?;

    #[derive(Serialize)]
    struct Diagnostics<'a> {
        identification: &'a identify::IdentificationReport,
        poet: poet::SparsitySummary,
    }
    write_json(
        &paths.diagnostics_json,
        &Diagnostics {
            identification: &diagnostic,
            poet: poet::SparsitySummary::from(&thresholded),
        },
    )?;

    let manifest = EstimateManifest {
        command: "estimate".into(),
        seed,
        n_series: n,
        n_periods: t,
        trim_count: loaded.trim_count,
        r1,
        r1_selected_by_criterion: r1_selected,
        r2,
        p: est.p,
        intercept: est.intercept,
        scheme: est.scheme,
        naming_ids: est.naming_ids.clone(),
        penalties: fit.penalties,
        grid_search: surface.is_some(),
        converged: fit.converged,
        iterations: fit.iterations,
        guard_events: fit.guard_events,
        observed: loaded.g_meta.clone(),
    };
    write_json(&paths.manifest_json, &manifest)?;
    Ok(())
}

/// Computes impulse responses from an estimate-run directory (or runs the
/// estimate inline), writes the factor and observable IRF tables plus a
/// manifest.
pub fn cmd_irf(config: &RunConfig, out_dir: &Path, seed: u64) -> Result<(), AppError> {
    let irf_cfg: IrfConfig = config.irf.clone().unwrap_or_default();
    ensure_dir(out_dir)?;

    let model_dir: PathBuf = match &irf_cfg.model_dir {
        Some(dir) => dir.clone(),
        None => {
            // Inline estimation into a sub-directory of the output.
            let dir = out_dir.join("estimate");
            cmd_estimate(config, &dir, seed)?;
            dir
        }
    };
    let artifacts = load_model_artifacts(&model_dir)?;
    let r1 = artifacts.fit.r1();
    let r2 = artifacts.fit.r2();
    let r = r1 + r2;

    // Shock resolution: a named observed series wins, then an explicit
    // index, then the last structural innovation.
    let (shock_index, shock_series, target_std) = if let Some(id) = &irf_cfg.shock {
        let pos = artifacts
            .manifest
            .observed
            .iter()
            .position(|m| &m.id == id)
            .ok_or_else(|| AppError::Analysis(format!("unknown shock series id '{id}'")))?;
        (
            r1 + pos,
            Some(id.clone()),
            artifacts.manifest.observed[pos].std,
        )
    } else if let Some(index) = irf_cfg.shock_index {
        if index >= r {
            return Err(AppError::Analysis(format!(
                "shock index {index} out of range for r = {r}"
            )));
        }
        let series = index
            .checked_sub(r1)
            .map(|pos| artifacts.manifest.observed[pos].clone());
        (
            index,
            series.as_ref().map(|m| m.id.clone()),
            series.map_or(1.0, |m| m.std),
        )
    } else if r2 > 0 {
        let last = artifacts.manifest.observed.last().expect("r2 > 0");
        (r - 1, Some(last.id.clone()), last.std)
    } else {
        return Err(AppError::Config(
            "no observed factor to shock; set irf.shock_index".into(),
        ));
    };

    let codes = artifacts.metadata.transform_codes.clone();
    let naming_rows = naming_rows_from_ids(&artifacts.ids, &artifacts.manifest.naming_ids)?;
    let scheme = artifacts.manifest.scheme;

    let mut result = if irf_cfg.boot == 0 {
        let point = irf::compute_irf(
            &artifacts.identified,
            irf_cfg.h_max,
            shock_index,
            1.0,
        )
        .map_err(|e| AppError::Analysis(e.to_string()))?;
        if irf_cfg.accumulate {
            irf::accumulate_by_code(&point, &codes)
                .map_err(|e| AppError::Analysis(e.to_string()))?
        } else {
            point
        }
    } else {
        let opts = BootstrapOptions {
            replications: irf_cfg.boot,
            h_max: irf_cfg.h_max,
            shock_index,
            shock_size: 1.0,
            ci_level: irf_cfg.ci_level,
            seed,
            scheme,
            naming_rows: Some(naming_rows),
            accumulate_codes: irf_cfg.accumulate.then(|| codes.clone()),
        };
        irf::bootstrap_irf(
            &artifacts.fit,
            &artifacts.x,
            &artifacts.g,
            &artifacts.var,
            &opts,
        )
        .map_err(|e| AppError::Analysis(e.to_string()))?
    };

    result = irf::rescale_to_original_units(&result, target_std, irf_cfg.magnitude)
        .map_err(|e| AppError::Analysis(e.to_string()))?;
    if irf_cfg.series_units {
        let stds = artifacts.metadata.stds.clone();
        result = irf::rescale_observables_to_series_units(&result, &stds)
            .map_err(|e| AppError::Analysis(e.to_string()))?;
    }

    let mut factor_names: Vec<String> = (0..r1).map(|k| format!("f{}", k + 1)).collect();
    factor_names.extend(artifacts.manifest.observed.iter().map(|m| m.id.clone()));
    let manifest = IrfManifest {
        command: "irf".into(),
        scheme,
        shock_series,
        shock_index,
        magnitude: irf_cfg.magnitude,
        target_std,
        shock_size_standardized: result.shock_size_standardized,
        h_max: irf_cfg.h_max,
        boot: irf_cfg.boot,
        ci_level: result.ci_level,
        seed,
        accumulated: irf_cfg.accumulate,
        series_units: irf_cfg.series_units,
        dropped_replications: result.dropped_replications,
        warnings: result.warnings.clone(),
        loadings_uncertainty: "not included; factors treated as known in the residual bootstrap"
            .into(),
    };
    write_irf_outputs(out_dir, &factor_names, &artifacts.ids, &result, &manifest)?;
    Ok(())
}

/// Runs the Monte Carlo ladder, writes per-replication errors and the decay
/// summary; a failed decay assertion surfaces as the acceptance exit code
/// after the files are written.
pub fn cmd_montecarlo(
    config: &RunConfig,
    out_dir: &Path,
    seed: u64,
    replications_override: Option<usize>,
) -> Result<(), AppError> {
    let section = config.montecarlo.clone().unwrap_or_default();
    ensure_dir(out_dir)?;
    let mc_config = mc::McConfig {
        sizes: section.sizes,
        replications: replications_override.unwrap_or(section.replications),
        dgp: section.dgp,
        penalties: section.penalties,
        fit: FitOptions {
            tol: section.tol,
            max_iter: section.max_iter,
            ..FitOptions::default()
        },
        seed,
    };
    let report =
        mc::run_monte_carlo(&mc_config).map_err(|e| AppError::Estimation(e.to_string()))?;
    fs::write(
        out_dir.join("mc_records.csv"),
        mc::records_to_csv(&report.records),
    )
    .map_err(|e| AppError::Analysis(format!("write mc_records.csv: {e}")))?;

    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a mc::McConfig,
        summaries: &'a [mc::SizeSummary],
        decay: &'a mc::DecayReport,
    }
    write_json(
        &out_dir.join("mc_summary.json"),
        &Summary {
            config: &mc_config,
            summaries: &report.summaries,
            decay: &report.decay,
        },
    )?;

    if !report.decay.pass {
        return Err(AppError::Acceptance(format!(
            "monotone-decay assertions failed: lambda {} phi {} factors {}",
            report.decay.lambda_decreasing, report.decay.phi_decreasing,
            report.decay.factor_decreasing
        )));
    }
    Ok(())
}
