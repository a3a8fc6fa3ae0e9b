//! Structural impulse responses on factors and observables, accumulation
//! for differenced series, shock-size rescaling to original units, and
//! residual-bootstrap confidence bands.
//!
//! Responses are to a one-unit structural innovation. With the moving
//! average `Ψ̂_h` of the rotated VAR and the impact matrix `A^{-1}`, the
//! pre-rotation composite factors respond `A^{-1} Ψ̂_h e_j` and the
//! observables `Λ̂ Ψ̂_h e_j`, so the horizon-0 responses are exactly the
//! shocked columns of `A^{-1}` and of `B_0 = Λ̂`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::RfavarFit;
use crate::identify::{self, IdentifiedModel, IdentifyError, Scheme};
use crate::linalg::quantile;
use crate::panel::differencing_order;
use crate::var::{fit_var, ma_coefficients, simulate_from_initial, VarModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum IrfError {
    #[error("shock index {index} out of range for {r} structural innovations")]
    BadShockIndex { index: usize, r: usize },
    #[error("transform-code list has {codes} entries for {series} series")]
    CodeLengthMismatch { codes: usize, series: usize },
    #[error("invalid scale: target std {std} and magnitude {magnitude} must be finite, std > 0")]
    BadScale { std: f64, magnitude: f64 },
    #[error("bootstrap needs at least one replication")]
    NoReplications,
    #[error("too many dropped bootstrap replications: {dropped} of {total}")]
    DegenerateBands { dropped: usize, total: usize },
    #[error("identification: {0}")]
    Identify(#[from] IdentifyError),
    #[error("panel: {0}")]
    Panel(#[from] crate::panel::PanelError),
}

/// Point responses plus optional percentile bands, horizons in rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrfTrack {
    #[serde(with = "crate::linalg::serde_matrix")]
    pub point: DMatrix<f64>,
    #[serde(with = "crate::linalg::serde_matrix_opt")]
    pub lower: Option<DMatrix<f64>>,
    #[serde(with = "crate::linalg::serde_matrix_opt")]
    pub upper: Option<DMatrix<f64>>,
}

impl IrfTrack {
    fn point_only(point: DMatrix<f64>) -> Self {
        IrfTrack {
            point,
            lower: None,
            upper: None,
        }
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        IrfTrack {
            point: f(&self.point),
            lower: self.lower.as_ref().map(&f),
            upper: self.upper.as_ref().map(&f),
        }
    }
}

/// Impulse responses of the composite factors (`(h_max+1) × r`) and of the
/// observables (`(h_max+1) × N`) to one structural shock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrfResult {
    pub h_max: usize,
    pub shock_index: usize,
    /// Structural innovation size on the standardized scale.
    pub shock_size_standardized: f64,
    pub factor: IrfTrack,
    pub observable: IrfTrack,
    /// Per observable series: true when its responses were accumulated.
    pub accumulated: Vec<bool>,
    pub ci_level: Option<f64>,
    pub replications: usize,
    pub dropped_replications: usize,
    pub warnings: Vec<String>,
}

fn shock_column(
    model: &IdentifiedModel,
    h_max: usize,
    shock_index: usize,
) -> Result<Vec<DMatrix<f64>>, IrfError> {
    let r = model.r();
    if shock_index >= r {
        return Err(IrfError::BadShockIndex {
            index: shock_index,
            r,
        });
    }
    let ma = ma_coefficients(&model.var_hat, h_max);
    Ok(ma.psi)
}

/// Factor responses `A^{-1} Ψ̂_h e_j · size`, horizons in rows.
pub fn irf_factors(
    model: &IdentifiedModel,
    h_max: usize,
    shock_index: usize,
    shock_size: f64,
) -> Result<DMatrix<f64>, IrfError> {
    let psi = shock_column(model, h_max, shock_index)?;
    let r = model.r();
    let mut out = DMatrix::zeros(h_max + 1, r);
    for (h, psi_h) in psi.iter().enumerate() {
        let col = psi_h.column(shock_index).into_owned();
        let resp = &model.rotation.a_inv * col * shock_size;
        out.row_mut(h).copy_from(&resp.transpose());
    }
    Ok(out)
}

/// Observable responses `Λ̂ Ψ̂_h e_j · size`; horizon 0 is the shocked
/// column of `B_0 = Λ̂` scaled.
pub fn irf_observables(
    model: &IdentifiedModel,
    h_max: usize,
    shock_index: usize,
    shock_size: f64,
) -> Result<DMatrix<f64>, IrfError> {
    let psi = shock_column(model, h_max, shock_index)?;
    let b0 = model.b0();
    let mut out = DMatrix::zeros(h_max + 1, b0.nrows());
    for (h, psi_h) in psi.iter().enumerate() {
        let col = psi_h.column(shock_index).into_owned();
        let resp = &b0 * col * shock_size;
        out.row_mut(h).copy_from(&resp.transpose());
    }
    Ok(out)
}

/// Point impulse responses of both tracks, with a stability warning when
/// the rotated VAR has companion radius at or above one.
pub fn compute_irf(
    model: &IdentifiedModel,
    h_max: usize,
    shock_index: usize,
    shock_size: f64,
) -> Result<IrfResult, IrfError> {
    let factor = irf_factors(model, h_max, shock_index, shock_size)?;
    let observable = irf_observables(model, h_max, shock_index, shock_size)?;
    let n = observable.ncols();
    let mut warnings = Vec::new();
    if model.var_hat.companion_radius >= 1.0 {
        warnings.push(format!(
            "VAR companion radius {:.4} >= 1; responses may diverge",
            model.var_hat.companion_radius
        ));
    }
    Ok(IrfResult {
        h_max,
        shock_index,
        shock_size_standardized: shock_size,
        factor: IrfTrack::point_only(factor),
        observable: IrfTrack::point_only(observable),
        accumulated: vec![false; n],
        ci_level: None,
        replications: 0,
        dropped_replications: 0,
        warnings,
    })
}

fn running_sum_columns(m: &DMatrix<f64>, which: &[bool], passes: &[usize]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, (&apply, &times)) in which.iter().zip(passes.iter()).enumerate() {
        if !apply {
            continue;
        }
        for _ in 0..times {
            for h in 1..out.nrows() {
                out[(h, j)] += out[(h - 1, j)];
            }
        }
    }
    out
}

fn accumulate_observable_track(
    track: &IrfTrack,
    codes: &[u8],
) -> Result<(IrfTrack, Vec<bool>), IrfError> {
    let n = track.point.ncols();
    if codes.len() != n {
        return Err(IrfError::CodeLengthMismatch {
            codes: codes.len(),
            series: n,
        });
    }
    let mut which = vec![false; n];
    let mut passes = vec![0usize; n];
    for (j, &code) in codes.iter().enumerate() {
        let order = differencing_order(code)?;
        which[j] = order > 0;
        passes[j] = order;
    }
    let out = track.map(|m| running_sum_columns(m, &which, &passes));
    Ok((out, which))
}

/// Running-sums responses of differenced series back to levels: once for
/// codes 2 and 5, twice for 3 and 6, untouched otherwise. Factor responses
/// are left as they are.
pub fn accumulate_by_code(irf: &IrfResult, codes: &[u8]) -> Result<IrfResult, IrfError> {
    let (observable, accumulated) = accumulate_observable_track(&irf.observable, codes)?;
    Ok(IrfResult {
        observable,
        accumulated,
        ..irf.clone()
    })
}

/// Scales the whole linear system so the structural shock moves the target
/// series by `magnitude` original units at impact: every response (and
/// band) is multiplied by `magnitude / target_series_std`.
pub fn rescale_to_original_units(
    irf: &IrfResult,
    target_series_std: f64,
    magnitude: f64,
) -> Result<IrfResult, IrfError> {
    if !(target_series_std > 0.0) || !target_series_std.is_finite() || !magnitude.is_finite() {
        return Err(IrfError::BadScale {
            std: target_series_std,
            magnitude,
        });
    }
    let scale = magnitude / target_series_std;
    Ok(IrfResult {
        shock_size_standardized: irf.shock_size_standardized * scale,
        factor: irf.factor.map(|m| m * scale),
        observable: irf.observable.map(|m| m * scale),
        ..irf.clone()
    })
}

/// Converts each observable series' responses into its own original units
/// by multiplying with the series' pre-standardization std.
pub fn rescale_observables_to_series_units(
    irf: &IrfResult,
    stds: &[f64],
) -> Result<IrfResult, IrfError> {
    let n = irf.observable.point.ncols();
    if stds.len() != n {
        return Err(IrfError::CodeLengthMismatch {
            codes: stds.len(),
            series: n,
        });
    }
    if stds.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(IrfError::BadScale {
            std: *stds.iter().find(|&&s| !(s > 0.0)).unwrap_or(&f64::NAN),
            magnitude: 1.0,
        });
    }
    let observable = irf.observable.map(|m| {
        let mut out = m.clone();
        for j in 0..n {
            for h in 0..out.nrows() {
                out[(h, j)] *= stds[j];
            }
        }
        out
    });
    Ok(IrfResult {
        observable,
        ..irf.clone()
    })
}

/// Residual-bootstrap settings. The composite factors are treated as known;
/// only VAR innovations are resampled.
#[derive(Debug, Clone)]
pub struct BootstrapOptions {
    pub replications: usize,
    pub h_max: usize,
    pub shock_index: usize,
    pub shock_size: f64,
    pub ci_level: f64,
    pub seed: u64,
    pub scheme: Scheme,
    /// Naming rows for IRb; the naming block is held fixed across
    /// replications.
    pub naming_rows: Option<Vec<usize>>,
    /// When set, every replication (and the point estimate) is accumulated
    /// before the percentile bands are taken.
    pub accumulate_codes: Option<Vec<u8>>,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replications: 500,
            h_max: 48,
            shock_index: 0,
            shock_size: 1.0,
            ci_level: 0.68,
            seed: 0,
            scheme: Scheme::Ira,
            naming_rows: None,
            accumulate_codes: None,
        }
    }
}

/// Residual bootstrap for the impulse responses: resamples centered VAR
/// innovations with replacement, rebuilds the factor path from the first
/// `p` observed values, refits the VAR, re-identifies with the point
/// estimate's normalization held fixed, and collects per-(horizon, column)
/// percentile bands at `(1 ± ci_level)/2`. Deterministic given the seed;
/// replications draw from independent streams so parallel and sequential
/// runs agree bit-exactly. Replications whose refit fails are dropped, up
/// to a 20% cap.
pub fn bootstrap_irf(
    fit: &RfavarFit,
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    var: &VarModel,
    opts: &BootstrapOptions,
) -> Result<IrfResult, IrfError> {
    if opts.replications == 0 {
        return Err(IrfError::NoReplications);
    }
    let r1 = fit.r1();
    let r2 = fit.r2();
    let r = r1 + r2;
    if opts.shock_index >= r {
        return Err(IrfError::BadShockIndex {
            index: opts.shock_index,
            r,
        });
    }

    // Point identification fixes the coordinates for every replication.
    let point_model = match opts.scheme {
        Scheme::Ira => identify::apply_ira(fit, x, g, var)?,
        Scheme::Irb => identify::apply_irb(
            fit,
            g,
            var,
            opts.naming_rows.as_deref().unwrap_or(&[]),
        )?,
    };
    let lambda_1_fixed = match opts.scheme {
        Scheme::Irb => {
            let rows = opts.naming_rows.as_deref().unwrap_or(&[]);
            let latent = fit.loadings.latent();
            Some(DMatrix::from_fn(r1, r1, |i, k| latent[(rows[i], k)]))
        }
        Scheme::Ira => None,
    };

    let mut point = compute_irf(&point_model, opts.h_max, opts.shock_index, opts.shock_size)?;
    if let Some(codes) = &opts.accumulate_codes {
        point = accumulate_by_code(&point, codes)?;
    }

    // Composite factor path and centered residuals.
    let t = fit.factors_f.nrows();
    let mut h = DMatrix::zeros(t, r);
    h.columns_mut(0, r1).copy_from(&fit.factors_f);
    if r2 > 0 {
        h.columns_mut(r1, r2).copy_from(g);
    }
    let initial = h.rows(0, var.p).into_owned();
    let t_resid = var.residuals.nrows();
    let mut centered = var.residuals.clone();
    for k in 0..r {
        let mean = centered.column(k).sum() / t_resid as f64;
        for row in 0..t_resid {
            centered[(row, k)] -= mean;
        }
    }

    let intercept = var.intercept.is_some();
    let replication = |b: usize| -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(b as u64 + 1);
        let mut innovations = DMatrix::zeros(t_resid, r);
        for row in 0..t_resid {
            let pick = rng.random_range(0..t_resid);
            for k in 0..r {
                innovations[(row, k)] = centered[(pick, k)];
            }
        }
        let h_star = simulate_from_initial(
            &var.phi,
            var.intercept.as_deref(),
            &initial,
            &innovations,
        );
        let var_b = fit_var(&h_star, var.p, intercept).ok()?;
        let model_b = identify::apply_with_fixed_normalization(
            fit,
            g,
            &var_b,
            opts.scheme,
            lambda_1_fixed.as_ref(),
            &point_model.column_order,
            &point_model.signs,
        )
        .ok()?;
        let fac = irf_factors(&model_b, opts.h_max, opts.shock_index, opts.shock_size).ok()?;
        let obs = irf_observables(&model_b, opts.h_max, opts.shock_index, opts.shock_size).ok()?;
        if let Some(codes) = &opts.accumulate_codes {
            let track = IrfTrack::point_only(obs);
            let (acc, _) = accumulate_observable_track(&track, codes).ok()?;
            return Some((fac, acc.point));
        }
        Some((fac, obs))
    };

    let draws: Vec<Option<(DMatrix<f64>, DMatrix<f64>)>> =
        (0..opts.replications).into_par_iter().map(replication).collect();

    let kept: Vec<&(DMatrix<f64>, DMatrix<f64>)> = draws.iter().flatten().collect();
    let dropped = opts.replications - kept.len();
    if dropped * 5 > opts.replications {
        return Err(IrfError::DegenerateBands {
            dropped,
            total: opts.replications,
        });
    }

    let lo_q = (1.0 - opts.ci_level) / 2.0;
    let hi_q = (1.0 + opts.ci_level) / 2.0;
    let band = |extract: &dyn Fn(&(DMatrix<f64>, DMatrix<f64>)) -> &DMatrix<f64>| {
        let shape = extract(kept[0]).shape();
        let mut lower = DMatrix::zeros(shape.0, shape.1);
        let mut upper = DMatrix::zeros(shape.0, shape.1);
        let mut sample = Vec::with_capacity(kept.len());
        for hh in 0..shape.0 {
            for j in 0..shape.1 {
                sample.clear();
                sample.extend(kept.iter().map(|d| extract(d)[(hh, j)]));
                lower[(hh, j)] = quantile(&sample, lo_q);
                upper[(hh, j)] = quantile(&sample, hi_q);
            }
        }
        (lower, upper)
    };
    let (fac_lower, fac_upper) = band(&|d| &d.0);
    let (obs_lower, obs_upper) = band(&|d| &d.1);

    let mut warnings = point.warnings.clone();
    let outside = count_outside(&point.factor.point, &fac_lower, &fac_upper)
        + count_outside(&point.observable.point, &obs_lower, &obs_upper);
    if outside > 0 {
        warnings.push(format!(
            "{outside} point responses fall outside the percentile bands"
        ));
    }

    Ok(IrfResult {
        factor: IrfTrack {
            point: point.factor.point,
            lower: Some(fac_lower),
            upper: Some(fac_upper),
        },
        observable: IrfTrack {
            point: point.observable.point,
            lower: Some(obs_lower),
            upper: Some(obs_upper),
        },
        ci_level: Some(opts.ci_level),
        replications: opts.replications,
        dropped_replications: dropped,
        warnings,
        ..point
    })
}

fn count_outside(point: &DMatrix<f64>, lower: &DMatrix<f64>, upper: &DMatrix<f64>) -> usize {
    point
        .iter()
        .zip(lower.iter().zip(upper.iter()))
        .filter(|(p, (lo, hi))| *p < lo || *p > hi)
        .count()
}
