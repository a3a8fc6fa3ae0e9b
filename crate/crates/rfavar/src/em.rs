//! Penalized quasi-maximum-likelihood estimation of the factor loadings:
//! majorize-minimize EM sweeps with soft-thresholded proximal-gradient
//! loading updates, diagonal variance updates, GLS factor extraction and
//! information-criterion penalty selection.
//!
//! Each sweep linearizes the log-determinant at the current iterate,
//! takes one proximal step of size `c` on every loading entry, then
//! refreshes the idiosyncratic variances with the EM formula. A step-size
//! guard halves `c` within a sweep whenever the penalized surrogate (or the
//! full penalized objective) would increase; at the default `c = 0.01` it
//! almost never engages, and the number of engagements is reported on the
//! fit.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::init::{self, InitError, InitSeed};
use crate::linalg::{serde_vector, spectral_norm};
use crate::loadings::LoadingsMatrix;
use crate::poet::{poet_threshold, residual_cov};
pub use crate::poet::soft_threshold;

/// Lower bound kept on every idiosyncratic variance (Heywood-case guard).
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Slack allowed when asserting monotonicity of the penalized surrogate.
pub const SURROGATE_SLACK: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum EmError {
    #[error("covariance model is not positive definite")]
    NotPositiveDefinite,
    #[error("weighted Gram matrix of the latent loadings is singular")]
    SingularWeightedGram,
    #[error("penalty grid is empty")]
    EmptyGrid,
    #[error("penalty grid must be non-negative and sorted ascending")]
    InvalidGrid,
    #[error("penalties must be finite and non-negative")]
    InvalidPenalty,
    #[error("init: {0}")]
    Init(#[from] InitError),
    #[error("every penalty-grid cell failed to fit")]
    AllCellsFailed,
}

/// L1 penalty levels for the latent (`mu1`) and observed (`mu2`) blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyPair {
    pub mu1: f64,
    pub mu2: f64,
}

impl PenaltyPair {
    pub fn new(mu1: f64, mu2: f64) -> Result<Self, EmError> {
        if !(mu1.is_finite() && mu2.is_finite() && mu1 >= 0.0 && mu2 >= 0.0) {
            return Err(EmError::InvalidPenalty);
        }
        Ok(PenaltyPair { mu1, mu2 })
    }

    pub fn zero() -> Self {
        PenaltyPair { mu1: 0.0, mu2: 0.0 }
    }
}

/// Knobs of the iterative fit. `c` is the proximal step depth, `tol` the
/// spectral-norm convergence tolerance on the latent-loading and variance
/// deltas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Proximal steps per EM sweep on the same surrogate anchor.
    pub inner_steps: usize,
    /// Halve `c` within a sweep when a step would increase the penalized
    /// surrogate or the full penalized objective.
    pub monotone_guard: bool,
    pub seed: InitSeed,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            c: 0.01,
            tol: 1e-6,
            max_iter: 2000,
            inner_steps: 1,
            monotone_guard: true,
            seed: InitSeed::Pca,
        }
    }
}

/// Result of the penalized fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RfavarFit {
    pub loadings: LoadingsMatrix,
    #[serde(with = "serde_vector")]
    pub phi_e: DVector<f64>,
    /// `T × r1` GLS factors extracted from the unprojected panel.
    #[serde(with = "crate::linalg::serde_matrix")]
    pub factors_f: DMatrix<f64>,
    /// Full penalized objective per iteration (entry 0 is the initializer).
    pub objective_trace: Vec<f64>,
    pub penalties: PenaltyPair,
    pub iterations: usize,
    pub converged: bool,
    /// Sweeps in which a monotonicity guard engaged (step halving or a
    /// damped variance update). Zero on well-behaved problems.
    pub guard_events: usize,
}

impl RfavarFit {
    pub fn r1(&self) -> usize {
        self.loadings.r1()
    }

    pub fn r2(&self) -> usize {
        self.loadings.r2()
    }
}

/// Factor-structure covariance `Σ = ΛΛ' + diag(φ)` with the linear algebra
/// needed by the sweeps. Uses the Woodbury identity when `N > 3r`,
/// otherwise a dense Cholesky.
pub(crate) struct FactorCov {
    n: usize,
    phi: DVector<f64>,
    woodbury: Option<WoodburyCache>,
    dense: Option<Cholesky<f64, Dyn>>,
    logdet: f64,
}

struct WoodburyCache {
    /// `Φ^{-1}Λ`
    w: DMatrix<f64>,
    /// Cholesky of `I_r + Λ'Φ^{-1}Λ`
    core: Cholesky<f64, Dyn>,
}

impl FactorCov {
    pub(crate) fn new(lambda: &DMatrix<f64>, phi: &DVector<f64>) -> Result<Self, EmError> {
        let (n, r) = lambda.shape();
        assert_eq!(phi.len(), n);
        if phi.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(EmError::NotPositiveDefinite);
        }
        if n > 3 * r && r > 0 {
            let mut w = lambda.clone();
            for i in 0..n {
                let inv = 1.0 / phi[i];
                for k in 0..r {
                    w[(i, k)] *= inv;
                }
            }
            let core_mat = DMatrix::identity(r, r) + lambda.transpose() * &w;
            let core = core_mat.cholesky().ok_or(EmError::NotPositiveDefinite)?;
            let logdet_core: f64 = core.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            let logdet = phi.iter().map(|v| v.ln()).sum::<f64>() + logdet_core;
            Ok(FactorCov {
                n,
                phi: phi.clone(),
                woodbury: Some(WoodburyCache { w, core }),
                dense: None,
                logdet,
            })
        } else {
            let mut sigma = lambda * lambda.transpose();
            for i in 0..n {
                sigma[(i, i)] += phi[i];
            }
            let chol = sigma.cholesky().ok_or(EmError::NotPositiveDefinite)?;
            let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            Ok(FactorCov {
                n,
                phi: phi.clone(),
                woodbury: None,
                dense: Some(chol),
                logdet,
            })
        }
    }

    pub(crate) fn logdet(&self) -> f64 {
        self.logdet
    }

    /// `Σ^{-1} B`.
    pub(crate) fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        if let Some(chol) = &self.dense {
            return chol.solve(b);
        }
        let wb = self.woodbury.as_ref().expect("one backend present");
        let mut phi_inv_b = b.clone();
        for i in 0..self.n {
            let inv = 1.0 / self.phi[i];
            for j in 0..b.ncols() {
                phi_inv_b[(i, j)] *= inv;
            }
        }
        let wtb = wb.w.transpose() * b;
        let inner = wb.core.solve(&wtb);
        phi_inv_b - &wb.w * inner
    }

    /// `tr(Σ^{-1} S)` for symmetric `S`.
    pub(crate) fn trace_solve(&self, s: &DMatrix<f64>) -> f64 {
        if let Some(chol) = &self.dense {
            return chol.solve(s).trace();
        }
        let wb = self.woodbury.as_ref().expect("one backend present");
        let diag_term: f64 = (0..self.n).map(|i| s[(i, i)] / self.phi[i]).sum();
        let sw = s * &wb.w;
        let wsw = wb.w.transpose() * sw;
        diag_term - wb.core.solve(&wsw).trace()
    }
}

fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

fn penalty_value(loadings: &LoadingsMatrix, penalties: &PenaltyPair) -> f64 {
    penalties.mu1 * l1_norm(loadings.latent()) + penalties.mu2 * l1_norm(loadings.observed())
}

/// Negative quasi log-likelihood of a covariance model (general form):
/// `log|Λ Σ_H Λ' + Σ_e| + tr(S_x (Λ Σ_H Λ' + Σ_e)^{-1})`.
pub fn neg_loglik(
    loadings: &LoadingsMatrix,
    sigma_h: &DMatrix<f64>,
    sigma_e: &DMatrix<f64>,
    s_x: &DMatrix<f64>,
) -> Result<f64, EmError> {
    let lambda = loadings.combined();
    let model = &lambda * sigma_h * lambda.transpose() + sigma_e;
    let chol = model.cholesky().ok_or(EmError::NotPositiveDefinite)?;
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Ok(logdet + chol.solve(s_x).trace())
}

/// Same likelihood with `Σ_H = I` and diagonal idiosyncratic variances,
/// the form the sweeps minimize.
pub fn neg_loglik_diag(
    loadings: &LoadingsMatrix,
    phi_e: &DVector<f64>,
    s_x: &DMatrix<f64>,
) -> Result<f64, EmError> {
    let cov = FactorCov::new(&loadings.combined(), phi_e)?;
    Ok(cov.logdet() + cov.trace_solve(s_x))
}

/// Full penalized objective: likelihood plus both L1 terms.
pub fn penalized_objective(
    loadings: &LoadingsMatrix,
    phi_e: &DVector<f64>,
    s_x: &DMatrix<f64>,
    penalties: &PenaltyPair,
) -> Result<f64, EmError> {
    Ok(neg_loglik_diag(loadings, phi_e, s_x)? + penalty_value(loadings, penalties))
}

/// Score of the smooth surrogate at its anchor:
/// `D̃ = 2(Σ̃^{-1} − Σ̃^{-1} S_x Σ̃^{-1}) Λ̃`, an `N × r` matrix.
pub fn gradient_d(
    loadings: &LoadingsMatrix,
    phi_e: &DVector<f64>,
    s_x: &DMatrix<f64>,
) -> Result<DMatrix<f64>, EmError> {
    let lambda = loadings.combined();
    let cov = FactorCov::new(&lambda, phi_e)?;
    let sig_inv_lambda = cov.solve(&lambda);
    Ok(2.0 * (&sig_inv_lambda - cov.solve(&(s_x * &sig_inv_lambda))))
}

/// Value of the majorized (surrogate) log-likelihood anchored at
/// `(anchor, φ)` and evaluated at `candidate`:
/// `log|Σ̃| + 2 tr(Λ̃' Σ̃^{-1} (Λ − Λ̃)) + tr(S_x Σ(Λ)^{-1})`.
pub fn surrogate_value(
    anchor: &LoadingsMatrix,
    phi_e: &DVector<f64>,
    candidate: &LoadingsMatrix,
    s_x: &DMatrix<f64>,
) -> Result<f64, EmError> {
    let anchor_mat = anchor.combined();
    let cov = FactorCov::new(&anchor_mat, phi_e)?;
    let sig_inv_lambda = cov.solve(&anchor_mat);
    surrogate_value_cached(&cov, &sig_inv_lambda, &anchor_mat, phi_e, &candidate.combined(), s_x)
}

fn surrogate_value_cached(
    anchor_cov: &FactorCov,
    sig_inv_lambda: &DMatrix<f64>,
    anchor_mat: &DMatrix<f64>,
    phi_e: &DVector<f64>,
    candidate_mat: &DMatrix<f64>,
    s_x: &DMatrix<f64>,
) -> Result<f64, EmError> {
    let linear: f64 = 2.0 * sig_inv_lambda.dot(&(candidate_mat - anchor_mat));
    let cand_cov = FactorCov::new(candidate_mat, phi_e)?;
    Ok(anchor_cov.logdet() + linear + cand_cov.trace_solve(s_x))
}

/// Surrogate and smooth-likelihood values at a candidate, sharing one
/// covariance build. Returned as `(surrogate, likelihood, candidate_cov)`.
fn candidate_values(
    anchor_logdet: f64,
    sig_inv_lambda: &DMatrix<f64>,
    anchor_mat: &DMatrix<f64>,
    phi_e: &DVector<f64>,
    candidate_mat: &DMatrix<f64>,
    s_x: &DMatrix<f64>,
) -> Result<(f64, f64, FactorCov), EmError> {
    let linear: f64 = 2.0 * sig_inv_lambda.dot(&(candidate_mat - anchor_mat));
    let cand_cov = FactorCov::new(candidate_mat, phi_e)?;
    let trace = cand_cov.trace_solve(s_x);
    let surrogate = anchor_logdet + linear + trace;
    let likelihood = cand_cov.logdet() + trace;
    Ok((surrogate, likelihood, cand_cov))
}

/// State carried between sweeps.
#[derive(Debug, Clone)]
pub struct EmState {
    pub loadings: LoadingsMatrix,
    pub phi_e: DVector<f64>,
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    /// Penalized surrogate at the anchor.
    pub surrogate_before: f64,
    /// Penalized surrogate at the accepted candidate.
    pub surrogate_after: f64,
    /// Accepted proximal step size after any halving.
    pub step_size_used: f64,
    /// Full penalized objective after the sweep.
    pub objective: f64,
    /// Step-size halvings of the proximal update in this sweep.
    pub step_halvings: usize,
    /// 1 when the variance update had to be damped.
    pub phi_dampings: usize,
}

impl StepDiagnostics {
    /// Sweeps where any guard engaged.
    pub fn guard_events(&self) -> usize {
        usize::from(self.step_halvings > 0 || self.phi_dampings > 0)
    }
}

fn prox_update(
    anchor: &DMatrix<f64>,
    gradient: &DMatrix<f64>,
    r1: usize,
    penalties: &PenaltyPair,
    c: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(anchor.nrows(), anchor.ncols(), |i, k| {
        let mu = if k < r1 { penalties.mu1 } else { penalties.mu2 };
        soft_threshold(anchor[(i, k)] - c * gradient[(i, k)], c * mu)
    })
}

/// One majorize-minimize EM sweep: proximal loading update(s) followed by
/// the EM variance refresh.
pub fn mm_em_step(
    state: &EmState,
    s_x: &DMatrix<f64>,
    penalties: &PenaltyPair,
    opts: &FitOptions,
) -> Result<(EmState, StepDiagnostics), EmError> {
    let r1 = state.loadings.r1();
    let anchor_mat = state.loadings.combined();
    let phi = &state.phi_e;
    let anchor_cov = FactorCov::new(&anchor_mat, phi)?;
    let sig_inv_lambda = anchor_cov.solve(&anchor_mat);
    let anchor_logdet = anchor_cov.logdet();

    let anchor_penalty = penalty_value(&state.loadings, penalties);
    let surrogate_before = anchor_logdet + anchor_cov.trace_solve(s_x) + anchor_penalty;
    // The smooth parts are tangent at the anchor, so both start equal.
    let objective_before = surrogate_before;

    let mut step_halvings = 0usize;
    let mut c = opts.c;
    let mut current_mat = anchor_mat.clone();
    let mut current_cov: Option<FactorCov> = None;
    let mut current_surrogate = surrogate_before;
    let mut current_objective = objective_before;

    'inner: for inner in 0..opts.inner_steps.max(1) {
        // Gradient of the surrogate's smooth part at the inner iterate: the
        // linear term keeps the anchor score, the trace term moves.
        let grad = if inner == 0 {
            (&sig_inv_lambda - anchor_cov.solve(&(s_x * &sig_inv_lambda))) * 2.0
        } else {
            let cov = current_cov.as_ref().expect("set after the first step");
            let siv = cov.solve(&current_mat);
            (&sig_inv_lambda - cov.solve(&(s_x * siv))) * 2.0
        };
        loop {
            let candidate_mat = prox_update(&current_mat, &grad, r1, penalties, c);
            if candidate_mat == current_mat {
                // Stationary under the threshold: nothing more to gain.
                break 'inner;
            }
            let candidate = LoadingsMatrix::from_combined(&candidate_mat, r1);
            let cand_penalty = penalty_value(&candidate, penalties);
            let (surr, lik, cov) = candidate_values(
                anchor_logdet,
                &sig_inv_lambda,
                &anchor_mat,
                phi,
                &candidate_mat,
                s_x,
            )?;
            let pen_surrogate = surr + cand_penalty;
            let pen_objective = lik + cand_penalty;
            if !opts.monotone_guard
                || (pen_surrogate <= current_surrogate + 1e-12
                    && pen_objective <= current_objective + 1e-12)
            {
                current_mat = candidate_mat;
                current_cov = Some(cov);
                current_surrogate = pen_surrogate;
                current_objective = pen_objective;
                break;
            }
            c *= 0.5;
            step_halvings += 1;
            if c < opts.c * 2f64.powi(-40) {
                // No productive step at any scale this sweep.
                break 'inner;
            }
        }
    }

    let new_loadings = LoadingsMatrix::from_combined(&current_mat, r1);

    // EM variance refresh: \u03c6 \u2190 diag[S_x \u2212 \u039b_{m+1} \u039b_m' \u03a3\u0303_m^{-1} S_x], floored.
    let a = sig_inv_lambda.transpose() * s_x; // r x N, rows index factors
    let n = s_x.nrows();
    let r = current_mat.ncols();
    let mut phi_candidate = DVector::zeros(n);
    for i in 0..n {
        let mut fitted = 0.0;
        for k in 0..r {
            fitted += current_mat[(i, k)] * a[(k, i)];
        }
        phi_candidate[i] = (s_x[(i, i)] - fitted).max(VARIANCE_FLOOR);
    }

    let obj_lambda_only = current_objective;
    let mut phi_new = phi_candidate.clone();
    let mut phi_dampings = 0usize;
    let mut objective =
        neg_loglik_diag(&new_loadings, &phi_new, s_x)? + penalty_value(&new_loadings, penalties);
    if opts.monotone_guard && objective > obj_lambda_only + 1e-12 {
        // Damp the variance move until the objective stops increasing.
        phi_dampings = 1;
        let mut t = 0.5;
        let mut accepted = false;
        for _ in 0..40 {
            let damped = phi + (&phi_candidate - phi) * t;
            let obj = neg_loglik_diag(&new_loadings, &damped, s_x)?
                + penalty_value(&new_loadings, penalties);
            if obj <= obj_lambda_only + 1e-12 {
                phi_new = damped;
                objective = obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            phi_new = phi.clone();
            objective = obj_lambda_only;
        }
    }

    Ok((
        EmState {
            loadings: new_loadings,
            phi_e: phi_new,
        },
        StepDiagnostics {
            surrogate_before,
            surrogate_after: current_surrogate,
            step_size_used: c,
            objective,
            step_halvings,
            phi_dampings,
        },
    ))
}

pub(crate) struct LoopOutcome {
    pub state: EmState,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub guard_events: usize,
}

/// Iterates sweeps until both the latent-loading and variance deltas fall
/// below `tol` in spectral norm, or `max_iter` is hit.
pub(crate) fn run_em_loop(
    mut state: EmState,
    s_x: &DMatrix<f64>,
    penalties: &PenaltyPair,
    opts: &FitOptions,
) -> Result<LoopOutcome, EmError> {
    let mut objective_trace =
        vec![penalized_objective(&state.loadings, &state.phi_e, s_x, penalties)?];
    let mut converged = false;
    let mut guard_events = 0;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        let (next, diag) = mm_em_step(&state, s_x, penalties, opts)?;
        let delta_lambda = spectral_norm(&(next.loadings.latent() - state.loadings.latent()));
        let delta_phi = (&next.phi_e - &state.phi_e).amax();
        guard_events += diag.guard_events();
        objective_trace.push(diag.objective);
        state = next;
        iterations += 1;
        if delta_lambda < opts.tol && delta_phi < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(LoopOutcome {
        state,
        objective_trace,
        iterations,
        converged,
        guard_events,
    })
}

/// GLS factor extraction: `f̃_t = (Λ'Φ^{-1}Λ)^{-1} Λ'Φ^{-1} x_t`, stacked
/// into `T × r1`.
pub fn gls_factors(
    lambda_f: &DMatrix<f64>,
    phi_e: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>, EmError> {
    let (n, r1) = lambda_f.shape();
    assert_eq!(phi_e.len(), n);
    assert_eq!(x.nrows(), n);
    let mut w = lambda_f.clone();
    for i in 0..n {
        let inv = 1.0 / phi_e[i].max(VARIANCE_FLOOR);
        for k in 0..r1 {
            w[(i, k)] *= inv;
        }
    }
    let gram = lambda_f.transpose() * &w;
    let chol = gram.cholesky().ok_or(EmError::SingularWeightedGram)?;
    let wtx = w.transpose() * x; // r1 × T
    Ok(chol.solve(&wtx).transpose())
}

/// Full pipeline of the penalized estimator: projection + initialization,
/// penalized sweeps to convergence, then GLS factors from the unprojected
/// panel. A warm start skips the initializer.
pub fn fit(
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    r1: usize,
    penalties: &PenaltyPair,
    opts: &FitOptions,
) -> Result<RfavarFit, EmError> {
    fit_with_warm_start(x, g, r1, penalties, opts, None)
}

/// [`fit`] with an optional starting state (used by the penalty-grid search).
pub fn fit_with_warm_start(
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    r1: usize,
    penalties: &PenaltyPair,
    opts: &FitOptions,
    warm_start: Option<&EmState>,
) -> Result<RfavarFit, EmError> {
    PenaltyPair::new(penalties.mu1, penalties.mu2)?;
    let t = x.ncols() as f64;
    let s_x = x * x.transpose() / t;

    let start = match warm_start {
        Some(state) => state.clone(),
        None => {
            let init_state = init::init_unpenalized(x, g, r1, &init_options(opts))?;
            EmState {
                loadings: LoadingsMatrix::new(
                    init_state.lambda_f.clone(),
                    init_state.lambda_g.clone(),
                ),
                phi_e: init_state.phi_e.clone(),
            }
        }
    };

    let outcome = run_em_loop(start, &s_x, penalties, opts)?;
    let factors_f = gls_factors(outcome.state.loadings.latent(), &outcome.state.phi_e, x)?;
    Ok(RfavarFit {
        loadings: outcome.state.loadings,
        phi_e: outcome.state.phi_e,
        factors_f,
        objective_trace: outcome.objective_trace,
        penalties: *penalties,
        iterations: outcome.iterations,
        converged: outcome.converged,
        guard_events: outcome.guard_events,
    })
}

pub(crate) fn init_options(opts: &FitOptions) -> init::InitOptions {
    init::InitOptions {
        max_iter: opts.max_iter,
        tol: opts.tol,
        seed: opts.seed,
        c: opts.c,
        inner_steps: opts.inner_steps,
        monotone_guard: opts.monotone_guard,
    }
}

/// Model-size multiplier of the information criterion:
/// `√(log(2N)/N + log N/(NT))`.
pub fn ic_penalty_multiplier(n: usize, t: usize) -> f64 {
    let nf = n as f64;
    let tf = t as f64;
    ((2.0 * nf).ln() / nf + nf.ln() / (nf * tf)).sqrt()
}

/// One evaluated grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcCell {
    pub mu1: f64,
    pub mu2: f64,
    /// `None` when the fit or a downstream step failed; excluded from the argmin.
    pub ic: Option<f64>,
    pub kappa: usize,
    pub error: Option<String>,
}

/// The evaluated `(μ1, μ2)` surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcSurface {
    pub cells: Vec<IcCell>,
    pub multiplier: f64,
}

/// Output of the grid search: winning pair, its fit, and the surface.
#[derive(Debug)]
pub struct PenaltySelection {
    pub penalties: PenaltyPair,
    pub fit: RfavarFit,
    pub surface: IcSurface,
}

fn validate_grid(grid: &[f64]) -> Result<(), EmError> {
    if grid.is_empty() {
        return Err(EmError::EmptyGrid);
    }
    if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(EmError::InvalidGrid);
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(EmError::InvalidGrid);
    }
    Ok(())
}

/// Evaluates the information criterion over the penalty grid and picks the
/// minimizing pair (exact ties resolve toward larger `μ1`, then larger
/// `μ2`). Cells are warm-started from the previous `μ1` in the same `μ2`
/// row; failed cells are flagged and excluded.
pub fn select_penalties(
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    r1: usize,
    grid1: &[f64],
    grid2: &[f64],
    opts: &FitOptions,
) -> Result<PenaltySelection, EmError> {
    validate_grid(grid1)?;
    validate_grid(grid2)?;
    let (n, t) = x.shape();
    let s_x = x * x.transpose() / t as f64;
    let multiplier = ic_penalty_multiplier(n, t);

    let init_state = init::init_unpenalized(x, g, r1, &init_options(opts))?;
    let cold = EmState {
        loadings: LoadingsMatrix::new(init_state.lambda_f.clone(), init_state.lambda_g.clone()),
        phi_e: init_state.phi_e.clone(),
    };

    let mut cells = Vec::with_capacity(grid1.len() * grid2.len());
    let mut best: Option<(f64, PenaltyPair, RfavarFit)> = None;
    for &mu2 in grid2 {
        let mut warm = cold.clone();
        for &mu1 in grid1 {
            let penalties = PenaltyPair { mu1, mu2 };
            let result = fit_with_warm_start(x, g, r1, &penalties, opts, Some(&warm))
                .and_then(|fit| {
                    let ic = evaluate_ic(x, g, &fit, &s_x, multiplier)?;
                    Ok((fit, ic))
                });
            match result {
                Ok((fit, ic)) => {
                    warm = EmState {
                        loadings: fit.loadings.clone(),
                        phi_e: fit.phi_e.clone(),
                    };
                    // An all-zero block is an empty loadings matrix for that
                    // factor type; such cells never win the argmin.
                    let empty_block = if fit.loadings.latent().iter().all(|&v| v == 0.0) {
                        Some("empty latent block")
                    } else if fit.r2() > 0 && fit.loadings.observed().iter().all(|&v| v == 0.0) {
                        Some("empty observed block")
                    } else {
                        None
                    };
                    cells.push(IcCell {
                        mu1,
                        mu2,
                        ic: Some(ic),
                        kappa: fit.loadings.nonzero_count(),
                        error: empty_block.map(str::to_string),
                    });
                    if empty_block.is_some() {
                        continue;
                    }
                    let replace = match &best {
                        None => true,
                        Some((best_ic, best_pair, _)) => {
                            ic < *best_ic
                                || (ic == *best_ic
                                    && (mu1, mu2) > (best_pair.mu1, best_pair.mu2))
                        }
                    };
                    if replace {
                        best = Some((ic, penalties, fit));
                    }
                }
                Err(err) => {
                    cells.push(IcCell {
                        mu1,
                        mu2,
                        ic: None,
                        kappa: 0,
                        error: Some(err.to_string()),
                    });
                }
            }
        }
    }
    let (_, penalties, fit) = best.ok_or(EmError::AllCellsFailed)?;
    Ok(PenaltySelection {
        penalties,
        fit,
        surface: IcSurface { cells, multiplier },
    })
}

/// `IC(μ1, μ2) = L(Λ̃, Σ_H, Σ̃_e^τ) + κ · multiplier` with `Σ̃_e^τ` the POET
/// covariance of the fit residuals.
///
/// The factor second moments are pinned to the identity, the same
/// convention the sweeps impose (standardized data, unit-variance latent
/// factors). Feeding the realized second moments of the GLS factors in
/// here instead makes the criterion shrinkage-blind: harder thresholding
/// deflates the loadings and inflates the extracted factors by the inverse
/// amount, the likelihood barely moves, and the model-size term alone
/// drags the selection to the largest penalties on the grid.
pub fn evaluate_ic(
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    fit: &RfavarFit,
    s_x: &DMatrix<f64>,
    multiplier: f64,
) -> Result<f64, EmError> {
    let (n, t) = x.shape();
    let r1 = fit.r1();
    let r2 = fit.r2();
    let r = r1 + r2;
    let mut h = DMatrix::zeros(t, r);
    h.columns_mut(0, r1).copy_from(&fit.factors_f);
    if r2 > 0 {
        h.columns_mut(r1, r2).copy_from(g);
    }
    let s_e = residual_cov(x, &fit.loadings, &h).map_err(|_| EmError::NotPositiveDefinite)?;
    let thresholded = poet_threshold(&s_e, n, t, true);
    let likelihood = neg_loglik(
        &fit.loadings,
        &DMatrix::identity(r, r),
        &thresholded.matrix,
        s_x,
    )?;
    Ok(likelihood + fit.loadings.nonzero_count() as f64 * multiplier)
}

/// Builds default penalty grids by stepping up from zero until a block is
/// shrunk entirely to zero: `μ1` in steps of 0.05, `μ2` in steps of 0.1.
/// The zeroing value itself is excluded.
pub fn adaptive_grids(
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    r1: usize,
    opts: &FitOptions,
    max_len: usize,
) -> Result<(Vec<f64>, Vec<f64>), EmError> {
    let init_state = init::init_unpenalized(x, g, r1, &init_options(opts))?;
    let cold = EmState {
        loadings: LoadingsMatrix::new(init_state.lambda_f.clone(), init_state.lambda_g.clone()),
        phi_e: init_state.phi_e.clone(),
    };

    let scan = |step: f64, latent_block: bool| -> Result<Vec<f64>, EmError> {
        let mut grid = vec![0.0];
        let mut warm = cold.clone();
        for k in 1..max_len {
            let mu = step * k as f64;
            let penalties = if latent_block {
                PenaltyPair { mu1: mu, mu2: 0.0 }
            } else {
                PenaltyPair { mu1: 0.0, mu2: mu }
            };
            let fit = fit_with_warm_start(x, g, r1, &penalties, opts, Some(&warm))?;
            let all_zero = if latent_block {
                fit.loadings.latent().iter().all(|&v| v == 0.0)
            } else {
                fit.loadings.observed().iter().all(|&v| v == 0.0)
            };
            warm = EmState {
                loadings: fit.loadings.clone(),
                phi_e: fit.phi_e.clone(),
            };
            if all_zero {
                break;
            }
            grid.push(mu);
        }
        Ok(grid)
    };

    let grid1 = scan(0.05, true)?;
    let grid2 = if g.ncols() > 0 { scan(0.1, false)? } else { vec![0.0] };
    Ok((grid1, grid2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn loadings_from(latent: DMatrix<f64>) -> LoadingsMatrix {
        let n = latent.nrows();
        LoadingsMatrix::new(latent, DMatrix::zeros(n, 0))
    }

    #[test]
    fn neg_loglik_identity_case() {
        let n = 4;
        let loadings = loadings_from(DMatrix::zeros(n, 1));
        let val = neg_loglik(
            &loadings,
            &DMatrix::identity(1, 1),
            &DMatrix::identity(n, n),
            &DMatrix::identity(n, n),
        )
        .unwrap();
        assert_abs_diff_eq!(val, n as f64, epsilon = 1e-12);
    }

    #[test]
    fn neg_loglik_two_by_two_hand_case() {
        // Λ=[1,1]', Σ_e=I, S_x=I: Σ=[[2,1],[1,2]], log|Σ|=log 3, tr(Σ^{-1})=4/3
        let loadings = loadings_from(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        let val = neg_loglik(
            &loadings,
            &DMatrix::identity(1, 1),
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_abs_diff_eq!(val, 3.0f64.ln() + 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn neg_loglik_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lambda = DMatrix::from_fn(6, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta: f64 = 0.3;
        let q = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let s_raw = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s_x = &s_raw * s_raw.transpose() / 6.0 + DMatrix::identity(6, 6);
        let a = neg_loglik(
            &loadings_from(lambda.clone()),
            &DMatrix::identity(2, 2),
            &DMatrix::identity(6, 6),
            &s_x,
        )
        .unwrap();
        let b = neg_loglik(
            &loadings_from(&lambda * q),
            &DMatrix::identity(2, 2),
            &DMatrix::identity(6, 6),
            &s_x,
        )
        .unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }

    #[test]
    fn neg_loglik_not_pd() {
        let loadings = loadings_from(DMatrix::zeros(2, 1));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            neg_loglik(&loadings, &DMatrix::identity(1, 1), &bad, &DMatrix::identity(2, 2)),
            Err(EmError::NotPositiveDefinite)
        ));
    }

    #[test]
    fn woodbury_and_dense_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // NxR with N > 3r triggers Woodbury; compare against explicit inverse.
        let n = 12;
        let lambda = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let phi = DVector::from_fn(n, |i, _| 0.5 + 0.1 * i as f64);
        let cov = FactorCov::new(&lambda, &phi).unwrap();
        let mut sigma = &lambda * lambda.transpose();
        for i in 0..n {
            sigma[(i, i)] += phi[i];
        }
        let inv = sigma.clone().try_inverse().unwrap();
        let b = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        assert!((cov.solve(&b) - &inv * &b).amax() < 1e-10);
        assert_abs_diff_eq!(cov.logdet(), sigma.determinant().ln(), epsilon = 1e-10);
        let s = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 } else { 0.1 });
        assert_abs_diff_eq!(cov.trace_solve(&s), (&inv * &s).trace(), epsilon = 1e-9);
    }

    #[test]
    fn gradient_vanishes_at_fitted_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10;
        let lambda = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let phi = DVector::from_element(n, 0.7);
        let mut s_x = &lambda * lambda.transpose();
        for i in 0..n {
            s_x[(i, i)] += phi[i];
        }
        let d = gradient_d(&loadings_from(lambda), &phi, &s_x).unwrap();
        assert!(d.amax() < 1e-12);
    }

    #[test]
    fn gradient_scalar_case() {
        // λ=1, φ=1, s=4: Σ=2, D = 2(1/2 − 4/4)·1 = −1
        let d = gradient_d(
            &loadings_from(DMatrix::from_element(1, 1, 1.0)),
            &DVector::from_element(1, 1.0),
            &DMatrix::from_element(1, 1, 4.0),
        )
        .unwrap();
        assert_abs_diff_eq!(d[(0, 0)], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10;
        let r = 3;
        let lambda = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let phi = DVector::from_fn(n, |i, _| 0.4 + 0.05 * i as f64);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s_x = &raw * raw.transpose() / n as f64 + DMatrix::identity(n, n);
        let loadings = loadings_from(lambda.clone());
        let d = gradient_d(&loadings, &phi, &s_x).unwrap();

        let h = 1e-6;
        let scale = d.iter().map(|v| v.abs()).sum::<f64>() / (n * r) as f64;
        for i in 0..n {
            for k in 0..r {
                let mut plus = lambda.clone();
                plus[(i, k)] += h;
                let mut minus = lambda.clone();
                minus[(i, k)] -= h;
                let f_plus =
                    surrogate_value(&loadings, &phi, &loadings_from(plus), &s_x).unwrap();
                let f_minus =
                    surrogate_value(&loadings, &phi, &loadings_from(minus), &s_x).unwrap();
                let fd = (f_plus - f_minus) / (2.0 * h);
                let denom = d[(i, k)].abs().max(0.01 * scale);
                assert!(
                    (fd - d[(i, k)]).abs() / denom <= 1e-5,
                    "entry ({i},{k}): fd={fd}, analytic={}",
                    d[(i, k)]
                );
            }
        }
    }

    fn random_state(n: usize, r1: usize, rng: &mut ChaCha8Rng) -> (EmState, DMatrix<f64>) {
        let lambda = DMatrix::from_fn(n, r1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let phi = DVector::from_fn(n, |_, _| rng.random_range(0.3..1.2));
        let raw = DMatrix::from_fn(n, n + 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s_x = &raw * raw.transpose() / (n + 5) as f64;
        (
            EmState {
                loadings: loadings_from(lambda),
                phi_e: phi,
            },
            s_x,
        )
    }

    #[test]
    fn step_fixed_point_at_fitted_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 8;
        let lambda = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let phi = DVector::from_element(n, 0.6);
        let mut s_x = &lambda * lambda.transpose();
        for i in 0..n {
            s_x[(i, i)] += phi[i];
        }
        let state = EmState {
            loadings: loadings_from(lambda),
            phi_e: phi,
        };
        let opts = FitOptions::default();
        let (next, _) = mm_em_step(&state, &s_x, &PenaltyPair::zero(), &opts).unwrap();
        assert!((next.loadings.combined() - state.loadings.combined()).amax() < 1e-12);
        assert!((next.phi_e - state.phi_e).amax() < 1e-12);
    }

    #[test]
    fn huge_penalty_zeroes_latent_block_in_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (state, s_x) = random_state(8, 2, &mut rng);
        let opts = FitOptions {
            monotone_guard: false,
            ..FitOptions::default()
        };
        let pen = PenaltyPair {
            mu1: 1e6,
            mu2: 0.0,
        };
        let (next, _) = mm_em_step(&state, &s_x, &pen, &opts).unwrap();
        assert!(next.loadings.latent().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn surrogate_descends_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let opts = FitOptions::default();
        for case in 0..100 {
            let n = 5 + (case % 8);
            let (state, s_x) = random_state(n, 2, &mut rng);
            let pen = PenaltyPair {
                mu1: 0.05,
                mu2: 0.0,
            };
            let (_, diag) = mm_em_step(&state, &s_x, &pen, &opts).unwrap();
            assert!(
                diag.surrogate_after <= diag.surrogate_before + SURROGATE_SLACK,
                "case {case}: surrogate rose from {} to {}",
                diag.surrogate_before,
                diag.surrogate_after
            );
        }
    }

    #[test]
    fn halving_step_never_breaks_descent() {
        // descent must hold for c and c/2 alike
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (state, s_x) = random_state(10, 2, &mut rng);
        let pen = PenaltyPair { mu1: 0.02, mu2: 0.0 };
        for halvings in 0..6 {
            let opts = FitOptions {
                c: 0.01 * 0.5f64.powi(halvings),
                monotone_guard: false,
                ..FitOptions::default()
            };
            let (_, diag) = mm_em_step(&state, &s_x, &pen, &opts).unwrap();
            assert!(diag.surrogate_after <= diag.surrogate_before + SURROGATE_SLACK);
        }
    }

    #[test]
    fn gls_identity_weights_reduce_to_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 7;
        let t = 9;
        let lambda = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DMatrix::from_fn(n, t, |_, _| rng.sample::<f64, _>(StandardNormal));
        let phi = DVector::from_element(n, 1.0);
        let gls = gls_factors(&lambda, &phi, &x).unwrap();
        let gram = lambda.transpose() * &lambda;
        let ols = (gram.try_inverse().unwrap() * lambda.transpose() * &x).transpose();
        assert!((gls - ols).amax() < 1e-12);
    }

    #[test]
    fn gls_exact_on_noiseless_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 9;
        let t = 12;
        let lambda = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f_true = DMatrix::from_fn(t, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &lambda * f_true.transpose();
        let phi = DVector::from_fn(n, |i, _| 0.2 + 0.05 * i as f64);
        let f_hat = gls_factors(&lambda, &phi, &x).unwrap();
        let rel = (&f_hat - &f_true).amax() / f_true.amax();
        assert!(rel < 1e-10);
    }

    #[test]
    fn gls_scalar_weighted_case() {
        // λ=[1,2]', φ=[1,4], x=[1,2]': f = (1·1 + (2/4)·2)/(1 + 4/4) = 1
        let lambda = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let phi = DVector::from_vec(vec![1.0, 4.0]);
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let f = gls_factors(&lambda, &phi, &x).unwrap();
        assert_abs_diff_eq!(f[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gls_singular_gram() {
        let lambda = DMatrix::zeros(4, 1);
        let phi = DVector::from_element(4, 1.0);
        let x = DMatrix::zeros(4, 3);
        assert!(matches!(
            gls_factors(&lambda, &phi, &x),
            Err(EmError::SingularWeightedGram)
        ));
    }

    #[test]
    fn ic_multiplier_at_paper_scale() {
        // N = 126, T = 384
        assert_abs_diff_eq!(ic_penalty_multiplier(126, 384), 0.2097, epsilon = 1e-4);
    }

    #[test]
    fn singleton_zero_grid_selects_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let n = 12;
        let t = 80;
        let lambda = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f = DMatrix::from_fn(t, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = DMatrix::from_fn(n, t, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let x = &lambda * f.transpose() + noise;
        let g = DMatrix::zeros(t, 0);
        let sel = select_penalties(&x, &g, 1, &[0.0], &[0.0], &FitOptions::default()).unwrap();
        assert_eq!(sel.penalties.mu1, 0.0);
        assert_eq!(sel.penalties.mu2, 0.0);
        assert_eq!(sel.surface.cells.len(), 1);
        assert!(sel.surface.cells[0].ic.is_some());
    }

    #[test]
    fn empty_grid_rejected() {
        let x = DMatrix::zeros(4, 10);
        let g = DMatrix::zeros(10, 0);
        assert!(matches!(
            select_penalties(&x, &g, 1, &[], &[0.0], &FitOptions::default()),
            Err(EmError::EmptyGrid)
        ));
        assert!(matches!(
            select_penalties(&x, &g, 1, &[0.2, 0.1], &[0.0], &FitOptions::default()),
            Err(EmError::InvalidGrid)
        ));
    }
}
