//! PCA factor extraction, factor-number selection, projection of observed
//! factors, and the unpenalized initializer for the penalized sweeps.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::{self, EmState, PenaltyPair, VARIANCE_FLOOR};
use crate::linalg::symmetric_eigen_desc;
use crate::loadings::LoadingsMatrix;

#[derive(Debug, Error)]
pub enum InitError {
    #[error("rank deficient: only {found} positive eigenvalues, requested {requested} factors")]
    RankDeficient { found: usize, requested: usize },
    #[error("Gram matrix of the observed factors is singular")]
    SingularGram,
    #[error("estimation: {0}")]
    Em(String),
}

impl From<em::EmError> for InitError {
    fn from(e: em::EmError) -> Self {
        InitError::Em(e.to_string())
    }
}

/// How the unpenalized initializer seeds its loadings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSeed {
    /// Principal components of the projected panel (default).
    Pca,
    /// Random orthonormal basis scaled like PCA loadings; useful for
    /// checking that the optimum does not depend on the seed.
    RandomOrthonormal { seed: u64 },
}

/// Options for the unpenalized initializer.
#[derive(Debug, Clone)]
pub struct InitOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: InitSeed,
    pub c: f64,
    pub inner_steps: usize,
    pub monotone_guard: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            max_iter: 2000,
            tol: 1e-6,
            seed: InitSeed::Pca,
            c: 0.01,
            inner_steps: 1,
            monotone_guard: true,
        }
    }
}

/// Initializer output: latent loadings, factors and variances from the
/// projected panel, plus the regression estimate of the observed-factor
/// loadings.
#[derive(Debug, Clone)]
pub struct InitState {
    pub lambda_f: DMatrix<f64>,
    /// `T × r1` GLS factors extracted from the projected panel.
    pub factors_f: DMatrix<f64>,
    pub phi_e: DVector<f64>,
    pub lambda_g: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Unpenalized objective at the last iterate.
    pub objective: f64,
}

/// Principal-component factors: loadings are `√N` times the top-`r`
/// eigenvectors of `S_x = XX'/T`, factors `X'Λ/N`. Columns are ordered by
/// descending eigenvalue and signed so the largest-magnitude loading in
/// each column is positive.
pub fn pca_factors(
    x: &DMatrix<f64>,
    r: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>), InitError> {
    let (n, t) = x.shape();
    assert!(r >= 1 && r <= n.min(t), "need 1 <= r <= min(N, T)");
    let s_x = x * x.transpose() / t as f64;
    let (values, vectors) = symmetric_eigen_desc(&s_x);
    let floor = values[0].max(0.0) * 1e-12;
    let positive = values.iter().filter(|&&v| v > floor).count();
    if positive < r {
        return Err(InitError::RankDeficient {
            found: positive,
            requested: r,
        });
    }
    let mut loadings = vectors.columns(0, r).into_owned() * (n as f64).sqrt();
    for k in 0..r {
        let col = loadings.column(k);
        let mut max_idx = 0;
        let mut max_abs = 0.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                max_idx = i;
            }
        }
        if loadings[(max_idx, k)] < 0.0 {
            for i in 0..n {
                loadings[(i, k)] = -loadings[(i, k)];
            }
        }
    }
    let factors = x.transpose() * &loadings / n as f64;
    Ok((loadings, factors))
}

/// Mean squared PCA residual with `k` factors, from the eigenvalues of `S_x`.
fn pca_residual_variance(eigenvalues: &DVector<f64>, n: usize, k: usize) -> f64 {
    eigenvalues.iter().skip(k).map(|&v| v.max(0.0)).sum::<f64>() / n as f64
}

/// Information-criterion curve over `k = 1..=r_max`:
/// `ln V(k) + k ((N+T)/(NT)) ln(NT/(N+T))`.
pub fn factor_number_ic(x: &DMatrix<f64>, r_max: usize) -> Vec<f64> {
    let (n, t) = x.shape();
    assert!(r_max >= 1 && r_max <= n.min(t) / 2, "need 1 <= r_max <= min(N,T)/2");
    let s_x = x * x.transpose() / t as f64;
    let (values, _) = symmetric_eigen_desc(&s_x);
    let nf = n as f64;
    let tf = t as f64;
    let penalty_rate = ((nf + tf) / (nf * tf)) * ((nf * tf) / (nf + tf)).ln();
    (1..=r_max)
        .map(|k| pca_residual_variance(&values, n, k).ln() + k as f64 * penalty_rate)
        .collect()
}

/// Minimizer of the criterion curve, ties broken toward smaller `k`.
pub fn select_num_factors(x: &DMatrix<f64>, r_max: usize) -> usize {
    let curve = factor_number_ic(x, r_max);
    let mut best_k = 1;
    let mut best = curve[0];
    for (idx, &value) in curve.iter().enumerate().skip(1) {
        if value < best {
            best = value;
            best_k = idx + 1;
        }
    }
    best_k
}

/// `X M` with `M = I_T − G(G'G)^{-1}G'`, computed through a thin QR of `G`.
pub fn project_out_observed(
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Result<DMatrix<f64>, InitError> {
    let r2 = g.ncols();
    if r2 == 0 {
        return Ok(x.clone());
    }
    assert!(g.nrows() > r2, "need T > r2 for the projection");
    let qr = g.clone().qr();
    let rmat = qr.r();
    let scale = rmat.diagonal().amax().max(1.0);
    for j in 0..r2 {
        if rmat[(j, j)].abs() <= 1e-12 * scale {
            return Err(InitError::SingularGram);
        }
    }
    let q = qr.q();
    Ok(x - (x * &q) * q.transpose())
}

fn seed_loadings(
    x_dot: &DMatrix<f64>,
    r1: usize,
    seed: InitSeed,
) -> Result<DMatrix<f64>, InitError> {
    match seed {
        InitSeed::Pca => Ok(pca_factors(x_dot, r1)?.0),
        InitSeed::RandomOrthonormal { seed } => {
            let n = x_dot.nrows();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gauss = DMatrix::from_fn(n, r1, |_, _| rng.sample::<f64, _>(StandardNormal));
            Ok(gauss.qr().q() * (n as f64).sqrt())
        }
    }
}

/// Unpenalized initializer: projects the observed factors out, seeds the
/// latent loadings, runs the EM sweeps with zero penalties on the projected
/// panel, then backs out the observed-factor loadings by regression.
pub fn init_unpenalized(
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    r1: usize,
    opts: &InitOptions,
) -> Result<InitState, InitError> {
    let t = x.ncols();
    let r2 = g.ncols();
    let x_dot = project_out_observed(x, g)?;
    let s_x_dot = &x_dot * x_dot.transpose() / t as f64;

    let lambda0 = seed_loadings(&x_dot, r1, opts.seed)?;
    // Residual variances of the seeded fit, floored away from zero.
    let factors0 = x_dot.transpose() * &lambda0 / x.nrows() as f64;
    let resid = &x_dot - &lambda0 * factors0.transpose();
    let mut phi0 = DVector::zeros(x.nrows());
    for i in 0..x.nrows() {
        let v = resid.row(i).iter().map(|e| e * e).sum::<f64>() / t as f64;
        phi0[i] = v.max(VARIANCE_FLOOR);
    }

    let fit_opts = em::FitOptions {
        c: opts.c,
        tol: opts.tol,
        max_iter: opts.max_iter,
        inner_steps: opts.inner_steps,
        monotone_guard: opts.monotone_guard,
        seed: opts.seed,
    };
    let start = EmState {
        loadings: LoadingsMatrix::new(lambda0, DMatrix::zeros(x.nrows(), 0)),
        phi_e: phi0,
    };
    let outcome = em::run_em_loop(start, &s_x_dot, &PenaltyPair::zero(), &fit_opts)
        .map_err(InitError::from)?;
    let lambda_f = outcome.state.loadings.latent().clone();
    let phi_e = outcome.state.phi_e.clone();

    let factors_f = em::gls_factors(&lambda_f, &phi_e, &x_dot)?;

    let lambda_g = if r2 > 0 {
        let gram = g.transpose() * g;
        let chol = gram.cholesky().ok_or(InitError::SingularGram)?;
        let residual = x - &lambda_f * factors_f.transpose();
        // (X − Λ̃^f F̃') G (G'G)^{-1}
        chol.solve(&(g.transpose() * residual.transpose())).transpose()
    } else {
        DMatrix::zeros(x.nrows(), 0)
    };

    Ok(InitState {
        lambda_f,
        factors_f,
        phi_e,
        lambda_g,
        converged: outcome.converged,
        iterations: outcome.iterations,
        objective: *outcome
            .objective_trace
            .last()
            .expect("trace holds at least the initial value"),
    })
}
