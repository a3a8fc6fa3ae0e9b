//! Synthetic factor-augmented VAR panels with controllable factor strength,
//! loadings sparsity and idiosyncratic cross-correlation.
//!
//! Factors are normalized so their stationary covariance is exactly the
//! identity, matching the unit-scale convention the estimator imposes on
//! standardized data. Replications draw from independent ChaCha streams
//! keyed by `(seed, stream)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    companion_matrix, lyapunov_stationary, serde_matrix, serde_matrix_list, spectral_radius,
    sqrt_spd, symmetric_eigen_desc, symmetrize,
};
use crate::loadings::LoadingsMatrix;

/// Periods simulated and discarded before recording, so the recorded path
/// starts near the stationary distribution.
pub const BURN_IN: usize = 200;

/// Companion spectral radius every generated VAR stays below.
pub const STABILITY_BOUND: f64 = 0.95;

/// Relative eigenvalue floor applied when repairing `Σ_e` to positive
/// definite (absolute floor `1e-3` at the default unit noise scale).
pub const SIGMA_E_EIGEN_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid config field `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },
    #[error("VAR is not stable (companion spectral radius {radius})")]
    UnstableVar { radius: f64 },
}

fn invalid(field: &str, message: impl Into<String>) -> DgpError {
    DgpError::ConfigInvalid {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Generator settings. `idio_scale` and `loadings_scale` default to one and
/// exist for experiments that shrink the noise or switch the common
/// component off entirely.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n_series: usize,
    pub n_periods: usize,
    pub r1: usize,
    pub r2: usize,
    pub p: usize,
    /// Pervasiveness exponent: loading columns are scaled to squared norm
    /// `N^beta`, so `beta = 1` gives strong factors and `0.5` weak ones.
    pub beta: f64,
    /// Fraction of loading entries forced to exact zero, per column.
    pub zero_fraction: f64,
    /// Maximum non-zeros per row of `Σ_e` (1 = diagonal).
    pub idio_band: usize,
    /// Off-diagonal magnitude; entry `(i,j)` inside the band is `idio_rho^|i-j|`.
    pub idio_rho: f64,
    /// Multiplies `Σ_e`; keep at 1.0 unless deliberately shrinking the noise.
    #[serde(default = "one")]
    pub idio_scale: f64,
    /// Multiplies the loadings after column rescaling; 0.0 turns the common
    /// component off so `X = e`.
    #[serde(default = "one")]
    pub loadings_scale: f64,
    /// Orthogonalize simulated latent factors against observed ones in
    /// sample. Off by default; the population cross-covariance is already
    /// zero by construction.
    #[serde(default)]
    pub orthogonalize_fg: bool,
    pub seed: u64,
    /// Replication stream index; `(seed, stream)` pairs give independent
    /// reproducible draws.
    #[serde(default)]
    pub stream: u64,
}

fn one() -> f64 {
    1.0
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), DgpError> {
        let r = self.r1 + self.r2;
        if r < 1 {
            return Err(invalid("r1", "r1 + r2 must be at least 1"));
        }
        if self.n_series < r {
            return Err(invalid(
                "n_series",
                format!("need n_series >= r1 + r2 = {r}"),
            ));
        }
        if self.p < 1 {
            return Err(invalid("p", "lag order must be at least 1"));
        }
        if self.n_periods <= self.p * r {
            return Err(invalid(
                "n_periods",
                format!("need n_periods > p * (r1 + r2) = {}", self.p * r),
            ));
        }
        if !(0.5..=1.0).contains(&self.beta) {
            return Err(invalid("beta", "allowed range is [0.5, 1]"));
        }
        if !(0.0..1.0).contains(&self.zero_fraction) {
            return Err(invalid("zero_fraction", "allowed range is [0, 1)"));
        }
        let zeros = (self.zero_fraction * self.n_series as f64).floor() as usize;
        if self.n_series - zeros < r {
            return Err(invalid(
                "zero_fraction",
                format!("must leave at least r1 + r2 = {r} non-zeros per column"),
            ));
        }
        if self.idio_band < 1 {
            return Err(invalid("idio_band", "must be at least 1"));
        }
        if !(-1.0..1.0).contains(&self.idio_rho) || self.idio_rho <= -1.0 {
            return Err(invalid("idio_rho", "allowed range is (-1, 1)"));
        }
        if !(self.idio_scale > 0.0) {
            return Err(invalid("idio_scale", "must be positive"));
        }
        if self.loadings_scale < 0.0 {
            return Err(invalid("loadings_scale", "must be non-negative"));
        }
        Ok(())
    }

    /// The replication-stream generator for this config.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Same config bound to another replication stream.
    pub fn with_stream(&self, stream: u64) -> Self {
        let mut c = self.clone();
        c.stream = stream;
        c
    }
}

/// Everything the generator knows about a draw, for scoring estimators
/// against the truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpTruth {
    #[serde(with = "serde_matrix")]
    pub x: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub f: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub g: DMatrix<f64>,
    pub loadings: LoadingsMatrix,
    #[serde(with = "serde_matrix")]
    pub sigma_e: DMatrix<f64>,
    #[serde(with = "serde_matrix_list")]
    pub phi: Vec<DMatrix<f64>>,
    #[serde(with = "serde_matrix")]
    pub omega: DMatrix<f64>,
}

impl DgpTruth {
    pub fn n_series(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.x.ncols()
    }

    /// Composite `T × (r1+r2)` factor path `[F G]`.
    pub fn composite_factors(&self) -> DMatrix<f64> {
        let t = self.f.nrows();
        let r1 = self.f.ncols();
        let r2 = self.g.ncols();
        let mut h = DMatrix::zeros(t, r1 + r2);
        h.columns_mut(0, r1).copy_from(&self.f);
        h.columns_mut(r1, r2).copy_from(&self.g);
        h
    }
}

/// Draws VAR(p) coefficients and rescales lag `j` by `s^j` until the
/// companion spectral radius is below [`STABILITY_BOUND`].
pub fn draw_stable_var(r: usize, p: usize, rng: &mut impl Rng) -> Vec<DMatrix<f64>> {
    assert!(r >= 1 && p >= 1);
    let scale = 0.5 / ((r * p) as f64).sqrt();
    let mut phi: Vec<DMatrix<f64>> = (0..p)
        .map(|_| DMatrix::from_fn(r, r, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    loop {
        let radius = spectral_radius(&companion_matrix(&phi));
        if radius < STABILITY_BOUND {
            return phi;
        }
        // Scaling lag j by s^j scales every companion eigenvalue by s.
        let s = 0.9 * STABILITY_BOUND / radius;
        for (j, phi_j) in phi.iter_mut().enumerate() {
            *phi_j *= s.powi(j as i32 + 1);
        }
    }
}

/// Random symmetric positive-definite matrix with eigenvalues in
/// `[0.2, 1.0]` (condition number at most 5).
fn draw_spd(r: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let gauss = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = gauss.qr().q();
    let eigs = DVector::from_fn(r, |_, _| rng.random_range(0.2..1.0));
    symmetrize(&(&q * DMatrix::from_diagonal(&eigs) * q.transpose()))
}

/// Stationary covariance of the VAR marginal, via the companion Lyapunov
/// equation.
fn stationary_factor_cov(
    phi: &[DMatrix<f64>],
    omega: &DMatrix<f64>,
) -> Result<DMatrix<f64>, DgpError> {
    let r = omega.nrows();
    let companion = companion_matrix(phi);
    let radius = spectral_radius(&companion);
    if radius >= 1.0 {
        return Err(DgpError::UnstableVar { radius });
    }
    let rp = companion.nrows();
    let mut q = DMatrix::zeros(rp, rp);
    q.view_mut((0, 0), (r, r)).copy_from(omega);
    let sigma_c =
        lyapunov_stationary(&companion, &q).ok_or(DgpError::UnstableVar { radius })?;
    Ok(sigma_c.view((0, 0), (r, r)).into_owned())
}

/// Similarity-transforms `(Φ, Ω)` so the implied stationary factor
/// covariance is the identity. Companion eigenvalues are unchanged.
fn normalize_to_unit_stationary(
    phi: &[DMatrix<f64>],
    omega: &DMatrix<f64>,
) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>), DgpError> {
    let sigma_h = stationary_factor_cov(phi, omega)?;
    let s = sqrt_spd(&sigma_h);
    let s_inv = s.clone().try_inverse().ok_or_else(|| DgpError::UnstableVar {
        radius: f64::INFINITY,
    })?;
    let phi_bar: Vec<DMatrix<f64>> = phi.iter().map(|m| &s_inv * m * &s).collect();
    let omega_bar = symmetrize(&(&s_inv * omega * s_inv.transpose()));
    Ok((phi_bar, omega_bar))
}

fn cholesky_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(|| {
            // Repaired matrices sit exactly at the eigenvalue floor; nudge.
            let bumped = m + DMatrix::identity(m.nrows(), m.ncols()) * 1e-12;
            bumped.cholesky().expect("positive definite after repair").l()
        })
}

fn simulate_var_path(
    phi: &[DMatrix<f64>],
    omega: &DMatrix<f64>,
    t_record: usize,
    rng: &mut impl Rng,
) -> DMatrix<f64> {
    let r = omega.nrows();
    let chol = cholesky_factor(omega);
    let total = BURN_IN + t_record;
    let mut path: Vec<DVector<f64>> = Vec::with_capacity(total);
    for t in 0..total {
        let z = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut h = &chol * z;
        for (j, phi_j) in phi.iter().enumerate() {
            if t > j {
                h += phi_j * &path[t - j - 1];
            }
        }
        path.push(h);
    }
    let mut out = DMatrix::zeros(t_record, r);
    for (row, h) in path[BURN_IN..].iter().enumerate() {
        out.row_mut(row).copy_from(&h.transpose());
    }
    out
}

fn draw_loadings(config: &DgpConfig, rng: &mut impl Rng) -> LoadingsMatrix {
    let n = config.n_series;
    let r = config.r1 + config.r2;
    let zeros_per_col = (config.zero_fraction * n as f64).floor() as usize;
    let mut combined = DMatrix::zeros(n, r);
    for k in 0..r {
        let zero_rows = sample(rng, n, zeros_per_col);
        let mut is_zero = vec![false; n];
        for idx in zero_rows.iter() {
            is_zero[idx] = true;
        }
        for i in 0..n {
            if !is_zero[i] {
                let magnitude = rng.random_range(0.5..1.5);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                combined[(i, k)] = sign * magnitude;
            }
        }
        let norm = combined.column(k).norm();
        if norm > 0.0 {
            let target = (n as f64).powf(config.beta / 2.0);
            let factor = target / norm * config.loadings_scale;
            for i in 0..n {
                combined[(i, k)] *= factor;
            }
        }
    }
    LoadingsMatrix::from_combined(&combined, config.r1)
}

fn banded_sigma_e(config: &DgpConfig) -> DMatrix<f64> {
    let n = config.n_series;
    let halfwidth = (config.idio_band - 1) / 2;
    let mut sigma = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d = i.abs_diff(j);
            if d == 0 {
                sigma[(i, j)] = 1.0;
            } else if d <= halfwidth {
                sigma[(i, j)] = config.idio_rho.powi(d as i32);
            }
        }
    }
    sigma *= config.idio_scale;
    let floor = SIGMA_E_EIGEN_FLOOR * config.idio_scale;
    let min_eig = sigma
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    if min_eig < floor {
        crate::linalg::clamp_eigenvalues(&sigma, floor)
    } else {
        sigma
    }
}

/// Generates a panel satisfying the model assumptions: stable VAR factors
/// with unit stationary covariance, sparse loadings with column norms
/// `N^{beta/2}`, banded positive-definite `Σ_e`, and
/// `X = Λ^f F' + Λ^g G' + e` with serially independent Gaussian noise.
pub fn simulate(config: &DgpConfig) -> Result<DgpTruth, DgpError> {
    config.validate()?;
    let mut rng = config.rng();
    let n = config.n_series;
    let t = config.n_periods;
    let r = config.r1 + config.r2;

    let phi_raw = draw_stable_var(r, config.p, &mut rng);
    let omega_raw = draw_spd(r, &mut rng);
    let (phi, omega) = normalize_to_unit_stationary(&phi_raw, &omega_raw)?;

    let mut h = simulate_var_path(&phi, &omega, t, &mut rng);
    if config.orthogonalize_fg && config.r1 > 0 && config.r2 > 0 {
        let g = h.columns(config.r1, config.r2).into_owned();
        let f = h.columns(0, config.r1).into_owned();
        let gram = g.transpose() * &g;
        if let Some(inv) = gram.try_inverse() {
            let coef = inv * g.transpose() * &f;
            let f_orth = &f - &g * coef;
            h.columns_mut(0, config.r1).copy_from(&f_orth);
        }
    }
    let f = h.columns(0, config.r1).into_owned();
    let g = h.columns(config.r1, config.r2).into_owned();

    let loadings = draw_loadings(config, &mut rng);
    let sigma_e = banded_sigma_e(config);

    let noise_chol = cholesky_factor(&sigma_e);
    let z = DMatrix::from_fn(n, t, |_, _| rng.sample::<f64, _>(StandardNormal));
    let e = &noise_chol * z;

    let mut x = e;
    if config.r1 > 0 {
        x += loadings.latent() * f.transpose();
    }
    if config.r2 > 0 {
        x += loadings.observed() * g.transpose();
    }

    Ok(DgpTruth {
        x,
        f,
        g,
        loadings,
        sigma_e,
        phi,
        omega,
    })
}

/// Population covariance `Λ Σ_H Λ' + Σ_e` implied by the truth, with `Σ_H`
/// from the companion-form Lyapunov equation.
pub fn population_covariance(truth: &DgpTruth) -> Result<DMatrix<f64>, DgpError> {
    let sigma_h = stationary_factor_cov(&truth.phi, &truth.omega)?;
    let lambda = truth.loadings.combined();
    Ok(symmetrize(&(&lambda * sigma_h * lambda.transpose())) + &truth.sigma_e)
}

/// Convenience wrapper: population factor covariance for explicit `(Φ, Ω)`.
pub fn stationary_covariance(
    phi: &[DMatrix<f64>],
    omega: &DMatrix<f64>,
) -> Result<DMatrix<f64>, DgpError> {
    stationary_factor_cov(phi, omega)
}

/// Smallest eigenvalue of a symmetric matrix, exposed for diagnostics.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigen_desc(m).0.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}
