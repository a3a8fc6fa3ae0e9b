//! VAR(p) estimation on the composite factors, stability diagnostics and the
//! moving-average representation used by the impulse-response machinery.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{companion_matrix, serde_matrix, serde_matrix_list, spectral_radius, symmetrize};

#[derive(Debug, Error)]
pub enum VarError {
    #[error("insufficient observations: T = {t}, need T - p > r*p + {intercept} (p = {p}, r = {r})")]
    InsufficientObservations {
        t: usize,
        p: usize,
        r: usize,
        intercept: usize,
    },
    #[error("regressor matrix is rank deficient (column {column})")]
    SingularRegressors { column: usize },
    #[error("non-finite value in the factor matrix")]
    NonFiniteInput,
}

/// Estimated VAR(p): coefficients, innovation covariance (divisor `T − p`),
/// residuals and the companion spectral radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarModel {
    pub p: usize,
    #[serde(with = "serde_matrix_list")]
    pub phi: Vec<DMatrix<f64>>,
    #[serde(with = "serde_matrix")]
    pub omega: DMatrix<f64>,
    pub intercept: Option<Vec<f64>>,
    #[serde(with = "serde_matrix")]
    pub residuals: DMatrix<f64>,
    pub companion_radius: f64,
}

impl VarModel {
    pub fn r(&self) -> usize {
        self.omega.nrows()
    }

    /// Splits `Ω` into blocks at `r1`: `(Ω_ff, Ω_fg, Ω_gg)`.
    pub fn omega_blocks(&self, r1: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let r = self.r();
        let r2 = r - r1;
        (
            self.omega.view((0, 0), (r1, r1)).into_owned(),
            self.omega.view((0, r1), (r1, r2)).into_owned(),
            self.omega.view((r1, r1), (r2, r2)).into_owned(),
        )
    }
}

/// Moving-average coefficients `Ψ_0 = I, Ψ_1, …` of the inverted lag
/// polynomial.
#[derive(Debug, Clone)]
pub struct MaCoefficients {
    pub psi: Vec<DMatrix<f64>>,
}

impl MaCoefficients {
    pub fn horizon(&self, h: usize) -> &DMatrix<f64> {
        &self.psi[h]
    }
}

/// Multivariate least squares of `h_t` on its own `p` lags, with an optional
/// intercept. Rows of `h` are periods.
pub fn fit_var(h: &DMatrix<f64>, p: usize, intercept: bool) -> Result<VarModel, VarError> {
    let (t, r) = h.shape();
    let ic = usize::from(intercept);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(VarError::NonFiniteInput);
    }
    if t <= p || t - p <= r * p + ic {
        return Err(VarError::InsufficientObservations {
            t,
            p,
            r,
            intercept: ic,
        });
    }
    let rows = t - p;
    let cols = r * p + ic;
    let mut z = DMatrix::zeros(rows, cols);
    let mut y = DMatrix::zeros(rows, r);
    for (row, period) in (p..t).enumerate() {
        let mut col = 0;
        if intercept {
            z[(row, 0)] = 1.0;
            col = 1;
        }
        for lag in 1..=p {
            for k in 0..r {
                z[(row, col)] = h[(period - lag, k)];
                col += 1;
            }
        }
        for k in 0..r {
            y[(row, k)] = h[(period, k)];
        }
    }

    // Thin QR; a vanishing diagonal of R flags collinear regressors.
    let qr = z.clone().qr();
    let q = qr.q();
    let rmat = qr.r();
    let scale = rmat.diagonal().amax().max(1.0);
    for j in 0..cols {
        if rmat[(j, j)].abs() <= 1e-12 * scale {
            return Err(VarError::SingularRegressors { column: j });
        }
    }
    let qty = q.transpose() * &y;
    let beta = rmat
        .solve_upper_triangular(&qty)
        .ok_or(VarError::SingularRegressors { column: 0 })?;

    let residuals = &y - &z * &beta;
    let omega = symmetrize(&(residuals.transpose() * &residuals / rows as f64));

    let intercept_vec = intercept.then(|| beta.row(0).iter().copied().collect::<Vec<f64>>());
    let mut phi = Vec::with_capacity(p);
    for lag in 0..p {
        // beta rows [ic + lag*r .. ic + (lag+1)*r) hold Φ_{lag+1}'.
        let block = beta.rows(ic + lag * r, r).transpose();
        phi.push(block);
    }
    let companion_radius = spectral_radius(&companion_matrix(&phi));

    Ok(VarModel {
        p,
        phi,
        omega,
        intercept: intercept_vec,
        residuals,
        companion_radius,
    })
}

/// `Ψ_0 = I`, `Ψ_h = Σ_{j=1..min(h,p)} Φ_j Ψ_{h−j}`.
pub fn ma_coefficients(model: &VarModel, h_max: usize) -> MaCoefficients {
    ma_from_phi(&model.phi, h_max)
}

/// Same recursion for a bare coefficient stack.
pub fn ma_from_phi(phi: &[DMatrix<f64>], h_max: usize) -> MaCoefficients {
    let r = phi[0].nrows();
    let p = phi.len();
    let mut psi: Vec<DMatrix<f64>> = Vec::with_capacity(h_max + 1);
    psi.push(DMatrix::identity(r, r));
    for h in 1..=h_max {
        let mut acc = DMatrix::zeros(r, r);
        for j in 1..=h.min(p) {
            acc += &phi[j - 1] * &psi[h - j];
        }
        psi.push(acc);
    }
    MaCoefficients { psi }
}

/// Companion spectral radius and the stability verdict `radius < 1`.
pub fn check_stability(model: &VarModel) -> (bool, f64) {
    let radius = spectral_radius(&companion_matrix(&model.phi));
    (radius < 1.0, radius)
}

/// Simulates a VAR path forward from `p` given initial rows, adding the
/// provided innovations (one row per simulated period). Used by the
/// residual bootstrap.
pub fn simulate_from_initial(
    phi: &[DMatrix<f64>],
    intercept: Option<&[f64]>,
    initial: &DMatrix<f64>,
    innovations: &DMatrix<f64>,
) -> DMatrix<f64> {
    let p = phi.len();
    let r = phi[0].nrows();
    assert_eq!(initial.shape(), (p, r));
    let t = p + innovations.nrows();
    let mut path = DMatrix::zeros(t, r);
    path.rows_mut(0, p).copy_from(initial);
    for period in p..t {
        let mut h = DVector::from_iterator(r, innovations.row(period - p).iter().copied());
        if let Some(c) = intercept {
            for k in 0..r {
                h[k] += c[k];
            }
        }
        for (j, phi_j) in phi.iter().enumerate() {
            let lagged = path.row(period - j - 1).transpose();
            h += phi_j * lagged;
        }
        path.row_mut(period).copy_from(&h.transpose());
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_recovery_of_deterministic_var1() {
        // Zero innovations after a seeded start make the recursion exactly linear.
        let phi_true = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, -0.1, 0.5]);
        let t = 60;
        let mut h = DMatrix::zeros(t, 2);
        h[(0, 0)] = 1.0;
        h[(0, 1)] = -0.7;
        for period in 1..t {
            let prev = h.row(period - 1).transpose();
            let next = &phi_true * prev;
            h.row_mut(period).copy_from(&next.transpose());
        }
        let model = fit_var(&h, 1, false).unwrap();
        assert!((&model.phi[0] - &phi_true).amax() < 1e-8);
        assert!(model.omega.amax() < 1e-16);
    }

    #[test]
    fn iid_noise_has_small_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t = 5000;
        let h = DMatrix::from_fn(t, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let model = fit_var(&h, 1, true).unwrap();
        let bound = 3.0 / (t as f64).sqrt();
        assert!(
            model.phi[0].amax() < 3.0 * bound,
            "null VAR coefficients too large: {}",
            model.phi[0].amax()
        );
        // Gram structure keeps omega PSD
        let min_eig = model
            .omega
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(min_eig >= -1e-10);
    }

    #[test]
    fn residual_means_vanish_with_intercept() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 400;
        let h = DMatrix::from_fn(t, 2, |_, _| rng.sample::<f64, _>(StandardNormal) + 0.5);
        let model = fit_var(&h, 2, true).unwrap();
        for k in 0..2 {
            let mean = model.residuals.column(k).sum() / model.residuals.nrows() as f64;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn ma_var1_is_matrix_power() {
        let phi = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]);
        let model = VarModel {
            p: 1,
            phi: vec![phi.clone()],
            omega: DMatrix::identity(2, 2),
            intercept: None,
            residuals: DMatrix::zeros(0, 2),
            companion_radius: 0.5,
        };
        let ma = ma_coefficients(&model, 20);
        assert_eq!(ma.horizon(0), &DMatrix::identity(2, 2));
        let expected2 = DMatrix::from_row_slice(2, 2, &[0.25, 0.09, 0.0, 0.16]);
        assert!((ma.horizon(2) - &expected2).amax() < 1e-15);
        let mut power = DMatrix::identity(2, 2);
        for h in 0..=20 {
            assert!((ma.horizon(h) - &power).amax() < 1e-12, "horizon {h}");
            power = &phi * power;
        }
    }

    #[test]
    fn ma_var2_unrolled() {
        let phi1 = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.2]);
        let phi2 = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.05, -0.1]);
        let ma = ma_from_phi(&[phi1.clone(), phi2.clone()], 3);
        // psi_1 = phi_1, psi_2 = phi_1^2 + phi_2
        assert!((ma.horizon(1) - &phi1).amax() < 1e-16);
        let expected = &phi1 * &phi1 + &phi2;
        assert!((ma.horizon(2) - &expected).amax() < 1e-15);
    }

    #[test]
    fn ma_h_zero_is_identity_only() {
        let phi = DMatrix::from_element(1, 1, 0.9);
        let ma = ma_from_phi(&[phi], 0);
        assert_eq!(ma.psi.len(), 1);
        assert_eq!(ma.horizon(0), &DMatrix::identity(1, 1));
    }

    #[test]
    fn stability_checks() {
        let mk = |phi: DMatrix<f64>| VarModel {
            p: 1,
            phi: vec![phi],
            omega: DMatrix::identity(2, 2),
            intercept: None,
            residuals: DMatrix::zeros(0, 2),
            companion_radius: 0.0,
        };
        let (stable, radius) = check_stability(&mk(0.5 * DMatrix::identity(2, 2)));
        assert!(stable);
        assert_abs_diff_eq!(radius, 0.5, epsilon = 1e-12);
        let (stable, radius) = check_stability(&mk(DMatrix::identity(2, 2)));
        assert!(!stable);
        assert_abs_diff_eq!(radius, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ma_inversion_identity_truncated() {
        // sum_h psi_h z^h (I - sum_j phi_j z^j) should telescope to I;
        // check the convolution coefficients vanish beyond order 0.
        let phi1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.1, 0.3]);
        let phi2 = DMatrix::from_row_slice(2, 2, &[0.1, -0.1, 0.0, 0.2]);
        let phi = [phi1, phi2];
        let h_max = 50;
        let ma = ma_from_phi(&phi, h_max);
        for order in 1..=h_max {
            let mut coeff = ma.psi[order].clone();
            for j in 1..=order.min(phi.len()) {
                coeff -= &phi[j - 1] * &ma.psi[order - j];
            }
            assert!(coeff.amax() < 1e-6, "order {order}: {}", coeff.amax());
        }
    }

    #[test]
    fn insufficient_observations_error() {
        let h = DMatrix::zeros(5, 2);
        assert!(matches!(
            fit_var(&h, 2, true),
            Err(VarError::InsufficientObservations { .. })
        ));
    }

    #[test]
    fn collinear_regressors_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = 50;
        let mut h = DMatrix::from_fn(t, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        for period in 0..t {
            h[(period, 1)] = 2.0 * h[(period, 0)];
        }
        assert!(matches!(
            fit_var(&h, 1, false),
            Err(VarError::SingularRegressors { .. })
        ));
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = 300;
        let h = DMatrix::from_fn(t, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let model = fit_var(&h, 1, false).unwrap();
        // swap columns 0 and 2
        let perm = [2usize, 1, 0];
        let h_perm = DMatrix::from_fn(t, 3, |i, j| h[(i, perm[j])]);
        let model_perm = fit_var(&h_perm, 1, false).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let diff = (model_perm.phi[0][(a, b)] - model.phi[0][(perm[a], perm[b])]).abs();
                assert!(diff < 1e-10, "({a},{b}) differs by {diff}");
            }
        }
    }

    #[test]
    fn simulate_from_initial_reproduces_input() {
        // Feeding back the fitted residuals reproduces the original path.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = 120;
        let h = DMatrix::from_fn(t, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let model = fit_var(&h, 2, true).unwrap();
        let initial = h.rows(0, 2).into_owned();
        let rebuilt = simulate_from_initial(
            &model.phi,
            model.intercept.as_deref(),
            &initial,
            &model.residuals,
        );
        assert!((&rebuilt - &h).amax() < 1e-10);
    }
}
