//! Structural identification of the factor model: rotation matrices built
//! from the innovation-covariance blocks, rotated loadings/factors/VAR
//! coefficients, the block-diagonal structural covariance, and a
//! restriction-counting diagnostic.
//!
//! Two schemes. `IRa` leaves the latent loadings unrotated and zeroes the
//! latent-observed block of the structural innovation covariance; latent
//! factors are then ordered by loading sparsity and sign-aligned to the
//! data. `IRb` additionally pins an `r1 × r1` block of the latent loadings
//! to the identity (named factors), which fixes order and sign by itself.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::RfavarFit;
use crate::linalg::{companion_matrix, serde_matrix, spectral_radius, symmetrize};
use crate::loadings::LoadingsMatrix;
use crate::var::VarModel;

/// Numerical bound the latent-observed block of `Ã Ω Ã'` must satisfy
/// before it is forced to exact zero.
pub const FG_BLOCK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum IdentifyError {
    #[error("Ω_gg block is singular")]
    SingularOmegaGg,
    #[error("naming block is singular or ill-conditioned (condition number {condition:.3e})")]
    SingularNamingBlock { condition: f64 },
    #[error("naming rows out of range or duplicated")]
    BadNamingRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ira,
    Irb,
}

/// A rotation `Ã` and its inverse (the contemporaneous impact matrix).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationPair {
    #[serde(with = "serde_matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub a_inv: DMatrix<f64>,
    pub scheme: Scheme,
}

/// `Ω_fg Ω_gg^{-1}` via Cholesky of `Ω_gg`.
fn cross_coefficient(
    omega: &DMatrix<f64>,
    r1: usize,
) -> Result<DMatrix<f64>, IdentifyError> {
    let r = omega.nrows();
    let r2 = r - r1;
    if r2 == 0 {
        return Ok(DMatrix::zeros(r1, 0));
    }
    let omega_fg = omega.view((0, r1), (r1, r2)).into_owned();
    let omega_gg = omega.view((r1, r1), (r2, r2)).into_owned();
    let chol = omega_gg.cholesky().ok_or(IdentifyError::SingularOmegaGg)?;
    // B' = Ω_gg^{-1} Ω_gf
    Ok(chol.solve(&omega_fg.transpose()).transpose())
}

/// Builds the IRa rotation `Ã = [[I, −Ω_fg Ω_gg^{-1}], [0, I]]` and its
/// inverse `A^{-1} = [[I, Ω_fg Ω_gg^{-1}], [0, I]]`.
pub fn rotation_ira(
    omega: &DMatrix<f64>,
    r1: usize,
    r2: usize,
) -> Result<RotationPair, IdentifyError> {
    assert_eq!(omega.nrows(), r1 + r2);
    let b = cross_coefficient(omega, r1)?;
    let r = r1 + r2;
    let mut a = DMatrix::identity(r, r);
    let mut a_inv = DMatrix::identity(r, r);
    for i in 0..r1 {
        for j in 0..r2 {
            a[(i, r1 + j)] = -b[(i, j)];
            a_inv[(i, r1 + j)] = b[(i, j)];
        }
    }
    Ok(RotationPair {
        a,
        a_inv,
        scheme: Scheme::Ira,
    })
}

/// Builds the IRb rotation `Ã = [[Λ_1, −Λ_1 B], [0, I]]` with
/// `A^{-1} = [[Λ_1^{-1}, B], [0, I]]`, given the naming block `Λ_1`.
pub fn rotation_irb(
    omega: &DMatrix<f64>,
    lambda_1: &DMatrix<f64>,
    r1: usize,
    r2: usize,
) -> Result<RotationPair, IdentifyError> {
    assert_eq!(omega.nrows(), r1 + r2);
    assert_eq!(lambda_1.shape(), (r1, r1));
    let condition = condition_number(lambda_1);
    let lambda_1_inv = lambda_1
        .clone()
        .try_inverse()
        .filter(|_| condition.is_finite() && condition < 1e12)
        .ok_or(IdentifyError::SingularNamingBlock { condition })?;
    let b = cross_coefficient(omega, r1)?;
    let r = r1 + r2;
    let mut a = DMatrix::identity(r, r);
    let mut a_inv = DMatrix::identity(r, r);
    a.view_mut((0, 0), (r1, r1)).copy_from(lambda_1);
    a_inv.view_mut((0, 0), (r1, r1)).copy_from(&lambda_1_inv);
    if r2 > 0 {
        let top_right = -lambda_1 * &b;
        a.view_mut((0, r1), (r1, r2)).copy_from(&top_right);
        a_inv.view_mut((0, r1), (r1, r2)).copy_from(&b);
    }
    Ok(RotationPair {
        a,
        a_inv,
        scheme: Scheme::Irb,
    })
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let svs = m.clone().singular_values();
    let max = svs.iter().fold(0.0f64, |a, &b| a.max(b));
    let min = svs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Block-diagonal covariance of the structural innovations:
/// IRa gives `blockdiag(Ω_ff − Ω_fg Ω_gg^{-1} Ω_gf, Ω_gg)`, IRb wraps the
/// Schur complement with the naming block.
pub fn structural_cov(
    omega: &DMatrix<f64>,
    r1: usize,
    scheme: Scheme,
    lambda_1: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>, IdentifyError> {
    let r = omega.nrows();
    let r2 = r - r1;
    let omega_ff = omega.view((0, 0), (r1, r1)).into_owned();
    let schur = if r2 > 0 {
        let b = cross_coefficient(omega, r1)?;
        let omega_gf = omega.view((r1, 0), (r2, r1)).into_owned();
        symmetrize(&(&omega_ff - b * omega_gf))
    } else {
        omega_ff
    };
    let ff = match scheme {
        Scheme::Ira => schur,
        Scheme::Irb => {
            let l1 = lambda_1.expect("IRb needs the naming block");
            symmetrize(&(l1 * schur * l1.transpose()))
        }
    };
    let mut out = DMatrix::zeros(r, r);
    out.view_mut((0, 0), (r1, r1)).copy_from(&ff);
    if r2 > 0 {
        out.view_mut((r1, r1), (r2, r2))
            .copy_from(&omega.view((r1, r1), (r2, r2)).into_owned());
    }
    Ok(out)
}

/// Identified model: rotated loadings (the impact matrix `B_0`), rotated
/// latent factors, rotated VAR, structural covariance, and the bookkeeping
/// of the ordering/sign normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifiedModel {
    pub loadings_hat: LoadingsMatrix,
    #[serde(with = "serde_matrix")]
    pub factors_hat: DMatrix<f64>,
    pub var_hat: VarModel,
    #[serde(with = "serde_matrix")]
    pub omega_star: DMatrix<f64>,
    pub scheme: Scheme,
    /// New latent column `k` came from original column `column_order[k]`.
    pub column_order: Vec<usize>,
    pub signs: Vec<f64>,
    /// Rotation composed with the ordering/sign normalization; `a_inv` is
    /// the contemporaneous impact matrix on the pre-rotation factors.
    pub rotation: RotationPair,
    /// Largest latent-observed entry of `Ã Ω Ã'` before forcing to zero.
    pub fg_max_abs: f64,
    pub warnings: Vec<String>,
}

impl IdentifiedModel {
    pub fn r1(&self) -> usize {
        self.loadings_hat.r1()
    }

    pub fn r2(&self) -> usize {
        self.loadings_hat.r2()
    }

    pub fn r(&self) -> usize {
        self.loadings_hat.r()
    }

    /// Contemporaneous impact matrix on the observables, `B_0 = Λ̂`.
    pub fn b0(&self) -> DMatrix<f64> {
        self.loadings_hat.combined()
    }
}

struct RotatedCore {
    lambda_hat: LoadingsMatrix,
    factors_hat: DMatrix<f64>,
    phi_hat: Vec<DMatrix<f64>>,
    omega_star: DMatrix<f64>,
    rotation: RotationPair,
    fg_max_abs: f64,
    warnings: Vec<String>,
}

/// Shared rotation step: rotate loadings, factors, VAR coefficients, verify
/// and force the structural covariance block-diagonal.
fn rotate_core(
    fit: &RfavarFit,
    g: &DMatrix<f64>,
    var: &VarModel,
    rotation: RotationPair,
    lambda_1: Option<&DMatrix<f64>>,
) -> Result<RotatedCore, IdentifyError> {
    let r1 = fit.r1();
    let r2 = fit.r2();
    let omega = &var.omega;
    let b = cross_coefficient(omega, r1)?;

    // Λ̂^g = Λ̃^g + Λ̃^f B for both schemes; IRb additionally rescales Λ̃^f.
    let lambda_f_tilde = fit.loadings.latent();
    let lambda_g_hat = if r2 > 0 {
        fit.loadings.observed() + lambda_f_tilde * &b
    } else {
        DMatrix::zeros(fit.loadings.n_series(), 0)
    };
    let lambda_f_hat = match rotation.scheme {
        Scheme::Ira => lambda_f_tilde.clone(),
        Scheme::Irb => {
            let l1_inv = rotation.a_inv.view((0, 0), (r1, r1)).into_owned();
            lambda_f_tilde * l1_inv
        }
    };

    // F̂ = (F̃ − G B') [· Λ_1' under IRb]
    let mut factors_hat = if r2 > 0 {
        &fit.factors_f - g * b.transpose()
    } else {
        fit.factors_f.clone()
    };
    if rotation.scheme == Scheme::Irb {
        let l1 = lambda_1.expect("IRb needs the naming block");
        factors_hat *= l1.transpose();
    }

    let phi_hat: Vec<DMatrix<f64>> = var
        .phi
        .iter()
        .map(|phi_i| &rotation.a * phi_i * &rotation.a_inv)
        .collect();

    // Verify the rotated covariance is numerically block diagonal, then
    // force exact zeros through the Schur-complement form.
    let rotated_omega = &rotation.a * omega * rotation.a.transpose();
    let mut fg_max_abs = 0.0f64;
    for i in 0..r1 {
        for j in 0..r2 {
            fg_max_abs = fg_max_abs.max(rotated_omega[(i, r1 + j)].abs());
        }
    }
    let mut warnings = Vec::new();
    let tol = FG_BLOCK_TOL * omega.amax().max(1.0);
    if fg_max_abs > tol {
        warnings.push(format!(
            "rotated fg covariance block is {fg_max_abs:.3e}, above the {tol:.3e} bound"
        ));
    }
    let omega_star = structural_cov(omega, r1, rotation.scheme, lambda_1)?;

    Ok(RotatedCore {
        lambda_hat: LoadingsMatrix::new(lambda_f_hat, lambda_g_hat),
        factors_hat,
        phi_hat,
        omega_star,
        rotation,
        fg_max_abs,
        warnings,
    })
}

/// Signed permutation `Q` (latent block only): new column `k` is
/// `signs[k] ×` old column `order[k]`.
fn signed_permutation(order: &[usize], signs: &[f64], r1: usize, r2: usize) -> DMatrix<f64> {
    let r = r1 + r2;
    let mut q = DMatrix::zeros(r, r);
    for (new_k, (&old_j, &s)) in order.iter().zip(signs.iter()).enumerate() {
        q[(old_j, new_k)] = s;
    }
    for j in 0..r2 {
        q[(r1 + j, r1 + j)] = 1.0;
    }
    q
}

fn pearson_sign(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let t = a.len() as f64;
    let ma = a.sum() / t;
    let mb = b.sum() / t;
    let cov: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum();
    if cov < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn assemble(
    core: RotatedCore,
    var: &VarModel,
    order: Vec<usize>,
    signs: Vec<f64>,
) -> IdentifiedModel {
    let r1 = core.lambda_hat.r1();
    let r2 = core.lambda_hat.r2();
    let q = signed_permutation(&order, &signs, r1, r2);

    let lambda_perm = core.lambda_hat.combined() * &q;
    let factors_perm = &core.factors_hat * q.view((0, 0), (r1, r1)).into_owned();
    let phi_perm: Vec<DMatrix<f64>> = core
        .phi_hat
        .iter()
        .map(|m| q.transpose() * m * &q)
        .collect();
    let omega_perm = q.transpose() * &core.omega_star * &q;
    let a_perm = q.transpose() * &core.rotation.a;
    let a_inv_perm = &core.rotation.a_inv * &q;

    let residuals_perm = &var.residuals * a_perm.transpose();
    let companion_radius = spectral_radius(&companion_matrix(&phi_perm));
    let var_hat = VarModel {
        p: var.p,
        phi: phi_perm,
        omega: omega_perm.clone(),
        intercept: var.intercept.as_ref().map(|c| {
            let v = DVector::from_vec(c.clone());
            (&a_perm * v).iter().copied().collect()
        }),
        residuals: residuals_perm,
        companion_radius,
    };

    IdentifiedModel {
        loadings_hat: LoadingsMatrix::from_combined(&lambda_perm, r1),
        factors_hat: factors_perm,
        var_hat,
        omega_star: omega_perm,
        scheme: core.rotation.scheme,
        column_order: order,
        signs,
        rotation: RotationPair {
            a: a_perm,
            a_inv: a_inv_perm,
            scheme: core.rotation.scheme,
        },
        fg_max_abs: core.fg_max_abs,
        warnings: core.warnings,
    }
}

/// IRa identification: latent loadings unchanged, observed loadings and
/// factors rotated, latent columns ordered by loading sparsity (ties by
/// descending column norm) and signed so each factor co-moves with the
/// series carrying its largest absolute loading. `x` supplies those series.
pub fn apply_ira(
    fit: &RfavarFit,
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    var: &VarModel,
) -> Result<IdentifiedModel, IdentifyError> {
    let r1 = fit.r1();
    let r2 = fit.r2();
    let rotation = rotation_ira(&var.omega, r1, r2)?;
    let core = rotate_core(fit, g, var, rotation, None)?;

    // Order latent columns by descending count of exact zeros.
    let lambda_f = core.lambda_hat.latent();
    let mut keys: Vec<(usize, usize, f64)> = (0..r1)
        .map(|k| {
            let col = lambda_f.column(k);
            let zeros = col.iter().filter(|&&v| v == 0.0).count();
            (k, zeros, col.norm())
        })
        .collect();
    keys.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then(b.2.partial_cmp(&a.2).expect("finite column norm"))
    });
    let order: Vec<usize> = keys.iter().map(|(k, _, _)| *k).collect();

    // Sign: positive correlation with the series holding the column's
    // largest absolute loading.
    let signs: Vec<f64> = order
        .iter()
        .map(|&k| {
            let col = lambda_f.column(k);
            let mut best = 0usize;
            let mut best_abs = -1.0;
            for (i, v) in col.iter().enumerate() {
                if v.abs() > best_abs {
                    best_abs = v.abs();
                    best = i;
                }
            }
            if best_abs <= 0.0 {
                return 1.0;
            }
            let factor = core.factors_hat.column(k).into_owned();
            let series = x.row(best).transpose();
            pearson_sign(&factor, &series)
        })
        .collect();

    Ok(assemble(core, var, order, signs))
}

/// IRb (named-factor) identification: the `naming_rows` block of the latent
/// loadings becomes the identity; no further ordering or sign fixing.
pub fn apply_irb(
    fit: &RfavarFit,
    g: &DMatrix<f64>,
    var: &VarModel,
    naming_rows: &[usize],
) -> Result<IdentifiedModel, IdentifyError> {
    let r1 = fit.r1();
    let r2 = fit.r2();
    let n = fit.loadings.n_series();
    if naming_rows.len() != r1
        || naming_rows.iter().any(|&i| i >= n)
        || (1..naming_rows.len()).any(|k| naming_rows[..k].contains(&naming_rows[k]))
    {
        return Err(IdentifyError::BadNamingRows);
    }
    let lambda_f = fit.loadings.latent();
    let lambda_1 = DMatrix::from_fn(r1, r1, |i, k| lambda_f[(naming_rows[i], k)]);
    let rotation = rotation_irb(&var.omega, &lambda_1, r1, r2)?;
    let core = rotate_core(fit, g, var, rotation, Some(&lambda_1))?;
    let order: Vec<usize> = (0..r1).collect();
    let signs = vec![1.0; r1];
    Ok(assemble(core, var, order, signs))
}

/// Re-identification with a normalization held fixed: rebuilds the rotation
/// from a resampled `Ω` while keeping the column order, signs and (for IRb)
/// the naming block of the point estimate. Used by the residual bootstrap so
/// replications stay in the point model's coordinates.
pub(crate) fn apply_with_fixed_normalization(
    fit: &RfavarFit,
    g: &DMatrix<f64>,
    var_b: &VarModel,
    scheme: Scheme,
    lambda_1: Option<&DMatrix<f64>>,
    order: &[usize],
    signs: &[f64],
) -> Result<IdentifiedModel, IdentifyError> {
    let r1 = fit.r1();
    let r2 = fit.r2();
    let rotation = match scheme {
        Scheme::Ira => rotation_ira(&var_b.omega, r1, r2)?,
        Scheme::Irb => {
            rotation_irb(&var_b.omega, lambda_1.expect("IRb needs the naming block"), r1, r2)?
        }
    };
    let core = rotate_core(fit, g, var_b, rotation, lambda_1)?;
    Ok(assemble(core, var_b, order.to_vec(), signs.to_vec()))
}

/// Restriction-count identification report. `required` is `r1² + r1·r2`;
/// `available` counts exact zeros in the latent loadings plus the
/// covariance-side normalization restrictions (`r1(r1+1)/2` from the unit
/// factor covariance and `r1·r2` from the zero fg block). This is a
/// necessary-count heuristic, not a full rank condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub required: usize,
    pub zero_restrictions: usize,
    pub normalization_restrictions: usize,
    pub available: usize,
    pub pass: bool,
}

pub fn identification_diagnostic(
    loadings: &LoadingsMatrix,
    r1: usize,
    r2: usize,
) -> IdentificationReport {
    let required = r1 * r1 + r1 * r2;
    let zero_restrictions = loadings.latent_zero_count();
    let normalization_restrictions = r1 * (r1 + 1) / 2 + r1 * r2;
    let available = zero_restrictions + normalization_restrictions;
    IdentificationReport {
        required,
        zero_restrictions,
        normalization_restrictions,
        available,
        pass: available >= required,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::PenaltyPair;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn omega_2x2() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])
    }

    #[test]
    fn ira_rotation_hand_case() {
        let pair = rotation_ira(&omega_2x2(), 1, 1).unwrap();
        let a_expected = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.0, 1.0]);
        let a_inv_expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!((&pair.a - a_expected).amax() < 1e-14);
        assert!((&pair.a_inv - a_inv_expected).amax() < 1e-14);
    }

    #[test]
    fn ira_identity_when_uncorrelated() {
        let omega = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let pair = rotation_ira(&omega, 1, 1).unwrap();
        assert!((&pair.a - DMatrix::identity(2, 2)).amax() == 0.0);
        assert!((&pair.a_inv - DMatrix::identity(2, 2)).amax() == 0.0);
    }

    #[test]
    fn rotation_inverse_exact_on_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let r1 = 1 + rng.random_range(0..3usize);
            let r2 = 1 + rng.random_range(0..2usize);
            let r = r1 + r2;
            let raw = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
            let omega = &raw * raw.transpose() + DMatrix::identity(r, r) * 0.5;
            let pair = rotation_ira(&omega, r1, r2).unwrap();
            let prod = &pair.a * &pair.a_inv;
            assert!((prod - DMatrix::identity(r, r)).amax() < 1e-13);
        }
    }

    #[test]
    fn structural_cov_schur_case() {
        let out = structural_cov(&omega_2x2(), 1, Scheme::Ira, None).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.75, 0.0, 0.0, 1.0]);
        assert!((out - expected).amax() < 1e-14);
    }

    #[test]
    fn structural_cov_diagonal_unchanged() {
        let omega = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let out = structural_cov(&omega, 1, Scheme::Ira, None).unwrap();
        assert!((out - omega).amax() == 0.0);
    }

    #[test]
    fn structural_cov_psd_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let r = 4;
            let raw = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
            let omega = &raw * raw.transpose() + DMatrix::identity(r, r) * 0.1;
            let out = structural_cov(&omega, 2, Scheme::Ira, None).unwrap();
            let min_eig = out
                .symmetric_eigenvalues()
                .iter()
                .fold(f64::INFINITY, |a, &b| a.min(b));
            assert!(min_eig >= -1e-10);
        }
    }

    #[test]
    fn irb_rotation_blocks() {
        let lambda_1 = DMatrix::from_element(1, 1, 2.0);
        let pair = rotation_irb(&omega_2x2(), &lambda_1, 1, 1).unwrap();
        // A = [[2, -2*0.5], [0, 1]], A^{-1} = [[0.5, 0.5], [0, 1]]
        assert_abs_diff_eq!(pair.a[(0, 0)], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pair.a[(0, 1)], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pair.a_inv[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(pair.a_inv[(0, 1)], 0.5, epsilon = 1e-14);
        let prod = &pair.a * &pair.a_inv;
        assert!((prod - DMatrix::identity(2, 2)).amax() < 1e-13);
    }

    #[test]
    fn irb_singular_naming_block() {
        let lambda_1 = DMatrix::zeros(2, 2);
        let omega = DMatrix::identity(3, 3);
        assert!(matches!(
            rotation_irb(&omega, &lambda_1, 2, 1),
            Err(IdentifyError::SingularNamingBlock { .. })
        ));
    }

    #[test]
    fn diagnostic_counts() {
        let report = identification_diagnostic(
            &LoadingsMatrix::new(DMatrix::zeros(40, 5), DMatrix::zeros(40, 1)),
            5,
            1,
        );
        assert_eq!(report.required, 30);
        // all-zero latent block: every entry is a restriction
        assert_eq!(report.zero_restrictions, 200);
        assert!(report.pass);

        let dense = LoadingsMatrix::new(DMatrix::from_element(10, 2, 0.5), DMatrix::zeros(10, 1));
        let report = identification_diagnostic(&dense, 2, 1);
        assert_eq!(report.required, 6);
        assert_eq!(report.zero_restrictions, 0);
        assert_eq!(report.normalization_restrictions, 3 + 2);
        assert!(!report.pass, "dense loadings fall short of r1^2 + r1 r2");
    }

    /// Builds a small fitted system directly from simulated truth so the
    /// rotation algebra can be exercised without running the estimator.
    fn synthetic_fit(seed: u64) -> (RfavarFit, DMatrix<f64>, DMatrix<f64>, VarModel) {
        let cfg = crate::dgp::DgpConfig {
            n_series: 20,
            n_periods: 150,
            r1: 2,
            r2: 1,
            p: 1,
            beta: 1.0,
            zero_fraction: 0.4,
            idio_band: 1,
            idio_rho: 0.0,
            idio_scale: 0.5,
            loadings_scale: 1.0,
            orthogonalize_fg: false,
            seed,
            stream: 0,
        };
        let truth = crate::dgp::simulate(&cfg).unwrap();
        let h = truth.composite_factors();
        let var = crate::var::fit_var(&h, 1, false).unwrap();
        let fit = RfavarFit {
            loadings: truth.loadings.clone(),
            phi_e: truth.sigma_e.diagonal(),
            factors_f: truth.f.clone(),
            objective_trace: vec![],
            penalties: PenaltyPair::zero(),
            iterations: 0,
            converged: true,
            guard_events: 0,
        };
        (fit, truth.x.clone(), truth.g.clone(), var)
    }

    #[test]
    fn ira_common_component_invariant() {
        let (fit, x, g, var) = synthetic_fit(5);
        let model = apply_ira(&fit, &x, &g, &var).unwrap();
        let before = fit.loadings.latent() * fit.factors_f.transpose()
            + fit.loadings.observed() * g.transpose();
        let after = model.loadings_hat.latent() * model.factors_hat.transpose()
            + model.loadings_hat.observed() * g.transpose();
        let rel = (&after - &before).norm() / before.norm();
        assert!(rel < 1e-10, "common component moved by {rel}");
        // fg block forced to exact zero
        let r1 = model.r1();
        for i in 0..r1 {
            for j in r1..model.r() {
                assert_eq!(model.omega_star[(i, j)], 0.0);
            }
        }
        assert!(model.fg_max_abs <= 1e-10 * var.omega.amax().max(1.0));
    }

    #[test]
    fn ira_var_predictions_invariant() {
        let (fit, x, g, var) = synthetic_fit(6);
        let model = apply_ira(&fit, &x, &g, &var).unwrap();
        // one-step prediction of the common component in both coordinates
        let mut h_before = DMatrix::zeros(fit.factors_f.nrows(), 3);
        h_before.columns_mut(0, 2).copy_from(&fit.factors_f);
        h_before.columns_mut(2, 1).copy_from(&g);
        let mut h_after = DMatrix::zeros(fit.factors_f.nrows(), 3);
        h_after.columns_mut(0, 2).copy_from(&model.factors_hat);
        h_after.columns_mut(2, 1).copy_from(&g);

        let pred_before =
            fit.loadings.combined() * (&var.phi[0] * h_before.rows(0, 50).transpose());
        let pred_after =
            model.b0() * (&model.var_hat.phi[0] * h_after.rows(0, 50).transpose());
        let rel = (&pred_after - &pred_before).norm() / pred_before.norm().max(1e-12);
        assert!(rel < 1e-9, "one-step predictions moved by {rel}");
    }

    #[test]
    fn ira_no_rotation_when_uncorrelated() {
        let (fit, x, g, mut var) = synthetic_fit(7);
        // force a diagonal omega: no rotation, only ordering and signs
        var.omega = DMatrix::identity(3, 3);
        let model = apply_ira(&fit, &x, &g, &var).unwrap();
        let q = signed_permutation(&model.column_order, &model.signs, 2, 1);
        let expected = fit.loadings.combined() * &q;
        assert!((model.b0() - expected).amax() < 1e-12);
    }

    #[test]
    fn ira_signed_permutation_preserves_product() {
        let (fit, x, g, var) = synthetic_fit(8);
        let model = apply_ira(&fit, &x, &g, &var).unwrap();
        let q = signed_permutation(&model.column_order, &model.signs, model.r1(), model.r2());
        assert!((&q * q.transpose() - DMatrix::identity(3, 3)).amax() < 1e-15);
    }

    /// Sparse draws can zero whole rows; pick the best-conditioned pair.
    fn pick_naming_rows(lambda_f: &DMatrix<f64>) -> [usize; 2] {
        let n = lambda_f.nrows();
        let mut best = [0usize, 1];
        let mut best_det = -1.0;
        for a in 0..n {
            for b in (a + 1)..n {
                let det = (lambda_f[(a, 0)] * lambda_f[(b, 1)]
                    - lambda_f[(a, 1)] * lambda_f[(b, 0)])
                    .abs();
                if det > best_det {
                    best_det = det;
                    best = [a, b];
                }
            }
        }
        best
    }

    #[test]
    fn irb_naming_block_is_identity() {
        let (fit, _x, g, var) = synthetic_fit(9);
        let naming = pick_naming_rows(fit.loadings.latent());
        let model = apply_irb(&fit, &g, &var, &naming).unwrap();
        for (i, &row) in naming.iter().enumerate() {
            for k in 0..2 {
                let expected = if i == k { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(
                    model.loadings_hat.latent()[(row, k)],
                    expected,
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn irb_common_component_invariant() {
        let (fit, _x, g, var) = synthetic_fit(10);
        let naming = pick_naming_rows(fit.loadings.latent());
        let model = apply_irb(&fit, &g, &var, &naming).unwrap();
        let before = fit.loadings.latent() * fit.factors_f.transpose()
            + fit.loadings.observed() * g.transpose();
        let after = model.loadings_hat.latent() * model.factors_hat.transpose()
            + model.loadings_hat.observed() * g.transpose();
        let rel = (&after - &before).norm() / before.norm();
        assert!(rel < 1e-9, "common component moved by {rel}");
    }

    #[test]
    fn irb_identity_naming_with_zero_cross_block() {
        let (mut fit, _x, g, mut var) = synthetic_fit(11);
        // force the naming block to the identity and omega block-diagonal
        let mut latent = fit.loadings.latent().clone();
        latent.view_mut((0, 0), (2, 2)).copy_from(&DMatrix::identity(2, 2));
        fit.loadings = LoadingsMatrix::new(latent, fit.loadings.observed().clone());
        var.omega = DMatrix::identity(3, 3);
        let model = apply_irb(&fit, &g, &var, &[0, 1]).unwrap();
        assert!((model.b0() - fit.loadings.combined()).amax() < 1e-12);
        assert!((&model.factors_hat - &fit.factors_f).amax() < 1e-12);
    }
}
