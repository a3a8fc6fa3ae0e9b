//! Second-step estimation of a possibly sparse idiosyncratic covariance:
//! soft-thresholding of the off-diagonal residual covariances with threshold
//! `τ = 1/√N + √(log N / T)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{clamp_eigenvalues, serde_matrix};
use crate::loadings::LoadingsMatrix;

/// Eigenvalue floor used by the optional positive-definite repair.
pub const PD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PoetError {
    #[error("dimension mismatch: X is {n}×{t}, loadings {ln}×{lr}, factors {ft}×{fr}")]
    DimensionMismatch {
        n: usize,
        t: usize,
        ln: usize,
        lr: usize,
        ft: usize,
        fr: usize,
    },
}

/// Soft-thresholding operator `sign(v)·(|v| − t)_+`; returns bit-exact zero
/// inside the threshold.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if v.abs() <= t {
        0.0
    } else if v > 0.0 {
        v - t
    } else {
        v + t
    }
}

/// The POET threshold for an `N`-dimensional cross-section observed over
/// `T` periods.
pub fn poet_tau(n: usize, t_periods: usize) -> f64 {
    1.0 / (n as f64).sqrt() + ((n as f64).ln() / t_periods as f64).sqrt()
}

/// Sample covariance of the factor-model residuals, divisor `T`.
/// `factors` holds the composite `T × r` path `[F̃ G]`.
pub fn residual_cov(
    x: &DMatrix<f64>,
    loadings: &LoadingsMatrix,
    factors: &DMatrix<f64>,
) -> Result<DMatrix<f64>, PoetError> {
    let (n, t) = x.shape();
    let lambda = loadings.combined();
    if lambda.nrows() != n || factors.nrows() != t || factors.ncols() != lambda.ncols() {
        return Err(PoetError::DimensionMismatch {
            n,
            t,
            ln: lambda.nrows(),
            lr: lambda.ncols(),
            ft: factors.nrows(),
            fr: factors.ncols(),
        });
    }
    let residuals = x - &lambda * factors.transpose();
    let mut s = &residuals * residuals.transpose() / t as f64;
    // enforce exact symmetry of the Gram form
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// Thresholded covariance with its realized sparsity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdedCov {
    #[serde(with = "serde_matrix")]
    pub matrix: DMatrix<f64>,
    pub tau: f64,
    /// Realized `S_N`: maximum non-zeros per row, diagonal included,
    /// measured before any repair.
    pub nonzeros_per_row_max: usize,
    pub pd_repaired: bool,
}

impl ThresholdedCov {
    /// Fraction of off-diagonal entries shrunk to exact zero (before repair).
    pub fn offdiag_zero_fraction(&self) -> f64 {
        let n = self.matrix.nrows();
        if n < 2 {
            return 0.0;
        }
        let zeros = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.matrix[(i, j)] == 0.0)
            .count();
        zeros as f64 / (n * (n - 1)) as f64
    }
}

/// Applies the POET estimator: keeps the diagonal exactly, soft-thresholds
/// each off-diagonal at `τ(n, t)`, mirrors the upper triangle for bit-exact
/// symmetry. With `repair`, eigenvalues below [`PD_FLOOR`] are lifted and
/// the result flagged.
pub fn poet_threshold(
    s_e: &DMatrix<f64>,
    n: usize,
    t_periods: usize,
    repair: bool,
) -> ThresholdedCov {
    let tau = poet_tau(n, t_periods);
    poet_threshold_with_tau(s_e, tau, repair)
}

/// Same as [`poet_threshold`] with an explicit threshold.
pub fn poet_threshold_with_tau(s_e: &DMatrix<f64>, tau: f64, repair: bool) -> ThresholdedCov {
    let dim = s_e.nrows();
    let mut out = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        out[(i, i)] = s_e[(i, i)];
        for j in (i + 1)..dim {
            let v = soft_threshold(s_e[(i, j)], tau);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    let nonzeros_per_row_max = (0..dim)
        .map(|i| (0..dim).filter(|&j| out[(i, j)] != 0.0).count())
        .max()
        .unwrap_or(0);

    let mut pd_repaired = false;
    if repair {
        let min_eig = out
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < PD_FLOOR {
            out = clamp_eigenvalues(&out, PD_FLOOR);
            pd_repaired = true;
        }
    }
    ThresholdedCov {
        matrix: out,
        tau,
        nonzeros_per_row_max,
        pd_repaired,
    }
}

/// JSON-able sparsity summary for the CLI export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsitySummary {
    pub tau: f64,
    pub realized_s_n: usize,
    pub offdiag_zero_fraction: f64,
    pub pd_repaired: bool,
}

impl From<&ThresholdedCov> for SparsitySummary {
    fn from(tc: &ThresholdedCov) -> Self {
        SparsitySummary {
            tau: tc.tau,
            realized_s_n: tc.nonzeros_per_row_max,
            offdiag_zero_fraction: tc.offdiag_zero_fraction(),
            pd_repaired: tc.pd_repaired,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn soft_threshold_cases() {
        assert_abs_diff_eq!(soft_threshold(0.5, 0.2), 0.3, epsilon = 1e-15);
        assert_eq!(soft_threshold(-0.1, 0.2), 0.0);
        assert_abs_diff_eq!(soft_threshold(-0.7, 0.2), -0.5, epsilon = 1e-15);
        assert_eq!(soft_threshold(0.2, 0.2), 0.0, "boundary maps to exact zero");
    }

    #[test]
    fn tau_at_paper_scale() {
        // N = 126, T = 384
        let tau = poet_tau(126, 384);
        assert_abs_diff_eq!(tau, 0.20132, epsilon = 1e-4);
        assert_abs_diff_eq!(1.0 / (126.0f64).sqrt(), 0.08909, epsilon = 1e-5);
        assert_abs_diff_eq!((126.0f64.ln() / 384.0).sqrt(), 0.11223, epsilon = 1e-5);
    }

    #[test]
    fn residual_cov_hand_case() {
        // residual rows [1,-1] and [2,0]: S_e = [[1,1],[1,2]]
        let x = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, 0.0]);
        let loadings = LoadingsMatrix::new(DMatrix::zeros(2, 1), DMatrix::zeros(2, 0));
        let factors = DMatrix::zeros(2, 1);
        let s = residual_cov(&x, &loadings, &factors).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]);
        assert!((&s - &expected).amax() < 1e-15);
    }

    #[test]
    fn residual_cov_zero_loadings_is_sample_cov() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.0, -1.0, 1.0]);
        let loadings = LoadingsMatrix::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 0));
        let factors = DMatrix::zeros(3, 2);
        let s = residual_cov(&x, &loadings, &factors).unwrap();
        let direct = &x * x.transpose() / 3.0;
        assert!((&s - &direct).amax() < 1e-15);
    }

    #[test]
    fn residual_cov_exact_fit_is_zero() {
        let lambda = DMatrix::from_row_slice(3, 1, &[1.0, -2.0, 0.5]);
        let factors = DMatrix::from_row_slice(4, 1, &[0.3, -1.0, 2.0, 0.7]);
        let x = &lambda * factors.transpose();
        let loadings = LoadingsMatrix::new(lambda, DMatrix::zeros(3, 0));
        let s = residual_cov(&x, &loadings, &factors).unwrap();
        assert!(s.amax() < 1e-12);
    }

    #[test]
    fn residual_cov_dimension_mismatch() {
        let x = DMatrix::zeros(2, 3);
        let loadings = LoadingsMatrix::new(DMatrix::zeros(3, 1), DMatrix::zeros(3, 0));
        let factors = DMatrix::zeros(3, 1);
        assert!(matches!(
            residual_cov(&x, &loadings, &factors),
            Err(PoetError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn diagonal_input_untouched() {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let tc = poet_threshold(&s, 3, 100, true);
        assert_eq!(tc.matrix, s);
        assert!(!tc.pd_repaired);
        assert_eq!(tc.nonzeros_per_row_max, 1);
    }

    #[test]
    fn full_shrinkage_gives_diagonal() {
        let mut s = DMatrix::from_element(4, 4, 0.01);
        for i in 0..4 {
            s[(i, i)] = 1.0;
        }
        let tc = poet_threshold(&s, 126, 384, false);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(tc.matrix[(i, j)], 0.0);
                }
            }
        }
        assert_eq!(tc.nonzeros_per_row_max, 1);
        assert_abs_diff_eq!(tc.offdiag_zero_fraction(), 1.0, epsilon = 0.0);
    }

    #[test]
    fn diagonal_kept_exactly_without_repair() {
        let s = DMatrix::from_row_slice(2, 2, &[0.123456789, 0.4, 0.4, 0.987654321]);
        let tc = poet_threshold_with_tau(&s, 0.1, false);
        assert_eq!(tc.matrix[(0, 0)], 0.123456789);
        assert_eq!(tc.matrix[(1, 1)], 0.987654321);
        assert_abs_diff_eq!(tc.matrix[(0, 1)], 0.3, epsilon = 1e-15);
        assert_eq!(tc.matrix[(0, 1)], tc.matrix[(1, 0)]);
    }

    #[test]
    fn zero_set_monotone_in_tau() {
        let mut s = DMatrix::zeros(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                s[(i, j)] = if i == j { 1.0 } else { 0.05 * (i + j) as f64 };
            }
        }
        let s = crate::linalg::symmetrize(&s);
        let small = poet_threshold_with_tau(&s, 0.1, false);
        let large = poet_threshold_with_tau(&s, 0.3, false);
        for i in 0..5 {
            for j in 0..5 {
                if small.matrix[(i, j)] == 0.0 && i != j {
                    assert_eq!(large.matrix[(i, j)], 0.0, "zero set must grow with tau");
                }
            }
        }
    }

    #[test]
    fn rethresholding_preserves_zero_set() {
        let s = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.25, 0.05, 0.25, 1.0, 0.12, 0.05, 0.12, 1.0],
        );
        let once = poet_threshold_with_tau(&s, 0.1, false);
        let twice = poet_threshold_with_tau(&once.matrix, 0.1, false);
        for i in 0..3 {
            for j in 0..3 {
                if once.matrix[(i, j)] == 0.0 {
                    assert_eq!(twice.matrix[(i, j)], 0.0);
                }
            }
        }
        // surviving entries shrink by a further tau
        assert_abs_diff_eq!(twice.matrix[(0, 1)], 0.05, epsilon = 1e-15);
    }

    #[test]
    fn pd_repair_lifts_eigenvalues() {
        // strongly negative-definite off-diagonal structure
        let s = DMatrix::from_row_slice(2, 2, &[0.1, 0.9, 0.9, 0.1]);
        let tc = poet_threshold_with_tau(&s, 0.0, true);
        assert!(tc.pd_repaired);
        let min_eig = tc
            .matrix
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(min_eig >= PD_FLOOR - 1e-12);
    }
}
