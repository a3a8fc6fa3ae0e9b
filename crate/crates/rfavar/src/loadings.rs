//! Factor loadings split into latent and observed blocks, with an explicit
//! zero pattern. Soft-thresholded estimates hold bit-exact zeros, so the
//! sparsity pattern is simply equality with zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::serde_matrix;

/// `N × (r1 + r2)` loadings: latent block `Λ^f` and observed block `Λ^g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingsMatrix {
    #[serde(with = "serde_matrix")]
    latent: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    observed: DMatrix<f64>,
}

impl LoadingsMatrix {
    /// Builds from the two blocks. Panics when row counts disagree; the
    /// observed block may have zero columns.
    pub fn new(latent: DMatrix<f64>, observed: DMatrix<f64>) -> Self {
        assert!(
            observed.ncols() == 0 || observed.nrows() == latent.nrows(),
            "latent and observed blocks must have the same number of rows"
        );
        let observed = if observed.ncols() == 0 {
            DMatrix::zeros(latent.nrows(), 0)
        } else {
            observed
        };
        LoadingsMatrix { latent, observed }
    }

    /// Splits a combined `N × (r1+r2)` matrix at column `r1`.
    pub fn from_combined(combined: &DMatrix<f64>, r1: usize) -> Self {
        assert!(r1 <= combined.ncols());
        let latent = combined.columns(0, r1).into_owned();
        let observed = combined.columns(r1, combined.ncols() - r1).into_owned();
        LoadingsMatrix::new(latent, observed)
    }

    pub fn n_series(&self) -> usize {
        self.latent.nrows()
    }

    pub fn r1(&self) -> usize {
        self.latent.ncols()
    }

    pub fn r2(&self) -> usize {
        self.observed.ncols()
    }

    pub fn r(&self) -> usize {
        self.r1() + self.r2()
    }

    pub fn latent(&self) -> &DMatrix<f64> {
        &self.latent
    }

    pub fn observed(&self) -> &DMatrix<f64> {
        &self.observed
    }

    /// Concatenated `[Λ^f  Λ^g]`.
    pub fn combined(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_series(), self.r());
        out.columns_mut(0, self.r1()).copy_from(&self.latent);
        out.columns_mut(self.r1(), self.r2()).copy_from(&self.observed);
        out
    }

    /// True exactly where the entry is bit-exact zero.
    pub fn zero_mask(&self) -> DMatrix<bool> {
        let combined = self.combined();
        DMatrix::from_fn(combined.nrows(), combined.ncols(), |i, j| {
            combined[(i, j)] == 0.0
        })
    }

    /// Number of non-zero entries over both blocks (the paper's `L_N`,
    /// also the model-size term of the information criterion).
    pub fn nonzero_count(&self) -> usize {
        self.latent.iter().filter(|&&v| v != 0.0).count()
            + self.observed.iter().filter(|&&v| v != 0.0).count()
    }

    /// Exact zeros in the latent block only.
    pub fn latent_zero_count(&self) -> usize {
        self.latent.iter().filter(|&&v| v == 0.0).count()
    }
}
