//! Small shared linear-algebra helpers: companion forms, spectral quantities,
//! the discrete Lyapunov equation and matrix (de)serialization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Stacks VAR(p) coefficient matrices into the `rp × rp` companion matrix.
///
/// Layout: the first block row holds `[Φ_1 … Φ_p]`, the sub-diagonal blocks
/// are identities.
pub fn companion_matrix(phi: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = phi.len();
    assert!(p >= 1, "companion form needs at least one lag matrix");
    let r = phi[0].nrows();
    let mut c = DMatrix::zeros(r * p, r * p);
    for (j, phi_j) in phi.iter().enumerate() {
        assert_eq!(phi_j.shape(), (r, r), "lag matrices must share dimensions");
        c.view_mut((0, j * r), (r, r)).copy_from(phi_j);
    }
    for i in 0..p.saturating_sub(1) {
        c.view_mut(((i + 1) * r, i * r), (r, r))
            .copy_from(&DMatrix::identity(r, r));
    }
    c
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Largest singular value, computed from the Gram matrix of the thinner side.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let max_eig = gram
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |a, &b| a.max(b));
    max_eig.max(0.0).sqrt()
}

/// Solves the discrete Lyapunov equation `Σ = C Σ C' + Q` by doubling.
///
/// Requires the spectral radius of `C` to be below one; returns `None`
/// when the iteration fails to contract.
pub fn lyapunov_stationary(c: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = c.nrows();
    assert_eq!(q.shape(), (n, n));
    let mut sigma = q.clone();
    let mut a = c.clone();
    // Σ_{k+1} = Σ_k + A_k Σ_k A_k',  A_{k+1} = A_k²; converges quadratically.
    for _ in 0..200 {
        let incr = &a * &sigma * a.transpose();
        let step = incr.amax();
        sigma += incr;
        a = &a * &a;
        if step <= 1e-15 * sigma.amax().max(1.0) {
            let sym = symmetrize(&sigma);
            return Some(sym);
        }
    }
    None
}

/// Returns `(A + A') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
/// Returns `(eigenvalues, eigenvectors)` with vectors in matching columns.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("non-finite eigenvalue")
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(eig.eigenvectors.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Clamps eigenvalues of a symmetric matrix from below and reassembles it.
pub fn clamp_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let (values, vectors) = symmetric_eigen_desc(m);
    let clamped = DVector::from_iterator(values.len(), values.iter().map(|&v| v.max(floor)));
    let rebuilt = &vectors * DMatrix::from_diagonal(&clamped) * vectors.transpose();
    symmetrize(&rebuilt)
}

/// Symmetric positive-definite square root via eigendecomposition.
pub fn sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = symmetric_eigen_desc(m);
    let roots = DVector::from_iterator(values.len(), values.iter().map(|&v| v.max(0.0).sqrt()));
    symmetrize(&(&vectors * DMatrix::from_diagonal(&roots) * vectors.transpose()))
}

/// Linear-interpolation sample quantile (the common "type 7" definition).
/// `q` must lie in `[0, 1]`; the input slice is sorted internally.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty sample");
    assert!((0.0..=1.0).contains(&q), "quantile level outside [0,1]");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample value"));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Median shortcut over an unsorted slice.
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Row-major JSON image of a matrix, used by every artifact writer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixJson {
    pub rows: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect();
        MatrixJson { rows }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>, String> {
        let nrows = self.rows.len();
        let ncols = self.rows.first().map_or(0, Vec::len);
        if self.rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".to_string());
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| self.rows[i][j]))
    }
}

/// Serde adapter: `#[serde(with = "crate::linalg::serde_matrix")]` on a `DMatrix<f64>` field.
pub mod serde_matrix {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson::from_matrix(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let json = MatrixJson::deserialize(d)?;
        json.to_matrix().map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for a list of matrices (VAR lag stacks).
pub mod serde_matrix_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let imgs: Vec<MatrixJson> = ms.iter().map(MatrixJson::from_matrix).collect();
        imgs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let imgs = Vec::<MatrixJson>::deserialize(d)?;
        imgs.into_iter()
            .map(|m| m.to_matrix().map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Serde adapter for an optional matrix field.
pub mod serde_matrix_opt {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(MatrixJson::from_matrix).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<DMatrix<f64>>, D::Error> {
        let json = Option::<MatrixJson>::deserialize(d)?;
        json.map(|m| m.to_matrix().map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Serde adapter for an optional vector.
pub mod serde_vector {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.iter().copied().collect::<Vec<f64>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn companion_var1_is_coefficient() {
        let phi = vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4])];
        let c = companion_matrix(&phi);
        assert_eq!(c.shape(), (2, 2));
        assert_abs_diff_eq!(c[(0, 1)], 0.1, epsilon = 0.0);
    }

    #[test]
    fn companion_var2_layout() {
        let phi = vec![
            DMatrix::from_element(2, 2, 0.2),
            DMatrix::from_element(2, 2, 0.1),
        ];
        let c = companion_matrix(&phi);
        assert_eq!(c.shape(), (4, 4));
        assert_abs_diff_eq!(c[(0, 2)], 0.1, epsilon = 0.0);
        assert_abs_diff_eq!(c[(2, 0)], 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(c[(3, 3)], 0.0, epsilon = 0.0);
    }

    #[test]
    fn radius_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.8, 0.1]));
        assert_abs_diff_eq!(spectral_radius(&m), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn radius_matches_rotation_block() {
        // 2x2 rotation scaled by 0.7 has complex eigenvalues of modulus 0.7.
        let a = 0.7 * DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&a), 0.7, epsilon = 1e-10);
    }

    #[test]
    fn lyapunov_ar1_scalar() {
        // sigma = 0.75 / (1 - 0.25) = 1
        let c = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 0.75);
        let s = lyapunov_stationary(&c, &q).unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_matches_residual() {
        let c = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]);
        let s = lyapunov_stationary(&c, &q).unwrap();
        let resid = &s - &c * &s * c.transpose() - &q;
        assert!(resid.amax() < 1e-12);
    }

    #[test]
    fn spectral_norm_rank_one() {
        let u = DVector::from_vec(vec![3.0, 4.0]);
        let m = &u * u.transpose();
        assert_abs_diff_eq!(spectral_norm(&m), 25.0, epsilon = 1e-10);
    }

    #[test]
    fn quantile_endpoints_and_midpoint() {
        let v = vec![3.0, 1.0, 2.0];
        assert_abs_diff_eq!(quantile(&v, 0.0), 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(quantile(&v, 1.0), 3.0, epsilon = 0.0);
        assert_abs_diff_eq!(quantile(&v, 0.5), 2.0, epsilon = 0.0);
        assert_abs_diff_eq!(quantile(&[5.0], 0.3), 5.0, epsilon = 0.0);
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let (vals, _) = symmetric_eigen_desc(&m);
        assert!(vals[0] >= vals[1]);
        assert_abs_diff_eq!(vals[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn matrix_json_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let json = MatrixJson::from_matrix(&m);
        let back = json.to_matrix().unwrap();
        assert_eq!(m, back);
    }
}
