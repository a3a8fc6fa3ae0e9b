//! Signed-permutation alignment of estimated factors against a reference:
//! latent factors are identified only up to a signed permutation, so Monte
//! Carlo scoring first matches columns by absolute correlation.

use nalgebra::DMatrix;

/// A column matching: estimated column `perm[k]` times `signs[k]` lines up
/// with reference column `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
}

fn column_correlations(estimated: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let t = estimated.nrows();
    let r = estimated.ncols();
    assert_eq!(reference.nrows(), t);
    assert_eq!(reference.ncols(), r);
    let center = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = m.clone();
        for k in 0..m.ncols() {
            let mean = m.column(k).sum() / t as f64;
            for i in 0..t {
                out[(i, k)] -= mean;
            }
        }
        out
    };
    let e = center(estimated);
    let f = center(reference);
    DMatrix::from_fn(r, r, |i, j| {
        let num = e.column(i).dot(&f.column(j));
        let den = e.column(i).norm() * f.column(j).norm();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    })
}

/// Exhaustive assignment maximizing the total absolute correlation between
/// matched columns; exact for the small factor counts used here.
pub fn align_factors(estimated: &DMatrix<f64>, reference: &DMatrix<f64>) -> Alignment {
    let r = estimated.ncols();
    assert!(r <= 8, "exhaustive assignment is for small factor counts");
    if r == 0 {
        return Alignment {
            perm: vec![],
            signs: vec![],
        };
    }
    let corr = column_correlations(estimated, reference);

    let mut best_perm: Vec<usize> = (0..r).collect();
    let mut best_score = f64::NEG_INFINITY;
    let mut perm: Vec<usize> = (0..r).collect();
    permute(&mut perm, 0, &mut |candidate| {
        let score: f64 = (0..r).map(|k| corr[(candidate[k], k)].abs()).sum();
        if score > best_score {
            best_score = score;
            best_perm = candidate.to_vec();
        }
    });

    let signs = (0..r)
        .map(|k| if corr[(best_perm[k], k)] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    Alignment {
        perm: best_perm,
        signs,
    }
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Applies the alignment to the columns of a matrix (factors `T × r` or
/// loadings `N × r` alike).
pub fn apply_alignment(m: &DMatrix<f64>, alignment: &Alignment) -> DMatrix<f64> {
    let r = alignment.perm.len();
    assert_eq!(m.ncols(), r);
    let mut out = DMatrix::zeros(m.nrows(), r);
    for k in 0..r {
        let src = alignment.perm[k];
        let s = alignment.signs[k];
        for i in 0..m.nrows() {
            out[(i, k)] = s * m[(i, src)];
        }
    }
    out
}
