//! Small dense linear-algebra helpers over `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance below which singular values (and Gram–Schmidt residual
/// norms) count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Moore–Penrose pseudo-inverse; singular values `≤ rel_tol · σ_max` are dropped.
pub fn pinv(m: &Mat, rel_tol: f64) -> Mat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Mat::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return Mat::zeros(c, r);
    }
    let cut = rel_tol * smax;
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut out = Mat::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            out += (vt.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    out
}

/// Largest eigenvalue and a unit eigenvector of a symmetric matrix.
pub fn sym_max_eigen(m: &Mat) -> (f64, Vector) {
    let eig = SymmetricEigen::new(m.clone());
    let (i, &lam) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    (lam, eig.eigenvectors.column(i).into_owned())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eigenvalue(m: &Mat) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn from_row_major(d: usize, data: &[f64]) -> Mat {
    Mat::from_row_slice(d, d, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_rank_one() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let p = pinv(&m, RANK_TOL);
        let back = &m * &p * &m;
        assert!((back - &m).norm() < 1e-12);
        assert!((p[(0, 0)] - 0.2).abs() < 1e-12 && (p[(0, 1)] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn max_eigen() {
        let m = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (l, v) = sym_max_eigen(&m);
        assert!((l - 3.0).abs() < 1e-12);
        assert!((v[0].abs() - v[1].abs()).abs() < 1e-12);
        assert!((sym_min_eigenvalue(&m) - 1.0).abs() < 1e-12);
    }
}
