//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value cutoff used for all pseudo-inverses.
pub const PINV_RTOL: f64 = 1e-10;

/// Pseudo-inverse of a symmetric positive semidefinite matrix through its
/// eigendecomposition. Eigenvalues below `rtol * max_eig` are dropped.
/// Returns the inverse and the effective rank.
pub fn pinv_sym(a: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, usize) {
    let k = a.nrows();
    if k == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cut = rtol * max;
    let mut out = DMatrix::zeros(k, k);
    let mut rank = 0;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut && lam > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(j);
            out += (v * v.transpose()) / lam;
        }
    }
    (out, rank)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_range(a: &DMatrix<f64>) -> (f64, f64) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// Least squares through the SVD of `x`, truncating singular values below
/// `rtol * sigma_max`. Returns coefficients, effective rank, and the
/// pseudo-inverse of `x'x`.
pub fn lstsq_svd(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    rtol: f64,
) -> (DVector<f64>, usize, DMatrix<f64>) {
    let k = x.ncols();
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u");
    let vt = svd.v_t.as_ref().expect("v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cut = rtol * smax;
    let mut beta = DVector::zeros(k);
    let mut xtx_pinv = DMatrix::zeros(k, k);
    let mut rank = 0;
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            rank += 1;
            let v = vt.row(j).transpose();
            let coef = u.column(j).dot(y) / s;
            beta += &v * coef;
            xtx_pinv += (&v * v.transpose()) / (s * s);
        }
    }
    (beta, rank, xtx_pinv)
}

/// Columns participating in the null space of `x` (those with a
/// non-negligible loading on some null direction of `x'x`). Empty when `x`
/// has full column rank.
pub fn dependent_columns(x: &DMatrix<f64>, rtol: f64) -> Vec<usize> {
    let k = x.ncols();
    if k == 0 {
        return vec![];
    }
    // Scale columns so the test is unit-free.
    let mut xs = x.clone();
    for j in 0..k {
        let norm = xs.column(j).norm();
        if norm > 0.0 {
            xs.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    let svd = xs.svd(false, true);
    let vt = svd.v_t.as_ref().expect("v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let mut cols = vec![false; k];
    let mut any = false;
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s <= rtol.sqrt() * smax.max(1e-300) || s == 0.0 {
            any = true;
            for c in 0..k {
                if vt[(j, c)].abs() > 1e-6 {
                    cols[c] = true;
                }
            }
        }
    }
    // Columns that are identically zero are dependent on their own.
    for j in 0..k {
        if x.column(j).iter().all(|&v| v == 0.0) {
            cols[j] = true;
            any = true;
        }
    }
    if x.nrows() < k {
        any = true;
    }
    if !any {
        return vec![];
    }
    (0..k).filter(|&j| cols[j]).collect()
}

/// Solve a small dense system, returning None when singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().lu().solve(b)
}

/// Quadratic form a' M a.
pub fn quad(a: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (a.transpose() * m * a)[(0, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinv_of_rank_one() {
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let a = &v * v.transpose();
        let (p, r) = pinv_sym(&a, PINV_RTOL);
        assert_eq!(r, 1);
        let back = &a * &p * &a;
        assert_abs_diff_eq!((back - a).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lstsq_recovers_exact_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let (b, r, _) = lstsq_svd(&x, &y, PINV_RTOL);
        assert_eq!(r, 2);
        assert_abs_diff_eq!(b[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn finds_duplicated_columns() {
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 0.1, 0.1],
        );
        assert_eq!(dependent_columns(&x, PINV_RTOL), vec![1, 2]);
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        assert!(dependent_columns(&y, PINV_RTOL).is_empty());
    }
}
