//! Dense helpers. Matrices are nalgebra; SVDs go through faer, whose
//! decomposition stays accurate on the rank-deficient systems used here.

use nalgebra::{DMatrix, DVector};

/// Default relative threshold for rank decisions.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Full SVD `m = U diag(s) Vᵀ` with `U` square in the row count and `V` in the column count.
struct Svd {
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn full_svd(m: &DMatrix<f64>) -> Svd {
    let svd = to_faer(m).svd().expect("SVD did not converge");
    let (u, v) = (svd.U(), svd.V());
    Svd {
        u: DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        s: svd.S().column_vector().iter().copied().collect(),
        v: DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    let sv = to_faer(m).singular_values().expect("SVD did not converge");
    DVector::from_vec(sv)
}

/// Counts singular values above `rel_tol` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let top = sv.iter().cloned().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Moore-Penrose pseudoinverse, zeroing singular values below `rel_tol * sigma_max`.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if m.is_empty() {
        return DMatrix::zeros(cols, rows);
    }
    let svd = full_svd(m);
    let top = svd.s.iter().cloned().fold(0.0_f64, f64::max);
    let mut p = DMatrix::zeros(cols, rows);
    for (i, &s) in svd.s.iter().enumerate() {
        if top > 0.0 && s > rel_tol * top {
            p += svd.v.column(i) * svd.u.column(i).transpose() / s;
        }
    }
    p
}

/// Ratio of extreme singular values; infinite for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    if m.is_empty() {
        return DMatrix::identity(cols, cols);
    }
    let svd = full_svd(m);
    let top = svd.s.iter().cloned().fold(0.0_f64, f64::max);
    // right singular vectors past the singular-value list span the kernel too
    let basis: Vec<DVector<f64>> = (0..cols)
        .filter(|&i| top == 0.0 || svd.s.get(i).is_none_or(|&s| s <= rel_tol * top))
        .map(|i| svd.v.column(i).into_owned())
        .collect();
    if basis.is_empty() {
        DMatrix::zeros(cols, 0)
    } else {
        DMatrix::from_columns(&basis)
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_trivial_matrices() {
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3), DEFAULT_REL_TOL), 0);
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3), DEFAULT_REL_TOL), 3);
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert_eq!(numerical_rank(&m, DEFAULT_REL_TOL), 1);
    }

    #[test]
    fn pseudo_inverse_satisfies_penrose_identity() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let p = pseudo_inverse(&m, DEFAULT_REL_TOL);
        assert!(max_abs(&(&m * &p * &m - &m)) < 1e-12);
        assert!((p[(1, 1)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let n = null_space(&m, DEFAULT_REL_TOL);
        assert_eq!(n.ncols(), 2);
        assert!(max_abs(&(&m * &n)) < 1e-12);
    }

    #[test]
    fn rank_deficient_system_is_resolved_accurately() {
        // a 6x4 system of rank 2 on which a plain Golub-Kahan sweep loses four digits
        let v = [
            3.006938331691182e-5, 0.0056018844877400355, -0.841584238010096, -0.5126008975355582, 0.0, 1.0,
            0.21525519302797963, 0.11335924388597407, -2.0589898203966213, 0.6315620259092722, 0.0, 1.0,
            -0.2751598445740796, -0.13217821273750152, 0.7150079097603345, -1.975543936545559, 0.0, 1.0,
            -0.022347358724609166, -0.0056018844877400355, -0.7150079097603345, -0.6315620259092722, 0.0, 1.0,
        ];
        let m = DMatrix::from_column_slice(6, 4, &v);
        assert_eq!(numerical_rank(&m, DEFAULT_REL_TOL), 2);
        let p = pseudo_inverse(&m, DEFAULT_REL_TOL);
        assert!(max_abs(&(&m * &p * &m - &m)) < 1e-12);
        let n = null_space(&m, DEFAULT_REL_TOL);
        assert_eq!(n.ncols(), 2);
        assert!(max_abs(&(&m * &n)) < 1e-12);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]);
        let n = null_space(&m, DEFAULT_REL_TOL);
        assert_eq!(n.ncols(), 2);
        assert!(max_abs(&(&m * &n)) < 1e-12);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [-1000.0, -1000.0];
        assert!((log_sum_exp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
