//! Dense helpers shared by the numerical modules.
//!
//! Singular value decompositions go through `faer`: nalgebra's bidiagonal SVD
//! can return factors that do not reproduce rank-deficient inputs.

use faer::Mat;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, ScosError};

fn to_faer(x: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)])
}

/// Thin SVD with singular values sorted in non-increasing order.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ScosError::NonFiniteValue("svd input"));
    }
    Ok(())
}

pub(crate) fn thin_svd(x: &DMatrix<f64>) -> Result<ThinSvd> {
    check_finite(x)?;
    let k = x.nrows().min(x.ncols());
    if k == 0 {
        return Ok(ThinSvd {
            u: DMatrix::zeros(x.nrows(), 0),
            singular_values: Vec::new(),
        });
    }
    let svd = to_faer(x)
        .thin_svd()
        .map_err(|_| ScosError::NonFiniteValue("svd"))?;
    let s = svd.S().column_vector();
    let u = svd.U();
    let values: Vec<f64> = (0..k).map(|i| s[i]).collect();
    let order = descending_order(&values);
    Ok(ThinSvd {
        u: DMatrix::from_fn(x.nrows(), k, |i, j| u[(i, order[j])]),
        singular_values: order.iter().map(|&i| values[i]).collect(),
    })
}

/// Singular values in non-increasing order.
pub(crate) fn singular_values(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(x)?;
    if x.nrows().min(x.ncols()) == 0 {
        return Ok(Vec::new());
    }
    let mut values = to_faer(x)
        .singular_values()
        .map_err(|_| ScosError::NonFiniteValue("svd"))?;
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Symmetric eigendecomposition, eigenpairs sorted by non-increasing eigenvalue.
pub(crate) fn sym_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let order = descending_order(eig.eigenvalues.as_slice());
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (values, select_columns(&eig.eigenvectors, &order))
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

pub(crate) fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Orthonormal basis of the column space of a full-column-rank matrix (thin QR).
pub(crate) fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let q = a.clone().qr().q();
    q.columns(0, a.ncols()).into_owned()
}

/// Makes the first non-negligible entry of every column nonnegative.
pub(crate) fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let scale = col.amax();
        if scale == 0.0 {
            continue;
        }
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12 * scale) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Largest eigenvalue of a small symmetric PSD matrix by power iteration.
pub(crate) fn power_max_eig(a: &DMatrix<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0)
}
