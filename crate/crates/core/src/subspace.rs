//! Orthonormal bases and subspace geometry.
//!
//! Distances are computed from the small cross-Gram matrix `AᵀB`, never from
//! `N×N` projectors.

use nalgebra::DMatrix;

use crate::error::{Result, ScosError};
use crate::linalg;

/// Default relative singular-value threshold for basis extraction.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const ORTHO_TOL: f64 = 1e-10;

/// Anything backed by an `N×p` basis matrix.
pub trait Basis {
    fn matrix(&self) -> &DMatrix<f64>;

    fn ambient_dim(&self) -> usize {
        self.matrix().nrows()
    }

    fn dim(&self) -> usize {
        self.matrix().ncols()
    }
}

impl Basis for DMatrix<f64> {
    fn matrix(&self) -> &DMatrix<f64> {
        self
    }
}

/// Orthonormal basis `U_k` of one view's column space.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBasis {
    data: DMatrix<f64>,
}

impl ViewBasis {
    /// Wraps a matrix that is already columnwise orthonormal and tall.
    pub fn from_orthonormal(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() <= data.ncols() {
            return Err(ScosError::DimensionMismatch(format!(
                "view basis must be tall with at least one column, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        let err = orthonormality_error(&data);
        if err > ORTHO_TOL {
            return Err(ScosError::InvalidArgument(format!(
                "view basis is not orthonormal (error {err:e})"
            )));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn n_ambient(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }
}

impl Basis for ViewBasis {
    fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Basis of a cluster subspace. Orthonormal for the orthogonality-constrained
/// formulations; an arbitrary `N×L` factor for the scale-invariant one.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceBasis {
    data: DMatrix<f64>,
    orthonormal: bool,
}

impl SubspaceBasis {
    pub fn orthonormal(data: DMatrix<f64>) -> Result<Self> {
        let err = orthonormality_error(&data);
        if err > ORTHO_TOL {
            return Err(ScosError::InvalidArgument(format!(
                "subspace basis is not orthonormal (error {err:e})"
            )));
        }
        Ok(Self {
            data,
            orthonormal: true,
        })
    }

    /// Skips the orthonormality check; the caller guarantees it.
    pub(crate) fn orthonormal_unchecked(data: DMatrix<f64>) -> Self {
        Self {
            data,
            orthonormal: true,
        }
    }

    pub fn unconstrained(data: DMatrix<f64>) -> Self {
        Self {
            data,
            orthonormal: false,
        }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }
}

impl Basis for SubspaceBasis {
    fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }
}

impl From<ViewBasis> for SubspaceBasis {
    fn from(v: ViewBasis) -> Self {
        Self::orthonormal_unchecked(v.data)
    }
}

/// `‖AᵀA − I‖_F`.
pub fn orthonormality_error(a: &DMatrix<f64>) -> f64 {
    let mut gram = a.tr_mul(a);
    for i in 0..gram.nrows() {
        gram[(i, i)] -= 1.0;
    }
    gram.norm()
}

/// Orthonormal basis of `col(X)` with the default rank tolerance.
pub fn orthonormal_basis(x: &DMatrix<f64>) -> Result<ViewBasis> {
    orthonormal_basis_with_tol(x, DEFAULT_RANK_TOL)
}

/// Orthonormal basis of `col(X)` from the left singular vectors of `X`,
/// ordered by decreasing singular value, with the first non-negligible entry of
/// every column made nonnegative.
pub fn orthonormal_basis_with_tol(x: &DMatrix<f64>, rank_tol: f64) -> Result<ViewBasis> {
    if x.nrows() <= x.ncols() {
        return Err(ScosError::DimensionMismatch(format!(
            "view must be tall, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let svd = linalg::thin_svd(x)?;
    let largest = svd.singular_values[0];
    let smallest = *svd.singular_values.last().unwrap();
    let ratio = if largest > 0.0 { smallest / largest } else { 0.0 };
    if ratio < rank_tol {
        return Err(ScosError::RankDeficient { ratio, tol: rank_tol });
    }
    let mut u = svd.u;
    linalg::fix_signs(&mut u);
    Ok(ViewBasis { data: u })
}

/// Basis of `col(X)` truncated to its numerical rank (singular values above
/// `rank_tol · σ_max`). Returns the basis and the number of dropped directions.
pub fn truncated_basis(x: &DMatrix<f64>, rank_tol: f64) -> Result<(ViewBasis, usize)> {
    if x.nrows() <= x.ncols() {
        return Err(ScosError::DimensionMismatch(format!(
            "view must be tall, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let svd = linalg::thin_svd(x)?;
    let largest = svd.singular_values[0];
    let rank = svd
        .singular_values
        .iter()
        .take_while(|&&s| largest > 0.0 && s > rank_tol * largest)
        .count();
    if rank == 0 {
        return Err(ScosError::RankDeficient {
            ratio: 0.0,
            tol: rank_tol,
        });
    }
    let mut u = svd.u.columns(0, rank).into_owned();
    linalg::fix_signs(&mut u);
    Ok((ViewBasis { data: u }, x.ncols() - rank))
}

fn check_ambient(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(ScosError::DimensionMismatch(format!(
            "ambient dimensions differ: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok(())
}

/// Principal angles between `col(A)` and `col(B)` in radians, non-decreasing.
///
/// The cosines are the singular values of `AᵀB`, clamped to `[0, 1]`.
pub fn principal_angles(a: &impl Basis, b: &impl Basis) -> Result<Vec<f64>> {
    let (a, b) = (a.matrix(), b.matrix());
    check_ambient(a, b)?;
    let cross = a.tr_mul(b);
    let mut cosines: Vec<f64> = linalg::singular_values(&cross)?
        .into_iter()
        .map(|c| c.clamp(0.0, 1.0))
        .collect();
    cosines.truncate(a.ncols().min(b.ncols()));
    Ok(cosines.into_iter().map(f64::acos).collect())
}

/// Squared chordal distance `(p₂−p₁)/2 + Σ sin²θ_i`, equal to `½‖P_A − P_B‖_F²`.
///
/// Evaluated as `(p₁+p₂)/2 − ‖AᵀB‖_F²`, which equals the angle form because the
/// squared cosines sum to `‖AᵀB‖_F²` and avoids the `arccos` round trip.
pub fn chordal_sq_distance(a: &impl Basis, b: &impl Basis) -> Result<f64> {
    let (a, b) = (a.matrix(), b.matrix());
    check_ambient(a, b)?;
    let cross = a.tr_mul(b).norm_squared();
    let d = 0.5 * (a.ncols() + b.ncols()) as f64 - cross;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn unit(n: usize, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(n, idx.len(), |i, j| if i == idx[j] { 1.0 } else { 0.0 })
    }

    #[test]
    fn identity_columns_are_returned_up_to_sign() {
        let x = unit(6, &[0, 1, 2]);
        let u = orthonormal_basis(&x).unwrap();
        assert!(chordal_sq_distance(&u, &x).unwrap() < 1e-14);
        for j in 0..3 {
            assert!((u.data()[(j, j)].abs() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn duplicate_columns_are_rank_deficient() {
        let mut x = gaussian(10, 3, 1);
        let first = x.column(0).into_owned();
        x.set_column(2, &first);
        assert!(matches!(
            orthonormal_basis(&x),
            Err(ScosError::RankDeficient { .. })
        ));
    }

    #[test]
    fn gaussian_view_basis_is_orthonormal_and_spans_input() {
        let x = gaussian(50, 8, 7);
        let u = orthonormal_basis(&x).unwrap();
        assert!(orthonormality_error(u.data()) < 1e-10);
        let recon = u.data() * u.data().tr_mul(&x);
        assert!((recon - &x).norm() / x.norm() < 1e-10);
    }

    #[test]
    fn wide_input_is_rejected() {
        assert!(matches!(
            orthonormal_basis(&gaussian(3, 4, 2)),
            Err(ScosError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn truncated_basis_keeps_numerical_rank() {
        let col = gaussian(12, 1, 3);
        let x = DMatrix::from_fn(12, 4, |i, j| col[(i, 0)] * (j + 1) as f64);
        let (u, dropped) = truncated_basis(&x, 1e-10).unwrap();
        assert_eq!(u.n_cols(), 1);
        assert_eq!(dropped, 3);
        assert!(matches!(
            truncated_basis(&DMatrix::zeros(5, 2), 1e-10),
            Err(ScosError::RankDeficient { .. })
        ));
    }

    #[test]
    fn principal_angle_examples() {
        let e1 = unit(3, &[0]);
        let e2 = unit(3, &[1]);
        let s = 1.0 / 2f64.sqrt();
        let diag = DMatrix::from_column_slice(3, 1, &[s, s, 0.0]);
        assert_eq!(principal_angles(&e1, &e1).unwrap(), vec![0.0]);
        let right = principal_angles(&e1, &e2).unwrap();
        assert!((right[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let quarter = principal_angles(&e1, &diag).unwrap();
        assert!((quarter[0] - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn chordal_examples() {
        let e1 = unit(3, &[0]);
        let e2 = unit(3, &[1]);
        let e12 = unit(3, &[0, 1]);
        assert_eq!(chordal_sq_distance(&e1, &e1).unwrap(), 0.0);
        assert!((chordal_sq_distance(&e1, &e2).unwrap() - 1.0).abs() < 1e-15);
        assert!((chordal_sq_distance(&e1, &e12).unwrap() - 0.5).abs() < 1e-15);
        assert!((chordal_sq_distance(&e12, &e1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ambient_mismatch_is_reported() {
        let a = unit(3, &[0]);
        let b = unit(4, &[0]);
        assert!(matches!(
            principal_angles(&a, &b),
            Err(ScosError::DimensionMismatch(_))
        ));
        assert!(matches!(
            chordal_sq_distance(&a, &b),
            Err(ScosError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn angles_are_sorted_and_bounded() {
        let a = orthonormal_basis(&gaussian(20, 5, 11)).unwrap();
        let b = orthonormal_basis(&gaussian(20, 3, 12)).unwrap();
        let angles = principal_angles(&a, &b).unwrap();
        assert_eq!(angles.len(), 3);
        assert!(angles.windows(2).all(|w| w[0] <= w[1]));
        assert!(angles
            .iter()
            .all(|&t| (0.0..=std::f64::consts::FRAC_PI_2).contains(&t)));
    }
}
