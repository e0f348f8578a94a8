//! Orthogonality regularizers on the assignment matrix and their dual updates.
//!
//! All three formulations are written in terms of `S = YᵀY`, where `Y` is `C`
//! (Penalty, AugLag) or its column-normalized version `C_norm` (AugLagPsi).
//! For hyperspectral data `Y = W_normᵀ C_norm` under every formulation.

use nalgebra::DMatrix;

use super::{DualState, Formulation, SolverConfig};

/// Norm below which a column of `C` counts as zero when normalizing.
pub const ZERO_COLUMN: f64 = 1e-14;

/// Sparse `K×K` column-stochastic spatial averaging matrix `W_norm`, stored by
/// columns: `cols[j]` lists `(i, W_norm(i, j))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMix {
    pub cols: Vec<Vec<(usize, f64)>>,
}

impl SpatialMix {
    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    /// `W_normᵀ X`.
    pub fn tr_apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, w) in col {
                for c in 0..x.ncols() {
                    out[(j, c)] += w * x[(i, c)];
                }
            }
        }
        out
    }

    /// `W_norm X`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, w) in col {
                for c in 0..x.ncols() {
                    out[(i, c)] += w * x[(j, c)];
                }
            }
        }
        out
    }
}

/// `Q = 11ᵀ − I`.
pub(crate) fn off_diagonal_mask(r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, r, |i, j| if i == j { 0.0 } else { 1.0 })
}

/// Column norms of `c` floored at [`ZERO_COLUMN`].
pub(crate) fn column_scales(c: &DMatrix<f64>) -> Vec<f64> {
    c.column_iter().map(|col| col.norm().max(ZERO_COLUMN)).collect()
}

pub(crate) fn normalize_columns(c: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = c.clone();
    for (j, s) in column_scales(c).into_iter().enumerate() {
        out.column_mut(j).unscale_mut(s);
    }
    out
}

/// Regularizer setup: formulation, `ε`, and optional spatial mixing.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Reg<'a> {
    pub formulation: Formulation,
    pub epsilon: f64,
    pub spatial: Option<&'a SpatialMix>,
}

impl Reg<'_> {
    fn mix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self.spatial {
            Some(w) => w.tr_apply(x),
            None => x.clone(),
        }
    }

    fn unmix(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        match self.spatial {
            Some(w) => w.apply(g),
            None => g.clone(),
        }
    }

    fn psi(&self) -> bool {
        self.formulation == Formulation::AugLagPsi
    }

    /// Whether `X = C_norm`. Spatially mixed terms always normalize.
    fn normalized(&self) -> bool {
        self.psi() || self.spatial.is_some()
    }

    /// `S`-matrix of the formulation at `c` (`Ψ` for AugLagPsi).
    pub fn constraint_matrix(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let x = if self.normalized() { normalize_columns(c) } else { c.clone() };
        let y = self.mix(&x);
        let s = y.tr_mul(&y);
        if self.psi() {
            s.map(|v| (v + self.epsilon).sqrt())
        } else {
            s
        }
    }

    /// Value of the regularizer at `c`.
    pub fn value(&self, c: &DMatrix<f64>, dual: &DualState) -> f64 {
        self.eval(c, dual, false).0
    }

    pub fn value_and_grad(&self, c: &DMatrix<f64>, dual: &DualState) -> (f64, DMatrix<f64>) {
        let (v, g) = self.eval(c, dual, true);
        (v, g.expect("gradient requested"))
    }

    fn eval(
        &self,
        c: &DMatrix<f64>,
        dual: &DualState,
        want_grad: bool,
    ) -> (f64, Option<DMatrix<f64>>) {
        let r = c.ncols();
        let q = off_diagonal_mask(r);
        let rho = dual.rho;
        let scales = column_scales(c);
        let x = if self.normalized() { normalize_columns(c) } else { c.clone() };
        let y = self.mix(&x);
        let s = y.tr_mul(&y);

        let (mut value, grad_s) = match self.formulation {
            Formulation::Penalty => (0.5 * rho * s.dot(&q), &q * (0.5 * rho)),
            Formulation::AugLag => {
                let sq = s.component_mul(&q);
                (
                    dual.lambda.dot(&s) + 0.5 * rho * sq.norm_squared(),
                    &dual.lambda + sq * rho,
                )
            }
            Formulation::AugLagPsi => {
                let psi = s.map(|v| (v + self.epsilon).sqrt());
                let pq = psi.component_mul(&q);
                let value = dual.lambda.dot(&psi) + 0.5 * rho * pq.norm_squared();
                let num = &dual.lambda + pq * rho;
                (value, num.component_div(&(psi * 2.0)))
            }
        };

        let h = match (&dual.lambda_h, dual.nu, self.spatial) {
            (Some(lh), Some(nu), Some(w)) if self.psi() => {
                let d = &x - w.tr_apply(&x);
                value += lh.dot(&d) + 0.5 * nu * d.norm_squared();
                Some((lh + d * nu, w))
            }
            _ => None,
        };

        if !want_grad {
            return (value, None);
        }

        // ∂/∂Y of ⟨G_S, YᵀY⟩-type terms with symmetric G_S, pulled back to X.
        let mut gx = self.unmix(&(&y * (grad_s * 2.0)));
        if let Some((m, w)) = h {
            gx += &m - w.apply(&m);
        }
        if !self.normalized() {
            return (value, Some(gx));
        }
        let mut gc = gx;
        for j in 0..r {
            let s_j = scales[j];
            if c.column(j).norm() < ZERO_COLUMN {
                gc.column_mut(j).unscale_mut(s_j);
                continue;
            }
            let n = x.column(j).clone_owned();
            let proj = n.dot(&gc.column(j));
            let mut col = gc.column_mut(j);
            col.axpy(-proj, &n, 1.0);
            col.unscale_mut(s_j);
        }
        (value, Some(gc))
    }

    /// One multiplier step followed by `ρ ← αρ` (and `ν ← αν`).
    pub fn dual_update(&self, c: &DMatrix<f64>, dual: &DualState, alpha: f64) -> DualState {
        let q = off_diagonal_mask(c.ncols());
        let mut next = dual.clone();
        match self.formulation {
            Formulation::Penalty => {}
            Formulation::AugLag | Formulation::AugLagPsi => {
                let s = self.constraint_matrix(c);
                next.lambda += s.component_mul(&q) * dual.rho;
            }
        }
        if let (Some(lh), Some(nu), Some(w)) = (&mut next.lambda_h, dual.nu, self.spatial) {
            if self.psi() {
                let x = normalize_columns(c);
                *lh += (&x - w.tr_apply(&x)) * nu;
            }
        }
        next.rho *= alpha;
        next.nu = dual.nu.map(|nu| nu * alpha);
        next
    }
}

/// Regularizer value and gradient for `formulation` at `c`.
pub fn reg_value_and_grad(
    c: &DMatrix<f64>,
    dual: &DualState,
    formulation: Formulation,
    config: &SolverConfig,
) -> (f64, DMatrix<f64>) {
    Reg {
        formulation,
        epsilon: config.epsilon_psi,
        spatial: None,
    }
    .value_and_grad(c, dual)
}

/// `Λ ← Λ + ρ(CᵀC)∘Q` (AugLag) or `Λ ← Λ + ρΨ(C)∘Q` (AugLagPsi), then `ρ ← αρ`.
pub fn dual_update(
    c: &DMatrix<f64>,
    dual: &DualState,
    formulation: Formulation,
    config: &SolverConfig,
) -> DualState {
    Reg {
        formulation,
        epsilon: config.epsilon_psi,
        spatial: None,
    }
    .dual_update(c, dual, config.alpha)
}

/// `‖(C_normᵀC_norm)∘Q‖_F`.
pub fn constraint_violation(c: &DMatrix<f64>) -> f64 {
    let x = normalize_columns(c);
    x.tr_mul(&x)
        .component_mul(&off_diagonal_mask(c.ncols()))
        .norm()
}
