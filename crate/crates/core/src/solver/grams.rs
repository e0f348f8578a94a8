//! Gram quantities of the projector tensor, computed from thin products only.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::ClusterModel;
use crate::error::{Result, ScosError};
use crate::subspace::ViewBasis;

/// `[BᵀB](r1, r2) = ‖G_r1ᵀ G_r2‖_F²`.
pub fn gram_btb(model: &ClusterModel) -> DMatrix<f64> {
    let bases: Vec<&DMatrix<f64>> = model.bases.iter().map(|b| b.data()).collect();
    btb_of(&bases)
}

pub(crate) fn btb_of(bases: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let r = bases.len();
    let mut out = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in i..r {
            let v = bases[i].tr_mul(bases[j]).norm_squared();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Row `r` of `BᵀB` for a candidate basis `g` in slot `r`.
pub(crate) fn btb_row(bases: &[&DMatrix<f64>], r: usize, g: &DMatrix<f64>) -> Vec<f64> {
    bases
        .iter()
        .enumerate()
        .map(|(s, b)| {
            if s == r {
                g.tr_mul(g).norm_squared()
            } else {
                b.tr_mul(g).norm_squared()
            }
        })
        .collect()
}

/// `[P⁽³⁾B](k, r) = ‖U_kᵀ G_r‖_F²`.
pub fn gram_pb(views: &[ViewBasis], model: &ClusterModel) -> Result<DMatrix<f64>> {
    check_dims(views, model)?;
    let stack = Stack::new(views);
    let mut out = DMatrix::zeros(views.len(), model.bases.len());
    for (r, b) in model.bases.iter().enumerate() {
        for (k, t) in stack.cross_all(b.data()).iter().enumerate() {
            out[(k, r)] = t.norm_squared();
        }
    }
    Ok(out)
}

/// Views together with their transposes, so that `U_kᵀA` runs as a plain
/// matrix product.
pub(crate) struct Stack<'a> {
    pub views: &'a [ViewBasis],
    ut: Vec<DMatrix<f64>>,
}

impl<'a> Stack<'a> {
    pub fn new(views: &'a [ViewBasis]) -> Self {
        let ut = views.par_iter().map(|v| v.data().transpose()).collect();
        Self { views, ut }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn u(&self, k: usize) -> &DMatrix<f64> {
        self.views[k].data()
    }

    /// `U_kᵀ a`.
    pub fn cross(&self, k: usize, a: &DMatrix<f64>) -> DMatrix<f64> {
        &self.ut[k] * a
    }

    /// `U_kᵀ a` for every view.
    pub fn cross_all(&self, a: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        self.ut.par_iter().map(|ut| ut * a).collect()
    }
}

pub(crate) fn check_dims(views: &[ViewBasis], model: &ClusterModel) -> Result<()> {
    let r = model.bases.len();
    if model.assign.nrows() != views.len() || model.assign.ncols() != r {
        return Err(ScosError::DimensionMismatch(format!(
            "assignment is {}x{}, expected {}x{r}",
            model.assign.nrows(),
            model.assign.ncols(),
            views.len()
        )));
    }
    let n = views.first().map(|v| v.n_ambient());
    for v in views {
        if Some(v.n_ambient()) != n {
            return Err(ScosError::DimensionMismatch(
                "views have different ambient dimensions".into(),
            ));
        }
    }
    if let Some(n) = n {
        for b in &model.bases {
            if b.data().nrows() != n {
                return Err(ScosError::DimensionMismatch(format!(
                    "basis has {} rows, views have {n}",
                    b.data().nrows()
                )));
            }
        }
    }
    Ok(())
}

/// Data term from its Gram quantities:
/// `½ Σ_k M_k − ⟨C, PB⟩ + ½ ⟨CᵀC, BᵀB⟩`.
pub(crate) fn data_from_grams(
    half_sum_m: f64,
    c: &DMatrix<f64>,
    pb: &DMatrix<f64>,
    btb: &DMatrix<f64>,
) -> f64 {
    let ctc = c.tr_mul(c);
    half_sum_m - c.dot(pb) + 0.5 * ctc.dot(btb)
}

pub(crate) fn half_sum_m(views: &[ViewBasis]) -> f64 {
    0.5 * views.iter().map(|v| v.n_cols() as f64).sum::<f64>()
}

/// `Σ_k ½‖U_kU_kᵀ − Σ_r C(k,r) G_rG_rᵀ‖_F²`, never forming an `N×N` array.
pub fn objective(views: &[ViewBasis], model: &ClusterModel) -> Result<f64> {
    let pb = gram_pb(views, model)?;
    let btb = gram_btb(model);
    Ok(data_from_grams(half_sum_m(views), &model.assign, &pb, &btb))
}
