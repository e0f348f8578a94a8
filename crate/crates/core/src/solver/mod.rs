//! Alternating solver for the three SCoS formulations.
//!
//! The data term is `f = Σ_k ½‖U_kU_kᵀ − Σ_r C(k,r) G_rG_rᵀ‖_F²`. On top of
//! it, the assignment matrix `C ≥ 0` carries one of three orthogonality
//! regularizers ([`Formulation`]). Each outer iteration solves one subproblem
//! at fixed `(ρ, Λ)` by sweeping the bases `G_1..G_R` and then `C`, followed by
//! a multiplier step and `ρ ← αρ`.

mod fit;
mod grams;
mod gupdate;
mod nmls;
mod regularizer;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use fit::{fit, FitTrace, TraceEvent, TraceRow};
pub(crate) use fit::{fit_with, seed_basis, FitExtras};
pub use grams::{gram_btb, gram_pb, objective};
pub use gupdate::{grad_g, update_g_eig, update_g_orthiter, DEAD_CLUSTER};
pub use nmls::update_c;
pub use regularizer::{
    constraint_violation, dual_update, reg_value_and_grad, SpatialMix, ZERO_COLUMN,
};
pub(crate) use regularizer::Reg;

use crate::error::{Result, ScosError};
use crate::linalg;
use crate::subspace::SubspaceBasis;

/// Which orthogonality regularizer acts on `C`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    /// `(ρ/2)·tr(Q CᵀC)` with orthonormal bases.
    Penalty,
    /// `⟨Λ, CᵀC⟩ + (ρ/2)‖(CᵀC)∘Q‖_F²` with orthonormal bases.
    #[serde(rename = "auglag")]
    AugLag,
    /// `⟨Λ, Ψ⟩ + (ρ/2)‖Ψ∘Q‖_F²`, `Ψ = sqrt(C_normᵀC_norm + ε)`, unconstrained bases.
    #[serde(rename = "auglag-psi")]
    AugLagPsi,
}

impl std::str::FromStr for Formulation {
    type Err = ScosError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "penalty" => Ok(Self::Penalty),
            "auglag" => Ok(Self::AugLag),
            "auglag-psi" => Ok(Self::AugLagPsi),
            _ => Err(ScosError::InvalidArgument(format!("unknown formulation {s:?}"))),
        }
    }
}

/// How orthonormal bases are updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GUpdate {
    /// Dense eigendecomposition of `W_r` (forms an `N×N` matrix).
    Eigen,
    /// Matrix-free orthogonal iteration.
    OrthIter,
}

/// Choice of the views whose leading directions seed the bases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// `R` distinct views drawn uniformly at random.
    RandomViews,
    /// First view at random, then repeatedly the view farthest (in chordal
    /// distance) from those already chosen.
    SpreadViews,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub formulation: Formulation,
    pub rho0: f64,
    pub alpha: f64,
    pub epsilon_psi: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol_rel: f64,
    pub orthiter_steps: usize,
    pub seed: u64,
    pub g_update: GUpdate,
    /// Maximum factor sweeps per subproblem.
    pub rounds_per_outer: usize,
    /// Stop only once `‖(C_normᵀC_norm)∘Q‖_F` is at most this. Infinite
    /// by default, leaving the relative-change test alone.
    pub violation_tol: f64,
    /// Gradient steps per basis update under AugLagPsi.
    pub grad_steps: usize,
    pub init: InitStrategy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            formulation: Formulation::Penalty,
            rho0: 1e-3,
            alpha: 1.05,
            epsilon_psi: 1e-8,
            max_outer: 200,
            max_inner: 300,
            tol_rel: 1e-6,
            orthiter_steps: 50,
            seed: 0,
            g_update: GUpdate::OrthIter,
            rounds_per_outer: 3,
            violation_tol: f64::INFINITY,
            grad_steps: 10,
            init: InitStrategy::SpreadViews,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ScosError::InvalidArgument(m));
        if !(1e-6..=1.0).contains(&self.rho0) {
            return bad(format!("rho0 = {} outside [1e-6, 1]", self.rho0));
        }
        if !(1.01..=1.5).contains(&self.alpha) {
            return bad(format!("alpha = {} outside [1.01, 1.5]", self.alpha));
        }
        if !(self.epsilon_psi > 0.0 && self.epsilon_psi.is_finite()) {
            return bad(format!("epsilon_psi = {} must be positive", self.epsilon_psi));
        }
        if !(self.tol_rel > 0.0 && self.tol_rel < 1.0) {
            return bad(format!("tol_rel = {} outside (0, 1)", self.tol_rel));
        }
        if !(self.violation_tol >= 0.0) {
            return bad(format!("violation_tol = {} must be nonnegative", self.violation_tol));
        }
        for (name, v) in [
            ("max_outer", self.max_outer),
            ("max_inner", self.max_inner),
            ("orthiter_steps", self.orthiter_steps),
            ("rounds_per_outer", self.rounds_per_outer),
            ("grad_steps", self.grad_steps),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// Multipliers and penalty parameters of the current subproblem.
#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    /// `R×R`, symmetric with zero diagonal.
    pub lambda: DMatrix<f64>,
    pub rho: f64,
    /// `K×R` multiplier of the spatial smoothness constraint.
    pub lambda_h: Option<DMatrix<f64>>,
    pub nu: Option<f64>,
}

impl DualState {
    pub fn new(n_clusters: usize, rho: f64) -> Self {
        Self {
            lambda: DMatrix::zeros(n_clusters, n_clusters),
            rho,
            lambda_h: None,
            nu: None,
        }
    }

    /// Dual state with the spatial smoothness multiplier enabled.
    pub fn with_spatial(n_views: usize, n_clusters: usize, rho: f64, nu: f64) -> Self {
        Self {
            lambda_h: Some(DMatrix::zeros(n_views, n_clusters)),
            nu: Some(nu),
            ..Self::new(n_clusters, rho)
        }
    }
}

/// The solver iterate: bases, assignment and formulation.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub bases: Vec<SubspaceBasis>,
    /// `K×R`, nonnegative.
    pub assign: DMatrix<f64>,
    pub formulation: Formulation,
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.bases.len()
    }

    /// Row-argmax of `C`; ties go to the lowest cluster index.
    pub fn labels(&self) -> Vec<usize> {
        labels_of(&self.assign)
    }

    /// Orthonormal bases of the estimated subspaces. Orthonormal bases pass
    /// through; an unconstrained `G_r` is replaced by its left singular
    /// vectors whose squared singular values exceed half the largest one.
    pub fn subspaces(&self) -> Vec<SubspaceBasis> {
        self.bases.iter().map(extract_subspace).collect()
    }

    /// Copy of the model with every basis replaced by [`Self::subspaces`].
    pub fn orthonormalized(&self) -> ClusterModel {
        ClusterModel {
            bases: self.subspaces(),
            assign: self.assign.clone(),
            formulation: self.formulation,
        }
    }

    /// Reorders clusters so that new cluster `i` is old cluster `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> ClusterModel {
        ClusterModel {
            bases: perm.iter().map(|&p| self.bases[p].clone()).collect(),
            assign: linalg::select_columns(&self.assign, perm),
            formulation: self.formulation,
        }
    }
}

pub(crate) fn labels_of(c: &DMatrix<f64>) -> Vec<usize> {
    c.row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn extract_subspace(b: &SubspaceBasis) -> SubspaceBasis {
    if b.is_orthonormal() {
        return b.clone();
    }
    let g = b.data();
    match linalg::thin_svd(g) {
        Ok(svd) => {
            let top = svd.singular_values.first().copied().unwrap_or(0.0);
            let keep = svd
                .singular_values
                .iter()
                .take_while(|&&s| top > 0.0 && s * s > 0.5 * top * top)
                .count()
                .max(1);
            let mut u = svd.u.columns(0, keep).into_owned();
            linalg::fix_signs(&mut u);
            SubspaceBasis::orthonormal_unchecked(u)
        }
        Err(_) => SubspaceBasis::orthonormal_unchecked(linalg::orthonormalize(
            &g.columns(0, 1).into_owned(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_to_lowest_index() {
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(labels_of(&c), vec![0, 1, 0]);
    }

    #[test]
    fn default_config_is_valid() {
        SolverConfig::default().validate().unwrap();
        let mut c = SolverConfig::default();
        c.alpha = 2.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn psi_extraction_keeps_dominant_directions() {
        let mut g = DMatrix::zeros(6, 3);
        g[(0, 0)] = 3.0;
        g[(1, 1)] = 2.5;
        g[(2, 2)] = 0.1;
        let b = extract_subspace(&SubspaceBasis::unconstrained(g));
        assert_eq!(b.data().ncols(), 2);
        assert!(b.is_orthonormal());
    }

    #[test]
    fn formulation_names_roundtrip() {
        for (s, f) in [
            ("penalty", Formulation::Penalty),
            ("auglag", Formulation::AugLag),
            ("auglag-psi", Formulation::AugLagPsi),
        ] {
            assert_eq!(s.parse::<Formulation>().unwrap(), f);
        }
    }
}
