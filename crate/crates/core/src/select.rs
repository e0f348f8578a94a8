//! Model-order selection: the number of clusters from a sweep of the mean
//! fit score, and per-cluster subspace dimensions from the spectrum of the
//! summed view projectors.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScosError};
use crate::linalg;
use crate::solver::{fit, seed_basis, ClusterModel, SolverConfig};
use crate::subspace::{SubspaceBasis, ViewBasis};

/// Default relative-drop threshold of the cluster-count sweep.
pub const DEFAULT_TAU: f64 = 0.1;

/// Eigenvalues below this fraction of the largest are treated as zero.
const NULL_EIG: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct FitQuality {
    /// `φ_k = 1 − ‖U_kᵀG_{r_k}‖_F² / L_{r_k}`.
    pub phi_per_view: Vec<f64>,
    pub phi_bar: f64,
}

/// Scores every view against the subspace of the cluster it is assigned to.
/// Unconstrained bases are orthonormalized first.
pub fn phi_metrics(views: &[ViewBasis], model: &ClusterModel) -> Result<FitQuality> {
    if model.assign.nrows() != views.len() {
        return Err(ScosError::DimensionMismatch(format!(
            "assignment has {} rows for {} views",
            model.assign.nrows(),
            views.len()
        )));
    }
    let subspaces = model.subspaces();
    let phi_per_view: Vec<f64> = views
        .iter()
        .zip(model.labels())
        .map(|(u, r)| {
            let g = subspaces[r].data();
            let fit = u.data().tr_mul(g).norm_squared() / g.ncols() as f64;
            (1.0 - fit).clamp(0.0, 1.0)
        })
        .collect();
    let phi_bar = if phi_per_view.is_empty() {
        0.0
    } else {
        phi_per_view.iter().sum::<f64>() / phi_per_view.len() as f64
    };
    Ok(FitQuality {
        phi_per_view,
        phi_bar,
    })
}

/// Subspace dimensions used for an `R`-cluster fit in the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DimsRule {
    /// Every cluster gets this dimension.
    Uniform(usize),
    /// Cluster `r` gets entry `r`; needs at least `R_max` entries.
    Explicit(Vec<usize>),
}

impl DimsRule {
    pub fn dims(&self, r: usize) -> Result<Vec<usize>> {
        match self {
            Self::Uniform(l) => Ok(vec![*l; r]),
            Self::Explicit(v) if v.len() >= r => Ok(v[..r].to_vec()),
            Self::Explicit(v) => Err(ScosError::InvalidArgument(format!(
                "{} dimensions given, {r} clusters requested",
                v.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub solver: SolverConfig,
    /// `R*` is the first `R` whose successor lowers `φ̄` by less than this
    /// fraction.
    pub tau: f64,
    /// Seed each `R+1` fit from the `R` fit.
    pub warm_start: bool,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            tau: DEFAULT_TAU,
            warm_start: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClusterCountSelection {
    pub n_clusters: usize,
    /// `φ̄` for `R = 1..=R_max`.
    pub curve: Vec<f64>,
    /// Fitted model for every `R`.
    pub models: Vec<ClusterModel>,
}

impl ClusterCountSelection {
    /// CSV with columns `n_clusters,phi_bar`.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("n_clusters,phi_bar\n");
        for (i, v) in self.curve.iter().enumerate() {
            let _ = writeln!(s, "{},{}", i + 1, crate::io::fmt_f64(*v));
        }
        s
    }
}

/// Sweeps `R = 1..=r_max` and picks the elbow of the `φ̄` curve.
pub fn select_num_clusters(
    views: &[ViewBasis],
    r_max: usize,
    dims_rule: &DimsRule,
    config: &SelectConfig,
) -> Result<ClusterCountSelection> {
    if r_max < 2 {
        return Err(ScosError::InvalidArgument(format!(
            "r_max = {r_max} must be at least 2"
        )));
    }
    if !(config.tau > 0.0 && config.tau < 1.0) {
        return Err(ScosError::InvalidArgument(format!(
            "tau = {} outside (0, 1)",
            config.tau
        )));
    }
    let mut curve = Vec::with_capacity(r_max);
    let mut models: Vec<ClusterModel> = Vec::with_capacity(r_max);
    for r in 1..=r_max {
        let dims = dims_rule.dims(r)?;
        let init = match models.last() {
            Some(prev) if config.warm_start => Some(grow(views, prev, dims[r - 1])?),
            _ => None,
        };
        let (model, _) = fit(views, r, &dims, &config.solver, init.as_ref())?;
        curve.push(phi_metrics(views, &model)?.phi_bar);
        log::debug!("R = {r}: phi_bar = {:.6e}", curve[r - 1]);
        models.push(model);
    }
    Ok(ClusterCountSelection {
        n_clusters: elbow(&curve, config.tau),
        curve,
        models,
    })
}

/// Smallest `R` whose successor's relative drop is below `tau`.
fn elbow(curve: &[f64], tau: f64) -> usize {
    for i in 0..curve.len() - 1 {
        let (cur, next) = (curve[i], curve[i + 1]);
        if cur <= 1e-12 || (cur - next) / cur < tau {
            return i + 1;
        }
    }
    curve.len()
}

/// Adds one cluster, seeded at the worst-fitting view, to a fitted model.
fn grow(views: &[ViewBasis], prev: &ClusterModel, l: usize) -> Result<ClusterModel> {
    let quality = phi_metrics(views, prev)?;
    let mut worst = 0;
    for (k, &p) in quality.phi_per_view.iter().enumerate() {
        if p > quality.phi_per_view[worst] {
            worst = k;
        }
    }
    let r = prev.n_clusters();
    let mut bases = prev.bases.clone();
    bases.push(SubspaceBasis::orthonormal_unchecked(seed_basis(views, worst, l)));
    let mut assign = prev.assign.clone().insert_column(r, 0.0);
    assign[(worst, r)] = 1.0;
    Ok(ClusterModel {
        bases,
        assign,
        formulation: prev.formulation,
    })
}

/// How [`cluster_spectrum_with`] computes the spectrum of `T_r = ŪŪᵀ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumBranch {
    /// SVD of the stack when `N > S²`, else the projector sum.
    Auto,
    /// Thin SVD of the `N×S` stack `Ū`.
    Svd,
    /// Eigendecomposition of the `N×N` matrix `ŪŪᵀ`.
    Projector,
}

/// Leading `min(N, S)` eigenpairs of `Σ_{k∈I} U_kU_kᵀ`, nonincreasing, where
/// `S = Σ_{k∈I} M_k`.
pub fn cluster_spectrum(views: &[ViewBasis], members: &[usize]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    cluster_spectrum_with(views, members, SpectrumBranch::Auto)
}

pub fn cluster_spectrum_with(
    views: &[ViewBasis],
    members: &[usize],
    branch: SpectrumBranch,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let first = members.first().ok_or(ScosError::EmptyCluster(0))?;
    let n = views
        .get(*first)
        .ok_or_else(|| ScosError::InvalidArgument(format!("view {first} out of range")))?
        .n_ambient();
    let mut s = 0;
    for &k in members {
        let v = views
            .get(k)
            .ok_or_else(|| ScosError::InvalidArgument(format!("view {k} out of range")))?;
        if v.n_ambient() != n {
            return Err(ScosError::DimensionMismatch(
                "views have different ambient dimensions".into(),
            ));
        }
        s += v.n_cols();
    }
    let keep = n.min(s);
    let mut stack = DMatrix::zeros(n, s);
    let mut at = 0;
    for &k in members {
        let u = views[k].data();
        stack.columns_mut(at, u.ncols()).copy_from(u);
        at += u.ncols();
    }
    let use_svd = match branch {
        SpectrumBranch::Auto => n > s * s,
        SpectrumBranch::Svd => true,
        SpectrumBranch::Projector => false,
    };
    let (vals, mut vecs) = if use_svd {
        let svd = linalg::thin_svd(&stack)?;
        let vals = svd.singular_values.iter().take(keep).map(|v| v * v).collect();
        (vals, svd.u.columns(0, keep).into_owned())
    } else {
        let t = &stack * stack.transpose();
        let (vals, vecs) = linalg::sym_eigen_desc(&t);
        let vals = vals.iter().take(keep).map(|v| v.max(0.0)).collect();
        (vals, vecs.columns(0, keep).into_owned())
    };
    linalg::fix_signs(&mut vecs);
    Ok((vals, vecs))
}

/// Rule that turns a cluster spectrum into a dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    Aic,
    Mdl,
    EigenGap,
}

impl std::str::FromStr for Criterion {
    type Err = ScosError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Self::Aic),
            "mdl" => Ok(Self::Mdl),
            "eigengap" | "eigen-gap" => Ok(Self::EigenGap),
            _ => Err(ScosError::InvalidArgument(format!("unknown criterion {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DimensionEstimate {
    pub per_cluster_dim: Vec<usize>,
    pub per_cluster_basis: Vec<SubspaceBasis>,
    pub criterion: Criterion,
    pub eigenvalues: Vec<Vec<f64>>,
    /// Set where the spectrum carried no usable structure (e.g. a single
    /// member) and the full numerical rank was returned.
    pub degenerate: Vec<bool>,
}

impl DimensionEstimate {
    /// Long-format CSV with columns `cluster,index,eigenvalue`.
    pub fn spectra_csv(&self) -> String {
        let mut s = String::from("cluster,index,eigenvalue\n");
        for (r, vals) in self.eigenvalues.iter().enumerate() {
            for (i, v) in vals.iter().enumerate() {
                let _ = writeln!(s, "{},{},{}", r + 1, i + 1, crate::io::fmt_f64(*v));
            }
        }
        s
    }
}

/// Dimension and basis of every cluster from the spectrum of its members'
/// summed projectors. `labels` are zero-based.
pub fn estimate_dims(
    views: &[ViewBasis],
    labels: &[usize],
    criterion: Criterion,
) -> Result<DimensionEstimate> {
    if labels.len() != views.len() {
        return Err(ScosError::LengthMismatch {
            left: labels.len(),
            right: views.len(),
        });
    }
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = DimensionEstimate {
        per_cluster_dim: Vec::with_capacity(n_clusters),
        per_cluster_basis: Vec::with_capacity(n_clusters),
        criterion,
        eigenvalues: Vec::with_capacity(n_clusters),
        degenerate: Vec::with_capacity(n_clusters),
    };
    for r in 0..n_clusters {
        let members: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == r).collect();
        if members.is_empty() {
            return Err(ScosError::EmptyCluster(r));
        }
        let (vals, vecs) = cluster_spectrum(views, &members)?;
        let n = views[members[0]].n_ambient();
        let (dim, degenerate) = if members.len() == 1 {
            (views[members[0]].n_cols(), true)
        } else {
            pick_dim(&vals, n, criterion)
        };
        if degenerate {
            log::warn!("cluster {r}: degenerate spectrum, using dimension {dim}");
        }
        let mut basis = vecs.columns(0, dim).into_owned();
        linalg::fix_signs(&mut basis);
        out.per_cluster_dim.push(dim);
        out.per_cluster_basis.push(SubspaceBasis::orthonormal_unchecked(basis));
        out.eigenvalues.push(vals);
        out.degenerate.push(degenerate);
    }
    Ok(out)
}

/// Dimension from a nonincreasing spectrum. `samples` is the sample count
/// used by the information criteria.
pub fn pick_dim(vals: &[f64], samples: usize, criterion: Criterion) -> (usize, bool) {
    let top = vals.first().copied().unwrap_or(0.0);
    let p = vals.iter().take_while(|&&v| v > NULL_EIG * top).count();
    if p <= 1 {
        return (p.max(1), p == 0);
    }
    match criterion {
        Criterion::EigenGap => {
            let mut best = (0.0, p);
            for i in 1..p {
                let gap = vals[i - 1] - vals[i];
                if gap > best.0 {
                    best = (gap, i);
                }
            }
            if best.0 <= 1e-9 * top {
                (p, true)
            } else {
                (best.1, false)
            }
        }
        Criterion::Aic | Criterion::Mdl => {
            let n = samples as f64;
            let pf = p as f64;
            let mut best = (f64::INFINITY, p);
            for k in 1..p {
                let tail = &vals[k..p];
                let m = tail.len() as f64;
                let arith = tail.iter().sum::<f64>() / m;
                let log_geo = tail.iter().map(|v| v.ln()).sum::<f64>() / m;
                // `log(geometric / arithmetic)`, at most zero.
                let ratio = (log_geo - arith.ln()).min(0.0);
                let kf = k as f64;
                let params = kf * (2.0 * pf - kf + 1.0) / 2.0;
                let score = match criterion {
                    Criterion::Aic => -2.0 * n * m * ratio + 2.0 * params,
                    _ => -n * m * ratio + 0.5 * params * n.ln(),
                };
                if score < best.0 {
                    best = (score, k);
                }
            }
            (best.1, false)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Formulation;
    use crate::subspace::orthonormal_basis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn unit_cols(n: usize, idx: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, idx.len());
        for (j, &i) in idx.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }

    fn model(bases: Vec<DMatrix<f64>>, assign: DMatrix<f64>) -> ClusterModel {
        ClusterModel {
            bases: bases.into_iter().map(SubspaceBasis::orthonormal_unchecked).collect(),
            assign,
            formulation: Formulation::Penalty,
        }
    }

    #[test]
    fn phi_zero_for_superset_and_one_for_orthogonal() {
        let views = vec![
            ViewBasis::from_orthonormal(unit_cols(8, &[0, 1, 2])).unwrap(),
            ViewBasis::from_orthonormal(unit_cols(8, &[5, 6])).unwrap(),
        ];
        let m = model(vec![unit_cols(8, &[0, 2])], DMatrix::from_element(2, 1, 1.0));
        let q = phi_metrics(&views, &m).unwrap();
        assert!(q.phi_per_view[0].abs() < 1e-15);
        assert!((q.phi_per_view[1] - 1.0).abs() < 1e-15);
        assert!((q.phi_bar - 0.5).abs() < 1e-15);
    }

    #[test]
    fn phi_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = orthonormal_basis(&gauss(&mut rng, 12, 4)).unwrap();
        let g = orthonormal_basis(&gauss(&mut rng, 12, 3)).unwrap().into_inner();
        let qa = linalg::orthonormalize(&gauss(&mut rng, 4, 4));
        let qb = linalg::orthonormalize(&gauss(&mut rng, 3, 3));
        let a = phi_metrics(
            std::slice::from_ref(&u),
            &model(vec![g.clone()], DMatrix::from_element(1, 1, 1.0)),
        )
        .unwrap();
        let u2 = ViewBasis::from_orthonormal(u.data() * qa).unwrap();
        let b = phi_metrics(&[u2], &model(vec![g * qb], DMatrix::from_element(1, 1, 1.0))).unwrap();
        assert!((a.phi_bar - b.phi_bar).abs() < 1e-10);
    }

    #[test]
    fn single_view_spectrum_is_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = orthonormal_basis(&gauss(&mut rng, 30, 5)).unwrap();
        let (vals, vecs) = cluster_spectrum(&[u], &[0]).unwrap();
        assert_eq!(vals.len(), 5);
        assert!(vals.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert_eq!(vecs.ncols(), 5);
    }

    #[test]
    fn identical_views_double_the_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = orthonormal_basis(&gauss(&mut rng, 30, 4)).unwrap();
        let (vals, _) = cluster_spectrum(&[u.clone(), u], &[0, 1]).unwrap();
        assert!(vals[..4].iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(vals[4..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn branches_agree_on_random_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let views: Vec<ViewBasis> = (0..3)
            .map(|_| orthonormal_basis(&gauss(&mut rng, 40, 5)).unwrap())
            .collect();
        let (a, va) = cluster_spectrum_with(&views, &[0, 1, 2], SpectrumBranch::Svd).unwrap();
        let (b, vb) = cluster_spectrum_with(&views, &[0, 1, 2], SpectrumBranch::Projector).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
            assert!(*x >= -1e-12 && *x <= 3.0 + 1e-12);
        }
        let pa = va.columns(0, 4) * va.columns(0, 4).transpose();
        let pb = vb.columns(0, 4) * vb.columns(0, 4).transpose();
        assert!((pa - pb).norm() < 1e-9);
    }

    #[test]
    fn empty_cluster_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = orthonormal_basis(&gauss(&mut rng, 10, 2)).unwrap();
        assert!(matches!(cluster_spectrum(&[u], &[]), Err(ScosError::EmptyCluster(_))));
    }

    /// Four views sharing five directions, each with four private ones.
    fn shared_cluster() -> Vec<ViewBasis> {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q = linalg::orthonormalize(&gauss(&mut rng, 60, 21));
        (0..4)
            .map(|k| {
                let mut cols: Vec<usize> = (0..5).collect();
                cols.extend(5 + 4 * k..9 + 4 * k);
                ViewBasis::from_orthonormal(linalg::select_columns(&q, &cols)).unwrap()
            })
            .collect()
    }

    #[test]
    fn shared_directions_give_eigenvalue_equal_to_cluster_size() {
        let views = shared_cluster();
        let (vals, _) = cluster_spectrum(&views, &[0, 1, 2, 3]).unwrap();
        assert!(vals[..5].iter().all(|v| (v - 4.0).abs() < 1e-10));
        assert!((vals[5] - 1.0).abs() < 1e-10);
        for c in [Criterion::EigenGap, Criterion::Aic, Criterion::Mdl] {
            let est = estimate_dims(&views, &[0; 4], c).unwrap();
            assert_eq!(est.per_cluster_dim, vec![5], "{c:?}");
            assert!(!est.degenerate[0]);
        }
    }

    #[test]
    fn single_member_is_degenerate() {
        let views = shared_cluster();
        let est = estimate_dims(&views[..2], &[0, 1], Criterion::EigenGap).unwrap();
        assert_eq!(est.per_cluster_dim, vec![9, 9]);
        assert!(est.degenerate.iter().all(|&d| d));
    }

    #[test]
    fn elbow_picks_first_flat_step() {
        assert_eq!(elbow(&[0.6, 0.3, 0.01, 0.0099], 0.1), 3);
        assert_eq!(elbow(&[0.0, 0.0, 0.0], 0.1), 1);
        assert_eq!(elbow(&[0.5, 0.4, 0.3], 0.1), 3);
    }

    #[test]
    fn sweep_needs_two_clusters() {
        let views = shared_cluster();
        assert!(matches!(
            select_num_clusters(&views, 1, &DimsRule::Uniform(2), &SelectConfig::default()),
            Err(ScosError::InvalidArgument(_))
        ));
    }

    #[test]
    fn identical_views_select_one_cluster() {
        let views = vec![shared_cluster()[0].clone(); 6];
        let sel = select_num_clusters(&views, 3, &DimsRule::Uniform(3), &SelectConfig::default()).unwrap();
        assert!(sel.curve[0] < 1e-10);
        assert_eq!(sel.n_clusters, 1);
    }
}
