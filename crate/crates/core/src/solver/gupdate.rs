//! Per-cluster basis updates: dense eigen, matrix-free orthogonal iteration,
//! and gradient steps for unconstrained bases.

use nalgebra::DMatrix;

use super::grams::{btb_row, check_dims, Stack};
use super::ClusterModel;
use crate::error::{Result, ScosError};
use crate::linalg;
use crate::subspace::{SubspaceBasis, ViewBasis};

/// Below this `‖c_r‖₂` a cluster is considered dead.
pub const DEAD_CLUSTER: f64 = 1e-14;

/// Weights of the linear operator `W_r' = Σ_k w_k U_kU_kᵀ − Σ_{s≠r'} β_s G_sG_sᵀ`.
pub(crate) struct Weights {
    pub view: Vec<f64>,
    pub other: Vec<f64>,
}

pub(crate) fn weights(ctc: &DMatrix<f64>, c: &DMatrix<f64>, r: usize) -> Result<Weights> {
    let cn2 = ctc[(r, r)];
    if cn2.sqrt() < DEAD_CLUSTER {
        return Err(ScosError::EmptyCluster(r));
    }
    let view = c.column(r).iter().map(|v| v / cn2).collect();
    let other = (0..c.ncols())
        .map(|s| if s == r { 0.0 } else { ctc[(r, s)] / cn2 })
        .collect();
    Ok(Weights { view, other })
}

/// `W_r' A` without forming `W_r'`, given `cross[k] = U_kᵀA`. Views with
/// zero weight are skipped.
fn apply_w(
    stack: &Stack,
    bases: &[&DMatrix<f64>],
    w: &Weights,
    a: &DMatrix<f64>,
    cross: &[DMatrix<f64>],
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for (k, &wk) in w.view.iter().enumerate() {
        if wk != 0.0 {
            out.gemm(wk, stack.u(k), &cross[k], 1.0);
        }
    }
    for (g, &b) in bases.iter().zip(&w.other) {
        if b != 0.0 {
            let t = g.tr_mul(a);
            out.gemm(-b, g, &t, 1.0);
        }
    }
    out
}

/// Part of the data term that depends on the basis in slot `r`, given its
/// `PB` column and `BᵀB` row:
/// `−Σ_k C(k,r)‖U_kᵀG‖² + ½(CᵀC)_rr‖GᵀG‖² + Σ_{s≠r}(CᵀC)_rs‖G_sᵀG‖²`.
pub(crate) fn partial_value(c: &DMatrix<f64>, ctc: &DMatrix<f64>, r: usize, pb: &[f64], btb: &[f64]) -> f64 {
    let mut v = -c.column(r).iter().zip(pb).map(|(a, b)| a * b).sum::<f64>();
    for (s, &b) in btb.iter().enumerate() {
        let w = if s == r { 0.5 } else { 1.0 };
        v += w * ctc[(r, s)] * b;
    }
    v
}

/// Dense `W_r'`, only for small `N`.
pub(crate) fn dense_w(views: &[ViewBasis], bases: &[&DMatrix<f64>], w: &Weights) -> DMatrix<f64> {
    let n = views[0].n_ambient();
    let mut out = DMatrix::zeros(n, n);
    for (u, &wk) in views.iter().zip(&w.view) {
        if wk != 0.0 {
            out.gemm(wk, u.data(), &u.data().transpose(), 1.0);
        }
    }
    for (g, &b) in bases.iter().zip(&w.other) {
        if b != 0.0 {
            out.gemm(-b, g, &g.transpose(), 1.0);
        }
    }
    out
}

fn basis_refs(model: &ClusterModel) -> Vec<&DMatrix<f64>> {
    model.bases.iter().map(|b| b.data()).collect()
}

/// Top-`L_r` eigenvectors of the explicitly formed `W_r`.
pub fn update_g_eig(views: &[ViewBasis], model: &ClusterModel, r: usize) -> Result<SubspaceBasis> {
    check_dims(views, model)?;
    let c = &model.assign;
    let ctc = c.tr_mul(c);
    let bases = basis_refs(model);
    let w = weights(&ctc, c, r)?;
    let l = bases[r].ncols();
    Ok(SubspaceBasis::orthonormal_unchecked(eig_top(
        views, &bases, &w, l,
    )))
}

pub(crate) fn eig_top(
    views: &[ViewBasis],
    bases: &[&DMatrix<f64>],
    w: &Weights,
    l: usize,
) -> DMatrix<f64> {
    let wm = dense_w(views, bases, w);
    let (_, vecs) = linalg::sym_eigen_desc(&wm);
    let mut g = vecs.columns(0, l).into_owned();
    linalg::fix_signs(&mut g);
    g
}

/// Orthogonal iteration on `W_r' + σI`, `σ = Σ_s β_s‖G_s‖₂²`, warm-started at
/// `start` with `cross[k] = U_kᵀ start`. Stops after `steps` products or once
/// successive frames are within chordal distance `1e-14·L`. Returns the frame
/// and its products with every view.
pub(crate) fn orth_iter(
    stack: &Stack,
    bases: &[&DMatrix<f64>],
    w: &Weights,
    start: &DMatrix<f64>,
    cross: Vec<DMatrix<f64>>,
    steps: usize,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let l = start.ncols();
    let sigma: f64 = bases
        .iter()
        .zip(&w.other)
        .filter(|(_, &b)| b != 0.0)
        .map(|(g, &b)| b * linalg::power_max_eig(&g.tr_mul(g), 100).max(1.0))
        .sum();
    let mut a = start.clone();
    let mut cross = cross;
    for _ in 0..steps {
        let mut z = apply_w(stack, bases, w, &a, &cross);
        z += &a * sigma;
        if z.norm() == 0.0 || !z.iter().all(|v| v.is_finite()) {
            break;
        }
        let next = linalg::orthonormalize(&z);
        let dist = l as f64 - a.tr_mul(&next).norm_squared();
        cross = stack.cross_all(&next);
        a = next;
        if dist <= 1e-14 * l as f64 {
            break;
        }
    }
    (a, cross)
}

/// Matrix-free update of `G_r` by warm-started orthogonal iteration.
pub fn update_g_orthiter(
    views: &[ViewBasis],
    model: &ClusterModel,
    r: usize,
    steps: usize,
) -> Result<SubspaceBasis> {
    check_dims(views, model)?;
    let c = &model.assign;
    let ctc = c.tr_mul(c);
    let bases = basis_refs(model);
    let w = weights(&ctc, c, r)?;
    let stack = Stack::new(views);
    let start = linalg::orthonormalize(bases[r]);
    let cross = stack.cross_all(&start);
    Ok(SubspaceBasis::orthonormal_unchecked(
        orth_iter(&stack, &bases, &w, &start, cross, steps).0,
    ))
}

/// Gradient of the data term with respect to `G_r`:
/// `2[Σ_s (c_sᵀc_r) G_s(G_sᵀG_r) − Σ_k C(k,r) U_k(U_kᵀG_r)]`.
pub fn grad_g(views: &[ViewBasis], model: &ClusterModel, r: usize) -> Result<DMatrix<f64>> {
    check_dims(views, model)?;
    let c = &model.assign;
    let ctc = c.tr_mul(c);
    let stack = Stack::new(views);
    Ok(grad_g_with(&stack, &basis_refs(model), c, &ctc, r, model.bases[r].data()))
}

/// Gradient at a candidate `g` placed in slot `r`.
pub(crate) fn grad_g_with(
    stack: &Stack,
    bases: &[&DMatrix<f64>],
    c: &DMatrix<f64>,
    ctc: &DMatrix<f64>,
    r: usize,
    g: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(g.nrows(), g.ncols());
    for k in 0..stack.len() {
        let ck = c[(k, r)];
        if ck != 0.0 {
            let t = stack.cross(k, g);
            out.gemm(-2.0 * ck, stack.u(k), &t, 1.0);
        }
    }
    for (s, b) in bases.iter().enumerate() {
        let w = ctc[(r, s)];
        if w != 0.0 {
            let gs = if s == r { g } else { *b };
            let t = gs.tr_mul(g);
            out.gemm(2.0 * w, gs, &t, 1.0);
        }
    }
    out
}

/// Partial data value at `g` in slot `r`, touching only views with `C(k,r) ≠ 0`.
fn partial_at(
    stack: &Stack,
    bases: &[&DMatrix<f64>],
    c: &DMatrix<f64>,
    ctc: &DMatrix<f64>,
    r: usize,
    g: &DMatrix<f64>,
) -> f64 {
    let pb: Vec<f64> = (0..stack.len())
        .map(|k| {
            if c[(k, r)] != 0.0 {
                stack.cross(k, g).norm_squared()
            } else {
                0.0
            }
        })
        .collect();
    partial_value(c, ctc, r, &pb, &btb_row(bases, r, g))
}

/// Armijo gradient steps on the unconstrained basis in slot `r`.
/// Returns the last accepted basis.
pub(crate) fn gradient_steps(
    stack: &Stack,
    bases: &[&DMatrix<f64>],
    c: &DMatrix<f64>,
    ctc: &DMatrix<f64>,
    r: usize,
    steps: usize,
) -> DMatrix<f64> {
    let mut g = bases[r].clone();
    let mut f = partial_at(stack, bases, c, ctc, r, &g);
    // Curvature bound used for the first trial step.
    let gg = g.tr_mul(&g).norm();
    let others: f64 = (0..bases.len())
        .filter(|&s| s != r)
        .map(|s| ctc[(r, s)] * bases[s].tr_mul(bases[s]).norm())
        .sum();
    let bound = 2.0 * c.column(r).sum() + 6.0 * ctc[(r, r)] * gg.max(1.0) + 2.0 * others;
    let mut t = 4.0 / bound.max(1e-12);
    for _ in 0..steps {
        let grad = grad_g_with(stack, bases, c, ctc, r, &g);
        let gn2 = grad.norm_squared();
        if gn2 == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &g - &grad * t;
            let fc = partial_at(stack, bases, c, ctc, r, &cand);
            if fc <= f - 1e-4 * t * gn2 {
                g = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        t *= 2.0;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Formulation;
    use crate::subspace::{chordal_sq_distance, orthonormal_basis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn single_cluster_identical_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = orthonormal_basis(&gauss(&mut rng, 20, 4)).unwrap();
        let views = vec![u.clone(); 3];
        let model = ClusterModel {
            bases: vec![SubspaceBasis::orthonormal(orthonormal_basis(&gauss(&mut rng, 20, 4)).unwrap().into_inner()).unwrap()],
            assign: DMatrix::from_element(3, 1, 1.0),
            formulation: Formulation::Penalty,
        };
        let g = update_g_eig(&views, &model, 0).unwrap();
        assert!((u.data().tr_mul(g.data()).norm_squared() - 4.0).abs() < 1e-10);
        let g2 = update_g_orthiter(&views, &model, 0, 200).unwrap();
        assert!(chordal_sq_distance(&g, &g2).unwrap() < 1e-10);
    }

    #[test]
    fn warm_start_at_optimum_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = orthonormal_basis(&gauss(&mut rng, 20, 3)).unwrap();
        let views = vec![u.clone(); 2];
        let model = ClusterModel {
            bases: vec![SubspaceBasis::from(u.clone())],
            assign: DMatrix::from_element(2, 1, 1.0),
            formulation: Formulation::Penalty,
        };
        let g = update_g_orthiter(&views, &model, 0, 1).unwrap();
        assert!(chordal_sq_distance(&g, &u).unwrap() < 1e-12);
    }

    #[test]
    fn dead_cluster_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let views = vec![orthonormal_basis(&gauss(&mut rng, 10, 3)).unwrap(); 2];
        let model = ClusterModel {
            bases: vec![SubspaceBasis::unconstrained(gauss(&mut rng, 10, 2))],
            assign: DMatrix::zeros(2, 1),
            formulation: Formulation::Penalty,
        };
        assert!(matches!(update_g_eig(&views, &model, 0), Err(ScosError::EmptyCluster(0))));
        assert!(matches!(
            update_g_orthiter(&views, &model, 0, 5),
            Err(ScosError::EmptyCluster(0))
        ));
        assert_eq!(grad_g(&views, &model, 0).unwrap().norm(), 0.0);
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, k: usize, dims: &[usize]) -> (Vec<ViewBasis>, ClusterModel) {
        let views = (0..k)
            .map(|i| orthonormal_basis(&gauss(rng, n, 2 + i % 3)).unwrap())
            .collect();
        let bases = dims
            .iter()
            .map(|&l| SubspaceBasis::orthonormal(orthonormal_basis(&gauss(rng, n, l)).unwrap().into_inner()).unwrap())
            .collect();
        let assign = DMatrix::from_fn(k, dims.len(), |_, _| { let v: f64 = StandardNormal.sample(rng); v }).abs();
        (views, ClusterModel { bases, assign, formulation: Formulation::Penalty })
    }

    /// `W_r` written out from its definition, top eigenvectors by a plain
    /// symmetric eigensolver.
    fn oracle_top(views: &[ViewBasis], model: &ClusterModel, r: usize) -> (DMatrix<f64>, f64) {
        let c = &model.assign;
        let n = views[0].n_ambient();
        let cr2 = c.column(r).norm_squared();
        let mut w = DMatrix::zeros(n, n);
        for (k, u) in views.iter().enumerate() {
            w += u.data() * u.data().transpose() * (c[(k, r)] / cr2);
        }
        for (s, g) in model.bases.iter().enumerate() {
            if s != r {
                w -= g.data() * g.data().transpose() * (c.column(r).dot(&c.column(s)) / cr2);
            }
        }
        let eig = nalgebra::SymmetricEigen::new(w);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let l = model.bases[r].data().ncols();
        let top = DMatrix::from_fn(n, l, |i, j| eig.eigenvectors[(i, order[j])]);
        let gap = eig.eigenvalues[order[l - 1]] - eig.eigenvalues[order[l]];
        (top, gap)
    }

    #[test]
    fn eig_update_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..10 {
            let (views, model) = random_model(&mut rng, 30, 6, &[2, 3, 1]);
            for r in 0..3 {
                let (top, gap) = oracle_top(&views, &model, r);
                if gap < 1e-6 {
                    continue;
                }
                let g = update_g_eig(&views, &model, r).unwrap();
                assert!(chordal_sq_distance(&g, &top).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn orthogonal_iteration_reaches_eig_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        for _ in 0..10 {
            let (views, model) = random_model(&mut rng, 50, 8, &[3, 2, 2]);
            for r in 0..3 {
                let gap = oracle_top(&views, &model, r).1;
                if gap <= 1e-3 {
                    continue;
                }
                let e = update_g_eig(&views, &model, r).unwrap();
                let o = update_g_orthiter(&views, &model, r, 5000).unwrap();
                let d = chordal_sq_distance(&e, &o).unwrap();
                assert!(d < 1e-6, "gap {gap:e}: chordal {d:e}");
                checked += 1;
            }
        }
        assert!(checked >= 20);
    }

    #[test]
    fn gradient_vanishes_at_exact_fit() {
        use crate::synth::{generate, ScenarioConfig};
        let s = generate(&ScenarioConfig {
            n_ambient: 30,
            n_views: 9,
            n_clusters: 3,
            subspace_dim: 3,
            view_cols: 5,
            sinr_db: f64::INFINITY,
            inr: 0.0,
            seed: 2,
            min_cluster_size: 1,
        })
        .unwrap();
        let views = crate::eval::scenario_views(&s).unwrap();
        let assign = DMatrix::from_fn(9, 3, |k, r| if s.labels[k] == r { 1.0 } else { 0.0 });
        let model = ClusterModel {
            bases: s.true_bases.clone(),
            assign,
            formulation: Formulation::AugLagPsi,
        };
        for r in 0..3 {
            assert!(grad_g(&views, &model, r).unwrap().norm() < 1e-8);
        }
    }

    #[test]
    fn gradient_is_zero_for_an_empty_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (views, mut model) = random_model(&mut rng, 12, 5, &[2, 2]);
        model.assign.column_mut(1).fill(0.0);
        assert_eq!(grad_g(&views, &model, 1).unwrap().norm(), 0.0);
        assert!(grad_g(&views, &model, 0).unwrap().norm() > 0.0);
    }

    #[test]
    fn orthiter_step_cost_is_linear_in_view_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 2000;
        let time = |k: usize, rng: &mut ChaCha8Rng| {
            let views: Vec<ViewBasis> = (0..k)
                .map(|_| orthonormal_basis(&gauss(rng, n, 10)).unwrap())
                .collect();
            let bases = (0..3)
                .map(|_| SubspaceBasis::orthonormal(orthonormal_basis(&gauss(rng, n, 5)).unwrap().into_inner()).unwrap())
                .collect();
            let model = ClusterModel {
                bases,
                assign: DMatrix::from_element(k, 3, 1.0),
                formulation: Formulation::Penalty,
            };
            (0..5)
                .map(|_| {
                    let t = std::time::Instant::now();
                    update_g_orthiter(&views, &model, 0, 1).unwrap();
                    t.elapsed().as_secs_f64()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let t1 = time(20, &mut rng);
        let t2 = time(40, &mut rng);
        assert!(t2 / t1 < 2.5 * 2.0 && t2 / t1 > 2.0 / 2.5, "t(K) {t1:e}, t(2K) {t2:e}");
    }
}
