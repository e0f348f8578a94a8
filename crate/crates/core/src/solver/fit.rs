//! The outer augmented-Lagrangian / penalty loop.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::grams::{btb_of, btb_row, data_from_grams, half_sum_m, Stack};
use super::gupdate::{eig_top, gradient_steps, orth_iter, partial_value, weights, DEAD_CLUSTER};
use super::nmls::{self, NmlsProblem};
use super::regularizer::{constraint_violation, Reg, SpatialMix};
use super::{ClusterModel, DualState, Formulation, GUpdate, InitStrategy, SolverConfig};
use crate::error::{Result, ScosError};
use crate::io::fmt_f64;
use crate::linalg;
use crate::subspace::{SubspaceBasis, ViewBasis};

/// One line of the per-outer-iteration log.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub outer_iter: usize,
    pub rho: f64,
    /// Data term at the end of the subproblem.
    pub objective: f64,
    /// Data term plus regularizer under the subproblem's dual state.
    pub composite: f64,
    /// `‖(C_normᵀC_norm)∘Q‖_F`.
    pub constraint_violation: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TraceEvent {
    /// Cluster `cluster` had `‖c_r‖₂ < 1e-14` and was reseeded from `view`.
    DeadClusterRestart {
        outer_iter: usize,
        cluster: usize,
        view: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitTrace {
    pub rows: Vec<TraceRow>,
    /// Composite objective at the start of each subproblem and after every
    /// factor update within it, at fixed dual state.
    pub rounds: Vec<Vec<f64>>,
    pub events: Vec<TraceEvent>,
    pub converged: bool,
    /// Outer iteration whose iterate was returned.
    pub best_outer: usize,
}

impl FitTrace {
    /// CSV text with columns `outer_iter,rho,objective,constraint_violation`
    /// and, when `timing` is set, `wall_ms`.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = String::from("outer_iter,rho,objective,constraint_violation");
        if timing {
            s.push_str(",wall_ms");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{}",
                r.outer_iter,
                fmt_f64(r.rho),
                fmt_f64(r.objective),
                fmt_f64(r.constraint_violation)
            );
            if timing {
                let _ = write!(s, ",{:.3}", r.wall_ms);
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path, timing: bool) -> Result<()> {
        std::fs::write(path, self.to_csv(timing))?;
        Ok(())
    }

    /// Outer iterations that contain a dead-cluster restart.
    pub fn restarted_outers(&self) -> Vec<usize> {
        self.events
            .iter()
            .map(|e| match e {
                TraceEvent::DeadClusterRestart { outer_iter, .. } => *outer_iter,
            })
            .collect()
    }
}

/// Optional problem extensions used by the hyperspectral pipeline.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct FitExtras<'a> {
    pub spatial: Option<&'a SpatialMix>,
}

/// Fits `R = dims.len()` clusters with subspace dimensions `dims`.
///
/// Without `init`, bases are seeded from the leading directions of `R`
/// views chosen per `config.init`, and `C` is obtained by one assignment
/// update started from `|N(0,1)|` entries scaled to unit column norms.
pub fn fit(
    views: &[ViewBasis],
    n_clusters: usize,
    dims: &[usize],
    config: &SolverConfig,
    init: Option<&ClusterModel>,
) -> Result<(ClusterModel, FitTrace)> {
    fit_with(views, n_clusters, dims, config, init, FitExtras::default())
}

#[derive(Clone)]
struct State {
    bases: Vec<DMatrix<f64>>,
    c: DMatrix<f64>,
    pb: DMatrix<f64>,
    btb: DMatrix<f64>,
    /// `cross[r][k] = U_kᵀG_r`.
    cross: Vec<Vec<DMatrix<f64>>>,
}

fn sq_norms(cross: &[DMatrix<f64>]) -> Vec<f64> {
    cross.iter().map(|t| t.norm_squared()).collect()
}

impl State {
    fn new(stack: &Stack, bases: Vec<DMatrix<f64>>, c: DMatrix<f64>) -> Self {
        let mut pb = DMatrix::zeros(stack.len(), bases.len());
        let cross: Vec<Vec<DMatrix<f64>>> = bases.iter().map(|g| stack.cross_all(g)).collect();
        for (r, t) in cross.iter().enumerate() {
            pb.set_column(r, &DVector::from_vec(sq_norms(t)));
        }
        let refs: Vec<&DMatrix<f64>> = bases.iter().collect();
        let btb = btb_of(&refs);
        Self { bases, c, pb, btb, cross }
    }

    fn set_basis(&mut self, r: usize, g: DMatrix<f64>, cross: Vec<DMatrix<f64>>) {
        let refs: Vec<&DMatrix<f64>> = self.bases.iter().collect();
        let row = btb_row(&refs, r, &g);
        for (s, v) in row.into_iter().enumerate() {
            self.btb[(r, s)] = v;
            self.btb[(s, r)] = v;
        }
        self.pb.set_column(r, &DVector::from_vec(sq_norms(&cross)));
        self.cross[r] = cross;
        self.bases[r] = g;
    }

    fn data(&self, hsm: f64) -> f64 {
        data_from_grams(hsm, &self.c, &self.pb, &self.btb)
    }
}

fn validate(
    views: &[ViewBasis],
    n_clusters: usize,
    dims: &[usize],
    config: &SolverConfig,
    init: Option<&ClusterModel>,
) -> Result<()> {
    config.validate()?;
    if n_clusters == 0 {
        return Err(ScosError::InvalidArgument("need at least one cluster".into()));
    }
    if dims.len() != n_clusters {
        return Err(ScosError::DimensionMismatch(format!(
            "{} dimensions given for {n_clusters} clusters",
            dims.len()
        )));
    }
    if views.len() < n_clusters {
        return Err(ScosError::InvalidArgument(format!(
            "{} views cannot form {n_clusters} clusters",
            views.len()
        )));
    }
    let n = views[0].n_ambient();
    if views.iter().any(|v| v.n_ambient() != n) {
        return Err(ScosError::DimensionMismatch(
            "views have different ambient dimensions".into(),
        ));
    }
    if dims.iter().any(|&l| l == 0 || l >= n) {
        return Err(ScosError::InvalidArgument(format!(
            "subspace dimensions {dims:?} must lie in [1, {}]",
            n - 1
        )));
    }
    if let Some(m) = init {
        let ok = m.bases.len() == n_clusters
            && m.assign.nrows() == views.len()
            && m.assign.ncols() == n_clusters
            && m.bases.iter().zip(dims).all(|(b, &l)| {
                b.data().nrows() == n && b.data().ncols() == l
            });
        if !ok {
            return Err(ScosError::DimensionMismatch(
                "initial model does not match views and dimensions".into(),
            ));
        }
    }
    Ok(())
}

fn seed_views(views: &[ViewBasis], r: usize, strategy: InitStrategy, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match strategy {
        InitStrategy::RandomViews => sample(rng, views.len(), r).into_vec(),
        InitStrategy::SpreadViews => {
            let mut chosen = vec![rng.random_range(0..views.len())];
            let mut closest = vec![f64::INFINITY; views.len()];
            while chosen.len() < r {
                let last = views[*chosen.last().expect("nonempty")].data();
                let mut best = (f64::NEG_INFINITY, 0);
                for (k, u) in views.iter().enumerate() {
                    let u = u.data();
                    let d = 0.5 * (u.ncols() + last.ncols()) as f64 - u.tr_mul(last).norm_squared();
                    closest[k] = closest[k].min(d);
                    if !chosen.contains(&k) && closest[k] > best.0 {
                        best = (closest[k], k);
                    }
                }
                chosen.push(best.1);
            }
            chosen
        }
    }
}

/// `l` orthonormal directions seeded at view `v`: its leading `l` columns, or,
/// when it has fewer, the dominant directions of `v` together with its
/// nearest views in chordal distance.
pub(crate) fn seed_basis(views: &[ViewBasis], v: usize, l: usize) -> DMatrix<f64> {
    let u = views[v].data();
    if u.ncols() >= l {
        return u.columns(0, l).into_owned();
    }
    let mut order: Vec<(f64, usize)> = views
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != v)
        .map(|(k, w)| {
            let w = w.data();
            (0.5 * (u.ncols() + w.ncols()) as f64 - u.tr_mul(w).norm_squared(), k)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut cols: Vec<DMatrix<f64>> = vec![u.clone()];
    let mut width = u.ncols();
    for (_, k) in order {
        cols.push(views[k].data().clone());
        width += views[k].n_cols();
        if width < l {
            continue;
        }
        let stacked = DMatrix::from_columns(
            &cols.iter().flat_map(|m| m.column_iter().map(|c| c.into_owned())).collect::<Vec<_>>(),
        );
        if let Ok(svd) = linalg::thin_svd(&stacked) {
            let top = svd.singular_values[0];
            if svd.singular_values.get(l - 1).is_some_and(|&s| s > 1e-8 * top) {
                let mut g = svd.u.columns(0, l).into_owned();
                linalg::fix_signs(&mut g);
                return g;
            }
        }
    }
    // Views jointly span fewer than `l` directions: pad with coordinate axes.
    let n = u.nrows();
    let mut m = DMatrix::zeros(n, u.ncols() + n);
    m.columns_mut(0, u.ncols()).copy_from(u);
    for i in 0..n {
        m[(i, u.ncols() + i)] = 1.0;
    }
    linalg::orthonormalize(&m).columns(0, l).into_owned()
}

pub(crate) fn fit_with(
    views: &[ViewBasis],
    n_clusters: usize,
    dims: &[usize],
    config: &SolverConfig,
    init: Option<&ClusterModel>,
    extras: FitExtras,
) -> Result<(ClusterModel, FitTrace)> {
    validate(views, n_clusters, dims, config, init)?;
    let started = Instant::now();
    let formulation = config.formulation;
    let orthonormal = formulation != Formulation::AugLagPsi;
    let k = views.len();
    let hsm = half_sum_m(views);
    let stack = Stack::new(views);
    let reg = Reg {
        formulation,
        epsilon: config.epsilon_psi,
        spatial: extras.spatial,
    };
    if let Some(w) = extras.spatial {
        if w.len() != k {
            return Err(ScosError::DimensionMismatch(format!(
                "adjacency has {} pixels, {k} views given",
                w.len()
            )));
        }
    }
    let mut dual = match extras.spatial {
        Some(_) if formulation == Formulation::AugLagPsi => {
            DualState::with_spatial(k, n_clusters, config.rho0, config.rho0)
        }
        _ => DualState::new(n_clusters, config.rho0),
    };

    let mut state = match init {
        Some(m) => {
            let bases = m
                .bases
                .iter()
                .map(|b| {
                    if orthonormal && !b.is_orthonormal() {
                        linalg::orthonormalize(b.data())
                    } else {
                        b.data().clone()
                    }
                })
                .collect();
            State::new(&stack, bases, m.assign.map(|v| v.max(0.0)))
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let picks = seed_views(views, n_clusters, config.init, &mut rng);
            let bases = picks
                .iter()
                .zip(dims)
                .map(|(&v, &l)| seed_basis(views, v, l))
                .collect();
            let mut c0: DMatrix<f64> = DMatrix::from_fn(k, n_clusters, |_, _| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x.abs()
            });
            for mut col in c0.column_iter_mut() {
                let n = col.norm();
                if n > 0.0 {
                    col.unscale_mut(n);
                }
            }
            let mut s = State::new(&stack, bases, c0);
            let problem = NmlsProblem {
                half_sum_m: hsm,
                pb: &s.pb,
                btb: &s.btb,
                reg,
                dual: &dual,
            };
            s.c = nmls::solve(&problem, &s.c, config.max_inner)?;
            s
        }
    };

    let mut trace = FitTrace::default();
    let mut best: Option<State> = None;
    let mut prev_data: Option<f64> = None;
    let data_floor = 1e-12 * hsm.max(1.0);

    for outer in 0..config.max_outer {
        let composite = |s: &State| s.data(hsm) + reg.value(&s.c, &dual);
        let mut values = vec![composite(&state)];
        for _ in 0..config.rounds_per_outer {
            let start = *values.last().expect("nonempty");
            for r in 0..n_clusters {
                if state.c.column(r).norm() < DEAD_CLUSTER {
                    let view = restart_cluster(&stack, &mut state, r, dims[r], orthonormal);
                    trace.events.push(TraceEvent::DeadClusterRestart {
                        outer_iter: outer,
                        cluster: r,
                        view,
                    });
                    values.push(composite(&state));
                }
                update_basis(&stack, &mut state, r, config)?;
                values.push(composite(&state));
            }
            let problem = NmlsProblem {
                half_sum_m: hsm,
                pb: &state.pb,
                btb: &state.btb,
                reg,
                dual: &dual,
            };
            state.c = nmls::solve(&problem, &state.c, config.max_inner)?;
            let end = composite(&state);
            values.push(end);
            if (start - end).abs() <= config.tol_rel * start.abs().max(data_floor) {
                break;
            }
        }

        let data = state.data(hsm);
        let violation = constraint_violation(&state.c);
        let comp = *values.last().expect("nonempty");
        if !comp.is_finite() {
            return Err(ScosError::NonFiniteValue("composite objective"));
        }
        trace.rows.push(TraceRow {
            outer_iter: outer,
            rho: dual.rho,
            objective: data,
            composite: comp,
            constraint_violation: violation,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        trace.rounds.push(values);

        let replace = match &best {
            None => true,
            Some(b) => comp <= composite(b),
        };
        if replace {
            best = Some(state.clone());
            trace.best_outer = outer;
        }

        if let Some(p) = prev_data {
            if (data - p).abs() <= config.tol_rel * p.abs().max(data_floor)
                && violation <= config.violation_tol
            {
                trace.converged = true;
                break;
            }
        }
        prev_data = Some(data);
        dual = reg.dual_update(&state.c, &dual, config.alpha);
    }

    let best = best.unwrap_or(state);
    let bases = best
        .bases
        .into_iter()
        .map(|g| {
            if orthonormal {
                SubspaceBasis::orthonormal_unchecked(g)
            } else {
                SubspaceBasis::unconstrained(g)
            }
        })
        .collect();
    Ok((
        ClusterModel {
            bases,
            assign: best.c,
            formulation,
        },
        trace,
    ))
}

/// Replaces basis `r` in place, never increasing the data term.
fn update_basis(stack: &Stack, state: &mut State, r: usize, config: &SolverConfig) -> Result<()> {
    let ctc = state.c.tr_mul(&state.c);
    let refs: Vec<&DMatrix<f64>> = state.bases.iter().collect();
    let (candidate, cross) = match config.formulation {
        Formulation::AugLagPsi => {
            let g = gradient_steps(stack, &refs, &state.c, &ctc, r, config.grad_steps);
            let cross = stack.cross_all(&g);
            (g, cross)
        }
        _ => {
            let w = weights(&ctc, &state.c, r)?;
            match config.g_update {
                GUpdate::Eigen => {
                    let g = eig_top(stack.views, &refs, &w, refs[r].ncols());
                    let cross = stack.cross_all(&g);
                    (g, cross)
                }
                GUpdate::OrthIter => orth_iter(
                    stack,
                    &refs,
                    &w,
                    refs[r],
                    state.cross[r].clone(),
                    config.orthiter_steps,
                ),
            }
        }
    };
    let pb = sq_norms(&cross);
    let new_row = btb_row(&refs, r, &candidate);
    let old_pb: Vec<f64> = state.pb.column(r).iter().copied().collect();
    let old_row: Vec<f64> = state.btb.row(r).iter().copied().collect();
    let new_val = partial_value(&state.c, &ctc, r, &pb, &new_row);
    let old_val = partial_value(&state.c, &ctc, r, &old_pb, &old_row);
    if new_val <= old_val {
        state.set_basis(r, candidate, cross);
    }
    Ok(())
}

/// Reseeds a dead cluster from the view with the worst fit to its assigned
/// cluster. Returns that view's index.
fn restart_cluster(stack: &Stack, state: &mut State, r: usize, l: usize, orthonormal: bool) -> usize {
    let labels = super::labels_of(&state.c);
    let mut worst = (f64::NEG_INFINITY, 0);
    for (k, &lk) in labels.iter().enumerate() {
        let scale = if orthonormal {
            state.bases[lk].ncols() as f64
        } else {
            state.bases[lk].norm_squared()
        };
        let phi = 1.0 - state.pb[(k, lk)] / scale.max(f64::MIN_POSITIVE);
        if phi > worst.0 {
            worst = (phi, k);
        }
    }
    let view = worst.1;
    let g = seed_basis(stack.views, view, l);
    let cross = stack.cross_all(&g);
    state.set_basis(r, g, cross);
    state.c[(view, r)] = 1.0;
    view
}
