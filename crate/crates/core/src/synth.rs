//! Synthetic scenarios drawn from the partially-common-subspace model
//! `X_k = G_{r_k} Q_k¹ + H_k Q_k² + E_k`.
//!
//! All randomness comes from a `ChaCha8Rng` seeded with
//! `ChaCha8Rng::seed_from_u64(config.seed)`, drawn in a fixed order: labels,
//! subspace bases, then per view `Q¹`, `Q²`, `E`. Scenarios therefore
//! reproduce bit-for-bit across platforms.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScosError};
use crate::linalg;
use crate::subspace::SubspaceBasis;

/// Sizes, difficulty and seed of one synthetic scenario.
///
/// `sinr_db = +∞` zeroes interference and noise. `inr = +∞` zeroes the noise
/// term only, `inr = 0` zeroes the interference term only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_ambient: usize,
    pub n_views: usize,
    pub n_clusters: usize,
    pub subspace_dim: usize,
    pub view_cols: usize,
    pub sinr_db: f64,
    pub inr: f64,
    pub seed: u64,
    /// Redraw labels until every cluster has at least this many members.
    /// Zero keeps plain i.i.d. uniform labels.
    #[serde(default)]
    pub min_cluster_size: usize,
}

impl ScenarioConfig {
    /// `N=1000, K=100, R=5, L=20, M=50`.
    pub fn paper(sinr_db: f64, inr: f64, seed: u64) -> Self {
        Self {
            n_ambient: 1000,
            n_views: 100,
            n_clusters: 5,
            subspace_dim: 20,
            view_cols: 50,
            sinr_db,
            inr,
            seed,
            min_cluster_size: 0,
        }
    }

    /// `N=200, K=40, R=3, L=4, M=10`.
    pub fn desk(sinr_db: f64, inr: f64, seed: u64) -> Self {
        Self {
            n_ambient: 200,
            n_views: 40,
            n_clusters: 3,
            subspace_dim: 4,
            view_cols: 10,
            sinr_db,
            inr,
            seed,
            min_cluster_size: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ScosError::InfeasibleConfig(msg));
        let (n, k, r, l, m) = (
            self.n_ambient,
            self.n_views,
            self.n_clusters,
            self.subspace_dim,
            self.view_cols,
        );
        if r == 0 || l == 0 {
            return bad("need at least one cluster of positive dimension".into());
        }
        if !(l <= m && m < n) {
            return bad(format!("need L <= M < N, got L={l} M={m} N={n}"));
        }
        if k < r {
            return bad(format!("need K >= R, got K={k} R={r}"));
        }
        if r * l + (m - l) > n {
            return bad(format!(
                "R*L + (M-L) = {} exceeds N = {n}",
                r * l + (m - l)
            ));
        }
        if self.sinr_db.is_nan() || self.sinr_db == f64::NEG_INFINITY {
            return bad(format!("invalid SINR {}", self.sinr_db));
        }
        if self.inr.is_nan() || self.inr < 0.0 {
            return bad(format!("invalid INR {}", self.inr));
        }
        if self.min_cluster_size * r > k {
            return bad(format!(
                "cannot place {} members in each of {r} clusters with K={k}",
                self.min_cluster_size
            ));
        }
        Ok(())
    }

    pub fn sinr_linear(&self) -> f64 {
        10f64.powf(self.sinr_db / 10.0)
    }
}

/// Scaled generative factors of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewTerms {
    /// `H_k`, orthonormal, `N×(M−L)`.
    pub interference_basis: DMatrix<f64>,
    /// `Q_k¹`, `L×M`.
    pub signal_coef: DMatrix<f64>,
    /// `Q_k²`, `(M−L)×M`.
    pub interference_coef: DMatrix<f64>,
    /// `E_k`, `N×M`.
    pub noise: DMatrix<f64>,
}

/// A synthetic ground truth plus the generated views.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub views: Vec<DMatrix<f64>>,
    /// Zero-based cluster index of every view.
    pub labels: Vec<usize>,
    pub true_bases: Vec<SubspaceBasis>,
    /// `H_k` per view; empty when the scenario was loaded without them.
    pub interference_bases: Vec<DMatrix<f64>>,
    /// Generative factors per view; empty when loaded from disk.
    pub terms: Vec<ViewTerms>,
}

impl Scenario {
    /// `(G_{r_k}Q¹, H_kQ², E_k)` for view `k`.
    pub fn view_components(
        &self,
        k: usize,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let t = self.terms.get(k)?;
        let g = self.true_bases[self.labels[k]].data();
        Some((
            g * &t.signal_coef,
            &t.interference_basis * &t.interference_coef,
            t.noise.clone(),
        ))
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.config.n_clusters];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn draw_labels(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let labels: Vec<usize> = (0..config.n_views)
            .map(|_| rng.random_range(0..config.n_clusters))
            .collect();
        if config.min_cluster_size == 0 {
            return labels;
        }
        let mut sizes = vec![0usize; config.n_clusters];
        for &l in &labels {
            sizes[l] += 1;
        }
        if sizes.iter().all(|&s| s >= config.min_cluster_size) {
            return labels;
        }
    }
}

/// Removes the component of `a` inside `col(q)` (orthonormal `q`), twice for
/// numerical safety.
fn project_out(a: &mut DMatrix<f64>, q: &DMatrix<f64>) {
    for _ in 0..2 {
        let coef = q.tr_mul(a);
        *a -= q * coef;
    }
}

/// Draws a scenario. Cluster bases are mutually orthogonal; every `H_k` is
/// orthogonal to all cluster bases. When `R·L + K·(M−L) ≤ N` every block
/// (including the `H_k`) is carved from one jointly orthonormalized Gaussian
/// matrix; otherwise the `H_k` are drawn per view in the complement of the
/// cluster bases.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let (n, k, r, l, m) = (
        config.n_ambient,
        config.n_views,
        config.n_clusters,
        config.subspace_dim,
        config.view_cols,
    );
    let p = m - l;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let labels = draw_labels(config, &mut rng);

    let joint = r * l + k * p <= n;
    let (g_all, mut h_bases) = if joint {
        let q = linalg::orthonormalize(&gaussian(&mut rng, n, r * l + k * p));
        let g_all = q.columns(0, r * l).into_owned();
        let h: Vec<DMatrix<f64>> = (0..k)
            .map(|i| q.columns(r * l + i * p, p).into_owned())
            .collect();
        (g_all, h)
    } else {
        let g_all = linalg::orthonormalize(&gaussian(&mut rng, n, r * l));
        (g_all, Vec::with_capacity(k))
    };
    let true_bases: Vec<SubspaceBasis> = (0..r)
        .map(|i| SubspaceBasis::orthonormal_unchecked(g_all.columns(i * l, l).into_owned()))
        .collect();

    let sinr = config.sinr_linear();
    let mut views = Vec::with_capacity(k);
    let mut terms = Vec::with_capacity(k);
    for (i, &label) in labels.iter().enumerate() {
        if !joint {
            let mut raw = gaussian(&mut rng, n, p);
            project_out(&mut raw, &g_all);
            h_bases.push(linalg::orthonormalize(&raw));
        }
        let h = &h_bases[i];
        let g = true_bases[label].data();
        let mut q1 = gaussian(&mut rng, l, m);
        let mut q2 = gaussian(&mut rng, p, m);
        let mut e = gaussian(&mut rng, n, m);

        if sinr.is_infinite() {
            q2.fill(0.0);
            e.fill(0.0);
        } else {
            if config.inr.is_infinite() {
                e.fill(0.0);
            } else if config.inr == 0.0 {
                q2.fill(0.0);
            } else {
                let interference = (h * &q2).norm_squared();
                e *= (interference / (config.inr * e.norm_squared())).sqrt();
            }
            let denom = (h * &q2 + &e).norm_squared();
            let signal = (g * &q1).norm_squared();
            if denom > 0.0 {
                q1 *= (sinr * denom / signal).sqrt();
            }
        }
        views.push(g * &q1 + h * &q2 + &e);
        terms.push(ViewTerms {
            interference_basis: h.clone(),
            signal_coef: q1,
            interference_coef: q2,
            noise: e,
        });
    }

    Ok(Scenario {
        config: config.clone(),
        views,
        labels,
        true_bases,
        interference_bases: h_bases,
        terms,
    })
}

/// `(SINR, INR)` of one view from its signal, interference and noise terms.
/// A zero denominator yields `+∞`.
pub fn measure_sinr(
    signal: &DMatrix<f64>,
    interference: &DMatrix<f64>,
    noise: &DMatrix<f64>,
) -> (f64, f64) {
    let ratio = |num: f64, den: f64| if den == 0.0 { f64::INFINITY } else { num / den };
    let sinr = ratio(signal.norm_squared(), (interference + noise).norm_squared());
    let inr = ratio(interference.norm_squared(), noise.norm_squared());
    (sinr, inr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::{orthonormality_error, Basis};

    fn small(sinr_db: f64, inr: f64, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            n_ambient: 60,
            n_views: 12,
            n_clusters: 3,
            subspace_dim: 4,
            view_cols: 8,
            sinr_db,
            inr,
            seed,
            min_cluster_size: 0,
        }
    }

    #[test]
    fn ratios_match_targets() {
        for (cfg, joint) in [(small(-3.0, 0.5, 4), true), (ScenarioConfig::desk(2.0, 5.0, 9), false)] {
            let s = generate(&cfg).unwrap();
            let carve = cfg.n_clusters * cfg.subspace_dim
                + cfg.n_views * (cfg.view_cols - cfg.subspace_dim);
            assert_eq!(carve <= cfg.n_ambient, joint);
            for k in 0..cfg.n_views {
                let (sig, int, noise) = s.view_components(k).unwrap();
                let (sinr, inr) = measure_sinr(&sig, &int, &noise);
                assert!((sinr / cfg.sinr_linear() - 1.0).abs() < 1e-9);
                assert!((inr / cfg.inr - 1.0).abs() < 1e-9);
                let recon = sig + int + noise;
                assert!((recon - &s.views[k]).norm() < 1e-9 * s.views[k].norm());
            }
        }
    }

    #[test]
    fn infinite_sinr_keeps_only_signal() {
        let s = generate(&small(f64::INFINITY, 0.0, 2)).unwrap();
        for k in 0..12 {
            let (sig, int, noise) = s.view_components(k).unwrap();
            assert_eq!(s.views[k], sig);
            assert_eq!(measure_sinr(&sig, &int, &noise), (f64::INFINITY, f64::INFINITY));
        }
    }

    #[test]
    fn infinite_inr_is_noiseless_model() {
        let s = generate(&small(0.0, f64::INFINITY, 3)).unwrap();
        for t in &s.terms {
            assert_eq!(t.noise.norm(), 0.0);
        }
    }

    #[test]
    fn equal_norm_terms_give_unit_sinr() {
        let sig = DMatrix::from_element(3, 2, 1.0);
        let int = DMatrix::from_element(3, 2, 0.5);
        let noise = DMatrix::from_element(3, 2, 0.5);
        assert_eq!(measure_sinr(&sig, &int, &noise).0, 1.0);
    }

    #[test]
    fn same_seed_same_scenario() {
        let a = generate(&small(1.0, 2.0, 17)).unwrap();
        let b = generate(&small(1.0, 2.0, 17)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(1.0, 2.0, 18)).unwrap();
        assert_ne!(a.views, c.views);
    }

    #[test]
    fn bases_are_orthonormal_and_disjoint() {
        for cfg in [small(0.0, 1.0, 5), ScenarioConfig::desk(0.0, 1.0, 5)] {
            let s = generate(&cfg).unwrap();
            for g in &s.true_bases {
                assert!(orthonormality_error(g.data()) < 1e-10);
            }
            for (k, h) in s.interference_bases.iter().enumerate() {
                assert!(orthonormality_error(h) < 1e-10);
                let g = s.true_bases[s.labels[k]].matrix();
                let mut joint = DMatrix::zeros(g.nrows(), g.ncols() + h.ncols());
                joint.columns_mut(0, g.ncols()).copy_from(g);
                joint.columns_mut(g.ncols(), h.ncols()).copy_from(h);
                let sv = linalg::singular_values(&joint).unwrap();
                assert!(*sv.last().unwrap() > 0.5);
            }
        }
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let mut cfg = small(0.0, 1.0, 1);
        cfg.subspace_dim = 9;
        assert!(matches!(generate(&cfg), Err(ScosError::InfeasibleConfig(_))));
        let mut cfg = small(0.0, 1.0, 1);
        cfg.n_views = 2;
        assert!(matches!(generate(&cfg), Err(ScosError::InfeasibleConfig(_))));
        let mut cfg = small(0.0, 1.0, 1);
        cfg.n_ambient = 14;
        assert!(matches!(generate(&cfg), Err(ScosError::InfeasibleConfig(_))));
    }

    #[test]
    fn minimum_cluster_size_is_enforced() {
        let mut cfg = small(0.0, 1.0, 0);
        cfg.min_cluster_size = 3;
        for seed in 0..20 {
            cfg.seed = seed;
            let s = generate(&cfg).unwrap();
            assert!(s.cluster_sizes().iter().all(|&c| c >= 3));
        }
    }

    #[test]
    fn label_frequencies_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cfg = ScenarioConfig {
            n_views: 10_000,
            ..small(0.0, 1.0, 0)
        };
        let labels = draw_labels(&cfg, &mut rng);
        let expected = 10_000.0 / 3.0;
        let sd = (10_000.0 * (1.0 / 3.0) * (2.0 / 3.0f64)).sqrt();
        for c in 0..3 {
            let count = labels.iter().filter(|&&l| l == c).count() as f64;
            assert!((count - expected).abs() < 5.0 * sd);
        }
    }
}
