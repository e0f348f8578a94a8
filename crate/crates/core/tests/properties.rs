use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use scos::eval::{accuracy, ari, nmi};
use scos::hsi::{build_adjacency, hsi_regularizers, pixel_views, HyperCube};
use scos::ident::condition_i_rhs;
use scos::select::cluster_spectrum;
use scos::solver::{reg_value_and_grad, DualState, Formulation, SolverConfig};
use scos::subspace::{chordal_sq_distance, orthonormal_basis, principal_angles, ViewBasis};

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn random_basis(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ViewBasis {
    orthonormal_basis(&gaussian(rng, n, m)).unwrap()
}

fn random_orthogonal(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    gaussian(rng, m, m).qr().q()
}

fn positive_assign(rng: &mut ChaCha8Rng, k: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, r, |_, _| rng.random_range(0.05..1.0))
}

fn random_dual(rng: &mut ChaCha8Rng, k: usize, r: usize, spatial: bool) -> DualState {
    let mut d = if spatial {
        DualState::with_spatial(k, r, 0.7, 0.4)
    } else {
        DualState::new(r, 0.7)
    };
    for i in 0..r {
        for j in 0..i {
            let v: f64 = rng.sample(StandardNormal);
            d.lambda[(i, j)] = v;
            d.lambda[(j, i)] = v;
        }
    }
    if let Some(h) = d.lambda_h.as_mut() {
        *h = gaussian(rng, k, r);
    }
    d
}

fn labels(max_label: usize, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<usize>> {
    len.prop_flat_map(move |n| proptest::collection::vec(0..max_label, n))
}

fn label_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec(0usize..6, n),
            proptest::collection::vec(0usize..6, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chordal_matches_explicit_projectors(seed in any::<u64>(), n in 2usize..100, frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 1 + ((n - 1) as f64 * frac) as usize;
        let a = random_basis(&mut rng, n, m);
        let b = random_basis(&mut rng, n, m);
        let pa = a.data() * a.data().transpose();
        let pb = b.data() * b.data().transpose();
        let explicit = 0.5 * (pa - pb).norm_squared();
        let d = chordal_sq_distance(&a, &b).unwrap();
        prop_assert!((d - explicit).abs() <= 1e-10 * explicit.max(1e-300) + 1e-13,
            "d {d} explicit {explicit}");
    }

    #[test]
    fn principal_angles_ignore_rotations(seed in any::<u64>(), n in 3usize..40, m in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_basis(&mut rng, n, m);
        let b = random_basis(&mut rng, n, m);
        let qa = random_orthogonal(&mut rng, m);
        let qb = random_orthogonal(&mut rng, m);
        let ar = ViewBasis::from_orthonormal(a.data() * qa).unwrap();
        let br = ViewBasis::from_orthonormal(b.data() * qb).unwrap();
        let t0 = principal_angles(&a, &b).unwrap();
        let t1 = principal_angles(&ar, &br).unwrap();
        // Cosines: arccos loses half the digits near zero angle.
        for (x, y) in t0.iter().zip(&t1) {
            prop_assert!((x.cos() - y.cos()).abs() < 1e-12, "{t0:?} vs {t1:?}");
        }
    }

    #[test]
    fn basis_of_reparametrized_input_spans_same_subspace(seed in any::<u64>(), n in 4usize..60, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, n, m);
        // Well-conditioned invertible mixing.
        let q = DMatrix::identity(m, m) + 0.3 * gaussian(&mut rng, m, m) / (m as f64);
        prop_assume!(q.clone().svd(false, false).singular_values.min() > 0.1);
        let a = orthonormal_basis(&x).unwrap();
        let b = orthonormal_basis(&(&x * q)).unwrap();
        prop_assert!(chordal_sq_distance(&a, &b).unwrap() < 1e-10);
    }

    #[test]
    fn psi_regularizer_ignores_column_scaling(seed in any::<u64>(), k in 2usize..20, r in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = positive_assign(&mut rng, k, r);
        let dual = random_dual(&mut rng, k, r, false);
        let mut scaled = c.clone();
        for j in 0..r {
            let s: f64 = rng.random_range(0.01..100.0);
            scaled.column_mut(j).scale_mut(s);
        }
        let cfg = SolverConfig::default();
        let v0 = reg_value_and_grad(&c, &dual, Formulation::AugLagPsi, &cfg).0;
        let v1 = reg_value_and_grad(&scaled, &dual, Formulation::AugLagPsi, &cfg).0;
        prop_assert!((v0 - v1).abs() <= 1e-12 * v0.abs().max(1.0), "{v0} vs {v1}");
    }

    #[test]
    fn hsi_regularizers_ignore_column_scaling(seed in any::<u64>(), h in 2usize..6, w in 2usize..6, r in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = h * w;
        let adj = build_adjacency(h, w, 3).unwrap();
        let c = positive_assign(&mut rng, k, r);
        let dual = random_dual(&mut rng, k, r, true);
        let mut scaled = c.clone();
        for j in 0..r {
            let s: f64 = rng.random_range(0.01..100.0);
            scaled.column_mut(j).scale_mut(s);
        }
        for f in [Formulation::Penalty, Formulation::AugLag, Formulation::AugLagPsi] {
            let cfg = SolverConfig { formulation: f, ..SolverConfig::default() };
            let v0 = hsi_regularizers(&c, &adj, &dual, &cfg).unwrap().0;
            let v1 = hsi_regularizers(&scaled, &adj, &dual, &cfg).unwrap().0;
            prop_assert!((v0 - v1).abs() <= 1e-12 * v0.abs().max(1.0), "{f:?}: {v0} vs {v1}");
        }
    }

    #[test]
    fn adjacency_is_symmetric_stochastic_and_sparse(h in 1usize..12, w in 1usize..12, half in 1usize..3) {
        let s_a = 2 * half + 1;
        let adj = build_adjacency(h, w, s_a).unwrap();
        prop_assert!(adj.nnz() <= h * w * s_a * s_a);
        for col in &adj.mix.cols {
            let sum: f64 = col.iter().map(|&(_, v)| v).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
        for i in 0..h * w {
            for j in 0..h * w {
                prop_assert_eq!(adj.is_adjacent(i, j), adj.is_adjacent(j, i));
            }
        }
    }

    #[test]
    fn one_view_per_pixel(seed in any::<u64>(), h in 1usize..7, w in 1usize..7, s_r in prop::sample::select(vec![1usize, 3])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bands = 12;
        let data: Vec<f32> = (0..h * w * bands).map(|_| rng.random_range(0.0f32..1.0)).collect();
        let cube = HyperCube::new(h, w, bands, data).unwrap();
        let views = pixel_views(&cube, s_r).unwrap();
        prop_assert_eq!(views.len(), h * w);
        // Row-major: a single-pixel window is that pixel's normalized spectrum.
        if s_r == 1 {
            for (i, v) in views.iter().enumerate() {
                let spec: Vec<f64> = cube.spectrum(i / w, i % w).iter().map(|&x| x as f64).collect();
                let s = nalgebra::DVector::from_vec(spec).normalize();
                prop_assert!((v.data().column(0).dot(&s).abs() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn spectrum_is_bounded_by_cluster_size(seed in any::<u64>(), n in 5usize..30, members in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views: Vec<ViewBasis> = (0..members)
            .map(|_| {
                let m = rng.random_range(1..n.min(5));
                random_basis(&mut rng, n, m)
            })
            .collect();
        let idx: Vec<usize> = (0..members).collect();
        let (vals, _) = cluster_spectrum(&views, &idx).unwrap();
        for v in vals {
            prop_assert!(v >= -1e-10 && v <= members as f64 + 1e-10, "{v}");
        }
    }

    #[test]
    fn condition_i_matches_sum_of_squares(
        dims in proptest::collection::vec(1usize..30, 1..5),
        views in proptest::collection::vec((0usize..64, 0usize..40), 1..30),
    ) {
        let r = dims.len();
        let labels: Vec<usize> = views.iter().map(|(l, _)| l % r).collect();
        let cols: Vec<usize> = views.iter().zip(&labels).map(|((_, e), &l)| dims[l] + e).collect();
        let direct: i128 = dims.iter().map(|&l| (l * l) as i128).sum::<i128>()
            + cols.iter().zip(&labels).map(|(&m, &l)| ((m - dims[l]) * (m - dims[l])) as i128).sum::<i128>();
        prop_assert_eq!(condition_i_rhs(&dims, &cols, &labels).unwrap(), direct);
    }

    #[test]
    fn metrics_ignore_predicted_label_names((pred, truth) in label_pair(), perm_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        let mut perm: Vec<usize> = (0..6).collect();
        for i in (1..6).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // Shifted ids exercise non-contiguous label sets as well.
        let renamed: Vec<usize> = pred.iter().map(|&p| 10 + 3 * perm[p]).collect();
        prop_assert!((accuracy(&pred, &truth).unwrap() - accuracy(&renamed, &truth).unwrap()).abs() < 1e-12);
        prop_assert!((ari(&pred, &truth).unwrap() - ari(&renamed, &truth).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&renamed, &truth).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ari_and_nmi_are_symmetric((pred, truth) in label_pair()) {
        prop_assert!((ari(&pred, &truth).unwrap() - ari(&truth, &pred).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&truth, &pred).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn accuracy_beats_constant_predictor(truth in labels(5, 1..60)) {
        let constant = vec![0; truth.len()];
        let mut counts = [0usize; 5];
        for &t in &truth {
            counts[t] += 1;
        }
        let majority = *counts.iter().max().unwrap() as f64 / truth.len() as f64;
        prop_assert!((accuracy(&constant, &truth).unwrap() - majority).abs() < 1e-12);
        for pred in [truth.iter().map(|t| (t + 1) % 5).collect::<Vec<_>>(), truth.iter().map(|t| t / 2).collect()] {
            prop_assert!(accuracy(&pred, &truth).unwrap() + 1e-12 >= majority);
        }
    }

    #[test]
    fn metrics_stay_in_unit_interval((pred, truth) in label_pair()) {
        let acc = accuracy(&pred, &truth).unwrap();
        let n = nmi(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        prop_assert!(ari(&pred, &truth).unwrap() <= 1.0 + 1e-12);
    }
}
