//! Peak-allocation audit of the Gram-trick code paths at large ambient
//! dimension. Lives in its own test binary because it installs a global
//! allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use scos::solver::{grad_g, gram_pb, objective, update_g_orthiter, ClusterModel, Formulation};
use scos::subspace::{orthonormal_basis, SubspaceBasis};

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

#[test]
fn gram_paths_stay_far_below_dense_projector_memory() {
    let (n, k, m, r, l) = (10_000, 20, 5, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut gauss = |rows, cols| DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let views: Vec<_> = (0..k).map(|_| orthonormal_basis(&gauss(n, m)).unwrap()).collect();
    let bases = (0..r)
        .map(|_| SubspaceBasis::orthonormal(orthonormal_basis(&gauss(n, l)).unwrap().into_inner()).unwrap())
        .collect();
    let model = ClusterModel {
        bases,
        assign: DMatrix::from_element(k, r, 0.5),
        formulation: Formulation::Penalty,
    };

    let baseline = CURRENT.load(Ordering::Relaxed);
    PEAK.store(baseline, Ordering::Relaxed);
    let f = objective(&views, &model).unwrap();
    let pb = gram_pb(&views, &model).unwrap();
    let g = grad_g(&views, &model, 0).unwrap();
    let next = update_g_orthiter(&views, &model, 1, 5).unwrap();
    let peak = PEAK.load(Ordering::Relaxed) - baseline;

    assert!(f.is_finite() && pb.iter().all(|v| v.is_finite()));
    assert_eq!((g.nrows(), g.ncols()), (n, l));
    assert_eq!(next.data().ncols(), l);
    let budget = 10 * n * k * m * std::mem::size_of::<f64>();
    assert!(peak < budget, "peak {peak} bytes, budget {budget}");
}
