//! Regularized nonnegative least squares for the assignment matrix.

use nalgebra::DMatrix;

use super::grams::{check_dims, data_from_grams, gram_btb, gram_pb, half_sum_m};
use super::regularizer::Reg;
use super::{ClusterModel, DualState, SolverConfig};
use crate::error::{Result, ScosError};
use crate::linalg;
use crate::subspace::ViewBasis;

/// Fixed inputs of one assignment update.
pub(crate) struct NmlsProblem<'a> {
    pub half_sum_m: f64,
    pub pb: &'a DMatrix<f64>,
    pub btb: &'a DMatrix<f64>,
    pub reg: Reg<'a>,
    pub dual: &'a DualState,
}

impl NmlsProblem<'_> {
    pub fn value(&self, c: &DMatrix<f64>) -> f64 {
        data_from_grams(self.half_sum_m, c, self.pb, self.btb) + self.reg.value(c, self.dual)
    }

    fn value_and_grad(&self, c: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let (rv, rg) = self.reg.value_and_grad(c, self.dual);
        let data = data_from_grams(self.half_sum_m, c, self.pb, self.btb);
        let grad = c * self.btb - self.pb + rg;
        (data + rv, grad)
    }

    fn lipschitz_guess(&self) -> f64 {
        let r = self.btb.nrows() as f64;
        let mut l = linalg::power_max_eig(self.btb, 200);
        if self.reg.formulation == super::Formulation::Penalty {
            l += self.dual.rho * (r - 1.0);
        }
        l.max(1e-12)
    }
}

/// Accelerated projected gradient with backtracking and adaptive restart.
/// The returned iterate never has a larger objective than `c0`.
pub(crate) fn solve(problem: &NmlsProblem, c0: &DMatrix<f64>, max_inner: usize) -> Result<DMatrix<f64>> {
    let mut x = c0.map(|v| v.max(0.0));
    let mut fx = problem.value(&x);
    if !fx.is_finite() {
        return Err(ScosError::NonFiniteValue("assignment update"));
    }
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut lip = problem.lipschitz_guess();
    for _ in 0..max_inner {
        let (fy, gy) = problem.value_and_grad(&y);
        if !fy.is_finite() || gy.iter().any(|v| !v.is_finite()) {
            return Err(ScosError::NonFiniteValue("assignment update"));
        }
        let mut z;
        let mut fz;
        let mut tries = 0;
        loop {
            z = (&y - &gy / lip).map(|v| v.max(0.0));
            fz = problem.value(&z);
            let d = &z - &y;
            let model = fy + gy.dot(&d) + 0.5 * lip * d.norm_squared();
            if fz.is_finite() && fz <= model + 1e-12 * fy.abs().max(1.0) {
                break;
            }
            lip *= 2.0;
            tries += 1;
            if tries > 200 {
                return Err(ScosError::NonFiniteValue("assignment step size"));
            }
        }
        if fz > fx {
            // Momentum overshot: restart from the last accepted point.
            if y == x {
                break;
            }
            y = x.clone();
            t = 1.0;
            continue;
        }
        let step = (&z - &x).norm();
        let scale = x.norm().max(1e-12);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = (&z + (&z - &x) * ((t - 1.0) / t_next)).map(|v| v.max(0.0));
        x = z;
        fx = fz;
        t = t_next;
        lip *= 0.9;
        if step <= 1e-10 * scale {
            break;
        }
    }
    Ok(x)
}

/// Updates `C` for the bases in `model` under the dual state `dual`.
pub fn update_c(
    views: &[ViewBasis],
    model: &ClusterModel,
    dual: &DualState,
    config: &SolverConfig,
) -> Result<DMatrix<f64>> {
    check_dims(views, model)?;
    let pb = gram_pb(views, model)?;
    let btb = gram_btb(model);
    let problem = NmlsProblem {
        half_sum_m: half_sum_m(views),
        pb: &pb,
        btb: &btb,
        reg: Reg {
            formulation: model.formulation,
            epsilon: config.epsilon_psi,
            spatial: None,
        },
        dual,
    };
    solve(&problem, &model.assign, config.max_inner)
}
