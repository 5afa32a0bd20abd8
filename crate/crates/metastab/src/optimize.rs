//! Deterministic projected first-order solver used for reference minimizers.
//!
//! Accelerated projected gradient descent with adaptive restart and
//! backtracking. The initial stepsize comes from a finite-difference power
//! iteration estimating the local gradient Lipschitz constant, so the solver
//! does not depend on the (often very loose) worst-case smoothness envelope.
//! Convergence is declared on the gradient-mapping residual
//! `|w - project(w - s * grad)| / s`.

use crate::error::{Error, Result};
use crate::losses::{project, ConstraintSet};
use crate::rng::{purpose, stream};
use ndarray::{Array1, ArrayView1};
use rand_distr::StandardNormal;
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Gradient-mapping norm at which the solve counts as converged.
    pub tol: f64,
    pub max_iters: usize,
    /// Power-iteration steps for the initial curvature estimate.
    pub curvature_iters: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-9,
            max_iters: 200_000,
            curvature_iters: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub w: Array1<f64>,
    pub value: f64,
    pub grad_mapping_norm: f64,
    pub iters: usize,
}

/// Gradient-mapping residual at `w` for reference stepsize `step`.
pub fn gradient_mapping_norm(
    w: &ArrayView1<f64>,
    grad: &ArrayView1<f64>,
    set: &ConstraintSet,
    step: f64,
) -> f64 {
    let trial = w - &(grad * step);
    let proj = project(&trial.view(), set);
    let gm = (w - &proj) / step;
    gm.dot(&gm).sqrt()
}

fn estimate_curvature<G>(grad_fn: &G, w: &Array1<f64>, iters: usize, seed: u64) -> f64
where
    G: Fn(&ArrayView1<f64>) -> Array1<f64>,
{
    let d = w.len();
    let mut rng = stream(seed, &[purpose::SOLVER]);
    let mut u = Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let norm = u.dot(&u).sqrt().max(1e-300);
    u /= norm;
    let g0 = grad_fn(&w.view());
    let eps = 1e-6 * (1.0 + w.dot(w).sqrt());
    let mut lam = 1.0;
    for _ in 0..iters {
        let probe = w + &(&u * eps);
        let g1 = grad_fn(&probe.view());
        let hv = (&g1 - &g0) / eps;
        let norm = hv.dot(&hv).sqrt();
        if norm < 1e-12 {
            break;
        }
        lam = norm;
        u = hv / norm;
    }
    lam.max(1e-12)
}

/// Minimize a smooth convex objective over a ball.
pub fn minimize_projected<F, G>(
    value_fn: F,
    grad_fn: G,
    set: &ConstraintSet,
    init: Option<Array1<f64>>,
    opts: &SolveOptions,
) -> Result<Solution>
where
    F: Fn(&ArrayView1<f64>) -> f64,
    G: Fn(&ArrayView1<f64>) -> Array1<f64>,
{
    let start = match init {
        Some(w) => project(&w.view(), set),
        None => set.center.clone(),
    };
    let lam = estimate_curvature(&grad_fn, &start, opts.curvature_iters, opts.seed);
    let mut step = 0.9 / lam;

    let mut x = start;
    let mut fx = value_fn(&x.view());
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut residual = f64::INFINITY;

    for iter in 0..opts.max_iters {
        let gy = grad_fn(&y.view());
        let mut x_new;
        loop {
            let trial = &y - &(&gy * step);
            x_new = project(&trial.view(), set);
            let f_new = value_fn(&x_new.view());
            let dx = &x_new - &y;
            // Sufficient-decrease model for the current stepsize.
            let quad = value_fn(&y.view()) + gy.dot(&dx) + dx.dot(&dx) / (2.0 * step);
            if f_new <= quad + 1e-12 * (1.0 + quad.abs()) {
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                return Err(Error::NonConvergence { residual });
            }
        }
        let f_new = value_fn(&x_new.view());

        if f_new > fx {
            // Momentum overshoot: restart from the best point.
            theta = 1.0;
            y = x.clone();
            continue;
        }

        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let momentum = (theta - 1.0) / theta_new;
        y = &x_new + &((&x_new - &x) * momentum);
        x = x_new;
        fx = f_new;
        theta = theta_new;

        if iter % 8 == 0 {
            let gx = grad_fn(&x.view());
            residual = gradient_mapping_norm(&x.view(), &gx.view(), set, step);
            if residual <= opts.tol {
                return Ok(Solution {
                    w: x,
                    value: fx,
                    grad_mapping_norm: residual,
                    iters: iter + 1,
                });
            }
        }
    }
    let gx = grad_fn(&x.view());
    residual = gradient_mapping_norm(&x.view(), &gx.view(), set, step);
    if residual <= opts.tol {
        return Ok(Solution {
            w: x,
            value: fx,
            grad_mapping_norm: residual,
            iters: opts.max_iters,
        });
    }
    Err(Error::NonConvergence { residual })
}
