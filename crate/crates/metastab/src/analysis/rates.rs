//! Convergence-rate verification: fit log-suboptimality against log round
//! count for the last and averaged iterates and compare against the
//! strongly convex rate envelopes `(L + rho alpha G)/T + G/sqrt(T)` (last)
//! and `(log T + 1/(beta mu))/(mu T)` (averaged), with the absolute
//! constant calibrated at the first grid point.

use crate::error::{Error, Result};
use crate::losses::{LossConstants, LossModel};
use crate::meta_objective::{collection_meta_loss, minimize_empirical};
use crate::numeric::{linear_fit, MeanAcc};
use crate::optimize::SolveOptions;
use crate::rng::derive;
use crate::task_model::TaskCollection;
use crate::trainer::{maml_train, TrainerConfig};

/// Measured suboptimality of both trainer outputs at one round budget.
#[derive(Debug, Clone, Copy)]
pub struct RatePoint {
    pub t_max: usize,
    pub subopt_last: f64,
    pub subopt_avg: f64,
    pub se_last: f64,
    pub se_avg: f64,
}

/// Fitted rates and envelope checks.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceReport {
    pub slope_last: f64,
    pub slope_avg: f64,
    pub slope_se_last: f64,
    pub slope_se_avg: f64,
    /// Envelope constants calibrated at the first grid point.
    pub const_last: f64,
    pub const_avg: f64,
    /// Whether every later point stays below its calibrated envelope.
    pub bound_ok_last: bool,
    pub bound_ok_avg: bool,
}

fn avg_envelope(t: f64, c: &LossConstants, beta_cap: f64) -> f64 {
    let g2 = c.grad_bound * c.grad_bound;
    g2 * (t.ln() + 1.0 / (beta_cap * c.mu)) / (c.mu * t)
}

fn last_envelope(t: f64, c: &LossConstants, alpha: f64, beta_cap: f64) -> f64 {
    let g2 = c.grad_bound * c.grad_bound;
    g2 * (1.0 + 1.0 / (beta_cap * c.mu)) / (c.mu * c.mu)
        * ((c.smooth + c.hess_lip * alpha * c.grad_bound) / t + c.grad_bound / t.sqrt())
}

/// Fit both rates over at least three round budgets.
pub fn convergence_report(
    points: &[RatePoint],
    c: &LossConstants,
    alpha: f64,
    beta_cap: f64,
) -> Result<ConvergenceReport> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 rate points, got {}",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|p| p.subopt_last <= 0.0 || p.subopt_avg <= 0.0)
    {
        return Err(Error::InsufficientData(
            "suboptimality values must be positive".into(),
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.t_max as f64).ln()).collect();
    let ys_last: Vec<f64> = points.iter().map(|p| p.subopt_last.ln()).collect();
    let ys_avg: Vec<f64> = points.iter().map(|p| p.subopt_avg.ln()).collect();
    let fit_last = linear_fit(&xs, &ys_last).expect("three points");
    let fit_avg = linear_fit(&xs, &ys_avg).expect("three points");

    let t0 = points[0].t_max as f64;
    let const_avg = points[0].subopt_avg / avg_envelope(t0, c, beta_cap);
    let const_last = points[0].subopt_last / last_envelope(t0, c, alpha, beta_cap);
    let bound_ok_avg = points.iter().all(|p| {
        p.subopt_avg <= const_avg * avg_envelope(p.t_max as f64, c, beta_cap) * (1.0 + 1e-9)
    });
    let bound_ok_last = points.iter().all(|p| {
        p.subopt_last
            <= const_last * last_envelope(p.t_max as f64, c, alpha, beta_cap) * (1.0 + 1e-9)
    });
    Ok(ConvergenceReport {
        slope_last: fit_last.slope,
        slope_avg: fit_avg.slope,
        slope_se_last: fit_last.slope_se,
        slope_se_avg: fit_avg.slope_se,
        const_last,
        const_avg,
        bound_ok_last,
        bound_ok_avg,
    })
}

/// Train at each round budget over several seeds and measure the empirical
/// suboptimality of both outputs against a reference minimizer solved once.
pub fn measure_rate_points(
    collection: &TaskCollection,
    base_cfg: &TrainerConfig,
    budgets: &[usize],
    seeds: usize,
    loss: &dyn LossModel,
    solve_opts: &SolveOptions,
) -> Result<Vec<RatePoint>> {
    if seeds == 0 || budgets.is_empty() {
        return Err(Error::InsufficientData("no budgets or seeds".into()));
    }
    let meta = base_cfg.meta();
    let reference = minimize_empirical(
        collection,
        &meta,
        loss,
        &base_cfg.constraint,
        base_cfg.seed,
        solve_opts,
    )?;

    let mut points = Vec::with_capacity(budgets.len());
    for &t_max in budgets {
        let mut acc_last = MeanAcc::default();
        let mut acc_avg = MeanAcc::default();
        for s in 0..seeds {
            let mut cfg = base_cfg.clone();
            cfg.t_max = t_max;
            cfg.seed = derive(base_cfg.seed, &[t_max as u64, s as u64]);
            let out = maml_train(collection, &cfg, loss)?;
            let f_last =
                collection_meta_loss(&out.last_iterate.view(), collection, &meta, loss, cfg.seed)?;
            let f_avg = collection_meta_loss(
                &out.averaged_iterate.view(),
                collection,
                &meta,
                loss,
                cfg.seed,
            )?;
            acc_last.push((f_last.value - reference.value).max(0.0));
            acc_avg.push((f_avg.value - reference.value).max(0.0));
        }
        points.push(RatePoint {
            t_max,
            subopt_last: acc_last.mean(),
            subopt_avg: acc_avg.mean(),
            se_last: acc_last.std_err(),
            se_avg: acc_avg.std_err(),
        });
    }
    Ok(points)
}
