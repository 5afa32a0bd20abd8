//! Empirical uniform-stability estimation and its theoretical counterparts.
//!
//! One trial: generate a collection, replace the adaptation-batch-sized
//! block of one uniformly chosen task (plus one outer point), run the
//! coupled training pair on shared index randomness, and probe the adapted
//! losses of the two outputs on a fixed set of `(batch, point)` pairs drawn
//! from a wide envelope law. The per-trial statistic is the maximum probed
//! difference, a lower estimate of the supremum the stability definition
//! takes; the stability estimate averages it over trials.

use crate::error::{Error, Result};
use crate::losses::{adapt, admissible_alpha, LossConstants, LossModel};
use crate::numeric::{linear_fit, MeanAcc};
use crate::rng::{derive, purpose, stream};
use crate::task_model::{perturb_dataset, sample_point, Sample, TaskFamily, TaskSpec};
use crate::trainer::{coupled_train, TrainerConfig};
use rand::Rng;
use rayon::prelude::*;

/// The uniform-stability value `leading_const * G^2 (1 + alpha L k) / (m n mu)`.
pub fn theoretical_gamma(
    c: &LossConstants,
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    leading_const: f64,
) -> f64 {
    leading_const * c.grad_bound * c.grad_bound * (1.0 + alpha * c.smooth * k as f64)
        / (m as f64 * n as f64 * c.mu)
}

/// The large-batch refinement
/// `leading_const * G^2 (1/(m n mu) + alpha min(L k/(m n mu), 1/sqrt(k)))`.
pub fn largek_gamma(
    c: &LossConstants,
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    leading_const: f64,
) -> f64 {
    let mn_mu = m as f64 * n as f64 * c.mu;
    let small_k = c.smooth * k as f64 / mn_mu;
    let large_k = 1.0 / (k as f64).sqrt();
    leading_const * c.grad_bound * c.grad_bound * (1.0 / mn_mu + alpha * small_k.min(large_k))
}

/// Knobs of the stability estimator.
#[derive(Debug, Clone)]
pub struct StabilityConfig {
    /// Independent dataset-perturbation trials.
    pub trials: usize,
    /// Probe `(batch, point)` pairs per trial; the per-trial statistic is a
    /// max over these, a lower estimate of the definition's supremum.
    pub probe_pairs: usize,
    /// Wide law the probes are drawn from.
    pub probe_envelope: TaskSpec,
    /// Inner points replaced per trial; `0` is the no-perturbation control.
    pub perturb_k: usize,
    pub seed: u64,
}

impl StabilityConfig {
    /// Defaults: 256 probe pairs from a widened version of the toy family.
    pub fn new(trials: usize, perturb_k: usize, dim: usize, seed: u64) -> Result<Self> {
        let mean = ndarray::Array1::from_elem(dim, 0.5);
        let coeff = ndarray::Array1::from_elem(dim, 1.0 / (dim as f64).sqrt());
        Ok(StabilityConfig {
            trials,
            probe_pairs: 256,
            probe_envelope: TaskSpec::new(mean, coeff, 1.0, 0.5)?,
            perturb_k,
            seed,
        })
    }
}

/// One trial's outcome.
#[derive(Debug, Clone, Copy)]
pub struct TrialStat {
    /// Max probed adapted-loss difference.
    pub gamma: f64,
    /// Final iterate distance of the coupled pair.
    pub divergence: f64,
}

#[derive(Debug, Clone)]
pub struct StabilityEstimate {
    pub gamma_hat: f64,
    pub std_err: f64,
    pub per_trial: Vec<TrialStat>,
}

fn check_premises(cfg: &TrainerConfig, c: &LossConstants) -> Result<()> {
    let alpha_cap = admissible_alpha(c);
    if cfg.alpha > alpha_cap + 1e-15 {
        return Err(Error::PremiseViolation(format!(
            "alpha {} exceeds admissible {}",
            cfg.alpha, alpha_cap
        )));
    }
    let beta_limit = 1.0 / c.meta_smoothness(cfg.alpha);
    if cfg.beta_cap > beta_limit + 1e-15 {
        return Err(Error::PremiseViolation(format!(
            "beta cap {} exceeds 1/(4L + 2 alpha rho G) = {}",
            cfg.beta_cap, beta_limit
        )));
    }
    Ok(())
}

fn run_trial(
    family: &TaskFamily,
    cfg: &TrainerConfig,
    scfg: &StabilityConfig,
    loss: &dyn LossModel,
    trial: usize,
) -> Result<TrialStat> {
    let trial_seed = derive(scfg.seed, &[purpose::STABILITY, trial as u64]);
    let collection = family.collection(trial_seed, cfg.m, cfg.n)?;
    let perturbed = if scfg.perturb_k == 0 {
        collection.clone()
    } else {
        let mut rng = stream(trial_seed, &[purpose::PERTURB]);
        let task_index = rng.random_range(0..cfg.m);
        let (pert, _) = perturb_dataset(&collection, task_index, scfg.perturb_k, &mut rng)?;
        pert
    };
    let mut run_cfg = cfg.clone();
    run_cfg.seed = derive(trial_seed, &[purpose::TASK_DRAW]);
    let coupled = coupled_train(&collection, &perturbed, &run_cfg, loss)?;

    let w_a = coupled.original.last_iterate.view();
    let w_b = coupled.perturbed.last_iterate.view();
    let mut max_diff = 0.0f64;
    for probe in 0..scfg.probe_pairs {
        let mut rng = stream(trial_seed, &[purpose::PROBE, probe as u64]);
        let batch: Vec<Sample> = (0..cfg.k)
            .map(|_| sample_point(&scfg.probe_envelope, &mut rng))
            .collect();
        let point = sample_point(&scfg.probe_envelope, &mut rng);
        let adapted_a = adapt(&w_a, &batch, cfg.alpha, loss)?;
        let adapted_b = adapt(&w_b, &batch, cfg.alpha, loss)?;
        let diff = (loss.value(&adapted_a.view(), &point) - loss.value(&adapted_b.view(), &point))
            .abs();
        max_diff = max_diff.max(diff);
    }
    Ok(TrialStat {
        gamma: max_diff,
        divergence: coupled.divergence,
    })
}

/// Estimate the uniform-stability constant of the trainer configuration on
/// a task family.
pub fn estimate_stability(
    family: &TaskFamily,
    cfg: &TrainerConfig,
    scfg: &StabilityConfig,
    loss: &dyn LossModel,
    c: &LossConstants,
) -> Result<StabilityEstimate> {
    if scfg.trials == 0 {
        return Err(Error::InvalidSize { n: 0 });
    }
    check_premises(cfg, c)?;
    let stats: Result<Vec<TrialStat>> = (0..scfg.trials)
        .into_par_iter()
        .map(|trial| run_trial(family, cfg, scfg, loss, trial))
        .collect();
    let per_trial = stats?;
    let mut acc = MeanAcc::default();
    for t in &per_trial {
        acc.push(t.gamma);
    }
    Ok(StabilityEstimate {
        gamma_hat: acc.mean(),
        std_err: acc.std_err(),
        per_trial,
    })
}

/// One `(m, n)` cell of a stability scaling experiment.
#[derive(Debug, Clone, Copy)]
pub struct GridPoint {
    pub m: usize,
    pub n: usize,
    pub gamma_hat: f64,
    pub std_err: f64,
}

/// A stability scaling experiment: the estimate at the base configuration,
/// its theoretical value, the whole grid, and the fitted log-log slope of
/// the estimate against `m * n`.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub gamma_hat: f64,
    pub gamma_theory: f64,
    pub grid: Vec<GridPoint>,
    pub fitted_slope: f64,
}

impl StabilityReport {
    /// CSV: one row per grid point, then a summary row.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "m,n,gamma_hat,std_err")?;
        for p in &self.grid {
            writeln!(out, "{},{},{},{}", p.m, p.n, p.gamma_hat, p.std_err)?;
        }
        writeln!(
            out,
            "summary,fitted_slope={},gamma_hat={},gamma_theory={}",
            self.fitted_slope, self.gamma_hat, self.gamma_theory
        )?;
        Ok(())
    }
}

/// Run the stability estimator over a grid of `(m, n)` sizes. The first grid
/// point doubles as the base configuration reported in `gamma_hat` and
/// `gamma_theory`.
pub fn stability_grid(
    family: &TaskFamily,
    base_cfg: &TrainerConfig,
    points: &[(usize, usize)],
    scfg: &StabilityConfig,
    loss: &dyn LossModel,
    c: &LossConstants,
    leading_const: f64,
) -> Result<StabilityReport> {
    if points.is_empty() {
        return Err(Error::InsufficientData("empty grid".into()));
    }
    let mut grid = Vec::with_capacity(points.len());
    for (idx, &(m, n)) in points.iter().enumerate() {
        let mut cfg = base_cfg.clone();
        cfg.m = m;
        cfg.n = n;
        cfg.r = base_cfg.r.min(m);
        let mut cell_scfg = scfg.clone();
        cell_scfg.seed = derive(scfg.seed, &[purpose::STABILITY, idx as u64]);
        let est = estimate_stability(family, &cfg, &cell_scfg, loss, c)?;
        grid.push(GridPoint {
            m,
            n,
            gamma_hat: est.gamma_hat,
            std_err: est.std_err,
        });
    }
    let xs: Vec<f64> = grid.iter().map(|p| ((p.m * p.n) as f64).ln()).collect();
    let ys: Vec<f64> = grid.iter().map(|p| p.gamma_hat.max(1e-300).ln()).collect();
    let fitted_slope = linear_fit(&xs, &ys)
        .map(|f| f.slope)
        .unwrap_or(f64::NAN);
    Ok(StabilityReport {
        gamma_hat: grid[0].gamma_hat,
        gamma_theory: theoretical_gamma(c, points[0].0, points[0].1, base_cfg.k, base_cfg.alpha, leading_const),
        grid,
        fitted_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{ConstraintSet, RegularizedQuadratic};
    use crate::task_model::TaskMode;

    fn toy_constants() -> LossConstants {
        LossConstants {
            mu: 0.02,
            smooth: 50.0,
            grad_bound: 120.0,
            hess_lip: 0.0,
            value_bound: 900.0,
        }
    }

    fn stability_cfg(m: usize, n: usize, k: usize, c: &LossConstants) -> TrainerConfig {
        let mut cfg = TrainerConfig::new(
            m,
            n,
            k,
            5,
            2.min(m),
            300,
            admissible_alpha(c),
            1.0 / c.meta_smoothness(admissible_alpha(c)),
            0,
            ConstraintSet::ball(10.0, 3).unwrap(),
        );
        cfg.trace_mc_subsets = 500;
        cfg
    }

    #[test]
    fn gamma_formula_cases() {
        let c = LossConstants {
            mu: 0.02,
            smooth: 4.0,
            grad_bound: 1.0,
            hess_lip: 0.0,
            value_bound: 1.0,
        };
        let v = theoretical_gamma(&c, 10, 50, 5, 0.1, 1.0);
        assert!((v - 0.3).abs() < 1e-12);
        // Doubling m halves the value exactly.
        let half = theoretical_gamma(&c, 20, 50, 5, 0.1, 1.0);
        assert!((half - v / 2.0).abs() < 1e-15);
        // alpha = 0 removes the k dependence.
        let a = theoretical_gamma(&c, 10, 50, 5, 0.0, 1.0);
        let b = theoretical_gamma(&c, 10, 50, 50, 0.0, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn largek_branches() {
        let c = LossConstants {
            mu: 0.02,
            smooth: 4.0,
            grad_bound: 1.0,
            hess_lip: 0.0,
            value_bound: 1.0,
        };
        let (m, n, alpha) = (100, 50, 0.1);
        // Small k: the linear branch is active and the two bounds split the
        // same terms.
        let k = 2;
        let small = largek_gamma(&c, m, n, k, alpha, 1.0);
        let mn_mu = (m * n) as f64 * c.mu;
        assert!(c.smooth * k as f64 / mn_mu <= 1.0 / (k as f64).sqrt());
        let expect = (1.0 / mn_mu) + alpha * c.smooth * k as f64 / mn_mu;
        assert!((small - expect).abs() < 1e-15);
        // Large k: the 1/sqrt(k) branch takes over and the bound decreases
        // in k.
        let big1 = largek_gamma(&c, m, n, 10_000, alpha, 1.0);
        let big2 = largek_gamma(&c, m, n, 40_000, alpha, 1.0);
        assert!(big2 < big1);
        // Crossover: solve L k sqrt(k) = m n mu numerically and verify the
        // branch switch around it.
        let mut lo = 1.0f64;
        let mut hi = 1.0e6;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if c.smooth * mid * mid.sqrt() < mn_mu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let k_star = lo;
        let below = (0.7 * k_star) as usize;
        let above = (1.3 * k_star).ceil() as usize;
        assert!(c.smooth * below as f64 / mn_mu <= 1.0 / (below as f64).sqrt());
        assert!(c.smooth * above as f64 / mn_mu >= 1.0 / (above as f64).sqrt());
    }

    #[test]
    fn premise_violations_are_rejected() {
        let c = toy_constants();
        let family = TaskFamily::toy(3, TaskMode::Similar);
        let mut cfg = stability_cfg(3, 8, 2, &c);
        cfg.beta_cap = 1.0; // far above 1/(4L)
        let scfg = StabilityConfig::new(2, 2, 3, 0).unwrap();
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        assert!(matches!(
            estimate_stability(&family, &cfg, &scfg, &loss, &c),
            Err(Error::PremiseViolation(_))
        ));
    }

    #[test]
    fn control_without_perturbation_gives_zero() {
        let c = toy_constants();
        let family = TaskFamily::toy(3, TaskMode::Similar);
        let mut cfg = stability_cfg(3, 8, 2, &c);
        cfg.t_max = 60;
        let scfg = StabilityConfig::new(3, 0, 3, 5).unwrap();
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let est = estimate_stability(&family, &cfg, &scfg, &loss, &c).unwrap();
        assert_eq!(est.gamma_hat, 0.0);
        assert!(est.per_trial.iter().all(|t| t.divergence == 0.0));
    }

    #[test]
    fn probed_gamma_respects_lipschitz_chain() {
        // Each trial's probed difference is at most 8 G times the final
        // iterate distance (4G adapted-loss Lipschitz constant times the
        // coupled (1 + alpha L) <= 2 factor).
        let c = toy_constants();
        let family = TaskFamily::toy(3, TaskMode::Similar);
        let mut cfg = stability_cfg(4, 10, 2, &c);
        cfg.t_max = 150;
        let scfg = StabilityConfig::new(6, 2, 3, 9).unwrap();
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let est = estimate_stability(&family, &cfg, &scfg, &loss, &c).unwrap();
        for t in &est.per_trial {
            assert!(
                t.gamma <= 8.0 * c.grad_bound * t.divergence + 1e-12,
                "chain violated: {} > 8G * {}",
                t.gamma,
                t.divergence
            );
        }
    }

    #[test]
    fn grid_estimates_decrease_with_sample_budget() {
        let c = toy_constants();
        let family = TaskFamily::toy(3, TaskMode::Similar);
        let mut cfg = stability_cfg(5, 20, 2, &c);
        cfg.t_max = 250;
        let scfg = StabilityConfig::new(8, 2, 3, 13).unwrap();
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let report = stability_grid(
            &family,
            &cfg,
            &[(5, 20), (10, 40), (20, 80)],
            &scfg,
            &loss,
            &c,
            1.0,
        )
        .unwrap();
        assert!(report.grid[0].gamma_hat > report.grid[1].gamma_hat);
        assert!(report.grid[1].gamma_hat > report.grid[2].gamma_hat);
        assert!(report.fitted_slope < -0.5, "slope {}", report.fitted_slope);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("fitted_slope="));
    }
}
