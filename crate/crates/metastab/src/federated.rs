//! Distributed MAML: per-user local projected meta-gradient steps followed
//! by periodic server averaging, the personalization scheme for federated
//! training.
//!
//! Each round re-initializes every selected user at the server iterate
//! (clients are stateless), runs `tau` projected local steps at the round's
//! fixed stepsize, and averages the local results without re-projecting:
//! the average of points of a convex set stays inside it. With `tau = 1`
//! and an unconstrained set the round update coincides exactly with the
//! centralized trainer under shared randomness.

use crate::error::{Error, Result};
use crate::losses::{project, LossModel};
use crate::meta_objective::{
    draw_batch_indices, meta_gradient_at_indices, population_meta_loss, Estimate,
};
use crate::rng::{derive, purpose, stream};
use crate::task_model::TaskCollection;
use crate::trainer::{stepsize, TrainerConfig, TrainerOutput};
use ndarray::Array1;
use rand::seq::index::sample as sample_indices;

/// Distributed-training knobs: the base trainer configuration plus the
/// local-update count. `base.t_max` is the number of outer rounds.
#[derive(Debug, Clone)]
pub struct FedConfig {
    pub base: TrainerConfig,
    /// Local updates per selected user per round.
    pub tau: usize,
    /// Record per-local-step movement for verbose tracing.
    pub verbose_trace: bool,
}

impl FedConfig {
    pub fn new(base: TrainerConfig, tau: usize) -> Self {
        FedConfig {
            base,
            tau,
            verbose_trace: false,
        }
    }

    pub fn validate(&self, collection: &TaskCollection, mu: f64) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::InvalidConfig("tau must be at least 1".into()));
        }
        self.base.validate(collection, mu)
    }
}

/// One verbose-trace row: where a local step moved a user's iterate.
#[derive(Debug, Clone, Copy)]
pub struct LocalStep {
    pub round: usize,
    pub user: usize,
    pub local_step: usize,
    /// Distance moved by this local step.
    pub movement: f64,
}

#[derive(Debug, Clone)]
pub struct FedOutput {
    pub output: TrainerOutput,
    /// Present when verbose tracing was requested.
    pub local_trace: Vec<LocalStep>,
}

impl FedOutput {
    /// Verbose trace CSV `round,user,local_step,movement`.
    pub fn write_local_trace_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "round,user,local_step,movement")?;
        for row in &self.local_trace {
            writeln!(
                out,
                "{},{},{},{}",
                row.round, row.user, row.local_step, row.movement
            )?;
        }
        Ok(())
    }
}

/// Run distributed MAML.
pub fn fed_train(
    collection: &TaskCollection,
    cfg: &FedConfig,
    loss: &dyn LossModel,
) -> Result<FedOutput> {
    let mu = loss.strong_convexity();
    cfg.validate(collection, mu)?;
    let base = &cfg.base;
    let d = collection.dim();
    let mut w = base
        .init
        .clone()
        .unwrap_or_else(|| base.constraint.center.clone());
    w = project(&w.view(), &base.constraint);
    let mut avg_sum = w.clone();
    let mut stepsizes = Vec::with_capacity(base.t_max);
    let mut local_trace = Vec::new();

    for t in 0..base.t_max {
        let beta = stepsize(t, base.beta_cap, mu);
        stepsizes.push(beta);
        let mut batch: Vec<usize> = {
            let mut rng = stream(base.seed, &[purpose::BATCH, t as u64]);
            sample_indices(&mut rng, base.m, base.r).into_iter().collect()
        };
        batch.sort_unstable();

        let mut sum = Array1::<f64>::zeros(d);
        for &i in &batch {
            let ds = &collection.tasks[i].1;
            let mut wi = w.clone();
            for s in 0..cfg.tau {
                let mut rng = stream(
                    base.seed,
                    &[purpose::TASK_DRAW, t as u64, i as u64, s as u64],
                );
                let (in_idx, out_idx) = draw_batch_indices(&mut rng, base.n, base.k, base.b);
                let g =
                    meta_gradient_at_indices(&wi.view(), ds, &in_idx, &out_idx, base.alpha, loss);
                let mut stepped = wi.clone();
                stepped.scaled_add(-beta, &g);
                let projected = project(&stepped.view(), &base.constraint);
                if !projected.iter().all(|v| v.is_finite()) {
                    return Err(Error::Divergence {
                        round: t,
                        user: Some(i),
                        local_step: Some(s),
                    });
                }
                if cfg.verbose_trace {
                    let moved = (&projected - &wi).dot(&(&projected - &wi)).sqrt();
                    local_trace.push(LocalStep {
                        round: t,
                        user: i,
                        local_step: s,
                        movement: moved,
                    });
                }
                wi = projected;
            }
            sum += &wi;
        }
        // Server average of feasible local iterates; convexity keeps it
        // feasible without re-projection.
        sum /= base.r as f64;
        if !sum.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                round: t,
                user: None,
                local_step: None,
            });
        }
        debug_assert!(base.constraint.contains(&sum.view(), 1e-9));
        w = sum;
        avg_sum += &w;
    }

    Ok(FedOutput {
        output: TrainerOutput {
            last_iterate: w,
            averaged_iterate: avg_sum / (base.t_max as f64 + 1.0),
            loss_trace: Vec::new(),
            overlap_trace: Vec::new(),
            stepsizes,
        },
        local_trace,
    })
}

/// Per-user and averaged post-adaptation population losses of a trained
/// meta-model.
#[derive(Debug, Clone)]
pub struct PersonalizationReport {
    pub per_user: Vec<Estimate>,
    pub average: Estimate,
}

/// Evaluate the personalized (post-adaptation) population loss of the
/// averaged iterate on every user's task.
pub fn fed_personalization_eval(
    output: &TrainerOutput,
    collection: &TaskCollection,
    cfg: &FedConfig,
    loss: &dyn LossModel,
    seed: u64,
) -> Result<PersonalizationReport> {
    let meta = cfg.base.meta();
    let w = output.averaged_iterate.view();
    let mut per_user = Vec::with_capacity(collection.m());
    let mut var = 0.0;
    let mut total = 0.0;
    for (i, (spec, _)) in collection.tasks.iter().enumerate() {
        let est = population_meta_loss(
            &w,
            spec,
            &meta,
            loss,
            derive(seed, &[purpose::POPULATION, i as u64]),
        )?;
        total += est.value;
        var += est.std_err * est.std_err;
        per_user.push(est);
    }
    let m = collection.m() as f64;
    Ok(PersonalizationReport {
        average: Estimate {
            value: total / m,
            std_err: var.sqrt() / m,
            exact: false,
        },
        per_user,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{ConstraintSet, RegularizedQuadratic};
    use crate::task_model::{TaskFamily, TaskMode};
    use crate::trainer::maml_train;
    use crate::task_model::build_dataset;

    fn toy_collection(seed: u64, m: usize, n: usize, dim: usize) -> TaskCollection {
        TaskFamily::toy(dim, TaskMode::Similar)
            .collection(seed, m, n)
            .unwrap()
    }

    fn base_cfg(m: usize, n: usize, dim: usize, seed: u64, radius: f64) -> TrainerConfig {
        TrainerConfig::new(
            m,
            n,
            3.min(n),
            4.min(n),
            2.min(m),
            40,
            0.02,
            0.05,
            seed,
            ConstraintSet::ball(radius, dim).unwrap(),
        )
    }

    #[test]
    fn tau_one_unconstrained_matches_centralized_training() {
        let coll = toy_collection(1, 4, 8, 3);
        let mut base = base_cfg(4, 8, 3, 9, 1.0);
        base.constraint = ConstraintSet::unconstrained(3).unwrap();
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let central = maml_train(&coll, &base, &loss).unwrap();
        let fed = fed_train(&coll, &FedConfig::new(base, 1), &loss).unwrap();
        assert_eq!(central.content_hash(), fed.output.content_hash());
        assert_eq!(central.last_iterate, fed.output.last_iterate);
    }

    #[test]
    fn tau_one_constrained_stays_within_diameter() {
        // Projection placement (local-then-average vs average-then-project)
        // may move the iterates, but both stay feasible.
        let coll = toy_collection(2, 3, 8, 3);
        let base = base_cfg(3, 8, 3, 10, 0.4);
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let central = maml_train(&coll, &base, &loss).unwrap();
        let fed = fed_train(&coll, &FedConfig::new(base.clone(), 1), &loss).unwrap();
        let diff = &central.last_iterate - &fed.output.last_iterate;
        assert!(diff.dot(&diff).sqrt() <= 2.0 * base.constraint.radius + 1e-12);
        assert!(base
            .constraint
            .contains(&fed.output.last_iterate.view(), 1e-9));
        assert!(base
            .constraint
            .contains(&fed.output.averaged_iterate.view(), 1e-9));
    }

    #[test]
    fn single_user_tau_three_replays_three_local_steps() {
        let coll = toy_collection(3, 1, 6, 2);
        let mut base = base_cfg(1, 6, 2, 11, 10.0);
        base.r = 1;
        base.t_max = 4;
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let cfg = FedConfig::new(base.clone(), 3);
        let fed = fed_train(&coll, &cfg, &loss).unwrap();

        // Replay: same streams, three consecutive projected steps per round.
        let mu = loss.strong_convexity();
        let mut w = Array1::<f64>::zeros(2);
        for t in 0..base.t_max {
            let beta = stepsize(t, base.beta_cap, mu);
            let mut wi = w.clone();
            for s in 0..3u64 {
                let mut rng = stream(base.seed, &[purpose::TASK_DRAW, t as u64, 0, s]);
                let (in_idx, out_idx) = draw_batch_indices(&mut rng, base.n, base.k, base.b);
                let g = meta_gradient_at_indices(
                    &wi.view(),
                    &coll.tasks[0].1,
                    &in_idx,
                    &out_idx,
                    base.alpha,
                    &loss,
                );
                let mut stepped = wi.clone();
                stepped.scaled_add(-beta, &g);
                wi = project(&stepped.view(), &base.constraint);
            }
            w = wi;
        }
        let diff = (&w - &fed.output.last_iterate)
            .dot(&(&w - &fed.output.last_iterate))
            .sqrt();
        assert!(diff < 1e-12, "replay mismatch {diff}");
    }

    #[test]
    fn fed_training_is_deterministic() {
        let coll = toy_collection(4, 3, 8, 3);
        let cfg = FedConfig::new(base_cfg(3, 8, 3, 12, 5.0), 2);
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let a = fed_train(&coll, &cfg, &loss).unwrap();
        let b = fed_train(&coll, &cfg, &loss).unwrap();
        assert_eq!(a.output.content_hash(), b.output.content_hash());
    }

    #[test]
    fn personalization_single_user_equals_population_loss() {
        let coll = toy_collection(5, 1, 8, 3);
        let mut base = base_cfg(1, 8, 3, 13, 10.0);
        base.r = 1;
        let cfg = FedConfig::new(base, 1);
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let fed = fed_train(&coll, &cfg, &loss).unwrap();
        let report = fed_personalization_eval(&fed.output, &coll, &cfg, &loss, 77).unwrap();
        assert_eq!(report.per_user.len(), 1);
        assert_eq!(report.per_user[0].value, report.average.value);
        let direct = population_meta_loss(
            &fed.output.averaged_iterate.view(),
            &coll.tasks[0].0,
            &cfg.base.meta(),
            &loss,
            derive(77, &[purpose::POPULATION, 0]),
        )
        .unwrap();
        assert_eq!(report.per_user[0].value, direct.value);
    }

    #[test]
    fn personalization_homogeneous_users_agree() {
        // Identical task specs: per-user personalized losses differ only by
        // Monte Carlo noise.
        let spec = TaskFamily::toy(3, TaskMode::Similar).task(21, 0).unwrap();
        let mut tasks = Vec::new();
        for i in 0..4u64 {
            let ds = build_dataset(&spec, 8, &mut stream(31, &[purpose::DATA, i])).unwrap();
            tasks.push((spec.clone(), ds));
        }
        let coll = TaskCollection { tasks };
        let mut base = base_cfg(4, 8, 3, 14, 10.0);
        base.mc_population = 4_000;
        let cfg = FedConfig::new(base, 2);
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let fed = fed_train(&coll, &cfg, &loss).unwrap();
        let report = fed_personalization_eval(&fed.output, &coll, &cfg, &loss, 91).unwrap();
        for pair in report.per_user.windows(2) {
            let gap = (pair[0].value - pair[1].value).abs();
            let band = 2.0 * (pair[0].std_err + pair[1].std_err);
            assert!(gap <= band, "homogeneous users differ: {gap} > {band}");
        }
    }

    #[test]
    fn adaptation_beats_no_adaptation_on_heterogeneous_tasks() {
        // Users with opposing regression vectors: no single meta-model fits
        // them all, so the test-time adaptation step must pay off.
        let similar = TaskFamily::toy(4, TaskMode::Similar);
        let dissimilar = TaskFamily::toy(4, TaskMode::Dissimilar);
        let mut tasks = Vec::new();
        for i in 0..6usize {
            let spec = if i % 2 == 0 {
                similar.task(6, i).unwrap()
            } else {
                dissimilar.task(6, i).unwrap()
            };
            let ds = build_dataset(&spec, 12, &mut stream(61, &[purpose::DATA, i as u64])).unwrap();
            tasks.push((spec, ds));
        }
        let coll = TaskCollection { tasks };
        let mut base = base_cfg(6, 12, 4, 15, 10.0);
        base.k = 5;
        base.alpha = 0.1;
        base.t_max = 400;
        base.beta_cap = 0.05;
        base.mc_population = 4_000;
        let cfg = FedConfig::new(base, 1);
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let fed = fed_train(&coll, &cfg, &loss).unwrap();
        let adapted = fed_personalization_eval(&fed.output, &coll, &cfg, &loss, 99).unwrap();
        let mut no_adapt_cfg = cfg.clone();
        no_adapt_cfg.base.alpha = 0.0;
        let unadapted =
            fed_personalization_eval(&fed.output, &coll, &no_adapt_cfg, &loss, 99).unwrap();
        assert!(
            adapted.average.value < unadapted.average.value,
            "adaptation should lower the averaged personalized loss: {} vs {}",
            adapted.average.value,
            unadapted.average.value
        );
    }

    #[test]
    fn verbose_trace_rows_cover_all_local_steps() {
        let coll = toy_collection(7, 2, 6, 2);
        let mut base = base_cfg(2, 6, 2, 16, 5.0);
        base.t_max = 3;
        base.r = 2;
        let mut cfg = FedConfig::new(base, 2);
        cfg.verbose_trace = true;
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let fed = fed_train(&coll, &cfg, &loss).unwrap();
        assert_eq!(fed.local_trace.len(), 3 * 2 * 2);
        let mut buf = Vec::new();
        fed.write_local_trace_csv(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1 + 12);
    }
}
