//! Projected stochastic MAML training.
//!
//! Each round draws `r` tasks without replacement, takes one stochastic
//! meta-gradient step per task, averages the per-task iterates, and projects
//! the average back onto the constraint set. The stepsize follows the
//! `min(beta, 8 / (mu (t+1)))` schedule. Batch and sample-index randomness
//! is addressed by `(seed, round, task, local step)` streams, which makes
//! runs bit-reproducible and lets coupled runs on perturbed data share their
//! index-level randomness exactly.

use crate::error::{Error, Result};
use crate::hash::hash_f64_slices;
use crate::losses::{project, ConstraintSet, LossModel};
use crate::meta_objective::{
    collection_meta_loss, draw_batch_indices, meta_gradient_at_indices, MetaConfig,
};
use crate::numeric::MeanAcc;
use crate::rng::{purpose, stream};
use crate::task_model::{diff_collections, PerturbationRecord, TaskCollection};
use ndarray::Array1;
use rand::seq::index::sample as sample_indices;
use std::io::Write;

/// All knobs of one training run.
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    /// Number of tasks.
    pub m: usize,
    /// Samples per split per task.
    pub n: usize,
    /// Adaptation batch size.
    pub k: usize,
    /// Outer batch size.
    pub b: usize,
    /// Tasks sampled per round.
    pub r: usize,
    /// Number of rounds.
    pub t_max: usize,
    /// Inner (adaptation) stepsize.
    pub alpha: f64,
    /// Outer stepsize cap; the schedule decays below it as `8/(mu(t+1))`.
    pub beta_cap: f64,
    pub seed: u64,
    pub constraint: ConstraintSet,
    /// Initial iterate; the constraint center when absent.
    pub init: Option<Array1<f64>>,
    /// Record per-round counts of marked-position draws.
    pub record_overlap: bool,
    /// The marked positions that overlap recording counts against.
    pub overlap_target: Option<PerturbationRecord>,
    /// Record the objective trace at geometrically spaced rounds.
    pub record_loss_trace: bool,
    /// Monte Carlo subsets for trace evaluation (traces are diagnostics and
    /// use a cheaper estimate than reference evaluations).
    pub trace_mc_subsets: usize,
    pub enumeration_cap: usize,
    pub mc_subsets: usize,
    pub mc_population: usize,
}

impl TrainerConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: usize,
        n: usize,
        k: usize,
        b: usize,
        r: usize,
        t_max: usize,
        alpha: f64,
        beta_cap: f64,
        seed: u64,
        constraint: ConstraintSet,
    ) -> Self {
        TrainerConfig {
            m,
            n,
            k,
            b,
            r,
            t_max,
            alpha,
            beta_cap,
            seed,
            constraint,
            init: None,
            record_overlap: false,
            overlap_target: None,
            record_loss_trace: false,
            trace_mc_subsets: 2_000,
            enumeration_cap: 100_000,
            mc_subsets: 20_000,
            mc_population: 2_000,
        }
    }

    pub fn meta(&self) -> MetaConfig {
        MetaConfig {
            alpha: self.alpha,
            k: self.k,
            enumeration_cap: self.enumeration_cap,
            mc_subsets: self.mc_subsets,
            mc_population: self.mc_population,
        }
    }

    fn trace_meta(&self) -> MetaConfig {
        MetaConfig {
            mc_subsets: self.trace_mc_subsets,
            ..self.meta()
        }
    }

    pub fn validate(&self, collection: &TaskCollection, mu: f64) -> Result<()> {
        if collection.m() != self.m || collection.n() != self.n {
            return Err(Error::StructuralMismatch(format!(
                "collection is {}x{}, config expects {}x{}",
                collection.m(),
                collection.n(),
                self.m,
                self.n
            )));
        }
        if self.r == 0 || self.r > self.m {
            return Err(Error::InvalidConfig(format!(
                "tasks per round {} out of range 1..={}",
                self.r, self.m
            )));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::BatchTooLarge {
                k: self.k,
                n: self.n,
            });
        }
        if self.b == 0 {
            return Err(Error::InvalidSize { n: 0 });
        }
        if self.constraint.dim() != collection.dim() {
            return Err(Error::DimensionMismatch {
                expected: collection.dim(),
                got: self.constraint.dim(),
            });
        }
        if mu > 0.0 && self.beta_cap > 8.0 / mu + 1e-12 {
            return Err(Error::PremiseViolation(format!(
                "beta cap {} exceeds 8/mu = {}",
                self.beta_cap,
                8.0 / mu
            )));
        }
        if let Some(init) = &self.init {
            if init.len() != collection.dim() {
                return Err(Error::DimensionMismatch {
                    expected: collection.dim(),
                    got: init.len(),
                });
            }
        }
        if self.record_overlap && self.overlap_target.is_none() {
            return Err(Error::InvalidConfig(
                "overlap recording needs a registered perturbation target".into(),
            ));
        }
        Ok(())
    }
}

/// Products of one training run.
#[derive(Debug, Clone)]
pub struct TrainerOutput {
    pub last_iterate: Array1<f64>,
    /// Time average of all `t_max + 1` iterates including the initial one.
    pub averaged_iterate: Array1<f64>,
    /// `(round, objective estimate)` at geometrically spaced rounds.
    pub loss_trace: Vec<(usize, f64)>,
    /// `(round, marked outer draws, marked inner draws)` for every round,
    /// present when overlap recording was on.
    pub overlap_trace: Vec<(usize, u32, u32)>,
    /// `beta_t` of every round, for trace emission.
    pub stepsizes: Vec<f64>,
}

impl TrainerOutput {
    /// Content hash over both output iterates.
    pub fn content_hash(&self) -> String {
        hash_f64_slices(&[
            self.last_iterate.as_slice().unwrap(),
            self.averaged_iterate.as_slice().unwrap(),
        ])
    }

    /// Trace CSV `t,beta_t,fhat,u_t,v_t`, with empty fields where a column
    /// was not recorded at that round.
    pub fn write_trace_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t,beta_t,fhat,u_t,v_t")?;
        let mut loss_iter = self.loss_trace.iter().peekable();
        for (t, beta) in self.stepsizes.iter().enumerate() {
            let fhat = match loss_iter.peek() {
                Some((lt, v)) if *lt == t => {
                    let s = v.to_string();
                    loss_iter.next();
                    s
                }
                _ => String::new(),
            };
            let (u, v) = self
                .overlap_trace
                .get(t)
                .map(|(_, u, v)| (u.to_string(), v.to_string()))
                .unwrap_or_default();
            writeln!(out, "{t},{beta},{fhat},{u},{v}")?;
        }
        // Final iterate row carries any trailing trace entry.
        if let Some((lt, v)) = loss_iter.next() {
            writeln!(out, "{lt},,{v},,")?;
        }
        Ok(())
    }
}

/// The decaying outer stepsize `min(beta_cap, 8 / (mu (t+1)))`.
pub fn stepsize(t: usize, beta_cap: f64, mu: f64) -> f64 {
    beta_cap.min(8.0 / (mu * (t as f64 + 1.0)))
}

/// Task indices of round `t`, drawn without replacement and sorted.
fn round_batch(seed: u64, t: usize, m: usize, r: usize) -> Vec<usize> {
    let mut rng = stream(seed, &[purpose::BATCH, t as u64]);
    let mut batch: Vec<usize> = sample_indices(&mut rng, m, r).into_iter().collect();
    batch.sort_unstable();
    batch
}

/// Index draws for task `i` at round `t`, local step `s`.
fn task_draw(
    seed: u64,
    t: usize,
    i: usize,
    s: usize,
    n: usize,
    k: usize,
    b: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream(seed, &[purpose::TASK_DRAW, t as u64, i as u64, s as u64]);
    draw_batch_indices(&mut rng, n, k, b)
}

fn overlap_counts(
    target: &PerturbationRecord,
    in_idx: &[usize],
    out_idx: &[usize],
) -> (u32, u32) {
    let u = out_idx
        .iter()
        .filter(|&&p| p == target.outer_position)
        .count() as u32;
    let v = in_idx
        .iter()
        .filter(|p| target.inner_positions.contains(p))
        .count() as u32;
    (u, v)
}

fn trace_round(t: usize, t_max: usize) -> bool {
    t == 0 || t.is_power_of_two() || t + 1 == t_max
}

struct RoundState<'a> {
    collection: &'a TaskCollection,
    w: Array1<f64>,
    avg_sum: Array1<f64>,
    overlap_trace: Vec<(usize, u32, u32)>,
    loss_trace: Vec<(usize, f64)>,
}

impl<'a> RoundState<'a> {
    fn new(collection: &'a TaskCollection, w0: Array1<f64>) -> Self {
        RoundState {
            collection,
            avg_sum: w0.clone(),
            w: w0,
            overlap_trace: Vec::new(),
            loss_trace: Vec::new(),
        }
    }

    /// One full round: per-task steps on the shared index draws, average,
    /// project.
    fn advance(
        &mut self,
        t: usize,
        beta: f64,
        batch: &[usize],
        draws: &[(Vec<usize>, Vec<usize>)],
        cfg: &TrainerConfig,
        loss: &dyn LossModel,
    ) -> Result<()> {
        let d = self.w.len();
        let mut sum = Array1::<f64>::zeros(d);
        for (&i, (in_idx, out_idx)) in batch.iter().zip(draws) {
            let ds = &self.collection.tasks[i].1;
            let g = meta_gradient_at_indices(&self.w.view(), ds, in_idx, out_idx, cfg.alpha, loss);
            let mut wi = self.w.clone();
            wi.scaled_add(-beta, &g);
            sum += &wi;
        }
        sum /= cfg.r as f64;
        let w_new = project(&sum.view(), &cfg.constraint);
        if !w_new.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                round: t,
                user: None,
                local_step: None,
            });
        }
        debug_assert!(cfg.constraint.contains(&w_new.view(), 1e-9));
        self.w = w_new;
        self.avg_sum += &self.w;
        Ok(())
    }

    fn record_overlap(&mut self, t: usize, counts: (u32, u32)) {
        self.overlap_trace.push((t, counts.0, counts.1));
    }

    fn record_loss(&mut self, t: usize, cfg: &TrainerConfig, loss: &dyn LossModel) -> Result<()> {
        let est = collection_meta_loss(
            &self.w.view(),
            self.collection,
            &cfg.trace_meta(),
            loss,
            cfg.seed,
        )?;
        self.loss_trace.push((t, est.value));
        Ok(())
    }

    fn finish(self, t_max: usize, stepsizes: Vec<f64>) -> TrainerOutput {
        TrainerOutput {
            last_iterate: self.w,
            averaged_iterate: self.avg_sum / (t_max as f64 + 1.0),
            loss_trace: self.loss_trace,
            overlap_trace: self.overlap_trace,
            stepsizes,
        }
    }
}

fn initial_iterate(cfg: &TrainerConfig) -> Array1<f64> {
    let w0 = cfg
        .init
        .clone()
        .unwrap_or_else(|| cfg.constraint.center.clone());
    project(&w0.view(), &cfg.constraint)
}

/// Run MAML training on a collection.
pub fn maml_train(
    collection: &TaskCollection,
    cfg: &TrainerConfig,
    loss: &dyn LossModel,
) -> Result<TrainerOutput> {
    let mu = loss.strong_convexity();
    cfg.validate(collection, mu)?;
    let mut state = RoundState::new(collection, initial_iterate(cfg));
    let mut stepsizes = Vec::with_capacity(cfg.t_max);
    for t in 0..cfg.t_max {
        if cfg.record_loss_trace && trace_round(t, cfg.t_max) {
            state.record_loss(t, cfg, loss)?;
        }
        let beta = stepsize(t, cfg.beta_cap, mu);
        stepsizes.push(beta);
        let batch = round_batch(cfg.seed, t, cfg.m, cfg.r);
        let draws: Vec<(Vec<usize>, Vec<usize>)> = batch
            .iter()
            .map(|&i| task_draw(cfg.seed, t, i, 0, cfg.n, cfg.k, cfg.b))
            .collect();
        if cfg.record_overlap {
            let target = cfg.overlap_target.as_ref().expect("validated");
            let counts = batch
                .iter()
                .position(|&i| i == target.task_index)
                .map(|pos| overlap_counts(target, &draws[pos].0, &draws[pos].1))
                .unwrap_or((0, 0));
            state.record_overlap(t, counts);
        }
        state.advance(t, beta, &batch, &draws, cfg, loss)?;
    }
    if cfg.record_loss_trace && cfg.t_max > 0 {
        state.record_loss(cfg.t_max, cfg, loss)?;
    }
    Ok(state.finish(cfg.t_max, stepsizes))
}

/// Two trainings in lockstep on a collection and its perturbation.
#[derive(Debug, Clone)]
pub struct CoupledOutput {
    pub original: TrainerOutput,
    pub perturbed: TrainerOutput,
    /// Final iterate distance.
    pub divergence: f64,
    /// `(round, distance)` after every round.
    pub divergence_trace: Vec<(usize, f64)>,
}

/// Run the same training on `original` and `perturbed`, sharing every batch
/// and every sample-index draw. The perturbation record is recovered by
/// diffing the two collections; identical collections are allowed and give
/// zero divergence.
pub fn coupled_train(
    original: &TaskCollection,
    perturbed: &TaskCollection,
    cfg: &TrainerConfig,
    loss: &dyn LossModel,
) -> Result<CoupledOutput> {
    let mu = loss.strong_convexity();
    let record = diff_collections(original, perturbed)?;
    let mut cfg = cfg.clone();
    if let Some(rec) = &record {
        cfg.overlap_target = Some(rec.clone());
        cfg.record_overlap = true;
    } else {
        cfg.record_overlap = false;
        cfg.overlap_target = None;
    }
    cfg.validate(original, mu)?;

    let w0 = initial_iterate(&cfg);
    let mut a = RoundState::new(original, w0.clone());
    let mut b = RoundState::new(perturbed, w0);
    let mut stepsizes = Vec::with_capacity(cfg.t_max);
    let mut divergence_trace = Vec::with_capacity(cfg.t_max);
    for t in 0..cfg.t_max {
        let beta = stepsize(t, cfg.beta_cap, mu);
        stepsizes.push(beta);
        let batch = round_batch(cfg.seed, t, cfg.m, cfg.r);
        let draws: Vec<(Vec<usize>, Vec<usize>)> = batch
            .iter()
            .map(|&i| task_draw(cfg.seed, t, i, 0, cfg.n, cfg.k, cfg.b))
            .collect();
        if let Some(target) = &cfg.overlap_target {
            let counts = batch
                .iter()
                .position(|&i| i == target.task_index)
                .map(|pos| overlap_counts(target, &draws[pos].0, &draws[pos].1))
                .unwrap_or((0, 0));
            a.record_overlap(t, counts);
            b.record_overlap(t, counts);
        }
        a.advance(t, beta, &batch, &draws, &cfg, loss)?;
        b.advance(t, beta, &batch, &draws, &cfg, loss)?;
        let diff = &a.w - &b.w;
        divergence_trace.push((t, diff.dot(&diff).sqrt()));
    }
    let divergence = divergence_trace.last().map(|(_, d)| *d).unwrap_or(0.0);
    Ok(CoupledOutput {
        original: a.finish(cfg.t_max, stepsizes.clone()),
        perturbed: b.finish(cfg.t_max, stepsizes),
        divergence,
        divergence_trace,
    })
}

/// Time averages of the marked-position draw counts.
#[derive(Debug, Clone, Copy)]
pub struct OverlapStats {
    pub mean_u: f64,
    pub mean_v: f64,
    pub se_u: f64,
    pub se_v: f64,
}

/// Summarize an overlap trace.
pub fn overlap_statistics(output: &TrainerOutput) -> Result<OverlapStats> {
    if output.overlap_trace.is_empty() {
        return Err(Error::OverlapNotRecorded);
    }
    let mut acc_u = MeanAcc::default();
    let mut acc_v = MeanAcc::default();
    for &(_, u, v) in &output.overlap_trace {
        acc_u.push(u as f64);
        acc_v.push(v as f64);
    }
    Ok(OverlapStats {
        mean_u: acc_u.mean(),
        mean_v: acc_v.mean(),
        se_u: acc_u.std_err(),
        se_v: acc_v.std_err(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::RegularizedQuadratic;
    use crate::meta_objective::collection_meta_gradient;
    use crate::task_model::{perturb_dataset, TaskFamily, TaskMode};

    fn toy_collection(seed: u64, m: usize, n: usize, dim: usize) -> TaskCollection {
        TaskFamily::toy(dim, TaskMode::Similar)
            .collection(seed, m, n)
            .unwrap()
    }

    fn base_cfg(m: usize, n: usize, dim: usize, seed: u64) -> TrainerConfig {
        TrainerConfig::new(
            m,
            n,
            3.min(n),
            4.min(n),
            2.min(m),
            50,
            0.02,
            0.05,
            seed,
            ConstraintSet::ball(10.0, dim).unwrap(),
        )
    }

    #[test]
    fn stepsize_schedule() {
        let mu = 0.02;
        assert_eq!(stepsize(0, 8.0 / mu, mu), 8.0 / mu);
        assert!((stepsize(999, 1.0, mu) - 0.4).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in 0..200 {
            let s = stepsize(t, 0.7, mu);
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn zero_rounds_returns_initial_point() {
        let coll = toy_collection(1, 3, 8, 4);
        let mut cfg = base_cfg(3, 8, 4, 2);
        cfg.t_max = 0;
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let out = maml_train(&coll, &cfg, &loss).unwrap();
        assert_eq!(out.last_iterate, Array1::<f64>::zeros(4));
        assert_eq!(out.averaged_iterate, Array1::<f64>::zeros(4));
    }

    #[test]
    fn full_batch_single_task_matches_projected_gradient_descent() {
        // m = r = 1 with k = n and b = n leaves nothing stochastic: the run
        // must replay deterministic projected gradient descent on the
        // task's meta-objective.
        let coll = toy_collection(3, 1, 6, 3);
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let mut cfg = base_cfg(1, 6, 3, 5);
        cfg.k = 6;
        cfg.b = 6;
        cfg.r = 1;
        cfg.t_max = 10;
        let out = maml_train(&coll, &cfg, &loss).unwrap();

        let mu = loss.strong_convexity();
        let meta = cfg.meta();
        let mut w = Array1::<f64>::zeros(3);
        for t in 0..10 {
            let beta = stepsize(t, cfg.beta_cap, mu);
            let g = collection_meta_gradient(&w.view(), &coll, &meta, &loss, 0)
                .unwrap()
                .grad;
            let mut step = w.clone();
            step.scaled_add(-beta, &g);
            w = project(&step.view(), &cfg.constraint);
        }
        let diff = (&w - &out.last_iterate)
            .dot(&(&w - &out.last_iterate))
            .sqrt();
        assert!(diff < 1e-10, "oracle mismatch {diff}");
    }

    #[test]
    fn training_is_deterministic() {
        let coll = toy_collection(7, 4, 10, 3);
        let cfg = base_cfg(4, 10, 3, 11);
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let a = maml_train(&coll, &cfg, &loss).unwrap();
        let b = maml_train(&coll, &cfg, &loss).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn iterates_stay_feasible() {
        let coll = toy_collection(9, 3, 8, 4);
        let mut cfg = base_cfg(3, 8, 4, 13);
        cfg.constraint = ConstraintSet::ball(0.5, 4).unwrap();
        cfg.beta_cap = 8.0 / 0.02;
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let out = maml_train(&coll, &cfg, &loss).unwrap();
        assert!(cfg.constraint.contains(&out.last_iterate.view(), 1e-9));
        assert!(cfg
            .constraint
            .contains(&out.averaged_iterate.view(), 1e-9));
    }

    #[test]
    fn coupled_identical_collections_never_diverge() {
        let coll = toy_collection(15, 3, 8, 3);
        let cfg = base_cfg(3, 8, 3, 17);
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let out = coupled_train(&coll, &coll, &cfg, &loss).unwrap();
        assert_eq!(out.divergence, 0.0);
        assert!(out.divergence_trace.iter().all(|&(_, d)| d == 0.0));
    }

    #[test]
    fn coupled_untouched_task_keeps_trajectories_equal() {
        // One round, and a seed chosen so the perturbed task is not in the
        // round's batch.
        let coll = toy_collection(19, 2, 6, 3);
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let mut found = false;
        for seed in 0..50 {
            if round_batch(seed, 0, 2, 1) == vec![0] {
                let (pert, _) = perturb_dataset(
                    &coll,
                    1,
                    2,
                    &mut stream(seed, &[purpose::PERTURB]),
                )
                .unwrap();
                let mut cfg = base_cfg(2, 6, 3, seed);
                cfg.r = 1;
                cfg.t_max = 1;
                let out = coupled_train(&coll, &pert, &cfg, &loss).unwrap();
                assert_eq!(out.divergence, 0.0);
                found = true;
                break;
            }
        }
        assert!(found, "no seed drew task 0 alone");
    }

    #[test]
    fn overlap_counting_marks_multiplicity() {
        let target = PerturbationRecord {
            task_index: 0,
            inner_positions: vec![1, 4],
            outer_position: 2,
        };
        let (u, v) = overlap_counts(&target, &[0, 4, 5], &[2, 2, 3, 2]);
        assert_eq!(u, 3);
        assert_eq!(v, 1);
    }

    #[test]
    fn overlap_statistics_requires_a_trace() {
        let coll = toy_collection(1, 2, 4, 2);
        let cfg = base_cfg(2, 4, 2, 1);
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let out = maml_train(&coll, &cfg, &loss).unwrap();
        assert!(matches!(
            overlap_statistics(&out),
            Err(Error::OverlapNotRecorded)
        ));
    }

    #[test]
    fn overlap_mean_u_single_task_full_outer() {
        // With one task sampled every round and b = n, the marked outer
        // position is drawn exactly once per round.
        let coll = toy_collection(23, 1, 10, 2);
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let mut cfg = base_cfg(1, 10, 2, 29);
        cfg.r = 1;
        cfg.b = 10;
        cfg.t_max = 500;
        cfg.record_overlap = true;
        cfg.overlap_target = Some(PerturbationRecord {
            task_index: 0,
            inner_positions: vec![0, 5],
            outer_position: 3,
        });
        let out = maml_train(&coll, &cfg, &loss).unwrap();
        let stats = overlap_statistics(&out).unwrap();
        assert_eq!(stats.mean_u, 1.0);
        assert_eq!(stats.se_u, 0.0);
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let coll = toy_collection(31, 2, 6, 2);
        let mut cfg = base_cfg(2, 6, 2, 37);
        cfg.t_max = 8;
        cfg.record_loss_trace = true;
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        let out = maml_train(&coll, &cfg, &loss).unwrap();
        let mut buf = Vec::new();
        out.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,beta_t,fhat,u_t,v_t");
        assert_eq!(text.lines().count(), 1 + cfg.t_max + 1);
    }

    #[test]
    fn divergence_reports_round() {
        let coll = toy_collection(41, 2, 6, 3);
        let mut cfg = base_cfg(2, 6, 3, 43);
        // An absurd stepsize cap on an unconstrained set overflows quickly.
        cfg.constraint = ConstraintSet::unconstrained(3).unwrap();
        cfg.beta_cap = 8.0 / 0.02;
        cfg.t_max = 5_000;
        let loss = RegularizedQuadratic::new(0.01).unwrap();
        match maml_train(&coll, &cfg, &loss) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
