//! Grid experiments over (task count, samples per task): train on each cell
//! and measure the post-adaptation test error, either on the training tasks
//! (recurring) or on a held-out task (similar or dissimilar), repeated and
//! averaged with error bars. This produces the data behind the error-trend
//! figures.

use crate::error::{Error, Result};
use crate::losses::{ConstraintSet, LossModel, RegularizedQuadratic};
use crate::meta_objective::{collection_population_loss, population_meta_loss};
use crate::numeric::MeanAcc;
use crate::rng::{derive, purpose};
use crate::task_model::{TaskFamily, TaskMode};
use crate::trainer::{maml_train, TrainerConfig};
use rayon::prelude::*;

/// Which test-time task the sweep evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    /// Test on the training tasks themselves.
    Recurring,
    /// Held-out task from the same coefficient family.
    NewSimilar,
    /// Held-out task from the opposing coefficient family.
    NewDissimilar,
}

impl FigureKind {
    pub fn label(self) -> &'static str {
        match self {
            FigureKind::Recurring => "recurring",
            FigureKind::NewSimilar => "new_similar",
            FigureKind::NewDissimilar => "new_dissimilar",
        }
    }

    fn tag(self) -> u64 {
        match self {
            FigureKind::Recurring => 0,
            FigureKind::NewSimilar => 1,
            FigureKind::NewDissimilar => 2,
        }
    }
}

/// All knobs of a sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub grid_m: Vec<usize>,
    pub grid_n: Vec<usize>,
    /// Repetitions per cell; tasks and data are resampled per repetition.
    pub reps: usize,
    pub dim: usize,
    pub reg: f64,
    pub k: usize,
    pub b: usize,
    /// Tasks per round, capped at each cell's `m`.
    pub r_cap: usize,
    pub t_max: usize,
    pub alpha: f64,
    pub beta_cap: f64,
    pub radius: f64,
    pub feature_cov_scale: f64,
    pub noise_var: f64,
    pub mc_population: usize,
    pub seed: u64,
}

impl SweepConfig {
    /// The default toy sweep: the linear-regression family at `d = 10`,
    /// adaptation batch 5, inner stepsize 0.1, ridge 0.01.
    pub fn default_toy(seed: u64) -> Self {
        SweepConfig {
            grid_m: vec![1, 5, 10, 20],
            grid_n: vec![25, 50, 100, 200],
            reps: 5,
            dim: 10,
            reg: 0.01,
            k: 5,
            b: 10,
            r_cap: 5,
            t_max: 4_000,
            alpha: 0.1,
            beta_cap: 0.02,
            radius: 10.0,
            feature_cov_scale: 0.2,
            noise_var: 0.1,
            mc_population: 2_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 repetitions, got {}",
                self.reps
            )));
        }
        if self.grid_m.is_empty() || self.grid_n.is_empty() {
            return Err(Error::InvalidConfig("empty grid".into()));
        }
        if self.grid_n.iter().any(|&n| self.k > n) {
            return Err(Error::InvalidConfig(
                "adaptation batch exceeds a grid sample size".into(),
            ));
        }
        Ok(())
    }
}

/// Per-cell sweep outcome.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub m: usize,
    pub n: usize,
    pub mean_error: f64,
    pub std_err: f64,
    pub per_rep: Vec<f64>,
}

/// CSV rows `kind,m,n,reps,mean_error,std_err` for a sweep's cells.
pub fn write_sweep_csv<W: std::io::Write>(
    kind: FigureKind,
    cells: &[CellResult],
    out: &mut W,
) -> Result<()> {
    writeln!(out, "kind,m,n,reps,mean_error,std_err")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            kind.label(),
            c.m,
            c.n,
            c.per_rep.len(),
            c.mean_error,
            c.std_err
        )?;
    }
    Ok(())
}

fn run_rep(
    kind: FigureKind,
    cfg: &SweepConfig,
    m: usize,
    n: usize,
    rep: usize,
    loss: &dyn LossModel,
) -> Result<f64> {
    let rep_seed = derive(
        cfg.seed,
        &[purpose::SWEEP, kind.tag(), m as u64, n as u64, rep as u64],
    );
    let family = TaskFamily {
        dim: cfg.dim,
        mode: TaskMode::Similar,
        feature_cov_scale: cfg.feature_cov_scale,
        noise_var: cfg.noise_var,
    };
    let collection = family.collection(rep_seed, m, n)?;
    let mut trainer_cfg = TrainerConfig::new(
        m,
        n,
        cfg.k,
        cfg.b.min(n),
        cfg.r_cap.min(m),
        cfg.t_max,
        cfg.alpha,
        cfg.beta_cap,
        derive(rep_seed, &[purpose::TASK_DRAW]),
        ConstraintSet::ball(cfg.radius, cfg.dim)?,
    );
    trainer_cfg.mc_population = cfg.mc_population;
    let out = maml_train(&collection, &trainer_cfg, loss)?;
    let w = out.averaged_iterate.view();
    let meta = trainer_cfg.meta();
    let eval_seed = derive(rep_seed, &[purpose::POPULATION]);
    let value = match kind {
        FigureKind::Recurring => {
            collection_population_loss(&w, &collection.specs(), &meta, loss, eval_seed)?.value
        }
        FigureKind::NewSimilar | FigureKind::NewDissimilar => {
            let mode = if kind == FigureKind::NewSimilar {
                TaskMode::Similar
            } else {
                TaskMode::Dissimilar
            };
            let unseen_family = TaskFamily { mode, ..family };
            // Index m: outside the training task index range.
            let unseen = unseen_family.task(rep_seed, m)?;
            population_meta_loss(&w, &unseen, &meta, loss, eval_seed)?.value
        }
    };
    Ok(value)
}

/// Run one sweep. Cells and repetitions execute in parallel; the collection
/// order is fixed, so output is deterministic for a fixed seed.
pub fn run_sweep(kind: FigureKind, cfg: &SweepConfig) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let loss = RegularizedQuadratic::new(cfg.reg)?;
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for &m in &cfg.grid_m {
        for &n in &cfg.grid_n {
            cells.push((m, n));
        }
    }
    let jobs: Vec<(usize, usize, usize)> = cells
        .iter()
        .flat_map(|&(m, n)| (0..cfg.reps).map(move |rep| (m, n, rep)))
        .collect();
    let values: Result<Vec<f64>> = jobs
        .par_iter()
        .map(|&(m, n, rep)| run_rep(kind, cfg, m, n, rep, &loss))
        .collect();
    let values = values?;
    let mut results = Vec::with_capacity(cells.len());
    for (ci, &(m, n)) in cells.iter().enumerate() {
        let per_rep: Vec<f64> = (0..cfg.reps)
            .map(|rep| values[ci * cfg.reps + rep])
            .collect();
        let mut acc = MeanAcc::default();
        for &v in &per_rep {
            acc.push(v);
        }
        results.push(CellResult {
            m,
            n,
            mean_error: acc.mean(),
            std_err: acc.std_err(),
            per_rep,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SweepConfig {
        let mut cfg = SweepConfig::default_toy(3);
        cfg.grid_m = vec![1, 3];
        cfg.grid_n = vec![8, 16];
        cfg.reps = 3;
        cfg.dim = 3;
        cfg.t_max = 60;
        cfg.mc_population = 400;
        cfg
    }

    #[test]
    fn sweep_shapes_and_determinism() {
        let cfg = tiny_cfg();
        let a = run_sweep(FigureKind::Recurring, &cfg).unwrap();
        let b = run_sweep(FigureKind::Recurring, &cfg).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mean_error.to_bits(), y.mean_error.to_bits());
        }
    }

    #[test]
    fn rep_count_validation() {
        let mut cfg = tiny_cfg();
        cfg.reps = 2;
        assert!(matches!(
            run_sweep(FigureKind::Recurring, &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn kinds_differ_in_evaluation_task() {
        let cfg = tiny_cfg();
        let recurring = run_sweep(FigureKind::Recurring, &cfg).unwrap();
        let dissimilar = run_sweep(FigureKind::NewDissimilar, &cfg).unwrap();
        // A dissimilar held-out task must be much harder than recurring
        // evaluation on any cell of this tiny grid.
        for (r, d) in recurring.iter().zip(&dissimilar) {
            assert!(d.mean_error > r.mean_error);
        }
    }

    #[test]
    fn csv_layout() {
        let cfg = tiny_cfg();
        let cells = run_sweep(FigureKind::NewSimilar, &cfg).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(FigureKind::NewSimilar, &cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("kind,m,n,reps,mean_error,std_err\n"));
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("new_similar,1,8,3,"));
    }
}
