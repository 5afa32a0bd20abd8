//! Synthetic linear-regression task distributions.
//!
//! A task is a Gaussian linear model: features `x ~ N(mean, s * I_d)`,
//! labels `y = coeff . x + eps` with `eps ~ N(0, noise_var)` and a unit
//! coefficient vector. The module generates task specs and datasets,
//! perturbs datasets for stability experiments, evaluates the closed-form
//! joint density of `z = (x, y)`, and samples from the maximal coupling of
//! two task laws.

use crate::error::{Error, Result};
use crate::rng::{purpose, stream};
use ndarray::{Array1, ArrayView1};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::collections::HashSet;
use std::io::{BufRead, Write};

const LN_2PI: f64 = 1.8378770664093453;

/// How a coefficient vector is derived from a uniform draw `u` over `[0,1]^d`.
///
/// `Similar` normalizes `u + 1`, keeping all tasks in the same orthant;
/// `Dissimilar` normalizes `u - 1`, pointing the coefficient away from the
/// similar family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    Similar,
    Dissimilar,
}

impl TaskMode {
    fn tag(self) -> u64 {
        match self {
            TaskMode::Similar => 0,
            TaskMode::Dissimilar => 1,
        }
    }
}

/// Generative law of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    /// Feature mean.
    pub mean: Array1<f64>,
    /// Unit regression vector.
    pub coeff: Array1<f64>,
    /// Isotropic feature covariance scale (the diagonal entry).
    pub feature_cov_scale: f64,
    /// Label noise variance.
    pub noise_var: f64,
}

impl TaskSpec {
    pub fn new(
        mean: Array1<f64>,
        coeff: Array1<f64>,
        feature_cov_scale: f64,
        noise_var: f64,
    ) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidDimension { dim: 0 });
        }
        if coeff.len() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: coeff.len(),
            });
        }
        if !(feature_cov_scale >= 0.0) || !(noise_var >= 0.0) {
            return Err(Error::InvalidConfig(
                "covariance scale and noise variance must be nonnegative".into(),
            ));
        }
        let norm = coeff.dot(&coeff).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "coefficient vector must have unit norm, got {norm}"
            )));
        }
        Ok(TaskSpec {
            mean,
            coeff,
            feature_cov_scale,
            noise_var,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log joint density of `z = (x, y)` under this task. Requires both the
    /// feature law and the label noise to be nondegenerate.
    pub fn log_density(&self, z: &Sample) -> Result<f64> {
        if z.x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.x.len(),
            });
        }
        if self.feature_cov_scale <= 0.0 || self.noise_var <= 0.0 {
            return Err(Error::DegenerateDensity(
                "closed-form joint density needs positive feature covariance and noise variance"
                    .into(),
            ));
        }
        let d = self.dim() as f64;
        let s = self.feature_cov_scale;
        let diff = &z.x - &self.mean;
        let quad_x = diff.dot(&diff) / s;
        let log_x = -0.5 * (d * (LN_2PI + s.ln()) + quad_x);
        let resid = z.y - self.coeff.dot(&z.x);
        let log_y = -0.5 * (LN_2PI + self.noise_var.ln() + resid * resid / self.noise_var);
        Ok(log_x + log_y)
    }
}

/// One data point `z = (x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Array1<f64>,
    pub y: f64,
}

impl Sample {
    fn bits(&self) -> Vec<u64> {
        let mut b: Vec<u64> = self.x.iter().map(|v| v.to_bits()).collect();
        b.push(self.y.to_bits());
        b
    }
}

/// One task's split sample: `inner` feeds the adaptation step, `outer`
/// evaluates the adapted model. Both halves have the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub inner: Vec<Sample>,
    pub outer: Vec<Sample>,
}

impl TaskDataset {
    pub fn n(&self) -> usize {
        self.inner.len()
    }

    pub fn dim(&self) -> usize {
        self.inner[0].x.len()
    }
}

/// All tasks of one experiment: `(spec, dataset)` pairs sharing `n` and `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCollection {
    pub tasks: Vec<(TaskSpec, TaskDataset)>,
}

impl TaskCollection {
    pub fn from_parts(specs: Vec<TaskSpec>, datasets: Vec<TaskDataset>) -> Result<Self> {
        if specs.len() != datasets.len() {
            return Err(Error::StructuralMismatch(format!(
                "{} specs vs {} datasets",
                specs.len(),
                datasets.len()
            )));
        }
        let collection = TaskCollection {
            tasks: specs.into_iter().zip(datasets).collect(),
        };
        collection.validate()?;
        Ok(collection)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::InvalidSize { n: 0 });
        }
        let d = self.tasks[0].0.dim();
        let n = self.tasks[0].1.n();
        for (spec, ds) in &self.tasks {
            if spec.dim() != d || ds.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: ds.dim(),
                });
            }
            if ds.inner.len() != n || ds.outer.len() != n {
                return Err(Error::InvalidSize { n: ds.inner.len() });
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.tasks.len()
    }

    pub fn n(&self) -> usize {
        self.tasks[0].1.n()
    }

    pub fn dim(&self) -> usize {
        self.tasks[0].0.dim()
    }

    pub fn specs(&self) -> Vec<TaskSpec> {
        self.tasks.iter().map(|(s, _)| s.clone()).collect()
    }

    /// Serialize all samples: header `d n m`, then one line per sample
    /// `task_index split x_1 ... x_d y` with floats at 17 significant
    /// digits so the round trip is exact.
    pub fn write_samples<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{} {} {}", self.dim(), self.n(), self.m())?;
        for (i, (_, ds)) in self.tasks.iter().enumerate() {
            for (split, samples) in [("in", &ds.inner), ("out", &ds.outer)] {
                for z in samples {
                    write!(out, "{i} {split}")?;
                    for v in z.x.iter() {
                        write!(out, " {v:.16e}")?;
                    }
                    writeln!(out, " {:.16e}", z.y)?;
                }
            }
        }
        Ok(())
    }

    /// Parse the sample table written by [`TaskCollection::write_samples`].
    pub fn read_samples<R: BufRead>(input: R) -> Result<Vec<TaskDataset>> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header"))?;
        let header = header?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(1, "bad header field")))
            .collect::<Result<_>>()?;
        if head.len() != 3 {
            return Err(parse_err(1, "header must be `d n m`"));
        }
        let (d, n, m) = (head[0], head[1], head[2]);
        let mut datasets: Vec<TaskDataset> = (0..m)
            .map(|_| TaskDataset {
                inner: Vec::with_capacity(n),
                outer: Vec::with_capacity(n),
            })
            .collect();
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let mut tok = line.split_whitespace();
            let task: usize = tok
                .next()
                .ok_or_else(|| parse_err(lineno, "missing task index"))?
                .parse()
                .map_err(|_| parse_err(lineno, "bad task index"))?;
            if task >= m {
                return Err(parse_err(lineno, "task index out of range"));
            }
            let split = tok
                .next()
                .ok_or_else(|| parse_err(lineno, "missing split tag"))?;
            let mut vals = Vec::with_capacity(d + 1);
            for t in tok {
                vals.push(
                    t.parse::<f64>()
                        .map_err(|_| parse_err(lineno, "bad float"))?,
                );
            }
            if vals.len() != d + 1 {
                return Err(parse_err(lineno, "wrong number of coordinates"));
            }
            if !vals.iter().all(|v| v.is_finite()) {
                return Err(parse_err(lineno, "non-finite sample"));
            }
            let y = vals.pop().unwrap();
            let z = Sample {
                x: Array1::from(vals),
                y,
            };
            match split {
                "in" => datasets[task].inner.push(z),
                "out" => datasets[task].outer.push(z),
                _ => return Err(parse_err(lineno, "split must be `in` or `out`")),
            }
        }
        for ds in &datasets {
            if ds.inner.len() != n || ds.outer.len() != n {
                return Err(parse_err(0, "sample counts disagree with header"));
            }
        }
        Ok(datasets)
    }

    /// Serialize the task specs: header `d m`, then one line per task
    /// `index mean_1..mean_d coeff_1..coeff_d feature_cov_scale noise_var`.
    pub fn write_specs<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{} {}", self.dim(), self.m())?;
        for (i, (spec, _)) in self.tasks.iter().enumerate() {
            write!(out, "{i}")?;
            for v in spec.mean.iter() {
                write!(out, " {v:.16e}")?;
            }
            for v in spec.coeff.iter() {
                write!(out, " {v:.16e}")?;
            }
            writeln!(out, " {:.16e} {:.16e}", spec.feature_cov_scale, spec.noise_var)?;
        }
        Ok(())
    }

    pub fn read_specs<R: BufRead>(input: R) -> Result<Vec<TaskSpec>> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header"))?;
        let header = header?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(1, "bad header field")))
            .collect::<Result<_>>()?;
        if head.len() != 2 {
            return Err(parse_err(1, "header must be `d m`"));
        }
        let (d, m) = (head[0], head[1]);
        let mut specs = Vec::with_capacity(m);
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let vals: Vec<f64> = line
                .split_whitespace()
                .skip(1)
                .map(|t| t.parse().map_err(|_| parse_err(lineno, "bad float")))
                .collect::<Result<_>>()?;
            if vals.len() != 2 * d + 2 {
                return Err(parse_err(lineno, "wrong number of spec fields"));
            }
            let mean = Array1::from(vals[..d].to_vec());
            let coeff = Array1::from(vals[d..2 * d].to_vec());
            specs.push(TaskSpec::new(mean, coeff, vals[2 * d], vals[2 * d + 1])?);
        }
        if specs.len() != m {
            return Err(parse_err(0, "spec count disagrees with header"));
        }
        Ok(specs)
    }
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

/// Normalize `u + 1` (similar) or `u - 1` (dissimilar) into a unit
/// coefficient vector. Errors when the shifted direction is the zero vector.
pub fn coeff_from_direction(u: &ArrayView1<f64>, mode: TaskMode) -> Result<Array1<f64>> {
    let shifted = match mode {
        TaskMode::Similar => u.mapv(|v| v + 1.0),
        TaskMode::Dissimilar => u.mapv(|v| v - 1.0),
    };
    let norm = shifted.dot(&shifted).sqrt();
    if norm <= 1e-12 {
        return Err(Error::InvalidConfig(
            "direction draw collapsed to the zero vector".into(),
        ));
    }
    Ok(shifted / norm)
}

fn generate_task_from_rng(
    rng: &mut ChaCha12Rng,
    dim: usize,
    mode: TaskMode,
    feature_cov_scale: f64,
    noise_var: f64,
) -> Result<TaskSpec> {
    if dim == 0 {
        return Err(Error::InvalidDimension { dim: 0 });
    }
    let mean = Array1::from_iter((0..dim).map(|_| rng.random::<f64>()));
    // Resample on the probability-zero event that the draw lands exactly on
    // the all-ones vector in dissimilar mode.
    let coeff = loop {
        let u = Array1::from_iter((0..dim).map(|_| rng.random::<f64>()));
        match coeff_from_direction(&u.view(), mode) {
            Ok(c) => break c,
            Err(_) => continue,
        }
    };
    TaskSpec::new(mean, coeff, feature_cov_scale, noise_var)
}

/// Generate one task spec deterministically from a seed.
pub fn generate_task(
    seed: u64,
    dim: usize,
    mode: TaskMode,
    feature_cov_scale: f64,
    noise_var: f64,
) -> Result<TaskSpec> {
    let mut rng = stream(seed, &[purpose::TASK_GEN, mode.tag()]);
    generate_task_from_rng(&mut rng, dim, mode, feature_cov_scale, noise_var)
}

/// Draw one sample from a task law.
pub fn sample_point(task: &TaskSpec, rng: &mut ChaCha12Rng) -> Sample {
    let sd = task.feature_cov_scale.sqrt();
    let x = Array1::from_iter(
        task.mean
            .iter()
            .map(|mu| mu + sd * rng.sample::<f64, _>(StandardNormal)),
    );
    let noise: f64 = rng.sample(StandardNormal);
    let y = task.coeff.dot(&x) + task.noise_var.sqrt() * noise;
    Sample { x, y }
}

/// Draw a fresh split dataset of `n` inner plus `n` outer samples.
///
/// All `2n` samples must be pairwise distinct, which holds with probability
/// one under a continuous law; the builder asserts it.
pub fn build_dataset(task: &TaskSpec, n: usize, rng: &mut ChaCha12Rng) -> Result<TaskDataset> {
    if n == 0 {
        return Err(Error::InvalidSize { n: 0 });
    }
    let inner: Vec<Sample> = (0..n).map(|_| sample_point(task, rng)).collect();
    let outer: Vec<Sample> = (0..n).map(|_| sample_point(task, rng)).collect();
    let ds = TaskDataset { inner, outer };
    assert_distinct(&ds);
    Ok(ds)
}

fn assert_distinct(ds: &TaskDataset) {
    // Point-mass tasks legitimately repeat samples; the distinctness
    // contract only applies to continuous laws.
    let first = ds.inner[0].bits();
    if ds.n() > 1 && ds.inner.iter().chain(&ds.outer).all(|z| z.bits() == first) {
        return;
    }
    let mut seen = HashSet::new();
    for z in ds.inner.iter().chain(&ds.outer) {
        assert!(
            seen.insert(z.bits()),
            "drew two bit-identical samples from a continuous law"
        );
    }
}

/// Which positions of which task a perturbation replaced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbationRecord {
    pub task_index: usize,
    /// Distinct inner positions that were replaced.
    pub inner_positions: Vec<usize>,
    /// The single outer position that was replaced.
    pub outer_position: usize,
}

/// Replace exactly `k` distinct inner positions and one outer position of
/// task `task_index` with fresh draws from that task's own law. Every other
/// sample is untouched.
pub fn perturb_dataset(
    collection: &TaskCollection,
    task_index: usize,
    k: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(TaskCollection, PerturbationRecord)> {
    let m = collection.m();
    if task_index >= m {
        return Err(Error::TaskIndexOutOfRange { index: task_index, m });
    }
    let n = collection.n();
    if k == 0 || k > n {
        return Err(Error::InvalidPerturbation { k, n });
    }
    let mut out = collection.clone();
    let (spec, ds) = &mut out.tasks[task_index];
    let mut inner_positions: Vec<usize> = sample_indices(rng, n, k).into_iter().collect();
    inner_positions.sort_unstable();
    for &pos in &inner_positions {
        ds.inner[pos] = sample_point(spec, rng);
    }
    let outer_position = rng.random_range(0..n);
    ds.outer[outer_position] = sample_point(spec, rng);
    assert_distinct(ds);
    Ok((
        out,
        PerturbationRecord {
            task_index,
            inner_positions,
            outer_position,
        },
    ))
}

/// Diff two collections that are supposed to form a perturbation pair.
///
/// Returns `None` when they are bit-identical, the record of differing
/// positions otherwise, and an error if they differ in more than one task or
/// in more than one outer position.
pub fn diff_collections(
    original: &TaskCollection,
    perturbed: &TaskCollection,
) -> Result<Option<PerturbationRecord>> {
    if original.m() != perturbed.m() || original.n() != perturbed.n() || original.dim() != perturbed.dim()
    {
        return Err(Error::StructuralMismatch(
            "collections differ in shape".into(),
        ));
    }
    let mut record: Option<PerturbationRecord> = None;
    for (i, ((spec_a, ds_a), (spec_b, ds_b))) in
        original.tasks.iter().zip(&perturbed.tasks).enumerate()
    {
        if spec_a != spec_b {
            return Err(Error::StructuralMismatch(format!(
                "task {i} specs differ"
            )));
        }
        let inner_positions: Vec<usize> = (0..ds_a.n())
            .filter(|&p| ds_a.inner[p] != ds_b.inner[p])
            .collect();
        let outer_positions: Vec<usize> = (0..ds_a.n())
            .filter(|&p| ds_a.outer[p] != ds_b.outer[p])
            .collect();
        if inner_positions.is_empty() && outer_positions.is_empty() {
            continue;
        }
        if record.is_some() {
            return Err(Error::StructuralMismatch(
                "more than one task differs".into(),
            ));
        }
        if outer_positions.len() != 1 {
            return Err(Error::StructuralMismatch(format!(
                "task {i} differs in {} outer positions, expected exactly 1",
                outer_positions.len()
            )));
        }
        record = Some(PerturbationRecord {
            task_index: i,
            inner_positions,
            outer_position: outer_positions[0],
        });
    }
    Ok(record)
}

/// Sample the maximal coupling of two task laws.
///
/// The first component is marginally distributed as `p`, the second as `q`,
/// and the pair disagrees with probability exactly the total variation
/// distance between the two joint laws. Standard density-splitting scheme:
/// accept the `p`-draw for both coordinates with probability
/// `min(1, q(z)/p(z))`, otherwise draw the second coordinate from the
/// residual of `q` by rejection.
pub fn maximal_coupling_sample(
    p: &TaskSpec,
    q: &TaskSpec,
    rng: &mut ChaCha12Rng,
) -> Result<(Sample, Sample, bool)> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let z = sample_point(p, rng);
    let log_p = p.log_density(&z)?;
    let log_q = q.log_density(&z)?;
    let u: f64 = rng.random();
    if u.ln() <= log_q - log_p {
        let z2 = z.clone();
        return Ok((z, z2, true));
    }
    // Residual branch: draw from q until the draw falls outside the overlap.
    loop {
        let w = sample_point(q, rng);
        let lp = p.log_density(&w)?;
        let lq = q.log_density(&w)?;
        let v: f64 = rng.random();
        if v.ln() > lp - lq {
            return Ok((z, w, false));
        }
    }
}

/// Recipe for generating whole task collections of one mode.
#[derive(Debug, Clone)]
pub struct TaskFamily {
    pub dim: usize,
    pub mode: TaskMode,
    pub feature_cov_scale: f64,
    pub noise_var: f64,
}

impl TaskFamily {
    /// The toy linear-regression family: `d = 10`, feature covariance scale
    /// `0.2`, label noise variance `0.1`.
    pub fn toy(dim: usize, mode: TaskMode) -> Self {
        TaskFamily {
            dim,
            mode,
            feature_cov_scale: 0.2,
            noise_var: 0.1,
        }
    }

    /// Deterministically generate the task spec at `index`.
    pub fn task(&self, seed: u64, index: usize) -> Result<TaskSpec> {
        let mut rng = stream(seed, &[purpose::TASK_GEN, self.mode.tag(), index as u64]);
        generate_task_from_rng(
            &mut rng,
            self.dim,
            self.mode,
            self.feature_cov_scale,
            self.noise_var,
        )
    }

    /// Generate `m` tasks with `n` inner plus `n` outer samples each.
    pub fn collection(&self, seed: u64, m: usize, n: usize) -> Result<TaskCollection> {
        if m == 0 {
            return Err(Error::InvalidSize { n: 0 });
        }
        let mut tasks = Vec::with_capacity(m);
        for i in 0..m {
            let spec = self.task(seed, i)?;
            let mut data_rng = stream(seed, &[purpose::DATA, self.mode.tag(), i as u64]);
            let ds = build_dataset(&spec, n, &mut data_rng)?;
            tasks.push((spec, ds));
        }
        let collection = TaskCollection { tasks };
        collection.validate()?;
        Ok(collection)
    }
}
