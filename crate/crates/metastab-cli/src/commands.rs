//! Command implementations shared by the binary and the integration tests.

use crate::config::Config;
use crate::manifest::ManifestBuilder;
use crate::svg::{render_chart, ChartSeries};
use crate::{CmdError, CmdResult};
use metastab::analysis::{shift_bound, stability_grid, StabilityConfig};
use metastab::losses::{
    admissible_alpha, compute_constants, ConstraintSet, LossConstants, RegularizedQuadratic,
};
use metastab::meta_objective::{error_decomposition, DecompositionOptions};
use metastab::rng::derive;
use metastab::sweep::{run_sweep, write_sweep_csv, CellResult, FigureKind, SweepConfig};
use metastab::task_model::{TaskCollection, TaskFamily, TaskMode};
use metastab::trainer::{maml_train, TrainerConfig};
use metastab::federated::{fed_train as run_fed, FedConfig};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

fn parse_mode(raw: &str) -> CmdResult<TaskMode> {
    match raw {
        "similar" => Ok(TaskMode::Similar),
        "dissimilar" => Ok(TaskMode::Dissimilar),
        _ => Err(CmdError::config(format!(
            "field `mode`: expected `similar` or `dissimilar`, got `{raw}`"
        ))),
    }
}

fn ensure_dir(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn family_from(cfg: &Config, dim: usize) -> CmdResult<TaskFamily> {
    Ok(TaskFamily {
        dim,
        mode: parse_mode(&cfg.get_str("mode", "similar"))?,
        feature_cov_scale: cfg.get("feature_cov_scale", 0.2)?,
        noise_var: cfg.get("noise_var", 0.1)?,
    })
}

/// Positive-radius sanity shared by every command that builds a ball.
fn radius_from(cfg: &Config) -> CmdResult<f64> {
    let raw = cfg.get_str("radius", "10");
    if raw == "inf" || raw == "infinity" {
        return Ok(f64::INFINITY);
    }
    raw.parse::<f64>()
        .map_err(|_| CmdError::config(format!("field `radius`: cannot parse value `{raw}`")))
}

fn resolve_constants(
    loss: &RegularizedQuadratic,
    set: &ConstraintSet,
    family: &TaskFamily,
    m: usize,
    seed: u64,
    probes: usize,
) -> CmdResult<LossConstants> {
    let specs: Result<Vec<_>, _> = (0..m.max(2)).map(|i| family.task(seed, i)).collect();
    Ok(compute_constants(loss, set, &specs?, probes, seed)?)
}

fn warn_if_alpha_inadmissible(alpha: f64, constants: &LossConstants) {
    let cap = admissible_alpha(constants);
    if alpha > cap {
        eprintln!(
            "warning: inner stepsize alpha = {alpha} exceeds the admissible \
             {cap:.6} derived from the curvature constants; the measured \
             curvature envelopes no longer apply"
        );
    }
}

fn write_iterates(path: &Path, out: &metastab::trainer::TrainerOutput) -> CmdResult<()> {
    let mut file = fs::File::create(path)?;
    for (tag, vec) in [("last", &out.last_iterate), ("avg", &out.averaged_iterate)] {
        write!(file, "{tag}")?;
        for v in vec.iter() {
            write!(file, " {v:.16e}")?;
        }
        writeln!(file)?;
    }
    Ok(())
}

/// Generate a task collection and write the sample and spec files.
pub fn gen_tasks(cfg: &Config, out_dir: &Path) -> CmdResult<()> {
    let dim: usize = cfg.require("d")?;
    let m: usize = cfg.require("m")?;
    let n: usize = cfg.require("n")?;
    let seed: u64 = cfg.require("seed")?;
    let family = family_from(cfg, dim)?;
    let collection = family.collection(seed, m, n)?;

    ensure_dir(out_dir)?;
    let mut manifest = ManifestBuilder::new("gen-tasks", cfg.echo());
    let tasks_path = out_dir.join("tasks.txt");
    let mut buf = Vec::new();
    collection.write_samples(&mut buf)?;
    fs::write(&tasks_path, &buf)?;
    manifest.collection_file(&tasks_path)?;
    manifest.output(&tasks_path);

    let specs_path = out_dir.join("specs.txt");
    let mut buf = Vec::new();
    collection.write_specs(&mut buf)?;
    fs::write(&specs_path, &buf)?;
    manifest.output(&specs_path);

    let path = manifest.write(out_dir)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_collection(tasks_path: &Path, specs_path: &Path) -> CmdResult<TaskCollection> {
    let tasks_file = fs::File::open(tasks_path)
        .map_err(|e| CmdError::config(format!("cannot open {}: {e}", tasks_path.display())))?;
    let datasets = TaskCollection::read_samples(std::io::BufReader::new(tasks_file))?;
    let specs_file = fs::File::open(specs_path)
        .map_err(|e| CmdError::config(format!("cannot open {}: {e}", specs_path.display())))?;
    let specs = TaskCollection::read_specs(std::io::BufReader::new(specs_file))?;
    Ok(TaskCollection::from_parts(specs, datasets)?)
}

fn collection_from(
    cfg: &Config,
    collection_path: Option<&Path>,
    specs_path: Option<&Path>,
) -> CmdResult<(TaskCollection, Option<PathBuf>)> {
    match collection_path {
        Some(tasks) => {
            let specs = match specs_path {
                Some(p) => p.to_path_buf(),
                None => tasks.with_file_name("specs.txt"),
            };
            Ok((load_collection(tasks, &specs)?, Some(tasks.to_path_buf())))
        }
        None => {
            let dim: usize = cfg.require("d")?;
            let m: usize = cfg.require("m")?;
            let n: usize = cfg.require("n")?;
            let seed: u64 = cfg.require("seed")?;
            let family = family_from(cfg, dim)?;
            Ok((family.collection(seed, m, n)?, None))
        }
    }
}

fn trainer_config_from(cfg: &Config, collection: &TaskCollection) -> CmdResult<TrainerConfig> {
    let m = collection.m();
    let n = collection.n();
    let dim = collection.dim();
    let radius = radius_from(cfg)?;
    let set = if radius.is_infinite() {
        ConstraintSet::unconstrained(dim)?
    } else {
        ConstraintSet::ball(radius, dim)?
    };
    let mut trainer = TrainerConfig::new(
        m,
        n,
        cfg.get("k", 5.min(n))?,
        cfg.get("b", 10.min(n))?,
        cfg.get("r", 5.min(m))?,
        cfg.get("t_max", 20_000)?,
        cfg.get("alpha", 0.1)?,
        cfg.get("beta_cap", 0.02)?,
        cfg.get("seed", 0u64)?,
        set,
    );
    trainer.record_loss_trace = cfg.get("trace", true)?;
    trainer.trace_mc_subsets = cfg.get("trace_mc_subsets", 2_000)?;
    trainer.mc_population = cfg.get("mc_population", 2_000)?;
    trainer.mc_subsets = cfg.get("mc_subsets", 20_000)?;
    trainer.enumeration_cap = cfg.get("enumeration_cap", 100_000)?;
    Ok(trainer)
}

/// Train on a collection (loaded or regenerated) and write the trace,
/// iterates, and optional error report.
pub fn train(
    cfg: &Config,
    collection_path: Option<&Path>,
    specs_path: Option<&Path>,
    out_dir: &Path,
) -> CmdResult<()> {
    let (collection, loaded_from) = collection_from(cfg, collection_path, specs_path)?;
    let trainer_cfg = trainer_config_from(cfg, &collection)?;
    let loss = RegularizedQuadratic::new(cfg.get("reg", 0.01)?)?;

    ensure_dir(out_dir)?;
    let mut manifest = ManifestBuilder::new("train", cfg.echo());
    if let Some(path) = &loaded_from {
        manifest.collection_file(path)?;
    }
    if trainer_cfg.constraint.radius.is_finite() {
        let family = family_from(cfg, collection.dim())?;
        let constants = resolve_constants(
            &loss,
            &trainer_cfg.constraint,
            &family,
            collection.m(),
            trainer_cfg.seed,
            cfg.get("probes", 20_000)?,
        )?;
        warn_if_alpha_inadmissible(trainer_cfg.alpha, &constants);
        manifest.constants(&constants);
    }

    let output = maml_train(&collection, &trainer_cfg, &loss)?;

    let trace_path = out_dir.join("trace.csv");
    let mut buf = Vec::new();
    output.write_trace_csv(&mut buf)?;
    fs::write(&trace_path, &buf)?;
    manifest.output(&trace_path);

    let iter_path = out_dir.join("iterates.txt");
    write_iterates(&iter_path, &output)?;
    manifest.output(&iter_path);

    if cfg.get("error_report", false)? {
        let report = error_decomposition(
            &output.averaged_iterate.view(),
            &collection,
            &trainer_cfg.meta(),
            &loss,
            &trainer_cfg.constraint,
            &DecompositionOptions {
                seed: derive(trainer_cfg.seed, &[1]),
                ..DecompositionOptions::default()
            },
        )?;
        let report_path = out_dir.join("error_report.csv");
        fs::write(
            &report_path,
            format!(
                "test,gen,train,emp_min,pop_min,se_test,se_gen\n{}\n",
                report.csv_row()
            ),
        )?;
        manifest.output(&report_path);
    }

    println!("iterate hash {}", output.content_hash());
    let path = manifest.write(out_dir)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Distributed training wrapper.
pub fn fed_train(
    cfg: &Config,
    collection_path: Option<&Path>,
    specs_path: Option<&Path>,
    out_dir: &Path,
) -> CmdResult<()> {
    let (collection, loaded_from) = collection_from(cfg, collection_path, specs_path)?;
    let mut base = trainer_config_from(cfg, &collection)?;
    base.t_max = cfg.get("rounds", base.t_max)?;
    base.record_loss_trace = false;
    let mut fed_cfg = FedConfig::new(base, cfg.get("tau", 1)?);
    fed_cfg.verbose_trace = cfg.get("verbose", false)?;
    let loss = RegularizedQuadratic::new(cfg.get("reg", 0.01)?)?;

    ensure_dir(out_dir)?;
    let mut manifest = ManifestBuilder::new("fed-train", cfg.echo());
    if let Some(path) = &loaded_from {
        manifest.collection_file(path)?;
    }
    let fed = run_fed(&collection, &fed_cfg, &loss)?;

    let trace_path = out_dir.join("trace.csv");
    let mut buf = Vec::new();
    fed.output.write_trace_csv(&mut buf)?;
    fs::write(&trace_path, &buf)?;
    manifest.output(&trace_path);

    if fed_cfg.verbose_trace {
        let local_path = out_dir.join("local_trace.csv");
        let mut buf = Vec::new();
        fed.write_local_trace_csv(&mut buf)?;
        fs::write(&local_path, &buf)?;
        manifest.output(&local_path);
    }

    let iter_path = out_dir.join("iterates.txt");
    write_iterates(&iter_path, &fed.output)?;
    manifest.output(&iter_path);

    println!("iterate hash {}", fed.output.content_hash());
    let path = manifest.write(out_dir)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn figure_kind(which: &str) -> CmdResult<FigureKind> {
    match which {
        "recurring" => Ok(FigureKind::Recurring),
        "new-similar" => Ok(FigureKind::NewSimilar),
        "new-dissimilar" => Ok(FigureKind::NewDissimilar),
        _ => Err(CmdError::config(format!(
            "field `which`: expected recurring|new-similar|new-dissimilar, got `{which}`"
        ))),
    }
}

fn read_sweep_csv(path: &Path) -> CmdResult<Vec<CellResult>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CmdError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut cells = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CmdError::config(format!(
                "{}:{}: expected 6 columns",
                path.display(),
                idx + 1
            )));
        }
        let parse = |s: &str| -> CmdResult<f64> {
            s.parse()
                .map_err(|_| CmdError::config(format!("bad float `{s}` in {}", path.display())))
        };
        cells.push(CellResult {
            m: parse(fields[1])? as usize,
            n: parse(fields[2])? as usize,
            mean_error: parse(fields[4])?,
            std_err: parse(fields[5])?,
            per_rep: Vec::new(),
        });
    }
    Ok(cells)
}

fn sweep_charts(kind: FigureKind, cells: &[CellResult], out_dir: &Path) -> CmdResult<Vec<PathBuf>> {
    let mut ms: Vec<usize> = cells.iter().map(|c| c.m).collect();
    ms.sort_unstable();
    ms.dedup();
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    ns.sort_unstable();
    ns.dedup();

    let series_by_m: Vec<ChartSeries> = ms
        .iter()
        .map(|&m| ChartSeries {
            label: format!("m={m}"),
            points: cells
                .iter()
                .filter(|c| c.m == m)
                .map(|c| (c.n as f64, c.mean_error, 2.0 * c.std_err))
                .collect(),
        })
        .collect();
    let series_by_n: Vec<ChartSeries> = ns
        .iter()
        .map(|&n| ChartSeries {
            label: format!("n={n}"),
            points: cells
                .iter()
                .filter(|c| c.n == n)
                .map(|c| (c.m as f64, c.mean_error, 2.0 * c.std_err))
                .collect(),
        })
        .collect();

    let title = format!("test error ({})", kind.label());
    let vs_n = out_dir.join(format!("{}_error_vs_n.svg", kind.label()));
    fs::write(
        &vs_n,
        render_chart(&title, "n (samples per task)", "test error", &series_by_m, true),
    )?;
    let vs_m = out_dir.join(format!("{}_error_vs_m.svg", kind.label()));
    fs::write(
        &vs_m,
        render_chart(&title, "m (tasks)", "test error", &series_by_n, true),
    )?;
    Ok(vec![vs_n, vs_m])
}

/// Run (or re-plot) one error-trend sweep.
pub fn reproduce_figures(
    cfg: &Config,
    which: &str,
    full: bool,
    plot_only: bool,
    out_dir: &Path,
) -> CmdResult<()> {
    let kind = figure_kind(which)?;
    ensure_dir(out_dir)?;
    let csv_path = out_dir.join(format!("{}.csv", kind.label()));

    if plot_only {
        let cells = read_sweep_csv(&csv_path)?;
        let charts = sweep_charts(kind, &cells, out_dir)?;
        for c in charts {
            println!("wrote {}", c.display());
        }
        return Ok(());
    }

    let mut sweep = SweepConfig::default_toy(cfg.get("seed", 0u64)?);
    sweep.grid_m = cfg.get_list("grid_m", &sweep.grid_m)?;
    sweep.grid_n = cfg.get_list("grid_n", &sweep.grid_n)?;
    sweep.reps = cfg.get("reps", sweep.reps)?;
    sweep.dim = cfg.get("d", sweep.dim)?;
    sweep.reg = cfg.get("reg", sweep.reg)?;
    sweep.k = cfg.get("k", sweep.k)?;
    sweep.b = cfg.get("b", sweep.b)?;
    sweep.t_max = cfg.get("t_max", sweep.t_max)?;
    sweep.alpha = cfg.get("alpha", sweep.alpha)?;
    sweep.beta_cap = cfg.get("beta_cap", sweep.beta_cap)?;
    sweep.mc_population = cfg.get("mc_population", sweep.mc_population)?;
    if full {
        sweep.reps = sweep.reps.max(10);
        sweep.t_max = sweep.t_max.max(20_000);
    }
    if sweep.reps < 3 {
        return Err(CmdError::config(format!(
            "field `reps`: need at least 3, got {}",
            sweep.reps
        )));
    }

    // Advisory constants check for the default stepsize.
    let family = TaskFamily::toy(sweep.dim, TaskMode::Similar);
    let loss = RegularizedQuadratic::new(sweep.reg)?;
    if sweep.radius.is_finite() {
        let set = ConstraintSet::ball(sweep.radius, sweep.dim)?;
        let constants = resolve_constants(&loss, &set, &family, 5, sweep.seed, 5_000)?;
        warn_if_alpha_inadmissible(sweep.alpha, &constants);
    }

    let mut manifest = ManifestBuilder::new("reproduce-figures", cfg.echo());
    let cells = run_sweep(kind, &sweep)?;
    let mut buf = Vec::new();
    write_sweep_csv(kind, &cells, &mut buf)?;
    fs::write(&csv_path, &buf)?;
    manifest.output(&csv_path);
    for chart in sweep_charts(kind, &cells, out_dir)? {
        manifest.output(&chart);
    }
    let path = manifest.write(out_dir)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Stability scaling experiment over an `(m, n)` grid.
pub fn stability(cfg: &Config, out_dir: &Path) -> CmdResult<()> {
    let dim: usize = cfg.get("d", 10)?;
    let seed: u64 = cfg.get("seed", 0u64)?;
    let family = family_from(cfg, dim)?;
    let loss = RegularizedQuadratic::new(cfg.get("reg", 0.01)?)?;
    let radius = radius_from(cfg)?;
    if !radius.is_finite() {
        return Err(CmdError::config(
            "stability runs need a bounded constraint radius",
        ));
    }
    let set = ConstraintSet::ball(radius, dim)?;
    let constants = resolve_constants(&loss, &set, &family, 4, seed, cfg.get("probes", 20_000)?)?;

    // The stepsize premises are enforced before launch; explicit values that
    // violate them abort with the premise exit code.
    let alpha = cfg.get("alpha", 0.99 * admissible_alpha(&constants))?;
    let beta_default = 0.99 / constants.meta_smoothness(alpha);
    let beta_cap = cfg.get("beta_cap", beta_default)?;

    let grid = cfg.get_grid("grid", &[(5, 20), (10, 40), (20, 80), (40, 160)])?;
    let (m0, n0) = grid[0];
    let mut base = TrainerConfig::new(
        m0,
        n0,
        cfg.get("k", 5)?,
        cfg.get("b", 5)?,
        cfg.get("r", 5.min(m0))?,
        cfg.get("t_max", 2_000)?,
        alpha,
        beta_cap,
        seed,
        set,
    );
    base.mc_population = cfg.get("mc_population", 2_000)?;
    let mut scfg = StabilityConfig::new(cfg.get("trials", 12)?, base.k, dim, derive(seed, &[7]))
        .map_err(CmdError::from)?;
    scfg.probe_pairs = cfg.get("probe_pairs", 256)?;

    ensure_dir(out_dir)?;
    let mut manifest = ManifestBuilder::new("stability", cfg.echo());
    manifest.constants(&constants);
    let report = stability_grid(
        &family,
        &base,
        &grid,
        &scfg,
        &loss,
        &constants,
        cfg.get("leading_const", 1.0)?,
    )?;
    let csv_path = out_dir.join("stability.csv");
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    fs::write(&csv_path, &buf)?;
    manifest.output(&csv_path);
    let path = manifest.write(out_dir)?;
    println!(
        "fitted slope {:.4} (gamma_hat {:.4e}, theory {:.4e})",
        report.fitted_slope, report.gamma_hat, report.gamma_theory
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Distribution-shift report for an unseen task against a seen family.
pub fn shift(cfg: &Config, out_dir: &Path) -> CmdResult<()> {
    let dim: usize = cfg.get("d", 10)?;
    let m: usize = cfg.get("m", 5)?;
    let n: usize = cfg.get("n", 50)?;
    let seed: u64 = cfg.get("seed", 0u64)?;
    let family = family_from(cfg, dim)?;
    let seen: Result<Vec<_>, _> = (0..m).map(|i| family.task(seed, i)).collect();
    let seen = seen?;

    let unseen_mode = cfg.get_str("unseen_mode", "dissimilar");
    let unseen = match unseen_mode.as_str() {
        "clone" => seen[0].clone(),
        other => {
            let mode = parse_mode(other)?;
            TaskFamily { mode, ..family.clone() }.task(derive(seed, &[11]), m)?
        }
    };

    let loss = RegularizedQuadratic::new(cfg.get("reg", 0.01)?)?;
    let radius = radius_from(cfg)?;
    if !radius.is_finite() {
        return Err(CmdError::config("shift reports need a bounded radius"));
    }
    let set = ConstraintSet::ball(radius, dim)?;
    let constants = resolve_constants(&loss, &set, &family, m, seed, cfg.get("probes", 20_000)?)?;

    let report = shift_bound(
        &unseen,
        &seen,
        &constants,
        cfg.get("alpha", 0.1)?,
        cfg.get("k", 5)?,
        n,
        None,
        cfg.get("tv_samples", 30_000)?,
        derive(seed, &[13]),
    )?;

    ensure_dir(out_dir)?;
    let mut manifest = ManifestBuilder::new("shift", cfg.echo());
    manifest.constants(&constants);
    let csv_path = out_dir.join("shift.csv");
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    fs::write(&csv_path, &buf)?;
    manifest.output(&csv_path);
    let path = manifest.write(out_dir)?;
    println!("d_bound {:.6e}", report.d_bound);
    println!("wrote {}", path.display());
    Ok(())
}
