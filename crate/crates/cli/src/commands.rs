use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::Context;
use conical::{
    bench_sweep, bg_model_with, exemplar_select, median_check, refit_from, roc_curve, run, write_roc_csv,
    write_sweep_csv, AnchorEntry, DenseMatrix, FrameStack, IterationRecord, RunConfig, SampleEncoding, SweepConfig,
};
use log::warn;
use serde::Serialize;

use crate::output::OutputDir;
use crate::{BenchArgs, BgfgArgs, Command, ExemplarsArgs, FactorizeArgs, MedianCheckArgs, Outcome, ResolvedConfig};

pub fn dispatch(config: &ResolvedConfig) -> anyhow::Result<Outcome> {
    match &config.command {
        Command::Factorize(args) => factorize(args, config),
        Command::Bench(args) => bench(args, config),
        Command::Exemplars(args) => exemplars(args, config),
        Command::Bgfg(args) => bgfg(args, config),
        Command::MedianCheck(args) => median(args, config),
    }
}

fn read_matrix(path: &Path, header: bool) -> anyhow::Result<DenseMatrix> {
    DenseMatrix::read_csv_path(path, header).with_context(|| format!("reading {}", path.display()))
}

fn read_frames(dir: &Path) -> anyhow::Result<FrameStack> {
    FrameStack::read_dir(dir).with_context(|| format!("reading frames from {}", dir.display()))
}

#[derive(Serialize)]
struct AnchorsFile<'a> {
    anchors: Vec<usize>,
    entries: &'a [AnchorEntry],
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    loss: String,
    objective: f64,
    anchor_objective: f64,
    refit_objective_trace: Vec<f64>,
    residual_norm_trace: &'a [f64],
    stopped_early: bool,
    warnings: &'a [String],
    p_seed: u64,
    iterations: &'a [IterationRecord],
}

fn factorize(args: &FactorizeArgs, config: &ResolvedConfig) -> anyhow::Result<Outcome> {
    let x = read_matrix(&args.matrix, args.header)?;
    let cfg = RunConfig {
        solver: config.solver.clone(),
        ..RunConfig::new(args.rank, args.loss)
            .with_seed(args.seed)
            .with_exterior(args.exterior)
    };
    let fac = run(&x, &cfg)?;
    let fit = refit_from(&x, fac.w(&x), fac.h.clone(), args.refit, args.loss, &cfg.solver)?;
    let objective = args.loss.objective(&x, &fit.w, &fit.h)?;

    let mut out = OutputDir::create(&args.out)?;
    out.json(
        "anchors.json",
        &AnchorsFile {
            anchors: fac.anchors.indices(),
            entries: &fac.anchors.entries,
        },
    )?;
    fit.w.write_csv_path(out.file("W.csv")?)?;
    fit.h.write_csv_path(out.file("H.csv")?)?;
    out.json(
        "diagnostics.json",
        &Diagnostics {
            loss: args.loss.to_string(),
            objective,
            anchor_objective: fac.objective,
            refit_objective_trace: fit.objective_trace,
            residual_norm_trace: &fac.residual_norm_trace,
            stopped_early: fac.stopped_early,
            warnings: &fac.warnings,
            p_seed: fac.p_seed,
            iterations: &fac.iterations,
        },
    )?;
    out.finish(config)?;

    for w in &fac.warnings {
        warn!("{w}");
    }
    if fac.stopped_early {
        warn!("stopped with {} of {} anchors: no exterior column left", fac.anchors.len(), args.rank);
    }
    Ok(if fac.stopped_early || !fac.warnings.is_empty() {
        Outcome::Warnings
    } else {
        Outcome::Success
    })
}

fn bench(args: &BenchArgs, config: &ResolvedConfig) -> anyhow::Result<Outcome> {
    let cfg = SweepConfig {
        m: args.m,
        r: args.r,
        n: args.n,
        noise: args.noise,
        grid: args.grid.points(),
        algorithms: args.algos.clone(),
        seeds: (args.seed..args.seed + args.seeds).collect(),
        exterior_mode: args.exterior,
        solver: config.solver.clone(),
    };
    let rows = bench_sweep(&cfg)?;
    let mut out = OutputDir::create(&args.out)?;
    let path = out.file("sweep.csv")?;
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_sweep_csv(&rows, BufWriter::new(file))?;
    out.finish(config)?;
    Ok(Outcome::Success)
}

fn exemplars(args: &ExemplarsArgs, config: &ResolvedConfig) -> anyhow::Result<Outcome> {
    #[derive(Serialize)]
    struct ExemplarsFile<'a> {
        requested: usize,
        exemplars: &'a [usize],
    }
    let x = read_matrix(&args.matrix, args.header)?;
    let cfg = RunConfig {
        solver: config.solver.clone(),
        ..RunConfig::new(args.count, args.loss).with_seed(args.seed)
    };
    let picked = exemplar_select(&x, args.count, &cfg)?;
    let mut out = OutputDir::create(&args.out)?;
    out.json(
        "exemplars.json",
        &ExemplarsFile {
            requested: args.count,
            exemplars: &picked,
        },
    )?;
    out.finish(config)?;
    if picked.len() < args.count {
        warn!("found {} of {} exemplars", picked.len(), args.count);
        return Ok(Outcome::Warnings);
    }
    Ok(Outcome::Success)
}

fn bgfg(args: &BgfgArgs, config: &ResolvedConfig) -> anyhow::Result<Outcome> {
    #[derive(Serialize)]
    struct ModelFile<'a> {
        frames: usize,
        height: usize,
        width: usize,
        anchors: &'a [usize],
        foreground_l1: f64,
        median_objective: f64,
        dominates_median: bool,
        objective_trace: &'a [f64],
    }
    let stack = read_frames(&args.frames)?;
    let truth = args.truth.as_deref().map(read_frames).transpose()?;
    let cfg = RunConfig {
        solver: config.solver.clone(),
        ..RunConfig::new(args.rank, args.loss)
            .with_seed(args.seed)
            .with_exterior(args.exterior)
    };
    let model = bg_model_with(&stack, &cfg, args.refit)?;
    let roc = truth
        .as_ref()
        .map(|t| roc_curve(&model.foreground, t, &args.thresholds.points()))
        .transpose()
        .context("scoring against the truth masks")?;

    let mut out = OutputDir::create(&args.out)?;
    let background = FrameStack::new(stack.height, stack.width, model.background.map(|v| v.max(0.0))?)?;
    let scores = FrameStack::new(stack.height, stack.width, model.foreground.map(f64::abs)?)?;
    for t in 0..stack.frames() {
        let path = out.file(&format!("background/background_{t:04}.pgm"))?;
        conical::write_pgm(&path, stack.height, stack.width, &background.frame_u8(t), SampleEncoding::Binary)?;
        let path = out.file(&format!("foreground/foreground_{t:04}.pgm"))?;
        conical::write_pgm(&path, stack.height, stack.width, &scores.frame_u8(t), SampleEncoding::Binary)?;
    }
    if let Some(points) = &roc {
        let path = out.file("roc.csv")?;
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_roc_csv(points, BufWriter::new(file))?;
    }
    out.json(
        "model.json",
        &ModelFile {
            frames: stack.frames(),
            height: stack.height,
            width: stack.width,
            anchors: &model.anchors,
            foreground_l1: model.foreground.l1_norm(),
            median_objective: model.median_objective,
            dominates_median: model.dominates_median,
            objective_trace: &model.objective_trace,
        },
    )?;
    out.finish(config)?;
    Ok(if model.dominates_median {
        Outcome::Success
    } else {
        Outcome::Warnings
    })
}

fn median(args: &MedianCheckArgs, config: &ResolvedConfig) -> anyhow::Result<Outcome> {
    let stack = read_frames(&args.frames)?;
    let report = median_check(&stack.x, &config.solver)?;
    let mut out = OutputDir::create(&args.out)?;
    out.json("report.json", &report)?;
    out.finish(config)?;
    if !report.pass {
        warn!("median gap {} exceeds {}", report.max_gap, report.tolerance);
        return Ok(Outcome::Warnings);
    }
    Ok(Outcome::Success)
}
