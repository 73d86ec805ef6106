use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use motionfield::envs::{TaskObjective, WorldSdf};
use motionfield::flow::train_motion_field_with;
use motionfield::io::atomic_write;
use motionfield::metrics::{holdout_tasks, run_benchmark, BenchReport};
use motionfield::net::{load_checkpoint, save_checkpoint};
use motionfield::optimizer::{build_dataset, DatasetRecord, ExpertDataset, RecordLine};
use motionfield::sampler::{generate_motion, select_best};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{svg, CliError};

pub const SAMPLES_FORMAT: &str = "motionfield-samples";
pub const SAMPLES_VERSION: u32 = 1;

/// File name of the checkpoint for length `len` inside a run directory.
pub fn checkpoint_name(len: usize) -> String {
    format!("model-L{len}.ckpt")
}

/// Loss CSV written next to a checkpoint: `model-L64.ckpt` → `model-L64.loss.csv`.
pub fn loss_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("loss.csv")
}

pub fn gen_data(cfg: &RunConfig, out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let env = cfg.world()?;
    let out = out.unwrap_or_else(|| cfg.out_dir.join("dataset.jsonl"));
    let ds = build_dataset(&env, &cfg.dataset)?;
    ds.save(&out)?;
    let m = &ds.meta;
    let drawn = ds.len() + m.rejected_samples;
    let rate = if drawn == 0 {
        0.0
    } else {
        m.rejected_samples as f64 / drawn as f64
    };
    println!(
        "{} records of {} requested ({} tasks skipped, {} samples rejected, rejection rate {rate:.3}) -> {}",
        ds.len(),
        m.requested_records,
        m.skipped_tasks,
        m.rejected_samples,
        out.display()
    );
    Ok(out)
}

pub fn train(cfg: &RunConfig, dataset: &Path, out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let ds = ExpertDataset::load(dataset)?;
    if ds.is_empty() {
        return Err(CliError::Config(format!(
            "{} holds no records",
            dataset.display()
        )));
    }
    let out = out.unwrap_or_else(|| cfg.out_dir.join(checkpoint_name(ds.length())));
    let epochs = cfg.train.epochs;
    let every = (epochs / 10).max(1);
    let (model, report) = train_motion_field_with(&ds, &cfg.train, |e, loss| {
        if e % every == 0 || e + 1 == epochs {
            eprintln!("epoch {e:>5}  loss {loss:.6}");
        }
    })?;
    save_checkpoint(&model, &out)?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(csv, "{e},{l:e}");
    }
    atomic_write(loss_path(&out), csv.as_bytes())?;
    println!(
        "trained {} params for {epochs} epochs ({} steps) on {} records -> {}",
        model.param_count(),
        report.steps,
        ds.len(),
        out.display()
    );
    Ok(out)
}

#[derive(Serialize)]
struct SamplesHeader<'a> {
    format: &'a str,
    version: u32,
    length: usize,
    dim: usize,
    duration: f64,
    records: usize,
    env: &'a WorldSdf,
    config_hash: &'a str,
    seed: u64,
    steps: usize,
    selected: usize,
    feasible: bool,
}

pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub env: Option<String>,
    pub out: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

pub fn sample(cfg: &RunConfig, args: SampleArgs) -> Result<PathBuf, CliError> {
    let model = load_checkpoint(&args.checkpoint)?;
    let env_name = args.env.unwrap_or_else(|| model.meta.env_id.clone());
    let env = WorldSdf::resolve(&env_name)
        .map_err(|e| CliError::Config(format!("env {env_name:?}: {e}")))?;
    let objective = TaskObjective::new(args.start, args.goal);
    objective
        .validate(&env, 0.0)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let out = args
        .out
        .unwrap_or_else(|| cfg.out_dir.join("samples.jsonl"));

    let batch = generate_motion(&model, &env, &objective, &cfg.sample)?;
    let best = select_best(&batch, &env)?;
    let (len, dim) = (model.layout.len, model.layout.dim);
    let header = SamplesHeader {
        format: SAMPLES_FORMAT,
        version: SAMPLES_VERSION,
        length: len,
        dim,
        duration: model.meta.duration,
        records: batch.len(),
        env: &env,
        config_hash: &model.meta.config_hash,
        seed: cfg.sample.seed,
        steps: cfg.sample.steps,
        selected: best.index,
        feasible: best.feasible,
    };
    let mut buf = Vec::new();
    serde_json::to_writer(&mut buf, &header).map_err(motionfield::Error::from)?;
    buf.push(b'\n');
    for (i, t) in batch.iter().enumerate() {
        let rec = DatasetRecord {
            task: i,
            env_id: env.name.clone(),
            objective: objective.clone(),
            trajectory: t.clone(),
        };
        serde_json::to_writer(&mut buf, &RecordLine::from_record(&rec))
            .map_err(motionfield::Error::from)?;
        buf.push(b'\n');
    }
    atomic_write(&out, &buf)?;
    if let Some(path) = &args.svg {
        atomic_write(path, svg::render(&env, &batch, best.index).as_bytes())?;
    }
    println!(
        "{} trajectories -> {}; selected member {} ({})",
        batch.len(),
        out.display(),
        best.index,
        if best.feasible {
            "collision-free"
        } else {
            "colliding"
        }
    );
    Ok(out)
}

pub fn bench(
    cfg: &RunConfig,
    checkpoints: &Path,
    out: Option<PathBuf>,
) -> Result<PathBuf, CliError> {
    let env = cfg.world()?;
    let out = out.unwrap_or_else(|| cfg.out_dir.join("bench.csv"));
    let bench_cfg = cfg.bench_config();
    let tasks = holdout_tasks(
        &env,
        bench_cfg.n_tasks,
        bench_cfg.seed,
        bench_cfg.min_separation,
    )?;
    let header = BenchReport::csv_header(env.dim);
    let columns = header.split(',').count();
    let mut csv = header.clone();
    csv.push('\n');
    for &len in &cfg.bench.lengths {
        let path = checkpoints.join(checkpoint_name(len));
        if !path.exists() {
            let mut row = format!("{},{len},absent", env.name);
            row.push_str(&",".repeat(columns - 3));
            let _ = writeln!(csv, "{row}");
            println!("L={len}: no checkpoint at {}", path.display());
            continue;
        }
        let model = load_checkpoint(&path)?;
        if model.layout.len != len || model.layout.dim != env.dim {
            return Err(CliError::Config(format!(
                "{} holds an L={} D={} model, expected L={len} D={}",
                path.display(),
                model.layout.len,
                model.layout.dim,
                env.dim
            )));
        }
        let report = run_benchmark(&model, &env, &tasks, &bench_cfg)?;
        for row in report.csv_rows()? {
            let _ = writeln!(csv, "{row}");
        }
        if let Some(a) = &report.aggregate {
            println!(
                "L={len}: feasibility {:.2}, smoothness {:.2} ± {:.2}",
                a.feasibility, a.smoothness.mean, a.smoothness.std
            );
        }
    }
    atomic_write(&out, csv.as_bytes())?;
    std::io::stdout().flush().ok();
    println!("report -> {}", out.display());
    Ok(out)
}
