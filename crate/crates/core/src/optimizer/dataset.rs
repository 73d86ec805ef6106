//! Expert trajectory datasets: CMA-ES via-point plans perturbed by Brownian
//! noise, plus their JSON-lines file format.
//!
//! File layout (one JSON document per line):
//!
//! 1. header: `{"format": "motionfield-dataset", "version": 1, "length", "dim",
//!    "duration", "records", "env": {...}, "meta": {...}}`
//! 2. one line per trajectory: `{"task", "env_id", "objective": {"start",
//!    "goal", "start_velocity", "goal_velocity"}, "positions", "velocities",
//!    "accelerations"}` where each profile is an `L × D` row-major nested array.
//!
//! Floats are written in shortest round-trip form, so a write/read cycle
//! reproduces every value bit for bit.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cmaes::{cmaes_minimize, CmaesOptions};
use super::{trajectory_cost, CostWeights};
use crate::envs::{is_collision_free, sample_task, TaskObjective, WorldSdf};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::splines::{perturb_via_points_with, DesignGrid, SplineBasis, Trajectory, ViaPointSpec};

pub const DATASET_FORMAT: &str = "motionfield-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Clearance required for a trajectory to count as collision-free.
pub const COLLISION_CHECK_MARGIN: f64 = 0.0;

/// Noisy samples drawn per sigma level before the noise is halved.
pub const RESAMPLES_PER_SIGMA: usize = 50;

/// Sigma halvings after which the unperturbed plan is used.
const MAX_SIGMA_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_tasks: usize,
    pub samples_per_task: usize,
    /// Std of the via-point perturbation, in workspace units.
    pub sigma: f64,
    pub length: usize,
    /// Trajectory duration `T` in seconds.
    pub duration: f64,
    pub n_via: usize,
    pub weights: CostWeights,
    /// Collision margin of the cost; `None` means 3% of the workspace extent.
    pub margin: Option<f64>,
    pub cmaes_budget: usize,
    /// Initial CMA-ES step size as a fraction of the workspace extent.
    pub init_sigma_fraction: f64,
    pub min_separation: f64,
    /// Extra CMA-ES runs when a plan is not collision-free.
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_tasks: 100,
            samples_per_task: 20,
            sigma: 0.05,
            length: 64,
            duration: 5.0,
            n_via: 7,
            weights: CostWeights::default(),
            margin: None,
            cmaes_budget: 3000,
            init_sigma_fraction: 0.2,
            min_separation: 0.5,
            max_restarts: 3,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.samples_per_task == 0 {
            return Err(Error::Config("samples_per_task must be at least 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma {} must be nonnegative",
                self.sigma
            )));
        }
        if self.length < 2 {
            return Err(Error::Config(format!(
                "length {} must be at least 2",
                self.length
            )));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!(
                "duration {} must be positive",
                self.duration
            )));
        }
        if self.n_via == 0 {
            return Err(Error::Config("n_via must be at least 1".into()));
        }
        if let Some(m) = self.margin {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("margin {m} must be nonnegative")));
            }
        }
        if !(self.init_sigma_fraction > 0.0) {
            return Err(Error::Config("init_sigma_fraction must be positive".into()));
        }
        Ok(())
    }

    pub fn margin_for(&self, env: &WorldSdf) -> f64 {
        self.margin.unwrap_or_else(|| env.default_margin())
    }
}

/// Generation settings and statistics stored in the dataset header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub config: DatasetConfig,
    pub margin: f64,
    pub requested_records: usize,
    pub skipped_tasks: usize,
    pub rejected_samples: usize,
    pub sigma_halvings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub task: usize,
    pub env_id: String,
    pub objective: TaskObjective,
    pub trajectory: Trajectory,
}

/// Collision-free expert trajectories sharing `L`, `D`, and `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertDataset {
    pub env: WorldSdf,
    pub meta: DatasetMeta,
    pub records: Vec<DatasetRecord>,
}

/// CMA-ES plan for one task.
#[derive(Debug, Clone)]
pub struct ExpertPlan {
    pub spec: ViaPointSpec,
    pub trajectory: Trajectory,
    pub cost: f64,
    pub restarts: usize,
}

/// Optimizes via-points for `objective` from the straight line, restarting
/// from uniformly drawn via-points until the plan is collision-free. Returns `None` when every attempt collides.
pub fn plan_expert(
    env: &WorldSdf,
    objective: &TaskObjective,
    cfg: &DatasetConfig,
    grid: &DesignGrid,
    seed: u64,
) -> Result<Option<ExpertPlan>> {
    let margin = cfg.margin_for(env);
    let bc = objective.boundary_conditions();
    let init = ViaPointSpec::straight_line(bc.clone(), cfg.n_via, cfg.duration)?;
    let d = env.dim;
    let init_mean: Vec<f64> = init.via.iter().copied().collect();
    let cost = |x: &[f64]| -> f64 {
        let via = Array2::from_shape_vec((cfg.n_via, d), x.to_vec()).expect("flattened via-points");
        let spec = ViaPointSpec {
            via,
            bc: bc.clone(),
            duration: cfg.duration,
        };
        match grid.eval(&spec) {
            Ok(traj) => trajectory_cost(&traj, env, &cfg.weights, margin).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    };
    let mut restart_rng = stream_rng(seed, u64::MAX);
    for restart in 0..=cfg.max_restarts {
        let mean = if restart == 0 {
            init_mean.clone()
        } else {
            (0..cfg.n_via * d)
                .map(|j| restart_rng.random_range(env.bounds.min[j % d]..=env.bounds.max[j % d]))
                .collect()
        };
        let opts = CmaesOptions::new(
            cfg.init_sigma_fraction * env.bounds.extent(),
            cfg.cmaes_budget,
            derive_seed(seed, restart as u64),
        );
        let res = cmaes_minimize(cost, &mean, &opts)?;
        let via = Array2::from_shape_vec((cfg.n_via, d), res.best).expect("flattened via-points");
        let spec = ViaPointSpec::new(via, bc.clone(), cfg.duration)?;
        let trajectory = grid.eval(&spec)?;
        if is_collision_free(&trajectory, env, COLLISION_CHECK_MARGIN) {
            return Ok(Some(ExpertPlan {
                spec,
                trajectory,
                cost: res.best_cost,
                restarts: restart,
            }));
        }
    }
    Ok(None)
}

struct TaskOutcome {
    records: Vec<DatasetRecord>,
    skipped: bool,
    rejected: usize,
    halvings: usize,
}

fn expand_task(
    env: &WorldSdf,
    task: usize,
    objective: &TaskObjective,
    cfg: &DatasetConfig,
    grid: &DesignGrid,
) -> Result<TaskOutcome> {
    let Some(plan) = plan_expert(
        env,
        objective,
        cfg,
        grid,
        derive_seed(cfg.seed, task as u64),
    )?
    else {
        return Ok(TaskOutcome {
            records: Vec::new(),
            skipped: true,
            rejected: 0,
            halvings: 0,
        });
    };
    let mut rng = stream_rng(cfg.seed, task as u64 + 1);
    let mut records = Vec::with_capacity(cfg.samples_per_task);
    let (mut rejected, mut halvings) = (0, 0);
    let mut sigma = cfg.sigma;
    while records.len() < cfg.samples_per_task {
        let trajectory = draw_sample(&plan, sigma, grid, &mut rng)?;
        if is_collision_free(&trajectory, env, COLLISION_CHECK_MARGIN) {
            records.push(DatasetRecord {
                task,
                env_id: env.name.clone(),
                objective: objective.clone(),
                trajectory,
            });
            continue;
        }
        rejected += 1;
        if rejected % RESAMPLES_PER_SIGMA == 0 {
            halvings += 1;
            sigma = if halvings >= MAX_SIGMA_HALVINGS {
                0.0
            } else {
                sigma * 0.5
            };
        }
    }
    Ok(TaskOutcome {
        records,
        skipped: false,
        rejected,
        halvings,
    })
}

fn draw_sample<R: Rng>(
    plan: &ExpertPlan,
    sigma: f64,
    grid: &DesignGrid,
    rng: &mut R,
) -> Result<Trajectory> {
    let via = perturb_via_points_with(&plan.spec.via, sigma, rng)?;
    let spec = ViaPointSpec {
        via,
        bc: plan.spec.bc.clone(),
        duration: plan.spec.duration,
    };
    grid.eval(&spec)
}

/// Samples tasks, plans each with CMA-ES, and expands every plan into
/// `samples_per_task` perturbed collision-free trajectories.
pub fn build_dataset(env: &WorldSdf, cfg: &DatasetConfig) -> Result<ExpertDataset> {
    cfg.validate()?;
    let margin = cfg.margin_for(env);
    let mut task_rng = stream_rng(cfg.seed, 0);
    let tasks = (0..cfg.n_tasks)
        .map(|_| sample_task(env, &mut task_rng, cfg.min_separation, margin))
        .collect::<Result<Vec<_>>>()?;
    let basis = SplineBasis::for_via_points(cfg.n_via)?;
    let grid = DesignGrid::new(&basis, cfg.length)?;

    let run = |(i, obj): (usize, &TaskObjective)| expand_task(env, i, obj, cfg, &grid);
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<TaskOutcome>> = {
        use rayon::prelude::*;
        tasks.par_iter().enumerate().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<TaskOutcome>> = tasks.iter().enumerate().map(run).collect();

    let mut meta = DatasetMeta {
        config: cfg.clone(),
        margin,
        requested_records: cfg.n_tasks * cfg.samples_per_task,
        skipped_tasks: 0,
        rejected_samples: 0,
        sigma_halvings: 0,
    };
    let mut records = Vec::new();
    for outcome in outcomes {
        let o = outcome?;
        meta.skipped_tasks += o.skipped as usize;
        meta.rejected_samples += o.rejected;
        meta.sigma_halvings += o.halvings;
        records.extend(o.records);
    }
    Ok(ExpertDataset {
        env: env.clone(),
        meta,
        records,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    length: usize,
    dim: usize,
    duration: f64,
    records: usize,
    env: WorldSdf,
    meta: DatasetMeta,
}

/// One trajectory line of the file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub task: usize,
    pub env_id: String,
    pub objective: TaskObjective,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub accelerations: Vec<Vec<f64>>,
}

impl RecordLine {
    pub fn from_record(r: &DatasetRecord) -> Self {
        Self {
            task: r.task,
            env_id: r.env_id.clone(),
            objective: r.objective.clone(),
            positions: rows(&r.trajectory.positions),
            velocities: rows(&r.trajectory.velocities),
            accelerations: rows(&r.trajectory.accelerations),
        }
    }

    /// Checks the profile shapes against `len × dim`.
    pub fn into_record(self, len: usize, dim: usize, duration: f64) -> Result<DatasetRecord> {
        let trajectory = Trajectory::new(
            matrix(self.positions, len, dim, "position")?,
            matrix(self.velocities, len, dim, "velocity")?,
            matrix(self.accelerations, len, dim, "acceleration")?,
            duration,
        )?;
        Ok(DatasetRecord {
            task: self.task,
            env_id: self.env_id,
            objective: self.objective,
            trajectory,
        })
    }
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: Vec<Vec<f64>>, len: usize, dim: usize, what: &str) -> Result<Array2<f64>> {
    if rows.len() != len || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Corrupt(format!("{what} profile is not {len}×{dim}")));
    }
    Ok(
        Array2::from_shape_vec((len, dim), rows.into_iter().flatten().collect())
            .expect("checked shape"),
    )
}

impl ExpertDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn length(&self) -> usize {
        self.meta.config.length
    }

    pub fn dim(&self) -> usize {
        self.env.dim
    }

    pub fn duration(&self) -> f64 {
        self.meta.config.duration
    }

    /// Checks shared shapes and that every record is collision-free.
    pub fn validate(&self) -> Result<()> {
        let (len, dim, t) = (self.length(), self.dim(), self.duration());
        for (i, r) in self.records.iter().enumerate() {
            r.trajectory.validate()?;
            if r.trajectory.len() != len || r.trajectory.dim() != dim || r.trajectory.duration != t
            {
                return Err(Error::Corrupt(format!(
                    "record {i} does not share L={len}, D={dim}, T={t}"
                )));
            }
            if r.objective.dim() != dim {
                return Err(Error::Corrupt(format!(
                    "record {i} objective has the wrong dimension"
                )));
            }
            if !is_collision_free(&r.trajectory, &self.env, COLLISION_CHECK_MARGIN) {
                return Err(Error::Corrupt(format!(
                    "record {i} collides with the environment"
                )));
            }
        }
        Ok(())
    }

    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            length: self.length(),
            dim: self.dim(),
            duration: self.duration(),
            records: self.records.len(),
            env: self.env.clone(),
            meta: self.meta.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, &RecordLine::from_record(r))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn from_reader<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Corrupt("empty dataset file".into()))??;
        let header: Header = serde_json::from_str(&first)
            .map_err(|e| Error::Corrupt(format!("bad dataset header: {e}")))?;
        if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
            return Err(Error::Corrupt(format!(
                "unsupported dataset format {} v{}",
                header.format, header.version
            )));
        }
        header.env.validate()?;
        if header.dim != header.env.dim
            || header.length != header.meta.config.length
            || header.duration != header.meta.config.duration
        {
            return Err(Error::Corrupt(
                "header fields disagree with generation meta".into(),
            ));
        }
        let mut records = Vec::with_capacity(header.records);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordLine = serde_json::from_str(&line)
                .map_err(|e| Error::Corrupt(format!("record {i}: {e}")))?;
            records.push(rec.into_record(header.length, header.dim, header.duration)?);
        }
        if records.len() != header.records {
            return Err(Error::Corrupt(format!(
                "header announces {} records, file holds {}",
                header.records,
                records.len()
            )));
        }
        let ds = ExpertDataset {
            env: header.env,
            meta: header.meta,
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)?;
        crate::io::atomic_write(path, &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(std::fs::File::open(path)?))
    }
}
