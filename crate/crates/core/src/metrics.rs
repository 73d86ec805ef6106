//! Evaluation metrics and the benchmark harness.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::envs::{sample_task, TaskObjective, WorldSdf};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::sampler::{generate_motion, select_best, MotionField, SampleConfig};
use crate::splines::Trajectory;

/// `Σᵢ |q_{i+1} − q_i| / Δs` with `Δs = 1/(L−1)`.
pub fn smoothness(traj: &Trajectory) -> f64 {
    smoothness_normalized(traj) * (traj.len().max(2) - 1) as f64
}

/// `Σᵢ |q_{i+1} − q_i|`, the polyline length in configuration space.
pub fn smoothness_normalized(traj: &Trajectory) -> f64 {
    let q = &traj.positions;
    (1..q.nrows())
        .map(|i| {
            q.row(i)
                .iter()
                .zip(q.row(i - 1).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum()
}

/// Romberg estimate of `∫ f` from `2^k + 1` equally spaced samples `h` apart.
pub fn romberg(samples: &[f64], h: f64) -> Result<f64> {
    let n = samples.len().saturating_sub(1);
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Input(format!(
            "Romberg needs 2^k + 1 samples, got {}",
            samples.len()
        )));
    }
    let levels = n.trailing_zeros() as usize;
    let mut prev: Vec<f64> = Vec::with_capacity(levels + 1);
    for j in 0..=levels {
        let stride = n >> j;
        let step = h * stride as f64;
        let interior: f64 = (1..(1 << j)).map(|i| samples[i * stride]).sum();
        let trap = step * (0.5 * (samples[0] + samples[n]) + interior);
        let mut row = vec![trap];
        for m in 1..=j {
            let f = 4f64.powi(m as i32);
            row.push(row[m - 1] + (row[m - 1] - prev[m - 1]) / (f - 1.0));
        }
        prev = row;
    }
    Ok(prev[levels])
}

/// Integral of equally spaced samples over arbitrary counts: the intervals
/// are split from the start into blocks of decreasing power-of-two length,
/// each integrated with [`romberg`]. For `2^k + 1` samples this is plain
/// Romberg over the whole grid.
pub fn integrate_samples(samples: &[f64], h: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Input("need at least two samples".into()));
    }
    let mut rest = samples.len() - 1;
    let mut start = 0;
    let mut total = 0.0;
    while rest > 0 {
        let block = 1usize << (usize::BITS - 1 - rest.leading_zeros());
        total += romberg(&samples[start..=start + block], h)?;
        start += block;
        rest -= block;
    }
    Ok(total)
}

/// Per-axis `|∫₀ᵀ q̇ dt − (q_{L−1} − q_0)|`.
pub fn romberg_integration_error(traj: &Trajectory) -> Result<Vec<f64>> {
    let l = traj.len();
    if l < 3 {
        return Err(Error::Input(format!(
            "integration error needs L ≥ 3, got {l}"
        )));
    }
    let h = traj.duration / (l - 1) as f64;
    (0..traj.dim())
        .map(|k| {
            let v = traj.velocities.column(k).to_vec();
            let disp = traj.positions[[l - 1, k]] - traj.positions[[0, k]];
            Ok((integrate_samples(&v, h)? - disp).abs())
        })
        .collect()
}

/// Held-out task set drawn from a stream disjoint from dataset generation.
pub fn holdout_tasks(
    env: &WorldSdf,
    n: usize,
    seed: u64,
    min_separation: f64,
) -> Result<Vec<TaskObjective>> {
    let mut rng = stream_rng(derive_seed(seed, 0x484f_4c44), 0);
    let margin = env.default_margin();
    (0..n)
        .map(|_| sample_task(env, &mut rng, min_separation, margin))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n_tasks: usize,
    pub seed: u64,
    pub min_separation: f64,
    pub sample: SampleConfig,
    /// Evaluate tasks concurrently; timing columns are left empty.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_tasks: 50,
            seed: 0,
            min_separation: 0.5,
            sample: SampleConfig::default(),
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub env_id: String,
    pub length: usize,
    pub task: usize,
    /// At least one batch member is collision-free.
    pub feasible: bool,
    pub smoothness: f64,
    pub smoothness_normalized: f64,
    pub integration_error: Vec<f64>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation; `None` for no values.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchAggregate {
    pub feasibility: f64,
    pub smoothness: MeanStd,
    pub smoothness_normalized: MeanStd,
    pub integration_error: Vec<MeanStd>,
    pub seconds: Option<MeanStd>,
}

impl BenchAggregate {
    pub fn from_records(records: &[BenchRecord]) -> Option<Self> {
        let first = records.first()?;
        let n = records.len() as f64;
        let seconds = if records.iter().all(|r| r.seconds.is_some()) {
            MeanStd::of(records.iter().filter_map(|r| r.seconds))
        } else {
            None
        };
        Some(Self {
            feasibility: records.iter().filter(|r| r.feasible).count() as f64 / n,
            smoothness: MeanStd::of(records.iter().map(|r| r.smoothness))?,
            smoothness_normalized: MeanStd::of(records.iter().map(|r| r.smoothness_normalized))?,
            integration_error: (0..first.integration_error.len())
                .map(|k| MeanStd::of(records.iter().map(|r| r.integration_error[k])))
                .collect::<Option<_>>()?,
            seconds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub aggregate: Option<BenchAggregate>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl BenchReport {
    pub fn new(records: Vec<BenchRecord>) -> Self {
        let aggregate = BenchAggregate::from_records(&records);
        Self { records, aggregate }
    }

    /// Checks the stored aggregates against the records.
    pub fn check(&self) -> Result<()> {
        let fresh = BenchAggregate::from_records(&self.records);
        if fresh != self.aggregate {
            return Err(Error::Input(
                "benchmark aggregates do not match the records".into(),
            ));
        }
        Ok(())
    }

    /// CSV header for `dim` axes.
    pub fn csv_header(dim: usize) -> String {
        let mut h = String::from("env,length,row,feasible,smoothness,smoothness_normalized");
        for k in 0..dim {
            let _ = write!(h, ",integration_error_{k}");
        }
        h.push_str(",seconds");
        h
    }

    /// Record rows followed by `mean` and `std` rows; the `feasible` column
    /// of the `mean` row holds the feasibility rate.
    pub fn csv_rows(&self) -> Result<Vec<String>> {
        self.check()?;
        let mut rows = Vec::with_capacity(self.records.len() + 2);
        for r in &self.records {
            let mut line = format!(
                "{},{},{},{},{:e},{:e}",
                r.env_id, r.length, r.task, r.feasible as u8, r.smoothness, r.smoothness_normalized
            );
            for e in &r.integration_error {
                let _ = write!(line, ",{e:e}");
            }
            let _ = write!(line, ",{}", fmt_opt(r.seconds));
            rows.push(line);
        }
        if let (Some(a), Some(first)) = (&self.aggregate, self.records.first()) {
            for (label, pick) in [("mean", 0), ("std", 1)] {
                let f = |m: &MeanStd| if pick == 0 { m.mean } else { m.std };
                let feas = if pick == 0 {
                    format!("{:e}", a.feasibility)
                } else {
                    String::new()
                };
                let mut line = format!(
                    "{},{},{label},{feas},{:e},{:e}",
                    first.env_id,
                    first.length,
                    f(&a.smoothness),
                    f(&a.smoothness_normalized)
                );
                for e in &a.integration_error {
                    let _ = write!(line, ",{:e}", f(e));
                }
                let _ = write!(line, ",{}", fmt_opt(a.seconds.as_ref().map(f)));
                rows.push(line);
            }
        }
        Ok(rows)
    }

    pub fn to_csv(&self, dim: usize) -> Result<String> {
        let mut out = Self::csv_header(dim);
        out.push('\n');
        for r in self.csv_rows()? {
            out.push_str(&r);
            out.push('\n');
        }
        Ok(out)
    }
}

fn bench_task<M: MotionField + ?Sized>(
    model: &M,
    env: &WorldSdf,
    task: usize,
    objective: &TaskObjective,
    cfg: &BenchConfig,
    timed: bool,
) -> Result<BenchRecord> {
    let sample = SampleConfig {
        seed: derive_seed(cfg.seed, task as u64),
        ..cfg.sample.clone()
    };
    let clock = Instant::now();
    let batch = generate_motion(model, env, objective, &sample)?;
    let seconds = timed.then(|| clock.elapsed().as_secs_f64());
    let best = select_best(&batch, env)?;
    Ok(BenchRecord {
        env_id: env.name.clone(),
        length: model.shape().0,
        task,
        feasible: best.feasible,
        smoothness: smoothness(&best.trajectory),
        smoothness_normalized: smoothness_normalized(&best.trajectory),
        integration_error: romberg_integration_error(&best.trajectory)?,
        seconds,
    })
}

/// Generates a batch per task, selects the best member, and records its
/// feasibility, smoothness, integration error, and generation time.
pub fn run_benchmark<M: MotionField + Sync + ?Sized>(
    model: &M,
    env: &WorldSdf,
    tasks: &[TaskObjective],
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    cfg.sample.validate()?;
    let run =
        |(i, obj): (usize, &TaskObjective)| bench_task(model, env, i, obj, cfg, !cfg.parallel);
    #[cfg(feature = "parallel")]
    let records: Vec<BenchRecord> = if cfg.parallel {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .enumerate()
            .map(run)
            .collect::<Result<_>>()?
    } else {
        tasks.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let records: Vec<BenchRecord> = tasks.iter().enumerate().map(run).collect::<Result<_>>()?;
    Ok(BenchReport::new(records))
}
