//! Training loop for the motion field.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{regression_targets, ChannelStats, FlowState, TargetMode};
use crate::envs::TaskObjective;
use crate::error::{Error, Result};
use crate::net::{ModelLayout, ModelMeta, MotionFieldModel, NetConfig};
use crate::optimizer::{DatasetRecord, ExpertDataset};
use crate::rng::{derive_seed, stream_rng};

const SHUFFLE_STREAM: u64 = 1 << 32;
const NOISE_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Floor of the cosine schedule as a fraction of `learning_rate`.
    pub final_lr_fraction: f64,
    pub seed: u64,
    pub targets: TargetMode,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch: 128,
            learning_rate: 1e-3,
            final_lr_fraction: 0.0,
            seed: 0,
            targets: TargetMode::Exact,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be nonnegative",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("final_lr_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Cosine-decayed learning rate at `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if total == 0 {
            return self.learning_rate;
        }
        let floor = self.final_lr_fraction * self.learning_rate;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos());
        floor + (self.learning_rate - floor) * cos
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean step loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

fn lexicographic(a: &DatasetRecord, b: &DatasetRecord) -> std::cmp::Ordering {
    let (ta, tb) = (&a.trajectory, &b.trajectory);
    let fa = ta
        .positions
        .iter()
        .chain(ta.velocities.iter())
        .chain(ta.accelerations.iter());
    let fb = tb
        .positions
        .iter()
        .chain(tb.velocities.iter())
        .chain(tb.accelerations.iter());
    for (x, y) in fa.zip(fb) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => {}
            o => return o,
        }
    }
    let oa = a.objective.start.iter().chain(&a.objective.goal);
    let ob = b.objective.start.iter().chain(&b.objective.goal);
    for (x, y) in oa.zip(ob) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => {}
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

pub fn train_motion_field(
    ds: &ExpertDataset,
    cfg: &TrainConfig,
) -> Result<(MotionFieldModel, TrainReport)> {
    train_motion_field_with(ds, cfg, |_, _| {})
}

/// Trains a model, calling `on_epoch(epoch, mean_loss)` after every epoch.
///
/// Records are put in a canonical content order first, so the result does
/// not depend on the order they appear in the dataset.
pub fn train_motion_field_with(
    ds: &ExpertDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(MotionFieldModel, TrainReport)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    ds.validate()?;
    let (len, dim) = (ds.length(), ds.dim());
    let layout = ModelLayout::new(len, dim, &cfg.net)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| lexicographic(&ds.records[a], &ds.records[b]));
    let stats = ChannelStats::fit(order.iter().map(|&i| &ds.records[i].trajectory))?;
    let meta = ModelMeta {
        stats: stats.clone(),
        bounds: ds.env.bounds.clone(),
        duration: ds.duration(),
        n_via: ds.meta.config.n_via,
        targets: cfg.targets,
        env_id: ds.env.name.clone(),
        config_hash: cfg.hash(),
    };
    let mut model = MotionFieldModel::new(layout, meta, derive_seed(cfg.seed, 0))?;

    let data: Vec<FlowState> = order
        .iter()
        .map(|&i| stats.normalize(&ds.records[i].trajectory))
        .collect::<Result<_>>()?;
    let objectives: Vec<&TaskObjective> = order.iter().map(|&i| &ds.records[i].objective).collect();

    let steps_per_epoch = ds.len().div_ceil(cfg.batch);
    let total = steps_per_epoch * cfg.epochs;
    let mut adam = Adam::new(model.param_count());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let out_w = model.layout.output_width();
    let n = model.layout.channel_size();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut perm: Vec<usize> = (0..data.len()).collect();
        perm.shuffle(&mut stream_rng(cfg.seed, SHUFFLE_STREAM + epoch as u64));
        let mut epoch_loss = 0.0;
        for chunk in perm.chunks(cfg.batch) {
            let mut rng = stream_rng(cfg.seed, NOISE_STREAM + step as u64);
            let mut states = Vec::with_capacity(chunk.len());
            let mut times = Vec::with_capacity(chunk.len());
            let mut target = Array2::zeros((chunk.len(), out_w));
            for (b, &i) in chunk.iter().enumerate() {
                let t: f64 = rng.random();
                let mut noise =
                    || Array2::from_shape_fn((len, dim), |_| rng.sample::<f64, _>(StandardNormal));
                let eps = FlowState {
                    q: noise(),
                    qdot: noise(),
                    qddot: noise(),
                    t: 0.0,
                };
                let y = regression_targets(cfg.targets, &data[i], &eps, t)?;
                let mut row = target.row_mut(b);
                for (k, head) in y.heads().into_iter().enumerate() {
                    for (dst, v) in row
                        .slice_mut(ndarray::s![k * n..(k + 1) * n])
                        .iter_mut()
                        .zip(head.iter())
                    {
                        *dst = *v;
                    }
                }
                states.push(super::interp_channels(&data[i], &eps, t)?);
                times.push(t);
            }
            let objs: Vec<&TaskObjective> = chunk.iter().map(|&i| objectives[i]).collect();
            let x = model.encode_batch(&states, &objs)?;
            let (raw, cache) = model.forward_cached(x.view())?;
            let pred = model.heads_to_fields(&raw, &states)?;
            let count = pred.len() as f64;
            let mut diff = pred - &target;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    records: chunk.iter().map(|&i| order[i]).collect(),
                    times,
                });
            }
            diff *= 2.0 / count;
            let d_raw = model.fields_grad_to_heads(&diff, &states)?;
            let grad = model.backward(&cache, d_raw.view())?;
            adam.update(&mut model.params, &grad, cfg.lr_at(step, total));
            epoch_loss += loss;
            step += 1;
        }
        let mean = epoch_loss / steps_per_epoch as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }
    model.validate()?;
    Ok((
        model,
        TrainReport {
            epoch_losses,
            steps: step,
        },
    ))
}
