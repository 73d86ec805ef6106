#![allow(dead_code)]

use motionfield::envs::{Bounds, TaskObjective, WorldSdf};
use motionfield::flow::{ChannelStats, FlowState, TargetMode};
use motionfield::net::{ModelLayout, ModelMeta, MotionFieldModel, NetConfig};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn square() -> Bounds {
    Bounds {
        min: vec![-1.0, -1.0],
        max: vec![1.0, 1.0],
    }
}

pub fn normal_matrix(l: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((l, d), |_| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_state(l: usize, d: usize, t: f64, rng: &mut impl Rng) -> FlowState {
    FlowState {
        q: normal_matrix(l, d, rng),
        qdot: normal_matrix(l, d, rng),
        qddot: normal_matrix(l, d, rng),
        t,
    }
}

pub fn meta(dim: usize, targets: TargetMode) -> ModelMeta {
    ModelMeta {
        stats: ChannelStats::identity(dim),
        bounds: Bounds {
            min: vec![-1.0; dim],
            max: vec![1.0; dim],
        },
        duration: 2.0,
        n_via: 7,
        targets,
        env_id: "test".into(),
        config_hash: String::new(),
    }
}

pub fn small_model(len: usize, dim: usize, cfg: &NetConfig, seed: u64) -> MotionFieldModel {
    MotionFieldModel::new(
        ModelLayout::new(len, dim, cfg).unwrap(),
        meta(dim, TargetMode::Exact),
        seed,
    )
    .unwrap()
}

pub fn objective2() -> TaskObjective {
    TaskObjective::new(vec![-0.5, 0.25], vec![0.6, -0.3])
}

pub fn empty_world() -> WorldSdf {
    WorldSdf::empty("void", square()).unwrap()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
