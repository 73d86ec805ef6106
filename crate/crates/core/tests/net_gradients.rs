mod common;

use common::*;
use motionfield::envs::TaskObjective;
use motionfield::flow::FlowState;
use motionfield::net::mlp::GELU_LIPSCHITZ;
use motionfield::net::{
    load_checkpoint, save_checkpoint, InputMode, MotionFieldModel, NetConfig, Parametrization,
    TrunkMode,
};
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Batch {
    states: Vec<FlowState>,
    objectives: Vec<TaskObjective>,
    target: Array2<f64>,
}

fn batch(model: &MotionFieldModel, n: usize, rng: &mut ChaCha8Rng) -> Batch {
    let (l, d) = (model.layout.len, model.layout.dim);
    let states = (0..n)
        .map(|_| random_state(l, d, rng.random_range(0.0..1.0), rng))
        .collect();
    let objectives = (0..n)
        .map(|_| {
            let p = |rng: &mut ChaCha8Rng| {
                (0..d)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect::<Vec<_>>()
            };
            TaskObjective::new(p(rng), p(rng))
        })
        .collect();
    let target = Array2::from_shape_fn((n, model.layout.output_width()), |_| {
        rng.random_range(-1.0..1.0)
    });
    Batch {
        states,
        objectives,
        target,
    }
}

fn loss(model: &MotionFieldModel, b: &Batch) -> f64 {
    let objs: Vec<&TaskObjective> = b.objectives.iter().collect();
    let x = model.encode_batch(&b.states, &objs).unwrap();
    let raw = model.forward_inputs(x.view()).unwrap();
    let pred = model.heads_to_fields(&raw, &b.states).unwrap();
    (pred - &b.target).mapv(|v| v * v).mean().unwrap()
}

fn analytic_grad(model: &MotionFieldModel, b: &Batch) -> Vec<f64> {
    let objs: Vec<&TaskObjective> = b.objectives.iter().collect();
    let x = model.encode_batch(&b.states, &objs).unwrap();
    let (raw, cache) = model.forward_cached(x.view()).unwrap();
    let pred = model.heads_to_fields(&raw, &b.states).unwrap();
    let count = pred.len() as f64;
    let d_pred = (pred - &b.target) * (2.0 / count);
    let d_raw = model.fields_grad_to_heads(&d_pred, &b.states).unwrap();
    model.backward(&cache, d_raw.view()).unwrap()
}

fn max_fd_error(cfg: &NetConfig, len: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = small_model(len, 2, cfg, seed);
    let b = batch(&model, 4, &mut rng);
    let grad = analytic_grad(&model, &b);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let i = rng.random_range(0..model.params.len());
        let p0 = model.params[i];
        model.params[i] = p0 + h;
        let up = loss(&model, &b);
        model.params[i] = p0 - h;
        let down = loss(&model, &b);
        model.params[i] = p0;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(grad[i], fd, 1e-6));
    }
    worst
}

#[test]
fn backward_matches_finite_differences_width8() {
    let base = NetConfig {
        hidden: vec![8, 8],
        time_features: 4,
        ..Default::default()
    };
    let variants = [
        base.clone(),
        NetConfig {
            parametrization: Parametrization::Direct,
            ..base.clone()
        },
        NetConfig {
            trunks: TrunkMode::Separate,
            ..base.clone()
        },
        NetConfig {
            input: InputMode::QOnly,
            ..base.clone()
        },
    ];
    for (k, cfg) in variants.iter().enumerate() {
        let err = max_fd_error(cfg, 3, 100 + k as u64);
        assert!(err < 1e-4, "variant {k}: max relative error {err:e}");
    }
    // long enough for the spline projections to be proper subspaces
    for (k, p) in [Parametrization::Preconditioned, Parametrization::Endpoint]
        .into_iter()
        .enumerate()
    {
        let err = max_fd_error(
            &NetConfig {
                parametrization: p,
                ..base.clone()
            },
            20,
            200 + k as u64,
        );
        assert!(err < 1e-4, "{p:?} at L=20: max relative error {err:e}");
    }
}

#[test]
fn input_groups_start_with_equal_variance() {
    let cfg = NetConfig {
        hidden: vec![512],
        ..Default::default()
    };
    let model = small_model(64, 2, &cfg, 3);
    let trunk = model.layout.trunk();
    let (w, _) = trunk.weights(&model.params[..trunk.param_count()], 0);
    let groups = model.layout.input_groups();
    assert_eq!(groups, vec![128, 128, 128, cfg.time_features + 1, 4]);
    let mut row = 0;
    for n in groups {
        let block = w.slice(ndarray::s![row..row + n, ..]);
        // summed variance over the group's rows is the group's share of the pre-activation variance
        let share = block.iter().map(|v| v * v).sum::<f64>() / w.ncols() as f64;
        assert!(
            (share - 2.0 / 5.0).abs() < 0.1,
            "group at row {row}: {share}"
        );
        row += n;
    }
}

#[test]
fn small_step_decreases_loss() {
    let cfg = NetConfig {
        hidden: vec![16, 16],
        time_features: 4,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = small_model(4, 2, &cfg, 8);
    let b = batch(&model, 8, &mut rng);
    let before = loss(&model, &b);
    let grad = analytic_grad(&model, &b);
    let norm2: f64 = grad.iter().map(|g| g * g).sum();
    let lr = 1e-3 / norm2.sqrt().max(1.0);
    for (p, g) in model.params.iter_mut().zip(&grad) {
        *p -= lr * g;
    }
    let after = loss(&model, &b);
    assert!(after < before, "{after} !< {before}");
}

fn spectral_norm(w: ndarray::ArrayView2<f64>) -> f64 {
    let m = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[[i, j]]);
    m.singular_values().max()
}

#[test]
fn raw_heads_are_lipschitz_in_the_input() {
    let cfg = NetConfig {
        hidden: vec![32, 32, 32],
        time_features: 4,
        ..Default::default()
    };
    let model = small_model(5, 2, &cfg, 3);
    let trunk = model.layout.trunk();
    let bound = (0..trunk.n_layers())
        .map(|k| spectral_norm(trunk.weights(&model.params, k).0))
        .product::<f64>()
        * GELU_LIPSCHITZ.powi(trunk.n_layers() as i32 - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = model.layout.input_width();
    for _ in 0..100 {
        let x = Array2::from_shape_fn((1, w), |_| rng.random_range(-2.0..2.0));
        let dx = Array2::from_shape_fn((1, w), |_| rng.random_range(-0.1..0.1));
        let y = &x + &dx;
        let fx = model.forward_inputs(x.view()).unwrap();
        let fy = model.forward_inputs(y.view()).unwrap();
        let out = (&fx - &fy).mapv(|v| v * v).sum().sqrt();
        let inp = dx.mapv(|v| v * v).sum().sqrt();
        assert!(
            out <= bound * inp * (1.0 + 1e-12),
            "{out} > {bound} · {inp}"
        );
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let cfg = NetConfig {
        hidden: vec![24, 24, 24],
        ..Default::default()
    };
    let model = small_model(8, 2, &cfg, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &path).unwrap();
    assert!(!path.with_extension("ckpt.partial").exists());
    let back = load_checkpoint(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random_state(8, 2, 0.4, &mut rng);
    let a = model.forward(&s, &objective2()).unwrap();
    let b = back.forward(&s, &objective2()).unwrap();
    for (x, y) in
        a.u.iter()
            .chain(a.w.iter())
            .zip(b.u.iter().chain(b.w.iter()))
    {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    let err = load_checkpoint(&path).unwrap_err().to_string();
    assert!(err.contains("checkpoint"), "{err}");
}
