//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured values. The trained fixtures are built once per
//! (world, length) and shared between criteria.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use motionfield::envs::{TaskObjective, WorldSdf};
use motionfield::flow::{
    constant_fields, interp_channels, target_fields, train_motion_field, ChannelStats, FieldTarget,
    FlowState, TrainConfig,
};
use motionfield::metrics::{
    holdout_tasks, romberg_integration_error, run_benchmark, smoothness, smoothness_normalized,
    BenchConfig, BenchReport,
};
use motionfield::net::checkpoint::encode_checkpoint;
use motionfield::net::{ModelLayout, MotionFieldModel, NetConfig};
use motionfield::optimizer::{build_dataset, plan_expert, DatasetConfig};
use motionfield::rng::derive_seed;
use motionfield::sampler::{generate_motion, rk4_step, OracleField, SampleConfig};
use motionfield::splines::{eval_trajectory, DesignGrid, SplineBasis, Trajectory, ViaPointSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0;
const BENCH_SEED: u64 = 7;
const DATA_TASKS: usize = 300;
const DATA_SAMPLES: usize = 4;
const REFERENCE_PARAMS: f64 = 362_922.0;

fn verdict(id: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!(
        "criterion {id}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

struct Fixture {
    env: WorldSdf,
    len: usize,
    records: usize,
    train_seconds: f64,
    bench_seconds: f64,
    model: MotionFieldModel,
    report: BenchReport,
    tasks: Vec<TaskObjective>,
    /// CMA-ES expert for every held-out task at the fixture length, when one exists.
    experts: Vec<Option<(ViaPointSpec, Trajectory)>>,
}

const EPOCHS: usize = 1200;

fn build_fixture(world: &str, len: usize) -> Fixture {
    let env = WorldSdf::fixture(world).unwrap();
    let data_cfg = DatasetConfig {
        n_tasks: DATA_TASKS,
        samples_per_task: DATA_SAMPLES,
        length: len,
        seed: SEED,
        ..Default::default()
    };
    let ds = build_dataset(&env, &data_cfg).unwrap();
    let t0 = Instant::now();
    let train = TrainConfig {
        epochs: EPOCHS,
        seed: SEED,
        ..Default::default()
    };
    let (model, _) = train_motion_field(&ds, &train).unwrap();
    let train_seconds = t0.elapsed().as_secs_f64();

    let tasks = holdout_tasks(&env, 50, BENCH_SEED, 0.5).unwrap();
    let t0 = Instant::now();
    let report = run_benchmark(
        &model,
        &env,
        &tasks,
        &BenchConfig {
            seed: BENCH_SEED,
            ..Default::default()
        },
    )
    .unwrap();
    let bench_seconds = t0.elapsed().as_secs_f64();

    let grid = DesignGrid::new(&SplineBasis::for_via_points(data_cfg.n_via).unwrap(), len).unwrap();
    let experts = tasks
        .iter()
        .enumerate()
        .map(|(i, obj)| {
            plan_expert(
                &env,
                obj,
                &data_cfg,
                &grid,
                derive_seed(BENCH_SEED, i as u64),
            )
            .unwrap()
            .map(|p| (p.spec, p.trajectory))
        })
        .collect();
    Fixture {
        env,
        len,
        records: ds.len(),
        train_seconds,
        bench_seconds,
        model,
        report,
        tasks,
        experts,
    }
}

fn maze(len: usize) -> &'static Fixture {
    static CELLS: [OnceLock<Fixture>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match len {
        64 => 0,
        128 => 1,
        256 => 2,
        _ => unreachable!(),
    };
    CELLS[slot].get_or_init(|| build_fixture("maze2d", len))
}

fn spheres() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| build_fixture("spheres3d", 64))
}

fn all_fixtures() -> [&'static Fixture; 4] {
    [maze(64), maze(128), maze(256), spheres()]
}

fn label(f: &Fixture) -> String {
    format!("{} L={}", f.env.name, f.len)
}

#[test]
fn criterion_01_interpolant_and_targets() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut endpoint, mut fd_worst, mut constant_worst) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let data = random_state(6, 2, 1.0, &mut rng);
        let eps = random_state(6, 2, 0.0, &mut rng);
        let s0 = interp_channels(&data, &eps, 0.0).unwrap();
        let s1 = interp_channels(&data, &eps, 1.0).unwrap();
        for (a, b) in s0
            .channels()
            .into_iter()
            .zip(eps.channels())
            .chain(s1.channels().into_iter().zip(data.channels()))
        {
            endpoint = endpoint.max((a - b).iter().fold(0.0, |m, v| m.max(v.abs())));
        }

        let t = rng.random_range(0.01..0.99);
        let h = 1e-6;
        let exact = target_fields(&data, &eps, t).unwrap();
        let (up, down) = (
            interp_channels(&data, &eps, t + h).unwrap(),
            interp_channels(&data, &eps, t - h).unwrap(),
        );
        for (e, (u, d)) in exact
            .heads()
            .into_iter()
            .zip(up.channels().into_iter().zip(down.channels()))
        {
            for (x, (p, m)) in e.iter().zip(u.iter().zip(d.iter())) {
                fd_worst = fd_worst.max(rel_err(*x, (p - m) / (2.0 * h), 1e-2));
            }
        }

        // n-th order differences of the degree-n position interpolants
        let c = constant_fields(&data, &eps).unwrap();
        let hh = 1e-3;
        for i in 0..6 {
            for k in 0..2 {
                let (q1, eq, ev, ea) = (
                    data.q[[i, k]],
                    eps.q[[i, k]],
                    eps.qdot[[i, k]],
                    eps.qddot[[i, k]],
                );
                let p1 = |t: f64| (1.0 - t) * eq + t * q1;
                let p2 = |t: f64| (1.0 - t * t) * eq + (t - t * t) * ev + t * t * q1;
                let p3 = |t: f64| {
                    (1.0 - t.powi(3)) * eq
                        + (t - t.powi(3)) * ev
                        + 0.5 * (t * t - t.powi(3)) * ea
                        + t.powi(3) * q1
                };
                let d1 = (p1(t + hh) - p1(t - hh)) / (2.0 * hh);
                let d2 = (p2(t + hh) - 2.0 * p2(t) + p2(t - hh)) / (hh * hh);
                let d3 = (p3(t + 2.0 * hh) - 2.0 * p3(t + hh) + 2.0 * p3(t - hh)
                    - p3(t - 2.0 * hh))
                    / (2.0 * hh.powi(3));
                for (num, exact) in [(d1, c.u[[i, k]]), (d2, c.v[[i, k]]), (d3, c.w[[i, k]])] {
                    constant_worst = constant_worst.max(rel_err(num, exact, 1.0));
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = endpoint <= 1e-9 && fd_worst < 1e-6 && constant_worst < 1e-4 && secs < 10.0;
    assert!(verdict(
        "1",
        pass,
        format!("endpoint {endpoint:.1e}, target FD {fd_worst:.1e}, constant identities {constant_worst:.1e}, {secs:.2} s"),
    ));
}

#[test]
fn criterion_02_gradient_integrity() {
    let t0 = Instant::now();
    let cfg = NetConfig {
        hidden: vec![8, 8, 8],
        time_features: 4,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = small_model(4, 2, &cfg, 2);
    let states: Vec<FlowState> = (0..5)
        .map(|_| random_state(4, 2, rng.random_range(0.0..1.0), &mut rng))
        .collect();
    let objs: Vec<TaskObjective> = (0..5)
        .map(|_| {
            TaskObjective::new(
                vec![rng.random_range(-1.0..1.0), 0.2],
                vec![0.4, rng.random_range(-1.0..1.0)],
            )
        })
        .collect();
    let refs: Vec<&TaskObjective> = objs.iter().collect();
    let target = Array2::from_shape_fn((5, model.layout.output_width()), |_| {
        rng.random_range(-1.0..1.0)
    });
    let x = model.encode_batch(&states, &refs).unwrap();
    let loss = |m: &MotionFieldModel| {
        let raw = m.forward_inputs(x.view()).unwrap();
        (m.heads_to_fields(&raw, &states).unwrap() - &target)
            .mapv(|v| v * v)
            .mean()
            .unwrap()
    };
    let (raw, cache) = model.forward_cached(x.view()).unwrap();
    let pred = model.heads_to_fields(&raw, &states).unwrap();
    let d = (&pred - &target) * (2.0 / pred.len() as f64);
    let grad = model
        .backward(
            &cache,
            model.fields_grad_to_heads(&d, &states).unwrap().view(),
        )
        .unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..model.params.len() {
        let p0 = model.params[i];
        model.params[i] = p0 + h;
        let up = loss(&model);
        model.params[i] = p0 - h;
        let down = loss(&model);
        model.params[i] = p0;
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * h), 1e-6));
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(verdict(
        "2",
        worst < 1e-4 && secs < 30.0,
        format!(
            "{} params, max rel err {worst:.1e}, {secs:.2} s",
            model.params.len()
        ),
    ));
}

fn scalar(x: f64, t: f64) -> FlowState {
    let m = Array2::from_elem((1, 1), x);
    FlowState {
        q: m.clone(),
        qdot: m.clone(),
        qddot: m,
        t,
    }
}

fn integrate(
    field: &mut dyn FnMut(&[FlowState]) -> motionfield::Result<Vec<FieldTarget>>,
    steps: usize,
) -> f64 {
    let mut s = vec![scalar(1.0, 0.0)];
    for i in 0..steps {
        s[0].t = i as f64 / steps as f64;
        s = rk4_step(field, &s, 1.0 / steps as f64).unwrap();
    }
    s[0].q[[0, 0]]
}

#[test]
fn criterion_03_rk4() {
    let mut decay = |s: &[FlowState]| {
        Ok(s.iter()
            .map(|x| FieldTarget {
                u: -&x.q,
                v: -&x.qdot,
                w: -&x.qddot,
            })
            .collect())
    };
    let pts: Vec<(f64, f64)> = [5usize, 10, 20, 40]
        .iter()
        .map(|&n| {
            (
                (1.0 / n as f64).ln(),
                (integrate(&mut decay, n) - (-1.0f64).exp()).abs().ln(),
            )
        })
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();

    let mut poly_worst: f64 = 0.0;
    let coeffs = [
        [0.5, -1.0, 0.0, 4.0],
        [1.0, 0.0, 3.0, 0.0],
        [-0.25, 2.0, -6.0, 8.0],
    ];
    for c in coeffs {
        let mut field = |s: &[FlowState]| {
            Ok(s.iter()
                .map(|x| {
                    let t = x.t;
                    let v = Array2::from_elem(
                        (1, 1),
                        c[0] + c[1] * t + c[2] * t * t + c[3] * t.powi(3),
                    );
                    FieldTarget {
                        u: v.clone(),
                        v: v.clone(),
                        w: v,
                    }
                })
                .collect())
        };
        let exact = 1.0 + c[0] + c[1] / 2.0 + c[2] / 3.0 + c[3] / 4.0;
        for steps in [1, 2, 7, 30] {
            poly_worst = poly_worst.max((integrate(&mut field, steps) - exact).abs());
        }
    }
    assert!(verdict(
        "3",
        (3.7..=4.3).contains(&slope) && poly_worst <= 1e-12,
        format!("log-log slope {slope:.3}, cubic-field error {poly_worst:.1e}"),
    ));
}

#[test]
fn criterion_04_oracle_transport() {
    let basis = SplineBasis::for_via_points(7).unwrap();
    let obj = objective2();
    let mut spec = ViaPointSpec::straight_line(obj.boundary_conditions(), 7, 5.0).unwrap();
    spec.via[[2, 1]] += 0.4;
    spec.via[[5, 0]] -= 0.2;
    let data = eval_trajectory(&spec, &basis, 64).unwrap();
    let cfg = SampleConfig {
        steps: 30,
        batch: 25,
        seed: 4,
        guidance: None,
    };
    let oracle = OracleField::for_seed(
        &data,
        ChannelStats::fit([&data]).unwrap(),
        cfg.seed,
        cfg.batch,
    )
    .unwrap();
    let out = generate_motion(&oracle, &empty_world(), &obj, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for t in &out {
        for (a, b) in [
            (&t.positions, &data.positions),
            (&t.velocities, &data.velocities),
            (&t.accelerations, &data.accelerations),
        ] {
            worst = worst.max((a - b).iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    assert!(verdict(
        "4",
        worst < 1e-6,
        format!("max endpoint deviation {worst:.1e} over 25 members, 30 steps")
    ));
}

#[test]
fn criterion_05_end_to_end_2d() {
    let mut pass = true;
    let mut detail = Vec::new();
    let (mut train, mut bench) = (0.0, 0.0);
    for len in [64, 128, 256] {
        let f = maze(len);
        let feas = f.report.aggregate.as_ref().unwrap().feasibility;
        pass &= f.records >= 1000 && feas >= 0.8;
        train += f.train_seconds;
        bench += f.bench_seconds;
        detail.push(format!(
            "L={len}: {} records, feasibility {feas:.2}",
            f.records
        ));
    }
    pass &= train <= 1800.0 && bench <= 600.0;
    detail.push(format!("training {train:.0} s, benchmark {bench:.0} s"));
    assert!(verdict("5", pass, detail.join("; ")));
}

#[test]
fn criterion_06_end_to_end_3d() {
    let f = spheres();
    let feas = f.report.aggregate.as_ref().unwrap().feasibility;
    assert!(verdict(
        "6",
        feas >= 0.7,
        format!(
            "{}: {} records, feasibility {feas:.2}, training {:.0} s",
            label(f),
            f.records,
            f.train_seconds
        ),
    ));
}

#[test]
fn criterion_07_smoothness() {
    let mut pass = true;
    let mut detail = Vec::new();
    for f in all_fixtures() {
        let pairs: Vec<(f64, f64)> = f
            .report
            .records
            .iter()
            .zip(&f.experts)
            .filter_map(|(r, e)| e.as_ref().map(|(_, t)| (r.smoothness, smoothness(t))))
            .collect();
        let n = pairs.len() as f64;
        let generated = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let expert = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        pass &= generated <= 2.0 * expert;
        detail.push(format!(
            "{}: {generated:.1} vs expert {expert:.1} ({} tasks)",
            label(f),
            pairs.len()
        ));
    }
    let mut line_worst: f64 = 0.0;
    for l in [2, 17, 64, 256] {
        let pos = Array2::from_shape_fn((l, 1), |(i, _)| i as f64 / (l - 1) as f64);
        let t = Trajectory::new(pos, Array2::zeros((l, 1)), Array2::zeros((l, 1)), 3.0).unwrap();
        line_worst = line_worst.max((smoothness(&t) - (l - 1) as f64).abs());
        line_worst = line_worst.max((smoothness_normalized(&t) - 1.0).abs());
    }
    pass &= line_worst <= 1e-12;
    detail.push(format!("straight line {line_worst:.1e}"));
    assert!(verdict("7", pass, detail.join("; ")));
}

fn mean_axes(errors: impl Iterator<Item = Vec<f64>>, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut n = 0.0;
    for e in errors {
        for (s, v) in sum.iter_mut().zip(e) {
            *s += v;
        }
        n += 1.0;
    }
    sum.into_iter().map(|s| s / n).collect()
}

fn fmt_axes(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.1e}"))
        .collect::<Vec<_>>()
        .join("/")
}

/// 8a: expert splines evaluated on the dyadic grid `L + 1`. 8b: mean
/// generated error per axis against the expert mean at the same `L`.
#[test]
fn criterion_08_integration_error() {
    let basis = SplineBasis::for_via_points(7).unwrap();
    let mut pass_a = true;
    let mut pass_b = true;
    let (mut detail_a, mut detail_b) = (Vec::new(), Vec::new());
    for f in all_fixtures() {
        let dim = f.env.dim;
        let dyadic: Vec<Vec<f64>> = f
            .experts
            .iter()
            .flatten()
            .map(|(spec, _)| {
                romberg_integration_error(&eval_trajectory(spec, &basis, f.len + 1).unwrap())
                    .unwrap()
            })
            .collect();
        let worst: Vec<f64> = (0..dim)
            .map(|k| dyadic.iter().map(|e| e[k]).fold(0.0, f64::max))
            .collect();
        pass_a &= worst.iter().all(|&e| e < 1e-8);
        detail_a.push(format!(
            "{} (grid {}): worst {}",
            label(f),
            f.len + 1,
            fmt_axes(&worst)
        ));

        let expert = mean_axes(
            f.experts
                .iter()
                .flatten()
                .map(|(_, t)| romberg_integration_error(t).unwrap()),
            dim,
        );
        let generated = mean_axes(
            f.report.records.iter().map(|r| r.integration_error.clone()),
            dim,
        );
        pass_b &= generated.iter().zip(&expert).all(|(g, e)| *g <= 20.0 * e);
        detail_b.push(format!(
            "{}: generated {} vs expert {}",
            label(f),
            fmt_axes(&generated),
            fmt_axes(&expert)
        ));
    }
    let a = verdict("8a", pass_a, detail_a.join("; "));
    // reported only, see README
    verdict("8b", pass_b, detail_b.join("; "));
    assert!(a);
}

#[test]
fn criterion_09_determinism() {
    let env = WorldSdf::fixture("maze2d").unwrap();
    let data_cfg = DatasetConfig {
        n_tasks: 6,
        samples_per_task: 2,
        length: 16,
        cmaes_budget: 600,
        seed: 3,
        ..Default::default()
    };
    let ds1 = build_dataset(&env, &data_cfg).unwrap();
    let ds2 = build_dataset(&env, &data_cfg).unwrap();
    let (mut b1, mut b2) = (Vec::new(), Vec::new());
    ds1.to_writer(&mut b1).unwrap();
    ds2.to_writer(&mut b2).unwrap();
    let data_ok = ds1 == ds2 && b1 == b2;

    let train = TrainConfig {
        epochs: 3,
        batch: 4,
        seed: 3,
        net: NetConfig {
            hidden: vec![16, 16],
            time_features: 4,
            ..Default::default()
        },
        ..Default::default()
    };
    let (m1, r1) = train_motion_field(&ds1, &train).unwrap();
    let (m2, r2) = train_motion_field(&ds2, &train).unwrap();
    let train_ok = r1 == r2 && encode_checkpoint(&m1).unwrap() == encode_checkpoint(&m2).unwrap();

    let obj = &ds1.records[0].objective;
    let cfg = SampleConfig {
        seed: 5,
        ..Default::default()
    };
    let sample_ok = generate_motion(&m1, &env, obj, &cfg).unwrap()
        == generate_motion(&m2, &env, obj, &cfg).unwrap();

    let f = maze(64);
    let rerun = run_benchmark(
        &f.model,
        &f.env,
        &f.tasks,
        &BenchConfig {
            seed: BENCH_SEED,
            parallel: true,
            ..Default::default()
        },
    )
    .unwrap();
    let strip = |r: &BenchReport| {
        r.records
            .iter()
            .map(|x| {
                let mut x = x.clone();
                x.seconds = None;
                x
            })
            .collect::<Vec<_>>()
    };
    let bench_ok = strip(&rerun) == strip(&f.report);
    assert!(verdict(
        "9",
        data_ok && train_ok && sample_ok && bench_ok,
        format!(
            "dataset {data_ok}, training {train_ok}, sampling {sample_ok}, benchmark {bench_ok}"
        ),
    ));
}

#[test]
fn criterion_10_scale_anchor() {
    let layout = ModelLayout::new(64, 2, &NetConfig::default()).unwrap();
    let params = layout.param_count();
    let ratio = params as f64 / REFERENCE_PARAMS;
    let bytes = encode_checkpoint(&maze(64).model).unwrap().len();
    let mb = bytes as f64 / 1e6;
    assert!(verdict(
        "10",
        (0.8..=1.2).contains(&ratio) && (1.0..10.0).contains(&mb),
        format!(
            "{params} params ({:+.1}%), checkpoint {mb:.2} MB",
            (ratio - 1.0) * 100.0
        ),
    ));
}
