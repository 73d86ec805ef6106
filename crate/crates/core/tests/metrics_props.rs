mod common;

use common::*;
use motionfield::envs::TaskObjective;
use motionfield::flow::ChannelStats;
use motionfield::metrics::{
    integrate_samples, romberg, romberg_integration_error, run_benchmark, smoothness,
    smoothness_normalized, BenchConfig, BenchReport,
};
use motionfield::sampler::{OracleField, SampleConfig};
use motionfield::splines::{eval_trajectory, SplineBasis, Trajectory, ViaPointSpec};
use ndarray::Array2;
use proptest::prelude::*;

fn traj(pos: Array2<f64>) -> Trajectory {
    let d = pos.dim();
    Trajectory::new(pos, Array2::zeros(d), Array2::zeros(d), 2.0).unwrap()
}

fn loop_smoothness(q: &Array2<f64>) -> f64 {
    let l = q.nrows();
    let ds = 1.0 / (l - 1) as f64;
    let mut total = 0.0;
    for i in 0..l - 1 {
        let mut sq = 0.0;
        for k in 0..q.ncols() {
            let d = q[[i + 1, k]] - q[[i, k]];
            sq += d * d;
        }
        total += sq.sqrt() / ds;
    }
    total
}

fn arb_positions() -> impl Strategy<Value = Array2<f64>> {
    (2usize..60).prop_flat_map(|l| {
        prop::collection::vec(-2.0f64..2.0, l * 2)
            .prop_map(move |v| Array2::from_shape_vec((l, 2), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn smoothness_matches_loop(q in arb_positions()) {
        let t = traj(q.clone());
        let s = smoothness(&t);
        prop_assert!((s - loop_smoothness(&q)).abs() < 1e-12 * (1.0 + s));
        prop_assert!((smoothness_normalized(&t) * (q.nrows() - 1) as f64 - s).abs() < 1e-9 * (1.0 + s));
    }

    #[test]
    fn smoothness_is_rigid_invariant_and_homogeneous(
        q in arb_positions(),
        theta in 0.0f64..std::f64::consts::TAU,
        shift in prop::array::uniform2(-5.0f64..5.0),
        alpha in -3.0f64..3.0,
    ) {
        let (c, s) = (theta.cos(), theta.sin());
        let moved = Array2::from_shape_fn(q.dim(), |(i, k)| {
            let (x, y) = (q[[i, 0]], q[[i, 1]]);
            (if k == 0 { c * x - s * y } else { s * x + c * y }) + shift[k]
        });
        let base = smoothness(&traj(q.clone()));
        prop_assert!((smoothness(&traj(moved)) - base).abs() < 1e-9 * (1.0 + base));
        prop_assert!((smoothness(&traj(&q * alpha)) - alpha.abs() * base).abs() < 1e-9 * (1.0 + base));
    }

    #[test]
    fn block_integration_equals_sum_of_dyadic_romberg(n in 2usize..300, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 0.1;
        let mut oracle = 0.0;
        let mut start = 0;
        let mut rest = n - 1;
        while rest > 0 {
            let mut block = 1;
            while block * 2 <= rest {
                block *= 2;
            }
            oracle += romberg(&f[start..=start + block], h).unwrap();
            start += block;
            rest -= block;
        }
        prop_assert_eq!(integrate_samples(&f, h).unwrap(), oracle);
    }
}

#[test]
fn romberg_integrates_polynomials_and_sine() {
    let n = 65;
    let h = 1.0 / 64.0;
    let quintic: Vec<f64> = (0..n).map(|i| (i as f64 * h).powi(5)).collect();
    assert!((romberg(&quintic, h).unwrap() - 1.0 / 6.0).abs() < 1e-14);
    let hs = std::f64::consts::PI / 64.0;
    let sine: Vec<f64> = (0..n).map(|i| (i as f64 * hs).sin()).collect();
    assert!((romberg(&sine, hs).unwrap() - 2.0).abs() < 1e-8);
    assert!(romberg(&sine[..64], hs).is_err());
}

#[test]
fn integration_error_closed_forms() {
    let l = 65;
    let pos = Array2::from_shape_fn((l, 2), |(i, k)| {
        let t = i as f64 / 64.0;
        if k == 0 {
            t * t
        } else {
            0.4 + 0.0 * t
        }
    });
    let vel = Array2::from_shape_fn(
        (l, 2),
        |(i, k)| if k == 0 { 2.0 * i as f64 / 64.0 } else { 0.0 },
    );
    let t = Trajectory::new(pos.clone(), vel, Array2::zeros((l, 2)), 1.0).unwrap();
    assert!(romberg_integration_error(&t)
        .unwrap()
        .iter()
        .all(|&e| e < 1e-10));
    let still = Trajectory::new(pos, Array2::zeros((l, 2)), Array2::zeros((l, 2)), 1.0).unwrap();
    let e = romberg_integration_error(&still).unwrap();
    assert_eq!(e, vec![1.0, 0.0]);
    assert!(romberg_integration_error(&traj(Array2::zeros((2, 2)))).is_err());
}

#[test]
fn oracle_benchmark_in_empty_world_is_fully_feasible() {
    let tasks: Vec<TaskObjective> = (0..4)
        .map(|i| {
            TaskObjective::new(
                vec![-0.6, -0.5 + 0.2 * i as f64],
                vec![0.7, 0.3 - 0.1 * i as f64],
            )
        })
        .collect();
    let basis = SplineBasis::for_via_points(7).unwrap();
    let spec = ViaPointSpec::straight_line(tasks[0].boundary_conditions(), 7, 5.0).unwrap();
    let data = eval_trajectory(&spec, &basis, 33).unwrap();
    let cfg = BenchConfig {
        sample: SampleConfig {
            batch: 3,
            guidance: None,
            ..Default::default()
        },
        ..Default::default()
    };
    let oracle = OracleField::for_seed(&data, ChannelStats::fit([&data]).unwrap(), 0, 3).unwrap();
    let report = run_benchmark(&oracle, &empty_world(), &tasks, &cfg).unwrap();
    let agg = report.aggregate.as_ref().unwrap();
    assert_eq!(agg.feasibility, 1.0);
    assert!(report.records.iter().all(|r| r.seconds.is_some()));
    report.check().unwrap();

    let parallel = run_benchmark(
        &oracle,
        &empty_world(),
        &tasks,
        &BenchConfig {
            parallel: true,
            ..cfg.clone()
        },
    )
    .unwrap();
    let strip = |r: &BenchReport| {
        r.records
            .iter()
            .map(|x| (x.task, x.feasible, x.smoothness.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&report), strip(&parallel));
    assert!(parallel.records.iter().all(|r| r.seconds.is_none()));

    let empty = run_benchmark(&oracle, &empty_world(), &[], &cfg).unwrap();
    assert!(empty.records.is_empty() && empty.aggregate.is_none());
}
