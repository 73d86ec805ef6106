//! Browser demo over the `motionfield` core: signed-distance maps, CMA-ES
//! expert plans for clicked start/goal pairs, and the flow that carries
//! Gaussian noise onto a plan under RK4.
//!
//! The wasm-facing wrappers only convert errors; the logic lives in the
//! plain functions so it can be tested natively.

use motionfield::envs::{TaskObjective, WorldSdf};
use motionfield::flow::{ChannelStats, FlowState};
use motionfield::optimizer::{plan_expert, DatasetConfig};
use motionfield::sampler::{rk4_step, MotionField, OracleField};
use motionfield::splines::{DesignGrid, SplineBasis, Trajectory};
use wasm_bindgen::prelude::*;

pub const DEMO_LENGTH: usize = 64;

/// Row-major `ny × nx` signed distances over the workspace, `y` increasing
/// with the row index.
pub fn sdf_grid(env: &WorldSdf, nx: usize, ny: usize) -> Vec<f64> {
    let (lo, hi) = (&env.bounds.min, &env.bounds.max);
    let at = |i: usize, n: usize, k: usize| lo[k] + (hi[k] - lo[k]) * (i as f64 + 0.5) / n as f64;
    let mut p = vec![0.0; env.dim];
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            p[0] = at(i, nx, 0);
            p[1] = at(j, ny, 1);
            out.push(env.sdf(&p));
        }
    }
    out
}

/// CMA-ES plan at the dataset defaults, or `None` when every restart collides.
pub fn expert_plan(
    env: &WorldSdf,
    objective: &TaskObjective,
    seed: u64,
) -> motionfield::Result<Option<Trajectory>> {
    let cfg = DatasetConfig {
        length: DEMO_LENGTH,
        ..Default::default()
    };
    objective.validate(env, 0.0)?;
    let grid = DesignGrid::new(&SplineBasis::for_via_points(cfg.n_via)?, cfg.length)?;
    Ok(plan_expert(env, objective, &cfg, &grid, seed)?.map(|p| p.trajectory))
}

/// Positions of one noise sample at each of the `steps + 1` flow times while
/// the exact conditional field transports it onto `target`, flattened as
/// `frame × row × axis`.
pub fn transport_frames(
    target: &Trajectory,
    seed: u64,
    steps: usize,
) -> motionfield::Result<Vec<f64>> {
    if steps == 0 {
        return Err(motionfield::Error::Input("steps must be at least 1".into()));
    }
    let stats = ChannelStats::fit([target])?;
    let oracle = OracleField::for_seed(target, stats, seed, 1)?;
    let objective = TaskObjective::new(
        target.positions.row(0).to_vec(),
        target.positions.row(target.len() - 1).to_vec(),
    );
    let mut field = |s: &[FlowState]| oracle.eval_batch(s, &objective);
    let mut state = oracle.noises.clone();
    let mut frames = Vec::with_capacity((steps + 1) * target.positions.len());
    let mut push = |s: &FlowState| -> motionfield::Result<()> {
        frames.extend(
            oracle
                .stats()
                .denormalize(s, target.duration)?
                .positions
                .iter(),
        );
        Ok(())
    };
    push(&state[0])?;
    for i in 0..steps {
        state[0].t = i as f64 / steps as f64;
        state = rk4_step(&mut field, &state, 1.0 / steps as f64)?;
        push(&state[0])?;
    }
    Ok(frames)
}

fn js(e: motionfield::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Expert plan profiles handed to the page, each flattened `row × axis`.
#[wasm_bindgen]
pub struct Plan {
    inner: Trajectory,
}

#[wasm_bindgen]
impl Plan {
    pub fn positions(&self) -> Vec<f64> {
        self.inner.positions.iter().copied().collect()
    }

    pub fn velocities(&self) -> Vec<f64> {
        self.inner.velocities.iter().copied().collect()
    }

    pub fn accelerations(&self) -> Vec<f64> {
        self.inner.accelerations.iter().copied().collect()
    }

    pub fn duration(&self) -> f64 {
        self.inner.duration
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    /// Flow frames from noise (`seed`) to this plan.
    pub fn transport(&self, seed: u64, steps: usize) -> Result<Vec<f64>, JsError> {
        transport_frames(&self.inner, seed, steps).map_err(js)
    }
}

#[wasm_bindgen]
pub struct Demo {
    env: WorldSdf,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(world: &str) -> Result<Demo, JsError> {
        let env = WorldSdf::fixture(world).map_err(js)?;
        if env.dim != 2 {
            return Err(JsError::new("the demo draws planar worlds only"));
        }
        Ok(Demo { env })
    }

    /// `[x_min, y_min, x_max, y_max]`
    pub fn bounds(&self) -> Vec<f64> {
        let b = &self.env.bounds;
        vec![b.min[0], b.min[1], b.max[0], b.max[1]]
    }

    pub fn sdf(&self, x: f64, y: f64) -> f64 {
        self.env.sdf(&[x, y])
    }

    #[wasm_bindgen(js_name = sdfGrid)]
    pub fn sdf_grid(&self, nx: usize, ny: usize) -> Vec<f64> {
        sdf_grid(&self.env, nx, ny)
    }

    /// Returns `undefined` when no collision-free plan was found.
    pub fn plan(
        &self,
        sx: f64,
        sy: f64,
        gx: f64,
        gy: f64,
        seed: u64,
    ) -> Result<Option<Plan>, JsError> {
        let objective = TaskObjective::new(vec![sx, sy], vec![gx, gy]);
        Ok(expert_plan(&self.env, &objective, seed)
            .map_err(js)?
            .map(|inner| Plan { inner }))
    }
}
