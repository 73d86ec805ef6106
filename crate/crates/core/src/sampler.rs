//! Guided generation: RK4 integration of a motion field from Gaussian noise
//! (flow time 0) to trajectories (flow time 1).
//!
//! Integration runs in the standardized channel space of the field. Cost
//! guidance is computed on de-normalized positions and mapped back with the
//! chain rule, so `g` is the negative cost gradient with respect to the
//! standardized channels.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::{TaskObjective, WorldSdf};
use crate::error::{Error, Result};
use crate::flow::{target_fields, ChannelStats, FieldTarget, FlowState};
use crate::metrics::smoothness;
use crate::net::MotionFieldModel;
use crate::rng::stream_rng;
use crate::splines::Trajectory;

/// A field `(u, v, w)` over standardized flow states.
pub trait MotionField {
    /// Channel shape `(L, D)`.
    fn shape(&self) -> (usize, usize);
    fn stats(&self) -> &ChannelStats;
    /// Duration `T` given to generated trajectories.
    fn duration(&self) -> f64;
    /// Field values for batch members `0..states.len()` at their flow times.
    fn eval_batch(
        &self,
        states: &[FlowState],
        objective: &TaskObjective,
    ) -> Result<Vec<FieldTarget>>;
}

impl MotionField for MotionFieldModel {
    fn shape(&self) -> (usize, usize) {
        (self.layout.len, self.layout.dim)
    }

    fn stats(&self) -> &ChannelStats {
        &self.meta.stats
    }

    fn duration(&self) -> f64 {
        self.meta.duration
    }

    fn eval_batch(
        &self,
        states: &[FlowState],
        objective: &TaskObjective,
    ) -> Result<Vec<FieldTarget>> {
        self.forward_batch(states, objective)
    }
}

/// Exact conditional field for known endpoints: member `b` follows the
/// interpolant between `noises[b]` and `data`, whatever state it is given.
#[derive(Debug, Clone)]
pub struct OracleField {
    pub data: FlowState,
    pub noises: Vec<FlowState>,
    pub stats: ChannelStats,
    pub duration: f64,
}

impl OracleField {
    /// Oracle for the noise `generate_motion` draws under `seed`.
    pub fn for_seed(
        data: &Trajectory,
        stats: ChannelStats,
        seed: u64,
        batch: usize,
    ) -> Result<Self> {
        let shape = (data.len(), data.dim());
        let noises = (0..batch).map(|b| initial_state(seed, b, shape)).collect();
        Ok(Self {
            data: stats.normalize(data)?,
            noises,
            stats,
            duration: data.duration,
        })
    }
}

impl MotionField for OracleField {
    fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    fn stats(&self) -> &ChannelStats {
        &self.stats
    }

    fn duration(&self) -> f64 {
        self.duration
    }

    fn eval_batch(
        &self,
        states: &[FlowState],
        _objective: &TaskObjective,
    ) -> Result<Vec<FieldTarget>> {
        if states.len() > self.noises.len() {
            return Err(Error::Layout(format!(
                "oracle knows {} members, got {}",
                self.noises.len(),
                states.len()
            )));
        }
        states
            .iter()
            .zip(&self.noises)
            .map(|(s, eps)| target_fields(&self.data, eps, s.t))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostId {
    /// `Σᵢ max(0, margin − sdf(qᵢ))²`
    Obstacle,
    /// `|q_{L−1} − goal|²`
    Goal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceTerm {
    pub cost: CostId,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GuidancePlacement {
    /// Added to the field at every RK4 stage.
    #[default]
    EveryStage,
    /// Applied as an explicit Euler increment after each RK4 step.
    BetweenSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSpec {
    pub lambda_prior: f64,
    pub terms: Vec<GuidanceTerm>,
    /// Obstacle clearance; `None` means the world's default margin.
    pub margin: Option<f64>,
    pub placement: GuidancePlacement,
    /// Also push the velocity and acceleration channels by the phase
    /// derivatives of the position guidance.
    pub derivatives: bool,
}

impl Default for GuidanceSpec {
    fn default() -> Self {
        Self {
            lambda_prior: 1.0,
            terms: vec![
                GuidanceTerm {
                    cost: CostId::Obstacle,
                    lambda: 0.1,
                },
                GuidanceTerm {
                    cost: CostId::Goal,
                    lambda: 0.0,
                },
            ],
            margin: None,
            placement: GuidancePlacement::EveryStage,
            derivatives: false,
        }
    }
}

impl GuidanceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_prior > 0.0 && self.lambda_prior.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_prior {} must be positive",
                self.lambda_prior
            )));
        }
        if let Some(t) = self
            .terms
            .iter()
            .find(|t| !(t.lambda.is_finite() && t.lambda >= 0.0))
        {
            return Err(Error::Config(format!(
                "guidance weight {} must be finite and nonnegative",
                t.lambda
            )));
        }
        if let Some(m) = self.margin {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::Config(format!(
                    "guidance margin {m} must be nonnegative"
                )));
            }
        }
        Ok(())
    }

    pub fn lambda(&self, cost: CostId) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.cost == cost)
            .map(|t| t.lambda)
            .sum()
    }

    /// Same spec with every obstacle weight replaced by `lambda`.
    pub fn with_obstacle_weight(&self, lambda: f64) -> Self {
        let mut s = self.clone();
        s.terms.retain(|t| t.cost != CostId::Obstacle);
        s.terms.push(GuidanceTerm {
            cost: CostId::Obstacle,
            lambda,
        });
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub guidance: Option<GuidanceSpec>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            batch: 25,
            seed: 0,
            guidance: Some(GuidanceSpec::default()),
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("steps and batch must be at least 1".into()));
        }
        if let Some(g) = &self.guidance {
            g.validate()?;
        }
        Ok(())
    }
}

/// Noise state of batch member `member` under `seed`.
pub fn initial_state(seed: u64, member: usize, shape: (usize, usize)) -> FlowState {
    let mut rng = stream_rng(seed, member as u64);
    let mut noise = || Array2::from_shape_fn(shape, |_| rng.sample::<f64, _>(StandardNormal));
    FlowState {
        q: noise(),
        qdot: noise(),
        qddot: noise(),
        t: 0.0,
    }
}

fn axpy(state: &FlowState, h: f64, k: &FieldTarget, t: f64) -> FlowState {
    let add =
        |x: &Array2<f64>, d: &Array2<f64>| Zip::from(x).and(d).map_collect(|&a, &b| a + h * b);
    FlowState {
        q: add(&state.q, &k.u),
        qdot: add(&state.qdot, &k.v),
        qddot: add(&state.qddot, &k.w),
        t,
    }
}

fn check_field(fields: &[FieldTarget], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::Integration {
            step: 0,
            reason: format!("field returned {} of {n} members", fields.len()),
        });
    }
    if let Some(b) = fields.iter().position(|f| !f.is_finite()) {
        return Err(Error::Integration {
            step: 0,
            reason: format!("non-finite field for member {b}"),
        });
    }
    Ok(())
}

/// One classical RK4 step of size `delta` for every state in the batch.
/// `field` maps a batch of states (each at its own flow time) to its field.
pub fn rk4_step<F>(field: &mut F, states: &[FlowState], delta: f64) -> Result<Vec<FlowState>>
where
    F: FnMut(&[FlowState]) -> Result<Vec<FieldTarget>> + ?Sized,
{
    let Some(first) = states.first() else {
        return Ok(Vec::new());
    };
    let t = first.t;
    if t + delta > 1.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "step from {t} by {delta} passes flow time 1"
        )));
    }
    let n = states.len();
    let half = t + 0.5 * delta;
    let k1 = field(states)?;
    check_field(&k1, n)?;
    let s2: Vec<_> = states
        .iter()
        .zip(&k1)
        .map(|(s, k)| axpy(s, 0.5 * delta, k, half))
        .collect();
    let k2 = field(&s2)?;
    check_field(&k2, n)?;
    let s3: Vec<_> = states
        .iter()
        .zip(&k2)
        .map(|(s, k)| axpy(s, 0.5 * delta, k, half))
        .collect();
    let k3 = field(&s3)?;
    check_field(&k3, n)?;
    let s4: Vec<_> = states
        .iter()
        .zip(&k3)
        .map(|(s, k)| axpy(s, delta, k, t + delta))
        .collect();
    let k4 = field(&s4)?;
    check_field(&k4, n)?;
    let combine =
        |x: &Array2<f64>, a: &Array2<f64>, b: &Array2<f64>, c: &Array2<f64>, d: &Array2<f64>| {
            let mut out = x.clone();
            Zip::from(&mut out)
                .and(a)
                .and(b)
                .and(c)
                .and(d)
                .for_each(|o, &a, &b, &c, &d| {
                    *o += delta * (a + 2.0 * b + 2.0 * c + d) / 6.0;
                });
            out
        };
    Ok((0..n)
        .map(|i| FlowState {
            q: combine(&states[i].q, &k1[i].u, &k2[i].u, &k3[i].u, &k4[i].u),
            qdot: combine(&states[i].qdot, &k1[i].v, &k2[i].v, &k3[i].v, &k4[i].v),
            qddot: combine(&states[i].qddot, &k1[i].w, &k2[i].w, &k3[i].w, &k4[i].w),
            t: t + delta,
        })
        .collect())
}

/// Obstacle plus goal-anchor cost of a position profile.
pub fn guidance_cost(
    positions: &Array2<f64>,
    env: &WorldSdf,
    spec: &GuidanceSpec,
    objective: &TaskObjective,
) -> f64 {
    let margin = spec.margin.unwrap_or_else(|| env.default_margin());
    let mut cost = 0.0;
    let lo = spec.lambda(CostId::Obstacle);
    if lo > 0.0 {
        for row in positions.rows() {
            let gap = margin - env.sdf(row.as_slice().expect("row-major"));
            if gap > 0.0 {
                cost += lo * gap * gap;
            }
        }
    }
    let lg = spec.lambda(CostId::Goal);
    if lg > 0.0 {
        let last = positions.row(positions.nrows() - 1);
        cost += lg
            * last
                .iter()
                .zip(&objective.goal)
                .map(|(q, g)| (q - g).powi(2))
                .sum::<f64>();
    }
    cost
}

/// `−Σⱼ λⱼ ∇C_j` on the position channel of a de-normalized state.
/// The other channels stay zero unless `spec.derivatives` is set, in which
/// case they receive the phase derivatives of the position increment.
pub fn guidance_field(
    state: &FlowState,
    env: &WorldSdf,
    spec: &GuidanceSpec,
    objective: &TaskObjective,
    duration: f64,
) -> Result<FieldTarget> {
    let (l, d) = state.shape();
    if env.dim != d || objective.dim() != d {
        return Err(Error::Shape(format!(
            "state dimension {d} vs world {} and objective {}",
            env.dim,
            objective.dim()
        )));
    }
    let margin = spec.margin.unwrap_or_else(|| env.default_margin());
    let mut g = FieldTarget::zeros(l, d);
    let lo = spec.lambda(CostId::Obstacle);
    if lo > 0.0 {
        for (row, mut out) in state.q.rows().into_iter().zip(g.u.rows_mut()) {
            let p = row.as_slice().expect("row-major");
            let gap = margin - env.sdf(p);
            if gap > 0.0 {
                for (o, n) in out.iter_mut().zip(env.sdf_gradient(p)) {
                    *o += 2.0 * lo * gap * n;
                }
            }
        }
    }
    let lg = spec.lambda(CostId::Goal);
    if lg > 0.0 {
        for k in 0..d {
            g.u[[l - 1, k]] -= 2.0 * lg * (state.q[[l - 1, k]] - objective.goal[k]);
        }
    }
    if spec.derivatives && l >= 3 {
        let ds = duration / (l - 1) as f64;
        g.v = phase_difference(&g.u, ds);
        g.w = phase_difference(&g.v, ds);
    }
    Ok(g)
}

/// Central differences along rows, one-sided at the ends.
fn phase_difference(x: &Array2<f64>, h: f64) -> Array2<f64> {
    let l = x.nrows();
    Array2::from_shape_fn(x.dim(), |(i, k)| {
        if i == 0 {
            (x[[1, k]] - x[[0, k]]) / h
        } else if i == l - 1 {
            (x[[l - 1, k]] - x[[l - 2, k]]) / h
        } else {
            (x[[i + 1, k]] - x[[i - 1, k]]) / (2.0 * h)
        }
    })
}

/// Guidance on standardized channels: `g` scaled per channel by the stds.
fn normalized_guidance(
    state: &FlowState,
    stats: &ChannelStats,
    env: &WorldSdf,
    spec: &GuidanceSpec,
    objective: &TaskObjective,
    duration: f64,
) -> Result<FieldTarget> {
    let phys = stats.denormalize(state, duration)?;
    let phys = FlowState {
        t: state.t,
        ..FlowState::from_trajectory(&phys)
    };
    let mut g = guidance_field(&phys, env, spec, objective, duration)?;
    for (c, h) in [&mut g.u, &mut g.v, &mut g.w].into_iter().enumerate() {
        for mut row in h.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v *= stats.std[c][k];
            }
        }
    }
    Ok(g)
}

/// Integrates `cfg.batch` noise states from `t = 0` to `t = 1` in `cfg.steps`
/// uniform RK4 steps and returns the de-normalized trajectories.
pub fn generate_motion<M: MotionField + ?Sized>(
    model: &M,
    env: &WorldSdf,
    objective: &TaskObjective,
    cfg: &SampleConfig,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let (l, d) = model.shape();
    if env.dim != d || objective.dim() != d {
        return Err(Error::Layout(format!(
            "model dimension {d} vs world {} and objective {}",
            env.dim,
            objective.dim()
        )));
    }
    let stats = model.stats();
    let duration = model.duration();
    let guidance = cfg.guidance.as_ref();
    let prior = guidance.map_or(1.0, |g| g.lambda_prior);
    let staged = guidance.filter(|g| g.placement == GuidancePlacement::EveryStage);
    let between = guidance.filter(|g| g.placement == GuidancePlacement::BetweenSteps);

    let mut field = |states: &[FlowState]| -> Result<Vec<FieldTarget>> {
        let mut f = model.eval_batch(states, objective)?;
        for (s, fi) in states.iter().zip(f.iter_mut()) {
            if prior != 1.0 {
                fi.u *= prior;
                fi.v *= prior;
                fi.w *= prior;
            }
            if let Some(spec) = staged {
                let g = normalized_guidance(s, stats, env, spec, objective, duration)?;
                fi.u += &g.u;
                fi.v += &g.v;
                fi.w += &g.w;
            }
        }
        Ok(f)
    };

    let mut states: Vec<FlowState> = (0..cfg.batch)
        .map(|b| initial_state(cfg.seed, b, (l, d)))
        .collect();
    let delta = 1.0 / cfg.steps as f64;
    for i in 0..cfg.steps {
        let with_step = |e: Error| match e {
            Error::Integration { reason, .. } => Error::Integration { step: i, reason },
            e => e,
        };
        let t = i as f64 / cfg.steps as f64;
        states.iter_mut().for_each(|s| s.t = t);
        states = rk4_step(&mut field, &states, delta).map_err(with_step)?;
        let t_next = (i + 1) as f64 / cfg.steps as f64;
        for s in states.iter_mut() {
            s.t = t_next;
            if let Some(spec) = between {
                let g = normalized_guidance(s, stats, env, spec, objective, duration)?;
                *s = axpy(s, delta, &g, t_next);
            }
        }
        if let Some(b) = states.iter().position(|s| !s.is_finite()) {
            return Err(Error::Integration {
                step: i,
                reason: format!("non-finite state for member {b}"),
            });
        }
    }
    states
        .iter()
        .map(|s| stats.denormalize(s, duration))
        .collect()
}

/// Chosen batch member.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub trajectory: Trajectory,
    /// Whether the member is collision-free. When no member is, the one with
    /// the smallest penetration cost is returned with `feasible = false`.
    pub feasible: bool,
}

/// Penetration cost `Σᵢ max(0, −sdf(qᵢ))²`.
pub fn penetration_cost(traj: &Trajectory, env: &WorldSdf) -> f64 {
    traj.positions
        .rows()
        .into_iter()
        .map(|r| {
            (-env.sdf(r.as_slice().expect("row-major")))
                .max(0.0)
                .powi(2)
        })
        .sum()
}

/// Collision-free member of minimum smoothness, else the least-penetrating one.
/// Ties resolve to the lowest index.
pub fn select_best(batch: &[Trajectory], env: &WorldSdf) -> Result<Selection> {
    if batch.is_empty() {
        return Err(Error::Input("cannot select from an empty batch".into()));
    }
    let free = batch
        .iter()
        .enumerate()
        .filter(|(_, t)| env.is_collision_free(t, 0.0))
        .map(|(i, t)| (i, smoothness(t)))
        .fold(None::<(usize, f64)>, |best, (i, s)| match best {
            Some((_, bs)) if bs <= s => best,
            _ => Some((i, s)),
        });
    if let Some((index, _)) = free {
        return Ok(Selection {
            index,
            trajectory: batch[index].clone(),
            feasible: true,
        });
    }
    let (index, _) = batch
        .iter()
        .enumerate()
        .map(|(i, t)| (i, penetration_cost(t, env)))
        .fold(
            (0, f64::INFINITY),
            |best, (i, c)| if c < best.1 { (i, c) } else { best },
        );
    Ok(Selection {
        index,
        trajectory: batch[index].clone(),
        feasible: false,
    })
}
