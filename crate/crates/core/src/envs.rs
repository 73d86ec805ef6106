//! Obstacle worlds: signed distances, collision checks, and task sampling.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splines::Trajectory;

/// Rejection budget for [`sample_task`].
pub const MAX_TASK_REJECTIONS: usize = 10_000;

const MAZE_2D: &str = include_str!("../fixtures/maze2d.json");
const SPHERES_3D: &str = include_str!("../fixtures/spheres3d.json");

/// Names of the environments compiled into the library.
pub const FIXTURES: [&str; 2] = ["maze2d", "spheres3d"];

/// Obstacle primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Disk in 2D, ball in 3D.
    Sphere { center: Vec<f64>, radius: f64 },
    /// Axis-aligned box.
    Box { min: Vec<f64>, max: Vec<f64> },
}

impl Primitive {
    fn dim(&self) -> usize {
        match self {
            Primitive::Sphere { center, .. } => center.len(),
            Primitive::Box { min, .. } => min.len(),
        }
    }

    pub fn signed_distance(&self, p: &[f64]) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => dist(p, center) - radius,
            Primitive::Box { min, max } => {
                let mut outside = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for k in 0..p.len() {
                    let c = 0.5 * (min[k] + max[k]);
                    let h = 0.5 * (max[k] - min[k]);
                    let q = (p[k] - c).abs() - h;
                    if q > 0.0 {
                        outside += q * q;
                    }
                    inside = inside.max(q);
                }
                outside.sqrt() + inside.min(0.0)
            }
        }
    }

    /// Gradient of [`Self::signed_distance`]. Points on a medial set resolve to
    /// the lowest axis; a sphere center resolves to the first axis.
    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let d = p.len();
        let mut g = vec![0.0; d];
        match self {
            Primitive::Sphere { center, .. } => {
                let r = dist(p, center);
                if r > 0.0 {
                    for k in 0..d {
                        g[k] = (p[k] - center[k]) / r;
                    }
                } else {
                    g[0] = 1.0;
                }
            }
            Primitive::Box { min, max } => {
                let mut q = vec![0.0; d];
                let mut sign = vec![0.0; d];
                for k in 0..d {
                    let c = 0.5 * (min[k] + max[k]);
                    let h = 0.5 * (max[k] - min[k]);
                    let rel = p[k] - c;
                    sign[k] = if rel < 0.0 { -1.0 } else { 1.0 };
                    q[k] = rel.abs() - h;
                }
                let outside: f64 = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                if outside > 0.0 {
                    for k in 0..d {
                        g[k] = sign[k] * q[k].max(0.0) / outside;
                    }
                } else {
                    let mut best = 0;
                    for k in 1..d {
                        if q[k] > q[best] {
                            best = k;
                        }
                    }
                    g[best] = sign[best];
                }
            }
        }
        g
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Axis-aligned workspace box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Bounds {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Largest side length.
    pub fn extent(&self) -> f64 {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(a, b)| b - a)
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(v, (a, b))| v >= a && v <= b)
    }

    /// Maps `p` affinely so the box becomes `[-1, 1]^D`.
    pub fn normalize(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (a, b))| 2.0 * (v - a) / (b - a) - 1.0)
            .collect()
    }
}

/// Static obstacle world with signed-distance queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSdf {
    pub name: String,
    pub dim: usize,
    pub bounds: Bounds,
    pub obstacles: Vec<Primitive>,
}

impl WorldSdf {
    pub fn new(name: impl Into<String>, bounds: Bounds, obstacles: Vec<Primitive>) -> Result<Self> {
        let world = Self {
            name: name.into(),
            dim: bounds.dim(),
            bounds,
            obstacles,
        };
        world.validate()?;
        Ok(world)
    }

    /// Obstacle-free world.
    pub fn empty(name: impl Into<String>, bounds: Bounds) -> Result<Self> {
        Self::new(name, bounds, Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dim == 2 || self.dim == 3) {
            return Err(Error::Construction(format!(
                "world dimension {} must be 2 or 3",
                self.dim
            )));
        }
        if self.bounds.dim() != self.dim || self.bounds.max.len() != self.dim {
            return Err(Error::Construction("bounds dimension mismatch".into()));
        }
        if self
            .bounds
            .min
            .iter()
            .zip(&self.bounds.max)
            .any(|(a, b)| !(a < b))
        {
            return Err(Error::Construction(
                "bounds must have min < max on every axis".into(),
            ));
        }
        for (i, ob) in self.obstacles.iter().enumerate() {
            if ob.dim() != self.dim {
                return Err(Error::Construction(format!(
                    "obstacle {i} has dimension {}",
                    ob.dim()
                )));
            }
            let inside = match ob {
                Primitive::Sphere { center, radius } => {
                    if !(*radius > 0.0) {
                        return Err(Error::Construction(format!(
                            "obstacle {i} radius must be positive"
                        )));
                    }
                    (0..self.dim).all(|k| {
                        center[k] - radius >= self.bounds.min[k]
                            && center[k] + radius <= self.bounds.max[k]
                    })
                }
                Primitive::Box { min, max } => {
                    if max.len() != self.dim || min.iter().zip(max).any(|(a, b)| !(a < b)) {
                        return Err(Error::Construction(format!(
                            "obstacle {i} box is degenerate"
                        )));
                    }
                    self.bounds.contains(min) && self.bounds.contains(max)
                }
            };
            if !inside {
                return Err(Error::Construction(format!(
                    "obstacle {i} leaves the workspace bounds"
                )));
            }
        }
        Ok(())
    }

    /// One of the compiled-in environments (see [`FIXTURES`]).
    pub fn fixture(name: &str) -> Result<Self> {
        let text = match name {
            "maze2d" => MAZE_2D,
            "spheres3d" => SPHERES_3D,
            other => {
                return Err(Error::Input(format!(
                    "unknown environment fixture '{other}'"
                )))
            }
        };
        Self::from_json(text)
    }

    /// Fixture name or path to a descriptor file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if FIXTURES.contains(&name_or_path) {
            Self::fixture(name_or_path)
        } else {
            Self::load(name_or_path)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let world: WorldSdf = serde_json::from_str(text)?;
        world.validate()?;
        Ok(world)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    /// Default collision margin: 3% of the workspace extent.
    pub fn default_margin(&self) -> f64 {
        0.03 * self.bounds.extent()
    }

    /// Signed distance to the nearest obstacle (`+∞` in an empty world).
    pub fn sdf(&self, p: &[f64]) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Signed distance and the index of the obstacle that attains it (lowest
    /// index on ties).
    pub fn nearest(&self, p: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, o) in self.obstacles.iter().enumerate() {
            let d = o.signed_distance(p);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best
    }

    /// Gradient of [`Self::sdf`]; zero in an empty world.
    pub fn sdf_gradient(&self, p: &[f64]) -> Vec<f64> {
        match self.nearest(p) {
            Some((i, _)) => self.obstacles[i].gradient(p),
            None => vec![0.0; p.len()],
        }
    }

    /// `true` iff every waypoint and every segment midpoint keeps at least
    /// `margin` clearance.
    pub fn is_collision_free(&self, traj: &Trajectory, margin: f64) -> bool {
        is_collision_free(traj, self, margin)
    }
}

/// Signed distance of `p` in `env`.
pub fn sdf(env: &WorldSdf, p: &[f64]) -> f64 {
    env.sdf(p)
}

pub fn sdf_gradient(env: &WorldSdf, p: &[f64]) -> Vec<f64> {
    env.sdf_gradient(p)
}

/// Waypoint plus one-level midpoint collision test.
pub fn is_collision_free(traj: &Trajectory, env: &WorldSdf, margin: f64) -> bool {
    if env.obstacles.is_empty() {
        return true;
    }
    let q = &traj.positions;
    let d = q.ncols();
    let mut mid = vec![0.0; d];
    for i in 0..q.nrows() {
        let row = q.row(i);
        let p = row
            .as_slice()
            .map(|s| s.to_vec())
            .unwrap_or_else(|| row.to_vec());
        if !(env.sdf(&p) >= margin) {
            return false;
        }
        if i + 1 < q.nrows() {
            for k in 0..d {
                mid[k] = 0.5 * (q[[i, k]] + q[[i + 1, k]]);
            }
            if !(env.sdf(&mid) >= margin) {
                return false;
            }
        }
    }
    true
}

/// Start/goal conditioning for one planning query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskObjective {
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub start_velocity: Vec<f64>,
    pub goal_velocity: Vec<f64>,
}

impl TaskObjective {
    /// Rest-to-rest objective.
    pub fn new(start: Vec<f64>, goal: Vec<f64>) -> Self {
        let d = start.len();
        Self {
            start,
            goal,
            start_velocity: vec![0.0; d],
            goal_velocity: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    /// Checks shapes, distinct endpoints, and clearance of both endpoints.
    pub fn validate(&self, env: &WorldSdf, clearance: f64) -> Result<()> {
        let d = env.dim;
        if [
            &self.start,
            &self.goal,
            &self.start_velocity,
            &self.goal_velocity,
        ]
        .iter()
        .any(|v| v.len() != d)
        {
            return Err(Error::Shape(format!(
                "objective vectors must have dimension {d}"
            )));
        }
        if self.start == self.goal {
            return Err(Error::Input("start and goal coincide".into()));
        }
        for (label, p) in [("start", &self.start), ("goal", &self.goal)] {
            if !env.bounds.contains(p) {
                return Err(Error::Input(format!(
                    "{label} {p:?} lies outside the workspace"
                )));
            }
            let s = env.sdf(p);
            if !(s >= clearance) {
                return Err(Error::Input(format!(
                    "{label} {p:?} has clearance {s:.4} < {clearance:.4}"
                )));
            }
        }
        Ok(())
    }

    pub fn boundary_conditions(&self) -> crate::splines::BoundaryConditions {
        crate::splines::BoundaryConditions {
            start: self.start.clone(),
            start_velocity: self.start_velocity.clone(),
            goal: self.goal.clone(),
            goal_velocity: self.goal_velocity.clone(),
        }
    }
}

/// Rejection-samples a rest-to-rest task whose endpoints have clearance
/// `2·margin` and are at least `min_separation` apart.
pub fn sample_task<R: Rng + ?Sized>(
    env: &WorldSdf,
    rng: &mut R,
    min_separation: f64,
    margin: f64,
) -> Result<TaskObjective> {
    let clearance = 2.0 * margin;
    let draw = |rng: &mut R| -> Vec<f64> {
        (0..env.dim)
            .map(|k| rng.random_range(env.bounds.min[k]..=env.bounds.max[k]))
            .collect()
    };
    for _ in 0..MAX_TASK_REJECTIONS {
        let start = draw(rng);
        let goal = draw(rng);
        if dist(&start, &goal) < min_separation || start == goal {
            continue;
        }
        if env.sdf(&start) >= clearance && env.sdf(&goal) >= clearance {
            return Ok(TaskObjective::new(start, goal));
        }
    }
    Err(Error::EnvironmentTooDense(MAX_TASK_REJECTIONS))
}
