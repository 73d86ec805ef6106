//! Via-point optimization and expert dataset construction.

pub mod cmaes;
pub mod dataset;

pub use cmaes::{cmaes_minimize, CmaesOptions, CmaesResult, CmaesState, GenerationRecord};
pub use dataset::{
    build_dataset, plan_expert, DatasetConfig, DatasetMeta, DatasetRecord, ExpertDataset,
    RecordLine,
};

use serde::{Deserialize, Serialize};

use crate::envs::WorldSdf;
use crate::error::{Error, Result};
use crate::splines::Trajectory;

/// Weights of the collision, smoothness, and timing terms of the trajectory
/// cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub collision: f64,
    pub smooth: f64,
    pub time: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            collision: 100.0,
            smooth: 1.0,
            time: 0.1,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.collision, self.smooth, self.time];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Input(format!(
                "cost weights {w:?} must be finite and nonnegative"
            )));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Input(
                "at least one cost weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Unweighted cost terms of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTerms {
    /// `Σᵢ max(0, margin − sdf(qᵢ))²`
    pub collision: f64,
    /// `Σᵢ |q̈ᵢ|² Δt`
    pub smooth: f64,
    /// Duration `T`.
    pub time: f64,
}

impl CostTerms {
    pub fn weighted(&self, w: &CostWeights) -> f64 {
        w.collision * self.collision + w.smooth * self.smooth + w.time * self.time
    }
}

pub fn cost_terms(traj: &Trajectory, env: &WorldSdf, margin: f64) -> Result<CostTerms> {
    if traj.dim() != env.dim {
        return Err(Error::Shape(format!(
            "trajectory dimension {} vs world {}",
            traj.dim(),
            env.dim
        )));
    }
    if !traj.is_finite() {
        return Err(Error::Input("trajectory contains non-finite values".into()));
    }
    let dt = traj.duration / (traj.len() - 1) as f64;
    let mut collision = 0.0;
    let mut p = vec![0.0; traj.dim()];
    for row in traj.positions.rows() {
        for (dst, v) in p.iter_mut().zip(row.iter()) {
            *dst = *v;
        }
        let gap = margin - env.sdf(&p);
        if gap > 0.0 {
            collision += gap * gap;
        }
    }
    let smooth = traj.accelerations.iter().map(|a| a * a).sum::<f64>() * dt;
    Ok(CostTerms {
        collision,
        smooth,
        time: traj.duration,
    })
}

/// Weighted collision + smoothness + timing cost.
pub fn trajectory_cost(
    traj: &Trajectory,
    env: &WorldSdf,
    weights: &CostWeights,
    margin: f64,
) -> Result<f64> {
    Ok(cost_terms(traj, env, margin)?.weighted(weights))
}
