//! Second-order conditional flow matching over (q, q̇, q̈) profile channels.
//!
//! Each channel follows an interpolant whose polynomial order matches its
//! derivative order, so that noise at `t = 0` lands exactly on the data
//! profiles at `t = 1`:
//!
//! ```text
//! q(t)  = (1−t³)·εq + (t−t³)·εq̇ + ((t²−t³)/2)·εq̈ + t³·q₁
//! q̇(t)  = (1−t²)·εq̇ + (t−t²)·εq̈ + t²·q̇₁
//! q̈(t)  = (1−t)·εq̈ + t·q̈₁
//! ```
//!
//! The regression targets are their exact flow-time derivatives.

pub mod train;

pub use train::{train_motion_field, train_motion_field_with, Adam, TrainConfig, TrainReport};

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splines::Trajectory;

/// Channel triple at flow time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub q: Array2<f64>,
    pub qdot: Array2<f64>,
    pub qddot: Array2<f64>,
    pub t: f64,
}

/// Flow-time derivatives `(u, v, w)` of the three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTarget {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub w: Array2<f64>,
}

impl FlowState {
    pub fn zeros(len: usize, dim: usize, t: f64) -> Self {
        Self {
            q: Array2::zeros((len, dim)),
            qdot: Array2::zeros((len, dim)),
            qddot: Array2::zeros((len, dim)),
            t,
        }
    }

    /// Data endpoint (`t = 1`) holding a trajectory's raw profiles.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            q: traj.positions.clone(),
            qdot: traj.velocities.clone(),
            qddot: traj.accelerations.clone(),
            t: 1.0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.q.dim()
    }

    pub fn check_shape(&self, len: usize, dim: usize) -> Result<()> {
        let want = (len, dim);
        if self.q.dim() != want || self.qdot.dim() != want || self.qddot.dim() != want {
            return Err(Error::Layout(format!(
                "flow state channels {:?}/{:?}/{:?}, expected {want:?}",
                self.q.dim(),
                self.qdot.dim(),
                self.qddot.dim()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.q
            .iter()
            .chain(self.qdot.iter())
            .chain(self.qddot.iter())
            .all(|v| v.is_finite())
    }

    pub fn channels(&self) -> [&Array2<f64>; 3] {
        [&self.q, &self.qdot, &self.qddot]
    }
}

impl FieldTarget {
    pub fn zeros(len: usize, dim: usize) -> Self {
        Self {
            u: Array2::zeros((len, dim)),
            v: Array2::zeros((len, dim)),
            w: Array2::zeros((len, dim)),
        }
    }

    pub fn heads(&self) -> [&Array2<f64>; 3] {
        [&self.u, &self.v, &self.w]
    }

    pub fn is_finite(&self) -> bool {
        self.heads().iter().all(|h| h.iter().all(|v| v.is_finite()))
    }

    pub fn len(&self) -> usize {
        3 * self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Which regression targets the heads are trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TargetMode {
    /// Exact flow-time derivatives of the channel interpolants.
    #[default]
    #[serde(rename = "exact")]
    Exact,
    /// Constant fields `u = q₁ − εq`, `v = 2(q₁ − εq) − 2εq̇`,
    /// `w = 6(q₁ − εq) − 6εq̇ − 3εq̈`.
    #[serde(rename = "paper-constant")]
    ConstantFields,
}

fn check_pair(data: &FlowState, eps: &FlowState) -> Result<()> {
    let (l, d) = data.shape();
    data.check_shape(l, d)?;
    eps.check_shape(l, d)
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("flow time {t} outside [0, 1]")));
    }
    Ok(())
}

/// Channel interpolants at flow time `t` between noise `eps` and `data`.
pub fn interp_channels(data: &FlowState, eps: &FlowState, t: f64) -> Result<FlowState> {
    check_time(t)?;
    check_pair(data, eps)?;
    let (t2, t3) = (t * t, t * t * t);
    let q = Zip::from(&eps.q)
        .and(&eps.qdot)
        .and(&eps.qddot)
        .and(&data.q)
        .map_collect(|&eq, &ev, &ea, &q1| {
            (1.0 - t3) * eq + (t - t3) * ev + 0.5 * (t2 - t3) * ea + t3 * q1
        });
    let qdot = Zip::from(&eps.qdot)
        .and(&eps.qddot)
        .and(&data.qdot)
        .map_collect(|&ev, &ea, &v1| (1.0 - t2) * ev + (t - t2) * ea + t2 * v1);
    let qddot = Zip::from(&eps.qddot)
        .and(&data.qddot)
        .map_collect(|&ea, &a1| (1.0 - t) * ea + t * a1);
    Ok(FlowState { q, qdot, qddot, t })
}

/// Exact flow-time derivatives of [`interp_channels`].
pub fn target_fields(data: &FlowState, eps: &FlowState, t: f64) -> Result<FieldTarget> {
    check_time(t)?;
    check_pair(data, eps)?;
    let t2 = t * t;
    let u = Zip::from(&eps.q)
        .and(&eps.qdot)
        .and(&eps.qddot)
        .and(&data.q)
        .map_collect(|&eq, &ev, &ea, &q1| {
            3.0 * t2 * (q1 - eq) + (1.0 - 3.0 * t2) * ev + (t - 1.5 * t2) * ea
        });
    let v = Zip::from(&eps.qdot)
        .and(&eps.qddot)
        .and(&data.qdot)
        .map_collect(|&ev, &ea, &v1| 2.0 * t * (v1 - ev) + (1.0 - 2.0 * t) * ea);
    let w = Zip::from(&eps.qddot)
        .and(&data.qddot)
        .map_collect(|&ea, &a1| a1 - ea);
    Ok(FieldTarget { u, v, w })
}

/// Time-independent fields built from the position endpoint and noises only.
pub fn constant_fields(data: &FlowState, eps: &FlowState) -> Result<FieldTarget> {
    check_pair(data, eps)?;
    let gap = &data.q - &eps.q;
    let u = gap.clone();
    let v = 2.0 * &gap - 2.0 * &eps.qdot;
    let w = 6.0 * &gap - 6.0 * &eps.qdot - 3.0 * &eps.qddot;
    Ok(FieldTarget { u, v, w })
}

pub fn regression_targets(
    mode: TargetMode,
    data: &FlowState,
    eps: &FlowState,
    t: f64,
) -> Result<FieldTarget> {
    match mode {
        TargetMode::Exact => target_fields(data, eps, t),
        TargetMode::ConstantFields => {
            check_time(t)?;
            constant_fields(data, eps)
        }
    }
}

/// Smallest value used for the vanishing noise coefficients `1 − tᵏ` when
/// recovering the noises from a state near `t = 1`.
pub const ENDPOINT_FLOOR: f64 = 0.004;

/// Per-entry coupling of an endpoint estimate to the field: for every entry,
/// `[u, v, w] = J·[q̂₁, q̇̂₁, q̈̂₁] + K·[q, q̇, q̈]` where the noises are recovered
/// from the state `(q, q̇, q̈)` by inverting the interpolants at `t`.
///
/// With the true endpoint and `1 − t ≥ ENDPOINT_FLOOR` the result equals the
/// regression target for `mode`.
pub fn endpoint_coupling(mode: TargetMode, t: f64) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let field = |x1: [f64; 3], x: [f64; 3]| -> [f64; 3] {
        let (t2, t3) = (t * t, t * t * t);
        let da = (1.0 - t).max(ENDPOINT_FLOOR);
        let dv = (1.0 - t2).max(ENDPOINT_FLOOR);
        let dq = (1.0 - t3).max(ENDPOINT_FLOOR);
        let ea = (x[2] - t * x1[2]) / da;
        let ev = (x[1] - (t - t2) * ea - t2 * x1[1]) / dv;
        let eq = (x[0] - (t - t3) * ev - 0.5 * (t2 - t3) * ea - t3 * x1[0]) / dq;
        match mode {
            TargetMode::Exact => [
                3.0 * t2 * (x1[0] - eq) + (1.0 - 3.0 * t2) * ev + (t - 1.5 * t2) * ea,
                2.0 * t * (x1[1] - ev) + (1.0 - 2.0 * t) * ea,
                x1[2] - ea,
            ],
            TargetMode::ConstantFields => {
                let gap = x1[0] - eq;
                [gap, 2.0 * gap - 2.0 * ev, 6.0 * gap - 6.0 * ev - 3.0 * ea]
            }
        }
    };
    let mut j = [[0.0; 3]; 3];
    let mut k = [[0.0; 3]; 3];
    for c in 0..3 {
        let mut e = [0.0; 3];
        e[c] = 1.0;
        let fj = field(e, [0.0; 3]);
        let fk = field([0.0; 3], e);
        for r in 0..3 {
            j[r][c] = fj[r];
            k[r][c] = fk[r];
        }
    }
    (j, k)
}

/// Per-channel skip and output scales `(s, o)` for an endpoint estimate
/// `x̂₁ = s·x + o·h`: `s` is the least-squares coefficient of a unit-variance
/// endpoint given the interpolated state, `o` the residual standard deviation.
pub fn endpoint_preconditioning(t: f64) -> ([f64; 3], [f64; 3]) {
    let (t2, t3) = (t * t, t * t * t);
    let data = [t3, t2, t];
    let noise = [
        (1.0 - t3).powi(2) + (t - t3).powi(2) + (0.5 * (t2 - t3)).powi(2),
        (1.0 - t2).powi(2) + (t - t2).powi(2),
        (1.0 - t).powi(2),
    ];
    let mut skip = [0.0; 3];
    let mut out = [0.0; 3];
    for c in 0..3 {
        let total = data[c] * data[c] + noise[c];
        skip[c] = data[c] / total;
        out[c] = (noise[c] / total).sqrt();
    }
    (skip, out)
}

/// Mean squared error over every entry of the three heads, with its gradient
/// `2(pred − target)/count` with respect to `pred`.
pub fn fm_loss(pred: &FieldTarget, target: &FieldTarget) -> Result<(f64, FieldTarget)> {
    let shape = target.u.dim();
    for h in pred.heads().into_iter().chain(target.heads()) {
        if h.dim() != shape {
            return Err(Error::Shape(format!(
                "head shape {:?} vs {shape:?}",
                h.dim()
            )));
        }
    }
    let count = target.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(3);
    for (p, y) in pred.heads().into_iter().zip(target.heads()) {
        let diff = p - y;
        loss += diff.iter().map(|d| d * d).sum::<f64>();
        grads.push(diff * (2.0 / count));
    }
    let w = grads.pop().expect("three heads");
    let v = grads.pop().expect("three heads");
    let u = grads.pop().expect("three heads");
    Ok((loss / count, FieldTarget { u, v, w }))
}

/// Per-channel, per-axis standardization of trajectory profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelStats {
    /// `[channel][axis]` means for position, velocity, acceleration.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

/// Standard deviations below this are treated as 1.
const STD_FLOOR: f64 = 1e-12;

impl ChannelStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![vec![0.0; dim]; 3],
            std: vec![vec![1.0; dim]; 3],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.first().map_or(0, Vec::len)
    }

    pub fn fit<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self> {
        let trajs: Vec<&Trajectory> = trajs.into_iter().collect();
        let Some(first) = trajs.first() else {
            return Err(Error::Input(
                "cannot fit channel statistics on zero trajectories".into(),
            ));
        };
        let dim = first.dim();
        if trajs.iter().any(|t| t.dim() != dim) {
            return Err(Error::Shape("trajectories differ in dimension".into()));
        }
        let n = trajs.iter().map(|t| t.len()).sum::<usize>() as f64;
        let channel =
            |t: &'a Trajectory, c: usize| [&t.positions, &t.velocities, &t.accelerations][c];
        let mut mean = vec![vec![0.0; dim]; 3];
        let mut std = vec![vec![0.0; dim]; 3];
        for c in 0..3 {
            for t in &trajs {
                for row in channel(*t, c).rows() {
                    for (k, v) in row.iter().enumerate() {
                        mean[c][k] += v / n;
                    }
                }
            }
            for t in &trajs {
                for row in channel(*t, c).rows() {
                    for (k, v) in row.iter().enumerate() {
                        std[c][k] += (v - mean[c][k]).powi(2) / n;
                    }
                }
            }
            for s in std[c].iter_mut() {
                *s = if s.sqrt() > STD_FLOOR { s.sqrt() } else { 1.0 };
            }
        }
        Ok(Self { mean, std })
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.mean.len() != 3 || self.std.len() != 3 || self.dim() != dim {
            return Err(Error::Layout(format!(
                "channel statistics do not cover dimension {dim}"
            )));
        }
        Ok(())
    }

    /// Standardized channels of a trajectory, as a `t = 1` flow state.
    pub fn normalize(&self, traj: &Trajectory) -> Result<FlowState> {
        self.check(traj.dim())?;
        let map = |c: usize, m: &Array2<f64>| {
            let mut out = m.clone();
            for mut row in out.rows_mut() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = (*v - self.mean[c][k]) / self.std[c][k];
                }
            }
            out
        };
        Ok(FlowState {
            q: map(0, &traj.positions),
            qdot: map(1, &traj.velocities),
            qddot: map(2, &traj.accelerations),
            t: 1.0,
        })
    }

    pub fn denormalize(&self, state: &FlowState, duration: f64) -> Result<Trajectory> {
        let (l, d) = state.shape();
        state.check_shape(l, d)?;
        self.check(d)?;
        let map = |c: usize, m: &Array2<f64>| {
            let mut out = m.clone();
            for mut row in out.rows_mut() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = self.mean[c][k] + self.std[c][k] * *v;
                }
            }
            out
        };
        Trajectory::new(
            map(0, &state.q),
            map(1, &state.qdot),
            map(2, &state.qddot),
            duration,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(l: usize, d: usize, rng: &mut ChaCha8Rng) -> FlowState {
        let mut m = || Array2::from_shape_fn((l, d), |_| rng.random_range(-2.0..2.0));
        FlowState {
            q: m(),
            qdot: m(),
            qddot: m(),
            t: 0.0,
        }
    }

    #[test]
    fn zero_noise_half_time() {
        let data = FlowState {
            q: Array2::ones((1, 1)),
            qdot: Array2::from_elem((1, 1), 3.0),
            qddot: Array2::from_elem((1, 1), -2.0),
            t: 1.0,
        };
        let s = interp_channels(&data, &FlowState::zeros(1, 1, 0.0), 0.5).unwrap();
        assert_eq!(s.q[[0, 0]], 0.125);
        assert_eq!(s.qdot[[0, 0]], 0.25 * 3.0);
        assert_eq!(s.qddot[[0, 0]], 0.5 * -2.0);
    }

    #[test]
    fn zero_noise_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random(3, 2, &mut rng);
        let zero = FlowState::zeros(3, 2, 0.0);
        let t = 0.37;
        let f = target_fields(&data, &zero, t).unwrap();
        assert_eq!(f.u, data.q.mapv(|v| 3.0 * t * t * v));
        assert_eq!(f.v, data.qdot.mapv(|v| 2.0 * t * v));
        assert_eq!(f.w, data.qddot);
    }

    #[test]
    fn time_and_shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random(3, 2, &mut rng), random(4, 2, &mut rng));
        assert!(matches!(
            interp_channels(&a, &a, 1.5),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            interp_channels(&a, &a, -0.1),
            Err(Error::Domain(_))
        ));
        assert!(interp_channels(&a, &b, 0.5).is_err());
        assert!(target_fields(&a, &b, 0.5).is_err());
    }

    #[test]
    fn loss_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random(4, 3, &mut rng);
        let target = FieldTarget {
            u: s.q.clone(),
            v: s.qdot.clone(),
            w: s.qddot.clone(),
        };
        let (l0, g0) = fm_loss(&target, &target).unwrap();
        assert_eq!(l0, 0.0);
        assert!(!g0.heads().iter().any(|h| h.iter().any(|&v| v != 0.0)));
        let (l, _) = fm_loss(&FieldTarget::zeros(4, 3), &target).unwrap();
        let mean_sq = target
            .heads()
            .iter()
            .flat_map(|h| h.iter())
            .map(|v| v * v)
            .sum::<f64>()
            / 36.0;
        assert!((l - mean_sq).abs() < 1e-15);
    }

    #[test]
    fn stats_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let trajs: Vec<Trajectory> = (0..4)
            .map(|_| {
                let s = random(6, 2, &mut rng);
                Trajectory::new(s.q * 3.0 + 1.0, s.qdot * 0.5, s.qddot * 10.0, 2.0).unwrap()
            })
            .collect();
        let stats = ChannelStats::fit(&trajs).unwrap();
        for c in 0..3 {
            for k in 0..2 {
                assert!(stats.std[c][k] > 0.0);
            }
        }
        let n = stats.normalize(&trajs[1]).unwrap();
        let back = stats.denormalize(&n, 2.0).unwrap();
        for (a, b) in back.positions.iter().zip(trajs[1].positions.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let all: Vec<f64> = trajs
            .iter()
            .flat_map(|t| stats.normalize(t).unwrap().qddot.column(1).to_vec())
            .collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let v = all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / all.len() as f64;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        assert!(ChannelStats::fit(std::iter::empty()).is_err());
    }
}
