//! Conditional motion-field predictor: an MLP trunk (or three) mapping a
//! normalized flow state, flow time, and start/goal to the three field heads.
//!
//! Input row: `[q | q̇ | q̈]` flattened row-major (only `q` in q-only mode),
//! then the time embedding, then start and goal mapped to `[-1, 1]` by the
//! workspace bounds. Output row: `[u | v | w]`, each `L·D` row-major.

pub mod checkpoint;
pub mod mlp;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{gelu, gelu_derivative, MlpCache, MlpLayout};

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Bounds, TaskObjective};
use crate::error::{Error, Result};
use crate::flow::{
    endpoint_coupling, endpoint_preconditioning, ChannelStats, FieldTarget, FlowState, TargetMode,
};
use crate::splines::{phase_at, SplineBasis};

/// Hidden width giving roughly 3.6e5 parameters at `L = 64`, `D = 2`.
pub const DEFAULT_HIDDEN: usize = 272;
pub const DEFAULT_TIME_FEATURES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InputMode {
    #[default]
    #[serde(rename = "triple")]
    Triple,
    #[serde(rename = "q-only")]
    QOnly,
}

/// What the raw heads estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Parametrization {
    /// `x̂₁ = s·P·x + o·h` per channel, with `P` the projection onto the
    /// channel's spline subspace and `(s, o)` from
    /// [`crate::flow::endpoint_preconditioning`].
    #[default]
    #[serde(rename = "preconditioned")]
    Preconditioned,
    /// The `t = 1` endpoint of each channel; the field follows from the
    /// interpolant algebra (see [`crate::flow::endpoint_coupling`]).
    #[serde(rename = "endpoint")]
    Endpoint,
    /// The field `(u, v, w)` itself.
    #[serde(rename = "direct")]
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TrunkMode {
    /// One trunk feeding three heads.
    #[default]
    #[serde(rename = "shared")]
    Shared,
    /// Three independent trunks, one per head.
    #[serde(rename = "separate")]
    Separate,
}

/// Architecture knobs that do not depend on the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub time_features: usize,
    pub input: InputMode,
    pub trunks: TrunkMode,
    pub parametrization: Parametrization,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![DEFAULT_HIDDEN; 3],
            time_features: DEFAULT_TIME_FEATURES,
            input: InputMode::Triple,
            trunks: TrunkMode::Shared,
            parametrization: Parametrization::Preconditioned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelLayout {
    pub len: usize,
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub time_features: usize,
    pub input: InputMode,
    pub trunks: TrunkMode,
    pub parametrization: Parametrization,
}

impl ModelLayout {
    pub fn new(len: usize, dim: usize, cfg: &NetConfig) -> Result<Self> {
        let layout = Self {
            len,
            dim,
            hidden: cfg.hidden.clone(),
            time_features: cfg.time_features,
            input: cfg.input,
            trunks: cfg.trunks,
            parametrization: cfg.parametrization,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.len < 2 || self.dim == 0 {
            return Err(Error::Layout(format!(
                "invalid channel shape {}×{}",
                self.len, self.dim
            )));
        }
        if self.time_features % 2 != 0 {
            return Err(Error::Layout(format!(
                "time_features {} must be even",
                self.time_features
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Layout(format!(
                "hidden widths {:?} must be positive",
                self.hidden
            )));
        }
        Ok(())
    }

    pub fn channel_size(&self) -> usize {
        self.len * self.dim
    }

    pub fn input_channels(&self) -> usize {
        match self.input {
            InputMode::Triple => 3,
            InputMode::QOnly => 1,
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_channels() * self.channel_size() + self.time_features + 1 + 2 * self.dim
    }

    /// Sizes of the contiguous input groups: one per state channel, the time
    /// features, and the objective.
    pub fn input_groups(&self) -> Vec<usize> {
        let mut g = vec![self.channel_size(); self.input_channels()];
        g.push(self.time_features + 1);
        g.push(2 * self.dim);
        g
    }

    pub fn output_width(&self) -> usize {
        3 * self.channel_size()
    }

    pub fn n_trunks(&self) -> usize {
        match self.trunks {
            TrunkMode::Shared => 1,
            TrunkMode::Separate => 3,
        }
    }

    pub fn trunk(&self) -> MlpLayout {
        let mut widths = vec![self.input_width()];
        widths.extend(&self.hidden);
        widths.push(self.output_width() / self.n_trunks());
        MlpLayout { widths }
    }

    pub fn param_count(&self) -> usize {
        self.n_trunks() * self.trunk().param_count()
    }
}

/// `k` sinusoids of `t` at frequencies `π/2 · 2^j` (sin/cos pairs), then `t`.
pub fn time_embedding(t: f64, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    for j in 0..k / 2 {
        let w = std::f64::consts::FRAC_PI_2 * (1u64 << j) as f64;
        out.push((w * t).sin());
        out.push((w * t).cos());
    }
    out.push(t);
    out
}

/// Orthonormal bases (`L × rank`) of the spans of `Φ`, `Φ'`, `Φ''` on the
/// `L`-point phase grid.
pub fn spline_subspaces(len: usize, n_via: usize) -> Result<[Array2<f64>; 3]> {
    let basis = SplineBasis::for_via_points(n_via)?;
    let mut out = [
        Array2::zeros((0, 0)),
        Array2::zeros((0, 0)),
        Array2::zeros((0, 0)),
    ];
    for (order, slot) in out.iter_mut().enumerate() {
        let rows = (0..len)
            .map(|i| basis.basis_row(phase_at(i, len), order))
            .collect::<Result<Vec<_>>>()?;
        let cols: Vec<Vec<f64>> = (0..basis.n_ctrl())
            .map(|c| rows.iter().map(|r| r[c]).collect())
            .collect();
        *slot = orthonormalize(cols, len);
    }
    Ok(out)
}

/// Modified Gram-Schmidt with one re-orthogonalization pass; columns whose
/// residual falls below `1e-9` of their original norm are dropped.
fn orthonormalize(cols: Vec<Vec<f64>>, len: usize) -> Array2<f64> {
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for mut v in cols {
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &kept {
                let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-9 * norm0 {
            v.iter_mut().for_each(|a| *a /= norm);
            kept.push(v);
        }
    }
    Array2::from_shape_fn((len, kept.len()), |(i, k)| kept[k][i])
}

/// Rescales first-layer rows so every input group contributes the same
/// pre-activation variance at initialization, whatever its width.
fn balance_first_layer(trunk: &MlpLayout, groups: &[usize], params: &mut [f64]) {
    let fan_in = trunk.widths[0];
    let width = trunk.widths[1];
    let mut row = 0;
    for &n in groups {
        let scale = (fan_in as f64 / (groups.len() * n) as f64).sqrt();
        params[row * width..(row + n) * width]
            .iter_mut()
            .for_each(|w| *w *= scale);
        row += n;
    }
}

/// Data-dependent conditioning stored with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub stats: ChannelStats,
    pub bounds: Bounds,
    /// Duration `T` of generated trajectories.
    pub duration: f64,
    /// Via-point count of the spline basis the training data came from.
    pub n_via: usize,
    pub targets: TargetMode,
    pub env_id: String,
    /// SHA-256 of the training configuration, hex encoded.
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFieldModel {
    pub layout: ModelLayout,
    pub meta: ModelMeta,
    pub params: Vec<f64>,
}

/// Per-trunk activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ModelCache {
    trunks: Vec<MlpCache>,
}

impl MotionFieldModel {
    pub fn new(layout: ModelLayout, meta: ModelMeta, seed: u64) -> Result<Self> {
        layout.validate()?;
        let trunk = layout.trunk();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = layout.input_groups();
        let params = (0..layout.n_trunks())
            .flat_map(|_| {
                let mut p = trunk.init_params(&mut rng);
                balance_first_layer(&trunk, &groups, &mut p);
                p
            })
            .collect();
        let model = Self {
            layout,
            meta,
            params,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn zeroed(layout: ModelLayout, meta: ModelMeta) -> Result<Self> {
        let params = vec![0.0; layout.param_count()];
        let model = Self {
            layout,
            meta,
            params,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.params.len() != self.layout.param_count() {
            return Err(Error::Layout(format!(
                "{} parameters, layout needs {}",
                self.params.len(),
                self.layout.param_count()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Layout("non-finite parameter".into()));
        }
        let (s, d) = (&self.meta.stats, self.layout.dim);
        if s.dim() != d || self.meta.bounds.dim() != d {
            return Err(Error::Layout(
                "conditioning metadata does not match the channel dimension".into(),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn trunk_params(&self, k: usize) -> &[f64] {
        let n = self.layout.trunk().param_count();
        &self.params[k * n..(k + 1) * n]
    }

    /// Writes one input row for a normalized state.
    pub fn encode_row(
        &self,
        state: &FlowState,
        objective: &TaskObjective,
        row: &mut [f64],
    ) -> Result<()> {
        let (l, d) = (self.layout.len, self.layout.dim);
        state.check_shape(l, d)?;
        if objective.dim() != d {
            return Err(Error::Layout(format!(
                "objective dimension {} vs model {d}",
                objective.dim()
            )));
        }
        if row.len() != self.layout.input_width() {
            return Err(Error::Layout("input row width mismatch".into()));
        }
        let n = l * d;
        let channels = [&state.q, &state.qdot, &state.qddot];
        for (c, ch) in channels
            .iter()
            .take(self.layout.input_channels())
            .enumerate()
        {
            for (dst, v) in row[c * n..(c + 1) * n].iter_mut().zip(ch.iter()) {
                *dst = *v;
            }
        }
        let mut at = self.layout.input_channels() * n;
        for v in time_embedding(state.t, self.layout.time_features) {
            row[at] = v;
            at += 1;
        }
        for p in [&objective.start, &objective.goal] {
            for v in self.meta.bounds.normalize(p) {
                row[at] = v;
                at += 1;
            }
        }
        Ok(())
    }

    pub fn encode_batch(
        &self,
        states: &[FlowState],
        objectives: &[&TaskObjective],
    ) -> Result<Array2<f64>> {
        if states.len() != objectives.len() {
            return Err(Error::Layout(format!(
                "{} states for {} objectives",
                states.len(),
                objectives.len()
            )));
        }
        let mut x = Array2::zeros((states.len(), self.layout.input_width()));
        for ((state, obj), mut row) in states.iter().zip(objectives).zip(x.rows_mut()) {
            self.encode_row(state, obj, row.as_slice_mut().expect("standard layout"))?;
        }
        Ok(x)
    }

    /// Raw output rows `[u | v | w]` for encoded inputs.
    pub fn forward_inputs(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let trunk = self.layout.trunk();
        if self.layout.n_trunks() == 1 {
            return trunk.forward(self.trunk_params(0), x);
        }
        let mut out = Array2::zeros((x.nrows(), self.layout.output_width()));
        let n = self.layout.channel_size();
        for k in 0..3 {
            let y = trunk.forward(self.trunk_params(k), x)?;
            out.slice_mut(s![.., k * n..(k + 1) * n]).assign(&y);
        }
        Ok(out)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ModelCache)> {
        let trunk = self.layout.trunk();
        if self.layout.n_trunks() == 1 {
            let (y, c) = trunk.forward_cached(self.trunk_params(0), x)?;
            return Ok((y, ModelCache { trunks: vec![c] }));
        }
        let mut out = Array2::zeros((x.nrows(), self.layout.output_width()));
        let n = self.layout.channel_size();
        let mut caches = Vec::with_capacity(3);
        for k in 0..3 {
            let (y, c) = trunk.forward_cached(self.trunk_params(k), x)?;
            out.slice_mut(s![.., k * n..(k + 1) * n]).assign(&y);
            caches.push(c);
        }
        Ok((out, ModelCache { trunks: caches }))
    }

    /// Parameter gradient given `∂loss/∂output` for the cached batch.
    pub fn backward(&self, cache: &ModelCache, dy: ArrayView2<f64>) -> Result<Vec<f64>> {
        let trunk = self.layout.trunk();
        let pc = trunk.param_count();
        let mut grad = vec![0.0; self.params.len()];
        if cache.trunks.len() != self.layout.n_trunks() {
            return Err(Error::Layout("cache does not belong to this model".into()));
        }
        let n = self.layout.output_width() / self.layout.n_trunks();
        for (k, c) in cache.trunks.iter().enumerate() {
            let dy_k = dy.slice(s![.., k * n..(k + 1) * n]);
            trunk.backward(
                self.trunk_params(k),
                c,
                dy_k,
                &mut grad[k * pc..(k + 1) * pc],
            )?;
        }
        Ok(grad)
    }

    /// Maps raw head rows to field rows for the given states.
    pub fn heads_to_fields(&self, raw: &Array2<f64>, states: &[FlowState]) -> Result<Array2<f64>> {
        if self.layout.parametrization == Parametrization::Direct {
            return Ok(raw.clone());
        }
        self.couple(raw, states, false)
    }

    /// Pulls `∂loss/∂fields` back to `∂loss/∂heads`.
    pub fn fields_grad_to_heads(
        &self,
        d_fields: &Array2<f64>,
        states: &[FlowState],
    ) -> Result<Array2<f64>> {
        if self.layout.parametrization == Parametrization::Direct {
            return Ok(d_fields.clone());
        }
        self.couple(d_fields, states, true)
    }

    fn couple(
        &self,
        m: &Array2<f64>,
        states: &[FlowState],
        transpose: bool,
    ) -> Result<Array2<f64>> {
        let n = self.layout.channel_size();
        let (l, d) = (self.layout.len, self.layout.dim);
        if m.dim() != (states.len(), 3 * n) {
            return Err(Error::Layout(format!(
                "head rows {:?} for {} states",
                m.dim(),
                states.len()
            )));
        }
        let bases = match self.layout.parametrization {
            Parametrization::Preconditioned => Some(spline_subspaces(l, self.meta.n_via)?),
            _ => None,
        };
        let project = |c: usize, v: &[f64]| -> Vec<f64> {
            let b = &bases.as_ref().expect("projected parametrization")[c];
            let v = ArrayView2::from_shape((l, d), v).expect("channel block");
            b.dot(&b.t().dot(&v)).iter().copied().collect()
        };
        let mut out = Array2::zeros(m.dim());
        for ((src, mut dst), state) in m.rows().into_iter().zip(out.rows_mut()).zip(states) {
            state.check_shape(l, d)?;
            let src = src.as_slice().expect("standard layout");
            let dst = dst.as_slice_mut().expect("standard layout");
            let (mut j, k) = endpoint_coupling(self.meta.targets, state.t);
            let channels = [&state.q, &state.qdot, &state.qddot];
            let x = channels.map(|c| c.as_slice().expect("standard layout"));
            let mut skip_term = [[0.0; 3]; 3];
            let heads: Vec<&[f64]> = (0..3).map(|c| &src[c * n..(c + 1) * n]).collect();
            let mut projected: Vec<Vec<f64>> = Vec::new();
            if bases.is_some() {
                let (skip, scale) = endpoint_preconditioning(state.t);
                for r in 0..3 {
                    for c in 0..3 {
                        skip_term[r][c] = j[r][c] * skip[c];
                        j[r][c] *= scale[c];
                    }
                }
                if !transpose {
                    projected = (0..3).map(|c| project(c, x[c])).collect();
                }
            }
            for e in 0..n {
                for r in 0..3 {
                    let mut acc = 0.0;
                    for c in 0..3 {
                        if transpose {
                            acc += j[c][r] * heads[c][e];
                        } else {
                            acc += j[r][c] * heads[c][e] + k[r][c] * x[c][e];
                            if let Some(p) = projected.get(c) {
                                acc += skip_term[r][c] * p[e];
                            }
                        }
                    }
                    dst[r * n + e] = acc;
                }
            }
        }
        Ok(out)
    }

    /// Splits one field row into the three heads.
    pub fn split_output(&self, row: &[f64]) -> FieldTarget {
        let (l, d) = (self.layout.len, self.layout.dim);
        let n = l * d;
        let head = |k: usize| {
            Array2::from_shape_vec((l, d), row[k * n..(k + 1) * n].to_vec()).expect("head shape")
        };
        FieldTarget {
            u: head(0),
            v: head(1),
            w: head(2),
        }
    }

    /// Field for a single normalized state at its flow time.
    pub fn forward(&self, state: &FlowState, objective: &TaskObjective) -> Result<FieldTarget> {
        if !(0.0..=1.0).contains(&state.t) {
            return Err(Error::Domain(format!(
                "flow time {} outside [0, 1]",
                state.t
            )));
        }
        Ok(self
            .forward_batch(std::slice::from_ref(state), objective)?
            .remove(0))
    }

    /// Raw head rows (before the endpoint coupling) for a batch of states.
    pub fn heads_batch(
        &self,
        states: &[FlowState],
        objective: &TaskObjective,
    ) -> Result<Array2<f64>> {
        let objs = vec![objective; states.len()];
        let x = self.encode_batch(states, &objs)?;
        self.forward_inputs(x.view())
    }

    pub fn forward_batch(
        &self,
        states: &[FlowState],
        objective: &TaskObjective,
    ) -> Result<Vec<FieldTarget>> {
        let raw = self.heads_batch(states, objective)?;
        let y = self.heads_to_fields(&raw, states)?;
        Ok(y.rows()
            .into_iter()
            .map(|r| self.split_output(r.as_slice().expect("standard layout")))
            .collect())
    }
}
