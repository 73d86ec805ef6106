//! Clamped B-spline trajectories parameterized by interior via-points and
//! boundary conditions.
//!
//! A trajectory with `n` via-points uses `n + 4` control points: the first and
//! last are pinned to the start and goal positions, the second and
//! second-to-last are solved from the boundary velocities, and the rest are the
//! via-points themselves. The basis is clamped (end knots repeated
//! `degree + 1` times) with uniform interior knots over the phase `s ∈ [0, 1]`.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of design columns that carry boundary conditions
/// (start position, start velocity, goal position, goal velocity).
pub const BOUNDARY_COLUMNS: usize = 4;

/// B-spline basis over the phase interval `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    degree: usize,
    knots: Vec<f64>,
    n_ctrl: usize,
}

impl SplineBasis {
    /// Clamped basis with uniform interior knots.
    pub fn clamped_uniform(degree: usize, n_ctrl: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::Construction("degree must be at least 1".into()));
        }
        if n_ctrl < degree + 1 {
            return Err(Error::Construction(format!(
                "{n_ctrl} control points cannot carry a degree-{degree} basis"
            )));
        }
        let spans = n_ctrl - degree;
        let mut knots = Vec::with_capacity(n_ctrl + degree + 1);
        knots.extend(std::iter::repeat_n(0.0, degree + 1));
        for j in 1..spans {
            knots.push(j as f64 / spans as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::from_knots(degree, knots)
    }

    /// Cubic clamped basis sized for `n_via` interior via-points plus the four
    /// boundary columns.
    pub fn for_via_points(n_via: usize) -> Result<Self> {
        if n_via == 0 {
            return Err(Error::Construction(
                "at least one via-point is required".into(),
            ));
        }
        Self::clamped_uniform(3, n_via + BOUNDARY_COLUMNS)
    }

    /// Validates an explicit clamped knot vector on `[0, 1]`.
    pub fn from_knots(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::Construction(format!(
                "knot vector of length {} too short for degree {degree}",
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Construction("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Construction("knots must be nondecreasing".into()));
        }
        let m = knots.len();
        if knots[..=degree].iter().any(|&k| k != 0.0)
            || knots[m - degree - 1..].iter().any(|&k| k != 1.0)
        {
            return Err(Error::Construction(format!(
                "end knots must be clamped with multiplicity {} on [0, 1]",
                degree + 1
            )));
        }
        let n_ctrl = m - degree - 1;
        // interior multiplicity above the degree would break continuity
        for i in degree + 1..n_ctrl {
            let mult = knots.iter().filter(|&&k| k == knots[i]).count();
            if mult > degree && knots[i] != 0.0 && knots[i] != 1.0 {
                return Err(Error::Construction(format!(
                    "interior knot {} repeated {mult} times",
                    knots[i]
                )));
            }
        }
        Ok(Self {
            degree,
            knots,
            n_ctrl,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_ctrl(&self) -> usize {
        self.n_ctrl
    }

    /// Number of via-points this basis carries when used with boundary columns.
    pub fn n_via(&self) -> usize {
        self.n_ctrl.saturating_sub(BOUNDARY_COLUMNS)
    }

    /// Index of the knot span containing `s` (the last non-empty span at `s = 1`).
    fn find_span(&self, s: f64) -> usize {
        let p = self.degree;
        let n = self.n_ctrl - 1;
        if s >= self.knots[n + 1] {
            return n;
        }
        // knots[p] <= s < knots[n + 1]
        let mut lo = p;
        let mut hi = n + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if s < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values (or derivatives, for `order > 0`) of every basis function at
    /// phase `s`. Order-0 rows are nonnegative and sum to one.
    pub fn basis_row(&self, s: f64, order: usize) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("phase {s} outside [0, 1]")));
        }
        if order > self.degree {
            return Err(Error::Domain(format!(
                "derivative order {order} exceeds degree {}",
                self.degree
            )));
        }
        let span = self.find_span(s);
        let ders = self.span_derivatives(span, s, order);
        let mut row = vec![0.0; self.n_ctrl];
        let first = span - self.degree;
        row[first..=span].copy_from_slice(&ders[order]);
        Ok(row)
    }

    /// Nonzero basis functions on `span` and their derivatives up to `order`
    /// (Cox–de Boor triangle with derivative recurrences).
    fn span_derivatives(&self, span: usize, s: f64, order: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = s - u[span + 1 - j];
            right[j] = u[span + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                // lower triangle holds knot differences
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; p + 1]; order + 1];
        for (j, d) in ders[0].iter_mut().enumerate() {
            *d = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=order {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=order {
            for d in ders[k].iter_mut() {
                *d *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Row of the design matrix `[Φ_via(s) | Φ_bc(s)]` in phase units.
    ///
    /// Columns are the via-points followed by `(q0, q0', qT, qT')` where the
    /// boundary derivatives are phase derivatives `dq/ds`. Requires the cubic
    /// boundary layout (`n_ctrl = n_via + 4`).
    pub fn design_row(&self, s: f64, order: usize) -> Result<Vec<f64>> {
        if self.n_ctrl < BOUNDARY_COLUMNS + 1 {
            return Err(Error::Shape(format!(
                "basis with {} control points cannot carry boundary columns",
                self.n_ctrl
            )));
        }
        let raw = self.basis_row(s, order)?;
        let n = self.n_ctrl;
        let n_via = n - BOUNDARY_COLUMNS;
        // slope at each clamped end is degree / (first interior knot distance)
        let h0 = self.knots[self.degree + 1] / self.degree as f64;
        let h1 = (1.0 - self.knots[n - 1]) / self.degree as f64;
        let mut row = Vec::with_capacity(n);
        row.extend_from_slice(&raw[2..2 + n_via]);
        row.push(raw[0] + raw[1]);
        row.push(raw[1] * h0);
        row.push(raw[n - 2] + raw[n - 1]);
        row.push(-raw[n - 2] * h1);
        Ok(row)
    }
}

/// Start/goal positions and velocities of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub start: Vec<f64>,
    pub start_velocity: Vec<f64>,
    pub goal: Vec<f64>,
    pub goal_velocity: Vec<f64>,
}

impl BoundaryConditions {
    /// Rest-to-rest boundary conditions.
    pub fn at_rest(start: Vec<f64>, goal: Vec<f64>) -> Self {
        let d = start.len();
        Self {
            start,
            start_velocity: vec![0.0; d],
            goal,
            goal_velocity: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }
}

/// Via-points, boundary conditions, and duration of one spline trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ViaPointSpec {
    /// `n × D` interior via-points.
    pub via: Array2<f64>,
    pub bc: BoundaryConditions,
    /// Duration `T` in seconds.
    pub duration: f64,
}

impl ViaPointSpec {
    pub fn new(via: Array2<f64>, bc: BoundaryConditions, duration: f64) -> Result<Self> {
        let spec = Self { via, bc, duration };
        spec.validate()?;
        Ok(spec)
    }

    /// Via-points evenly spaced on the straight line from start to goal.
    pub fn straight_line(bc: BoundaryConditions, n_via: usize, duration: f64) -> Result<Self> {
        let d = bc.dim();
        let mut via = Array2::zeros((n_via, d));
        for i in 0..n_via {
            let a = (i + 1) as f64 / (n_via + 1) as f64;
            for k in 0..d {
                via[[i, k]] = (1.0 - a) * bc.start[k] + a * bc.goal[k];
            }
        }
        Self::new(via, bc, duration)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.via.dim();
        if n == 0 || d == 0 {
            return Err(Error::Shape(format!(
                "via-point matrix {n}×{d} must be non-empty"
            )));
        }
        for v in [
            &self.bc.start,
            &self.bc.start_velocity,
            &self.bc.goal,
            &self.bc.goal_velocity,
        ] {
            if v.len() != d {
                return Err(Error::Shape(format!(
                    "boundary vector of length {} for dimension {d}",
                    v.len()
                )));
            }
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Input(format!(
                "duration {} must be positive",
                self.duration
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.via.ncols()
    }

    /// Stacked coefficient matrix `[q_via; q0; T·q0'; qT; T·qT']`.
    fn coefficients(&self) -> Array2<f64> {
        let (n, d) = self.via.dim();
        let mut w = Array2::zeros((n + BOUNDARY_COLUMNS, d));
        w.slice_mut(ndarray::s![..n, ..]).assign(&self.via);
        let t = self.duration;
        for k in 0..d {
            w[[n, k]] = self.bc.start[k];
            w[[n + 1, k]] = t * self.bc.start_velocity[k];
            w[[n + 2, k]] = self.bc.goal[k];
            w[[n + 3, k]] = t * self.bc.goal_velocity[k];
        }
        w
    }
}

/// Position, velocity, and acceleration profiles on a uniform phase grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Array2<f64>,
    pub velocities: Array2<f64>,
    pub accelerations: Array2<f64>,
    /// Duration `T` in seconds; row `i` is at time `T·i/(L−1)`.
    pub duration: f64,
}

impl Trajectory {
    pub fn new(
        positions: Array2<f64>,
        velocities: Array2<f64>,
        accelerations: Array2<f64>,
        duration: f64,
    ) -> Result<Self> {
        let traj = Self {
            positions,
            velocities,
            accelerations,
            duration,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.positions.dim();
        if self.velocities.dim() != shape || self.accelerations.dim() != shape {
            return Err(Error::Shape(format!(
                "profiles disagree: {:?} / {:?} / {:?}",
                shape,
                self.velocities.dim(),
                self.accelerations.dim()
            )));
        }
        if shape.0 < 2 || shape.1 == 0 {
            return Err(Error::Shape(format!(
                "trajectory shape {shape:?} needs L ≥ 2 and D ≥ 1"
            )));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Input(format!(
                "duration {} must be positive",
                self.duration
            )));
        }
        Ok(())
    }

    /// Number of waypoints `L`.
    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn phase(&self, i: usize) -> f64 {
        phase_at(i, self.len())
    }

    pub fn time(&self, i: usize) -> f64 {
        self.phase(i) * self.duration
    }

    pub fn is_finite(&self) -> bool {
        [&self.positions, &self.velocities, &self.accelerations]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// Phase `i / (L − 1)` of row `i` on an `L`-point grid.
pub fn phase_at(i: usize, len: usize) -> f64 {
    i as f64 / (len - 1) as f64
}

/// Design matrices `Φ, Φ', Φ''` sampled on an `L`-point phase grid, reusable
/// across many specs that share a basis.
#[derive(Debug, Clone)]
pub struct DesignGrid {
    rows: [Array2<f64>; 3],
}

impl DesignGrid {
    pub fn new(basis: &SplineBasis, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::Input(format!(
                "trajectory length {len} must be at least 2"
            )));
        }
        let n = basis.n_ctrl();
        let mut rows = [
            Array2::zeros((len, n)),
            Array2::zeros((len, n)),
            Array2::zeros((len, n)),
        ];
        for (order, m) in rows.iter_mut().enumerate() {
            for i in 0..len {
                let row = basis.design_row(phase_at(i, len), order)?;
                m.row_mut(i).assign(&Array1::from(row));
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows[0].nrows() == 0
    }

    pub fn n_via(&self) -> usize {
        self.rows[0].ncols() - BOUNDARY_COLUMNS
    }

    pub fn matrix(&self, order: usize) -> ArrayView2<'_, f64> {
        self.rows[order].view()
    }

    pub fn eval(&self, spec: &ViaPointSpec) -> Result<Trajectory> {
        spec.validate()?;
        if spec.via.nrows() != self.n_via() {
            return Err(Error::Shape(format!(
                "spec has {} via-points but basis expects {}",
                spec.via.nrows(),
                self.n_via()
            )));
        }
        let w = spec.coefficients();
        let t = spec.duration;
        let positions = self.rows[0].dot(&w);
        let velocities = self.rows[1].dot(&w) / t;
        let accelerations = self.rows[2].dot(&w) / (t * t);
        Trajectory::new(positions, velocities, accelerations, t)
    }
}

/// Evaluates the spline on `len` uniform phase samples, with velocities and
/// accelerations from the analytic basis derivatives scaled by `1/T` and `1/T²`.
pub fn eval_trajectory(spec: &ViaPointSpec, basis: &SplineBasis, len: usize) -> Result<Trajectory> {
    if spec.via.nrows() + BOUNDARY_COLUMNS != basis.n_ctrl() {
        return Err(Error::Shape(format!(
            "spec has {} via-points but basis has {} control points",
            spec.via.nrows(),
            basis.n_ctrl()
        )));
    }
    DesignGrid::new(basis, len)?.eval(spec)
}

/// Adds independent `N(0, σ²)` increments to every via-point coordinate: the
/// steps of a discrete Brownian path indexed by via-point.
pub fn perturb_via_points_with<R: Rng + ?Sized>(
    via: &Array2<f64>,
    sigma: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Input(format!(
            "sigma {sigma} must be a finite nonnegative number"
        )));
    }
    let mut out = via.clone();
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(out)
}

/// Seeded variant of [`perturb_via_points_with`].
pub fn perturb_via_points(via: &Array2<f64>, sigma: f64, seed: u64) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perturb_via_points_with(via, sigma, &mut rng)
}
