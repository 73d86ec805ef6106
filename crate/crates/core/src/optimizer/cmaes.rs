//! Covariance matrix adaptation evolution strategy with the standard default
//! parameters (log-rank weights, rank-one and rank-μ covariance updates,
//! cumulative step-size adaptation).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest eigenvalue kept in the covariance matrix.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Strategy parameters derived from the problem dimension.
#[derive(Debug, Clone)]
pub struct CmaesParams {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaesParams {
    pub fn new(dim: usize) -> Self {
        let n = dim as f64;
        let lambda = 4 + (3.0 * n.ln()).floor() as usize;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu =
            (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self {
            dim,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// Search distribution `N(mean, step_size² · cov)` plus evolution paths.
#[derive(Debug, Clone)]
pub struct CmaesState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub step_size: f64,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: usize,
    params: CmaesParams,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
}

/// One sampled candidate: `x = mean + step_size · y`.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub x: Vec<f64>,
    y: DVector<f64>,
}

impl CmaesState {
    pub fn new(mean: &[f64], step_size: f64) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::Optimizer("empty search space".into()));
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::Optimizer(format!(
                "initial step size {step_size} must be positive"
            )));
        }
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::identity(n, n),
            step_size,
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            params: CmaesParams::new(n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
        })
    }

    pub fn params(&self) -> &CmaesParams {
        &self.params
    }

    /// Draws `λ` candidates from the current distribution.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Candidate> {
        let n = self.params.dim;
        (0..self.params.lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = &self.basis * self.scales.component_mul(&z);
                let x = &self.mean + &y * self.step_size;
                Candidate {
                    x: x.iter().copied().collect(),
                    y,
                }
            })
            .collect()
    }

    /// Updates the distribution from evaluated candidates. Non-finite costs
    /// are ranked as `+∞`.
    pub fn tell(&mut self, candidates: &[Candidate], costs: &[f64]) -> Result<()> {
        let p = &self.params;
        if candidates.len() != p.lambda || costs.len() != p.lambda {
            return Err(Error::Optimizer(format!(
                "expected {} evaluated candidates, got {}",
                p.lambda,
                candidates.len()
            )));
        }
        let costs: Vec<f64> = costs
            .iter()
            .map(|&c| if c.is_finite() { c } else { f64::INFINITY })
            .collect();
        if costs.iter().all(|c| c.is_infinite()) {
            return Err(Error::Optimizer(format!(
                "generation {}: every candidate produced a non-finite cost",
                self.generation
            )));
        }
        let mut order: Vec<usize> = (0..p.lambda).collect();
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));

        let n = p.dim;
        let mut y_w = DVector::zeros(n);
        for (w, &idx) in p.weights.iter().zip(&order) {
            y_w += &candidates[idx].y * *w;
        }
        self.mean += &y_w * self.step_size;

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let inv_sqrt_y = &self.basis * (self.basis.transpose() * &y_w).component_div(&self.scales);
        self.p_sigma = &self.p_sigma * (1.0 - p.c_sigma)
            + inv_sqrt_y * (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - p.c_sigma).powi(2 * (self.generation as i32 + 1));
        let h_sigma = if ps_norm / decay.sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n {
            1.0
        } else {
            0.0
        };
        self.p_c = &self.p_c * (1.0 - p.c_c)
            + &y_w * (h_sigma * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, &idx) in p.weights.iter().zip(&order) {
            let y = &candidates[idx].y;
            rank_mu += y * y.transpose() * *w;
        }
        let old_scale = 1.0 - p.c_1 - p.c_mu + (1.0 - h_sigma) * p.c_1 * p.c_c * (2.0 - p.c_c);
        self.cov =
            &self.cov * old_scale + &self.p_c * self.p_c.transpose() * p.c_1 + rank_mu * p.c_mu;

        self.step_size *= ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.generation += 1;
        self.refresh_eigensystem();
        Ok(())
    }

    /// Symmetrizes the covariance and clamps its spectrum at [`EIGEN_FLOOR`].
    fn refresh_eigensystem(&mut self) {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let vals = eig.eigenvalues.map(|v| {
            if v.is_finite() {
                v.max(EIGEN_FLOOR)
            } else {
                EIGEN_FLOOR
            }
        });
        self.cov = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        self.basis = eig.eigenvectors;
        self.scales = vals.map(f64::sqrt);
    }

    /// Largest standard deviation of the search distribution along any axis.
    pub fn max_std(&self) -> f64 {
        self.step_size * self.scales.max()
    }
}

/// Run options for [`cmaes_minimize`].
#[derive(Debug, Clone)]
pub struct CmaesOptions {
    pub init_sigma: f64,
    /// Maximum number of cost evaluations.
    pub budget: usize,
    pub seed: u64,
    /// Stop once the best cost falls to or below this value.
    pub target: Option<f64>,
    /// Stop once the search distribution's largest std drops below this.
    pub tol_x: f64,
}

impl CmaesOptions {
    pub fn new(init_sigma: f64, budget: usize, seed: u64) -> Self {
        Self {
            init_sigma,
            budget,
            seed,
            target: None,
            tol_x: 1e-14,
        }
    }
}

/// Per-generation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub evaluations: usize,
    pub generation_best: f64,
    pub best_so_far: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone)]
pub struct CmaesResult {
    pub best: Vec<f64>,
    pub best_cost: f64,
    pub evaluations: usize,
    pub history: Vec<GenerationRecord>,
}

/// Minimizes `cost_fn` from `init_mean`, returning the best candidate ever
/// evaluated.
pub fn cmaes_minimize<F>(
    mut cost_fn: F,
    init_mean: &[f64],
    opts: &CmaesOptions,
) -> Result<CmaesResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut state = CmaesState::new(init_mean, opts.init_sigma)?;
    let lambda = state.params().lambda;
    if opts.budget < lambda {
        return Err(Error::Optimizer(format!(
            "budget {} is smaller than the population size {lambda}",
            opts.budget
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = init_mean.to_vec();
    let mut best_cost = f64::INFINITY;
    let mut evaluations = 0;
    let mut history = Vec::new();

    while evaluations + lambda <= opts.budget {
        let candidates = state.ask(&mut rng);
        let costs: Vec<f64> = candidates
            .iter()
            .map(|c| {
                let v = cost_fn(&c.x);
                if v.is_finite() {
                    v
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        evaluations += lambda;
        let mut generation_best = f64::INFINITY;
        for (c, &v) in candidates.iter().zip(&costs) {
            generation_best = generation_best.min(v);
            if v < best_cost {
                best_cost = v;
                best.clone_from(&c.x);
            }
        }
        state.tell(&candidates, &costs)?;
        history.push(GenerationRecord {
            generation: state.generation,
            evaluations,
            generation_best,
            best_so_far: best_cost,
            step_size: state.step_size,
        });
        if opts.target.is_some_and(|t| best_cost <= t) || state.max_std() < opts.tol_x {
            break;
        }
    }
    Ok(CmaesResult {
        best,
        best_cost,
        evaluations,
        history,
    })
}
