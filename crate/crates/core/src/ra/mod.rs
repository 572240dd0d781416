//! Representation alignment.
//!
//! The projection `P = S·Φ` is learned without ever forming the global
//! scatter matrices: `S` follows the fixed-point iteration
//! `S ← S + η(I − S Σ̂ S)` whose attractor is `Σ_W^{-1/2}`, and `Φ` follows a
//! deflated Oja rule on whitened, centered representations, converging to the
//! leading eigenvectors of the whitened global correlation. Together they
//! approximate the LDA solution computed exactly by [`lda_oracle`].

mod scatter;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use scatter::{
    between_client_scatter, lda_oracle, optimal_objective, principal_angles, projected_objective,
    scatter_pair, trace_ratio_objective, within_client_scatter, ProjectionBasis, ScatterPair,
};

use crate::error::{FedError, Result};
use crate::model::LatentBatch;
use crate::numerics::linalg::orthonormalize_columns;
use crate::numerics::{matmul, SymmetricMatrix, Tensor};
use crate::rng;

/// Frobenius-norm ceiling for `S` and `Φ`; beyond it the step size is too
/// large for the data scale.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// What the `Φ` update consumes per aligned batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhiInput {
    /// One step per sample with `u_j = S(z_j − z_g)`.
    #[default]
    PerSample,
    /// One step per batch with `u = S(z_l − z_g)`.
    BatchMean,
}

impl PhiInput {
    pub fn code(self) -> u8 {
        match self {
            PhiInput::PerSample => 0,
            PhiInput::BatchMean => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(PhiInput::PerSample),
            1 => Ok(PhiInput::BatchMean),
            _ => Err(FedError::Format(format!("unknown phi input code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RaConfig {
    /// Step size of the `S` iteration.
    pub eta: f64,
    /// Step size of the `Φ` iteration.
    pub lambda: f64,
    pub phi_input: PhiInput,
    /// Re-orthonormalize the columns of `P = SΦ` before returning it.
    pub orthonormalize: bool,
    /// Half-width of the uniform noise added to the initial `Φ`.
    pub init_noise: f64,
}

impl Default for RaConfig {
    fn default() -> Self {
        RaConfig {
            eta: 0.001,
            lambda: 0.001,
            phi_input: PhiInput::PerSample,
            orthonormalize: false,
            init_noise: 0.01,
        }
    }
}

/// Streaming state of the alignment learner.
#[derive(Debug, Clone, PartialEq)]
pub struct RaState {
    pub dim: usize,
    pub rank: usize,
    /// Running estimate of `Σ_W^{-1/2}` (`d × d`).
    pub s: Tensor,
    /// Running eigenvector estimate (`d × r`).
    pub phi: Tensor,
    pub global_mean: Vec<f64>,
    pub config: RaConfig,
    pub update_count: u64,
    pub initialized: bool,
    pub seed: u64,
}

impl RaState {
    /// Empty state; `S` and `Φ` are created on the first aligned batch.
    pub fn new(dim: usize, rank: usize, config: RaConfig, seed: u64) -> Result<Self> {
        if dim == 0 || rank == 0 || rank > dim {
            return Err(FedError::Validation(format!(
                "alignment rank {rank} invalid for dimension {dim}"
            )));
        }
        if !(config.eta > 0.0 && config.lambda > 0.0) {
            return Err(FedError::Validation(format!(
                "alignment step sizes must be positive (eta {}, lambda {})",
                config.eta, config.lambda
            )));
        }
        Ok(RaState {
            dim,
            rank,
            s: Tensor::eye(dim),
            phi: Tensor::eye_rect(dim, rank),
            global_mean: vec![0.0; dim],
            config,
            update_count: 0,
            initialized: false,
            seed,
        })
    }

    /// Same as [`RaState::new`] followed by initialization.
    pub fn initialized(dim: usize, rank: usize, config: RaConfig, seed: u64) -> Result<Self> {
        let mut st = RaState::new(dim, rank, config, seed)?;
        st.initialize();
        Ok(st)
    }

    /// `S₀ = I`, `Φ₀ = I[:, :r] + U(−noise, noise)`.
    pub fn initialize(&mut self) {
        let mut r = rng::derived(self.seed, &[rng::tag::RA_INIT]);
        self.s = Tensor::eye(self.dim);
        let mut phi = Tensor::eye_rect(self.dim, self.rank);
        let noise = self.config.init_noise;
        if noise > 0.0 {
            for v in phi.data_mut() {
                *v += r.random_range(-noise..=noise);
            }
        }
        self.phi = phi;
        self.initialized = true;
    }

    fn require_initialized(&self) -> Result<()> {
        if !self.initialized {
            return Err(FedError::Validation(
                "alignment state not initialized".into(),
            ));
        }
        Ok(())
    }

    /// `S ← sym(S + η(I − S Σ̂ S))`
    pub fn update_s(&mut self, batch_scatter: &SymmetricMatrix) -> Result<()> {
        self.require_initialized()?;
        if batch_scatter.dim() != self.dim {
            return Err(FedError::Shape(format!(
                "scatter is {}x{}, state dimension is {}",
                batch_scatter.dim(),
                batch_scatter.dim(),
                self.dim
            )));
        }
        let ss = matmul(&self.s, &matmul(batch_scatter.as_tensor(), &self.s)?)?;
        let mut next = self.s.clone();
        let eta = self.config.eta;
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                let id = if i == j { 1.0 } else { 0.0 };
                let v = next.get(i, j) + eta * (id - ss.get(i, j));
                next.set(i, j, v);
            }
        }
        let next = next.symmetrized();
        let norm = next.frobenius_norm();
        if !(norm <= DIVERGENCE_LIMIT) {
            return Err(FedError::Numeric(format!(
                "whitening estimate diverged (‖S‖_F = {norm:e}); use a smaller eta"
            )));
        }
        self.s = next;
        Ok(())
    }

    /// One deflated Oja step: `Φ ← Φ + λ(u uᵀ Φ − Φ τ(Φᵀ u uᵀ Φ))`.
    ///
    /// With `v = Φᵀu`, column `k` of `Φ τ(v vᵀ)` is `v_k Σ_{j≤k} v_j Φ_{:,j}`,
    /// so the step costs `O(d·r)`.
    pub fn update_phi(&mut self, u: &[f64]) -> Result<()> {
        self.require_initialized()?;
        if u.len() != self.dim {
            return Err(FedError::Shape(format!(
                "update vector has {} entries, state dimension is {}",
                u.len(),
                self.dim
            )));
        }
        let (d, r) = (self.dim, self.rank);
        let lambda = self.config.lambda;
        let v: Vec<f64> = (0..r)
            .map(|k| (0..d).map(|i| self.phi.get(i, k) * u[i]).sum())
            .collect();
        let mut next = self.phi.clone();
        let mut cum = vec![0.0; d];
        for k in 0..r {
            for (i, c) in cum.iter_mut().enumerate() {
                *c += v[k] * self.phi.get(i, k);
            }
            for i in 0..d {
                let delta = lambda * v[k] * (u[i] - cum[i]);
                let cur = next.get(i, k);
                next.set(i, k, cur + delta);
            }
        }
        let norm = next.frobenius_norm();
        if !(norm <= DIVERGENCE_LIMIT) {
            return Err(FedError::Numeric(format!(
                "eigenvector estimate diverged (‖Φ‖_F = {norm:e}); use a smaller lambda"
            )));
        }
        self.phi = next;
        Ok(())
    }

    /// `P = S·Φ`, optionally with orthonormalized columns.
    pub fn projection(&self) -> Result<ProjectionBasis> {
        let p = matmul(&self.s, &self.phi)?;
        if self.config.orthonormalize {
            ProjectionBasis::new(orthonormalize_columns(&p)?)
        } else {
            ProjectionBasis::new(p)
        }
    }

    /// One pass of the alignment procedure over a batch of latents.
    pub fn align_batch(&mut self, z: &LatentBatch) -> Result<ProjectionBasis> {
        let n = z.len();
        if n < 2 {
            return Err(FedError::Validation(format!(
                "alignment batch needs at least 2 representations, got {n}"
            )));
        }
        if z.dim() != self.dim {
            return Err(FedError::Shape(format!(
                "latent dimension {} does not match alignment dimension {}",
                z.dim(),
                self.dim
            )));
        }
        let local_mean = scatter::mean_row(z.as_tensor());
        if !self.initialized {
            self.initialize();
            self.global_mean = local_mean.clone();
        }

        let rate = 1.0 / n as f64;
        for (g, l) in self.global_mean.iter_mut().zip(&local_mean) {
            *g += rate * (l - *g);
        }

        let scatter = scatter::centered_scatter_sum(z.as_tensor(), &local_mean).scale(rate);
        if scatter.data().iter().any(|&v| v != 0.0) {
            self.update_s(&SymmetricMatrix::from_symmetrized(&scatter))?;
        }

        match self.config.phi_input {
            PhiInput::PerSample => {
                let mut centered = vec![0.0; self.dim];
                for j in 0..n {
                    for ((c, x), g) in centered.iter_mut().zip(z.row(j)).zip(&self.global_mean) {
                        *c = x - g;
                    }
                    let u = self.whiten(&centered);
                    self.update_phi(&u)?;
                }
            }
            PhiInput::BatchMean => {
                let centered: Vec<f64> = local_mean
                    .iter()
                    .zip(&self.global_mean)
                    .map(|(l, g)| l - g)
                    .collect();
                let u = self.whiten(&centered);
                self.update_phi(&u)?;
            }
        }
        self.update_count += 1;
        self.projection()
    }

    fn whiten(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| crate::numerics::tensor::dot(self.s.row(i), x))
            .collect()
    }

    /// Weighted average of `S`, `Φ` and the global mean over client states.
    /// The update counter takes the maximum.
    pub fn weighted_average(states: &[(&RaState, f64)]) -> Result<RaState> {
        let (first, _) = states
            .first()
            .ok_or_else(|| FedError::Validation("no alignment states to average".into()))?;
        let total: f64 = states.iter().map(|(_, w)| *w).sum();
        if !(total > 0.0) || states.iter().any(|(_, w)| *w < 0.0) {
            return Err(FedError::Validation(
                "aggregation weights must be non-negative and not all zero".into(),
            ));
        }
        let mut out = (*first).clone();
        out.s = Tensor::zeros(first.s.shape());
        out.phi = Tensor::zeros(first.phi.shape());
        out.global_mean = vec![0.0; first.dim];
        for (st, w) in states {
            if st.dim != first.dim || st.rank != first.rank {
                return Err(FedError::Validation(
                    "alignment states of different shapes".into(),
                ));
            }
            let a = w / total;
            out.s.axpy(a, &st.s)?;
            out.phi.axpy(a, &st.phi)?;
            for (g, v) in out.global_mean.iter_mut().zip(&st.global_mean) {
                *g += a * v;
            }
            out.update_count = out.update_count.max(st.update_count);
            out.initialized |= st.initialized;
        }
        out.s = out.s.symmetrized();
        Ok(out)
    }
}

/// Zeroes the strictly lower triangle.
pub fn tau(m: &Tensor) -> Result<Tensor> {
    if m.shape().len() != 2 || m.rows() != m.cols() {
        return Err(FedError::Validation(format!(
            "tau needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    let mut out = m.clone();
    for i in 0..m.rows() {
        for j in 0..i {
            out.set(i, j, 0.0);
        }
    }
    Ok(out)
}
