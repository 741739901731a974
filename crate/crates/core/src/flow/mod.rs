//! Velocity fields, Euler integration and the straight-path reverse update.

mod checkpoint;
mod mlp;
mod prior;
mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, ModelCard, MODEL_FILE, WEIGHTS_FILE};
pub use mlp::{time_embedding, MlpField, TIME_EMBED_DIM};
pub use prior::{sample_prior, sample_prior_into, PriorKind, PriorSpec};
pub use train::{cfm_loss, continue_training, train_cfm, Optimizer, TrainConfig, TrainOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("expected a state of length {expected}, got {actual}")]
    Dim { expected: usize, actual: usize },
    #[error("flow time {0} outside [0, 1]")]
    Tau(f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("trajectory became non-finite at Euler step {step}")]
    Diverged { step: usize },
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// The generative vector field `v(u, τ)`.
pub trait VelocityField: Send + Sync {
    /// State dimension.
    fn dim(&self) -> usize;

    fn eval(&self, u: &[f64], tau: f64) -> Result<Vec<f64>, FlowError>;

    /// Vector-Jacobian product `wᵀ ∂v/∂u` at `(u, τ)`.
    fn vjp(&self, u: &[f64], tau: f64, w: &[f64]) -> Result<Vec<f64>, FlowError>;
}

pub(crate) fn check_input(dim: usize, u: &[f64], tau: f64) -> Result<(), FlowError> {
    if u.len() != dim {
        return Err(FlowError::Dim {
            expected: dim,
            actual: u.len(),
        });
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(FlowError::Tau(tau));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(FlowError::NonFinite("field input"));
    }
    Ok(())
}

/// Straight-path field with constant velocity `u1_ref - u0_ref`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticOt {
    u0_ref: Vec<f64>,
    u1_ref: Vec<f64>,
    velocity: Vec<f64>,
}

impl AnalyticOt {
    pub fn new(u0_ref: Vec<f64>, u1_ref: Vec<f64>) -> Result<Self, FlowError> {
        if u0_ref.len() != u1_ref.len() {
            return Err(FlowError::Dim {
                expected: u0_ref.len(),
                actual: u1_ref.len(),
            });
        }
        if u0_ref.iter().chain(&u1_ref).any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite("reference endpoint"));
        }
        let velocity = u1_ref.iter().zip(&u0_ref).map(|(a, b)| a - b).collect();
        Ok(AnalyticOt {
            u0_ref,
            u1_ref,
            velocity,
        })
    }

    pub fn u0_ref(&self) -> &[f64] {
        &self.u0_ref
    }

    pub fn u1_ref(&self) -> &[f64] {
        &self.u1_ref
    }
}

impl VelocityField for AnalyticOt {
    fn dim(&self) -> usize {
        self.velocity.len()
    }

    fn eval(&self, u: &[f64], tau: f64) -> Result<Vec<f64>, FlowError> {
        check_input(self.dim(), u, tau)?;
        Ok(self.velocity.clone())
    }

    fn vjp(&self, u: &[f64], tau: f64, _w: &[f64]) -> Result<Vec<f64>, FlowError> {
        check_input(self.dim(), u, tau)?;
        Ok(vec![0.0; self.dim()])
    }
}

/// Explicit Euler from `tau_from` to `tau_to` in `n_steps` equal steps
/// (the step is negative when integrating backwards).
pub fn ode_solve_euler(
    field: &dyn VelocityField,
    u: &[f64],
    tau_from: f64,
    tau_to: f64,
    n_steps: usize,
) -> Result<Vec<f64>, FlowError> {
    if n_steps == 0 {
        return Err(FlowError::Config("n_steps must be at least 1".into()));
    }
    for tau in [tau_from, tau_to] {
        if !(0.0..=1.0).contains(&tau) {
            return Err(FlowError::Tau(tau));
        }
    }
    let mut state = u.to_vec();
    if tau_from == tau_to {
        return Ok(state);
    }
    let h = (tau_to - tau_from) / n_steps as f64;
    for step in 0..n_steps {
        let tau = (tau_from + step as f64 * h).clamp(0.0, 1.0);
        let v = field.eval(&state, tau).map_err(|e| match e {
            FlowError::NonFinite(_) => FlowError::Diverged { step },
            other => other,
        })?;
        for (s, vi) in state.iter_mut().zip(&v) {
            *s += h * vi;
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(FlowError::Diverged { step });
        }
    }
    Ok(state)
}

/// Integrates from `tau` to 1; with one substep this is `u + (1 - τ) v(u, τ)`.
pub fn shoot_to_one(field: &dyn VelocityField, u: &[f64], tau: f64, n_shoot: usize) -> Result<Vec<f64>, FlowError> {
    ode_solve_euler(field, u, tau, 1.0, n_shoot)
}

/// Point at `tau_prime` on the straight path from `u0` to `u_proj`.
pub fn ot_reverse(u_proj: &[f64], u0: &[f64], tau_prime: f64) -> Result<Vec<f64>, FlowError> {
    if u_proj.len() != u0.len() {
        return Err(FlowError::Dim {
            expected: u0.len(),
            actual: u_proj.len(),
        });
    }
    if !(0.0..=1.0).contains(&tau_prime) {
        return Err(FlowError::Tau(tau_prime));
    }
    Ok(u0
        .iter()
        .zip(u_proj)
        .map(|(a, p)| (1.0 - tau_prime) * a + tau_prime * p)
        .collect())
}

/// Mean per-step round-trip error of shoot-then-reverse against a plain
/// Euler step, along the unconstrained `N`-step path started at `u0`.
///
/// At each step the state is shot to 1, pulled back to `τ'` along the
/// straight path through `u0`, and compared (RMS) with `u + δτ v(u, τ)`.
/// The path continues from the pulled-back state. Zero for [`AnalyticOt`].
pub fn reversibility_error(field: &dyn VelocityField, u0: &[f64], n_steps: usize) -> Result<f64, FlowError> {
    if n_steps == 0 {
        return Err(FlowError::Config("n_steps must be at least 1".into()));
    }
    let dtau = 1.0 / n_steps as f64;
    let mut u = u0.to_vec();
    let mut total = 0.0;
    for k in 0..n_steps {
        let tau = k as f64 * dtau;
        let tau_prime = (k + 1) as f64 * dtau;
        let v = field.eval(&u, tau)?;
        let shot: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + (1.0 - tau) * b).collect();
        let back = ot_reverse(&shot, u0, tau_prime)?;
        let sq: f64 = back
            .iter()
            .zip(u.iter().zip(&v))
            .map(|(r, (a, b))| {
                let d = r - (a + dtau * b);
                d * d
            })
            .sum();
        total += (sq / u.len() as f64).sqrt();
        u = back;
    }
    Ok(total / n_steps as f64)
}
