//! Constrained sampling: the PCFM loop, its linear special case (ECI) and
//! plain Euler sampling, single-sample and batched.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{Constraint, ConstraintError, ConstraintSet};
use crate::fields::{FieldError, Grid1D, RngSeed, SampleBatch};
use crate::flow::{ode_solve_euler, ot_reverse, sample_prior_into, shoot_to_one, FlowError, PriorSpec, VelocityField};
use crate::linalg::norm2;
use crate::projection::{
    gauss_newton_step_with, project_to_manifold, relaxed_correction, PenaltyConfig, ProjectionConfig, ProjectionError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("projection failed at flow step {step}: {source}")]
    Projection {
        step: usize,
        #[source]
        source: ProjectionError,
    },
    #[error("final projection failed: {0}")]
    FinalProjection(#[source] ProjectionError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("all {} samples failed; first: {}", .0.len(), .0.first().map(|f| f.1.as_str()).unwrap_or(""))]
    AllFailed(Vec<(usize, String)>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Pcfm,
    Eci,
    Vanilla,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Pcfm => "pcfm",
            SamplerKind::Eci => "eci",
            SamplerKind::Vanilla => "vanilla",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pcfm" => Ok(SamplerKind::Pcfm),
            "eci" => Ok(SamplerKind::Eci),
            "vanilla" => Ok(SamplerKind::Vanilla),
            other => Err(format!("unknown sampler `{other}` (expected pcfm, eci or vanilla)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_steps: usize,
    /// Euler substeps used when shooting to the endpoint.
    pub n_shoot: usize,
    pub penalty: PenaltyConfig,
    pub final_projection: ProjectionConfig,
    /// Draw a fresh prior sample as the interpolation anchor at every step.
    pub randomize_u0_per_batch: bool,
    pub seed: RngSeed,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_steps: 100,
            n_shoot: 1,
            penalty: PenaltyConfig::disabled(),
            final_projection: ProjectionConfig::default(),
            randomize_u0_per_batch: false,
            seed: RngSeed(0),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.n_steps == 0 || self.n_shoot == 0 {
            return Err(SamplerError::Config(format!(
                "n_steps and n_shoot must be at least 1 (got {}, {})",
                self.n_steps, self.n_shoot
            )));
        }
        self.penalty.validate().map_err(|e| SamplerError::Config(e.to_string()))?;
        self.final_projection
            .validate()
            .map_err(|e| SamplerError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Final state of one sampler run.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub state: Vec<f64>,
    /// `‖h‖₂` of the returned state (0 for unconstrained sampling).
    pub residual_norm: f64,
    /// False when the final projection ran out of iterations above tolerance.
    pub converged: bool,
    pub final_projection_iterations: usize,
}

/// Source of fresh interpolation anchors for the stochastic variant.
pub struct AnchorRedraw<'a> {
    pub prior: &'a PriorSpec,
    pub grid: &'a Grid1D,
    pub rng: &'a mut ChaCha8Rng,
}

fn run<C: Constraint + ?Sized>(
    field: &dyn VelocityField,
    set: &C,
    u0: &[f64],
    cfg: &SamplerConfig,
    penalty: &PenaltyConfig,
    mut redraw: Option<AnchorRedraw<'_>>,
    observer: &mut dyn FnMut(usize, &[f64]),
) -> Result<SampleOutcome, SamplerError> {
    cfg.validate()?;
    set.check_state(u0)?;
    if field.dim() != u0.len() {
        return Err(FlowError::Dim {
            expected: field.dim(),
            actual: u0.len(),
        }
        .into());
    }
    let n = cfg.n_steps;
    let mut anchor = u0.to_vec();
    let mut u = u0.to_vec();
    for k in 0..n {
        let tau = k as f64 / n as f64;
        let tau_prime = (k + 1) as f64 / n as f64;
        let at_step = |source: ProjectionError| SamplerError::Projection { step: k, source };
        let u1 = shoot_to_one(field, &u, tau, cfg.n_shoot).map_err(|e| at_step(e.into()))?;
        let u_proj = gauss_newton_step_with(&u1, set, cfg.final_projection.jitter_scale).map_err(at_step)?;
        if let Some(r) = redraw.as_mut() {
            sample_prior_into(r.prior, r.grid, r.rng, &mut anchor);
        }
        let u_hat = ot_reverse(&u_proj, &anchor, tau_prime)?;
        u = relaxed_correction(&u_hat, field, tau_prime, set, penalty).map_err(at_step)?;
        observer(k, &u);
    }
    let mut norm = norm2(&set.eval_residual(&u));
    let mut converged = norm < cfg.final_projection.tol;
    let mut iterations = 0;
    if !converged {
        let (state, report) = project_to_manifold(&u, set, &cfg.final_projection).map_err(SamplerError::FinalProjection)?;
        u = state;
        norm = report.residual_norm;
        converged = report.converged;
        iterations = report.iterations;
    }
    Ok(SampleOutcome {
        state: u,
        residual_norm: norm,
        converged,
        final_projection_iterations: iterations,
    })
}

pub fn pcfm_sample<C: Constraint + ?Sized>(
    field: &dyn VelocityField,
    set: &C,
    u0: &[f64],
    cfg: &SamplerConfig,
) -> Result<SampleOutcome, SamplerError> {
    run(field, set, u0, cfg, &cfg.penalty, None, &mut |_, _| {})
}

/// [`pcfm_sample`] that also reports the state after every flow step.
pub fn pcfm_sample_traced<C: Constraint + ?Sized>(
    field: &dyn VelocityField,
    set: &C,
    u0: &[f64],
    cfg: &SamplerConfig,
    observer: &mut dyn FnMut(usize, &[f64]),
) -> Result<SampleOutcome, SamplerError> {
    run(field, set, u0, cfg, &cfg.penalty, None, observer)
}

/// [`pcfm_sample`] with the interpolation anchor redrawn from the prior each step.
pub fn pcfm_sample_stochastic<C: Constraint + ?Sized>(
    field: &dyn VelocityField,
    set: &C,
    u0: &[f64],
    cfg: &SamplerConfig,
    redraw: AnchorRedraw<'_>,
) -> Result<SampleOutcome, SamplerError> {
    run(field, set, u0, cfg, &cfg.penalty, Some(redraw), &mut |_, _| {})
}

fn require_linear(set: &ConstraintSet) -> Result<(), SamplerError> {
    if let Some(k) = set.kinds().iter().find(|k| !k.is_linear()) {
        return Err(SamplerError::Config(format!(
            "ECI needs linear constraints; `{}` is nonlinear",
            k.name()
        )));
    }
    Ok(())
}

/// PCFM with the penalty switched off, restricted to linear constraint sets.
pub fn eci_sample(
    field: &dyn VelocityField,
    set: &ConstraintSet,
    u0: &[f64],
    cfg: &SamplerConfig,
) -> Result<SampleOutcome, SamplerError> {
    require_linear(set)?;
    run(field, set, u0, cfg, &PenaltyConfig::disabled(), None, &mut |_, _| {})
}

/// Plain Euler integration from 0 to 1.
pub fn vanilla_sample(field: &dyn VelocityField, u0: &[f64], n_steps: usize) -> Result<Vec<f64>, SamplerError> {
    Ok(ode_solve_euler(field, u0, 0.0, 1.0, n_steps)?)
}

/// Batched sampling result; samples are ordered by their index.
#[derive(Clone, Debug)]
pub struct BatchOutcome {
    /// Successful samples only.
    pub batch: SampleBatch,
    /// Index of each successful sample in the requested batch.
    pub indices: Vec<usize>,
    pub residual_norms: Vec<f64>,
    pub converged: Vec<bool>,
    pub failures: Vec<(usize, String)>,
}

impl BatchOutcome {
    pub fn all_converged(&self) -> bool {
        self.failures.is_empty() && self.converged.iter().all(|&c| c)
    }
}

/// Runs `count` samples, sample `i` drawing its prior from stream `(seed, i)`.
pub fn sample_batch(
    kind: SamplerKind,
    field: &dyn VelocityField,
    set: &ConstraintSet,
    prior: &PriorSpec,
    count: usize,
    cfg: &SamplerConfig,
) -> Result<BatchOutcome, SamplerError> {
    if count == 0 {
        return Err(SamplerError::Config("count must be at least 1".into()));
    }
    cfg.validate()?;
    prior.validate().map_err(SamplerError::Config)?;
    if kind == SamplerKind::Eci {
        require_linear(set)?;
    }
    let grid = *set.grid();
    let results: Vec<Result<SampleOutcome, SamplerError>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = cfg.seed.stream(i as u64);
            let mut u0 = vec![0.0; grid.len()];
            sample_prior_into(prior, &grid, &mut rng, &mut u0);
            match kind {
                SamplerKind::Vanilla => {
                    let state = vanilla_sample(field, &u0, cfg.n_steps)?;
                    let residual_norm = norm2(&set.residual(&state)?);
                    Ok(SampleOutcome {
                        state,
                        residual_norm,
                        converged: true,
                        final_projection_iterations: 0,
                    })
                }
                SamplerKind::Pcfm | SamplerKind::Eci => {
                    let penalty = if kind == SamplerKind::Eci {
                        PenaltyConfig::disabled()
                    } else {
                        cfg.penalty
                    };
                    let redraw = cfg.randomize_u0_per_batch.then_some(AnchorRedraw {
                        prior,
                        grid: &grid,
                        rng: &mut rng,
                    });
                    run(field, set, &u0, cfg, &penalty, redraw, &mut |_, _| {})
                }
            }
        })
        .collect();

    let mut states = Vec::new();
    let mut out = BatchOutcome {
        batch: SampleBatch::new(grid, vec![0.0; grid.len()])?,
        indices: Vec::new(),
        residual_norms: Vec::new(),
        converged: Vec::new(),
        failures: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => {
                out.indices.push(i);
                out.residual_norms.push(s.residual_norm);
                out.converged.push(s.converged);
                states.push(s.state);
            }
            Err(e) => out.failures.push((i, e.to_string())),
        }
    }
    if states.is_empty() {
        return Err(SamplerError::AllFailed(out.failures));
    }
    out.batch = SampleBatch::from_states(grid, &states)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{ConstraintKind, FnConstraint};
    use crate::flow::{AnalyticOt, MlpField};
    use crate::linalg::{norm_inf, DenseMatrix};
    use crate::projection::gauss_newton_step;

    fn grid() -> Grid1D {
        Grid1D::inclusive(6, 5, (0.0, 1.0), (0.0, 1.0)).unwrap()
    }

    fn heat_like_set(g: Grid1D, target: Vec<f64>) -> ConstraintSet {
        ConstraintSet::new(
            g,
            vec![ConstraintKind::DirichletIc { target }, ConstraintKind::LinearMassConservation],
        )
        .unwrap()
    }

    fn cfg(n: usize, lambda: f64) -> SamplerConfig {
        SamplerConfig {
            n_steps: n,
            penalty: PenaltyConfig {
                lambda,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn feasible_endpoint_is_fixed_point() {
        let g = grid();
        let target: Vec<f64> = (0..g.nx).map(|i| (i as f64).sin()).collect();
        let set = heat_like_set(g, target.clone());
        // endpoint: each time slice equals the target, so IC and mass hold
        let u1: Vec<f64> = (0..g.len()).map(|k| target[k % g.nx]).collect();
        let u0: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.7).cos()).collect();
        let field = AnalyticOt::new(u0.clone(), u1.clone()).unwrap();
        for lambda in [0.0, 1.0] {
            let out = pcfm_sample(&field, &set, &u0, &cfg(7, lambda)).unwrap();
            assert!(out.state.iter().zip(&u1).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }

    #[test]
    fn single_step_unrolls_to_one_projection() {
        let g = grid();
        let set = heat_like_set(g, vec![0.3; g.nx]);
        let field = MlpField::new(g.len(), &[8], 5).unwrap();
        let u0: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.3).sin()).collect();
        let out = pcfm_sample(&field, &set, &u0, &cfg(1, 0.0)).unwrap();
        let expect = gauss_newton_step(&shoot_to_one(&field, &u0, 0.0, 1).unwrap(), &set).unwrap();
        assert_eq!(out.state, expect);
        assert_eq!(out.final_projection_iterations, 0);
    }

    #[test]
    fn trained_like_field_hits_ic() {
        let g = grid();
        let target: Vec<f64> = (0..g.nx).map(|i| 0.2 * i as f64).collect();
        let set = heat_like_set(g, target.clone());
        let field = MlpField::new(g.len(), &[12], 2).unwrap();
        let u0 = vec![0.1; g.len()];
        let out = pcfm_sample(&field, &set, &u0, &cfg(10, 1.0)).unwrap();
        assert!(out.converged);
        for (a, b) in out.state[..g.nx].iter().zip(&target) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn eci_matches_pcfm_without_penalty_and_rejects_nonlinear() {
        let g = grid();
        let set = heat_like_set(g, vec![0.5; g.nx]);
        let field = MlpField::new(g.len(), &[8], 1).unwrap();
        let u0: Vec<f64> = (0..g.len()).map(|k| (k as f64).cos()).collect();
        let a = pcfm_sample(&field, &set, &u0, &cfg(5, 0.0)).unwrap();
        let b = eci_sample(&field, &set, &u0, &cfg(5, 3.0)).unwrap();
        assert_eq!(a, b);
        let nonlinear = ConstraintSet::new(g, vec![ConstraintKind::BurgersMassConservation { left_state: None }]).unwrap();
        assert!(matches!(
            eci_sample(&field, &nonlinear, &u0, &cfg(5, 0.0)),
            Err(SamplerError::Config(_))
        ));
        let prior = PriorSpec::white();
        assert!(matches!(
            sample_batch(SamplerKind::Eci, &field, &nonlinear, &prior, 2, &cfg(5, 0.0)),
            Err(SamplerError::Config(_))
        ));
    }

    #[test]
    fn vanilla_is_euler() {
        let g = grid();
        let field = MlpField::new(g.len(), &[8], 3).unwrap();
        let u0 = vec![0.2; g.len()];
        assert_eq!(
            vanilla_sample(&field, &u0, 9).unwrap(),
            ode_solve_euler(&field, &u0, 0.0, 1.0, 9).unwrap()
        );
        let ot = AnalyticOt::new(u0.clone(), vec![1.5; g.len()]).unwrap();
        assert!(
            norm_inf(
                &vanilla_sample(&ot, &u0, 4)
                    .unwrap()
                    .iter()
                    .map(|v| v - 1.5)
                    .collect::<Vec<_>>()
            ) < 1e-14
        );
    }

    #[test]
    fn trajectory_stays_on_final_segment() {
        let g = grid();
        let set = heat_like_set(g, vec![0.1; g.nx]);
        let u0: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 1.3).sin()).collect();
        let u1: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.4).cos()).collect();
        let field = AnalyticOt::new(u0.clone(), u1).unwrap();
        let mut states = Vec::new();
        let out = pcfm_sample_traced(&field, &set, &u0, &cfg(8, 0.0), &mut |k, u| states.push((k, u.to_vec()))).unwrap();
        for (k, s) in states {
            let tau = (k + 1) as f64 / 8.0;
            for ((a, b), c) in s.iter().zip(&u0).zip(&out.state) {
                assert!((a - (b + tau * (c - b))).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn batch_is_deterministic_and_single_matches_scalar() {
        let g = grid();
        let set = heat_like_set(g, vec![0.4; g.nx]);
        let field = MlpField::new(g.len(), &[8], 4).unwrap();
        let prior = PriorSpec::white();
        let c = cfg(6, 1.0);
        let a = sample_batch(SamplerKind::Pcfm, &field, &set, &prior, 5, &c).unwrap();
        let b = sample_batch(SamplerKind::Pcfm, &field, &set, &prior, 5, &c).unwrap();
        assert_eq!(a.batch, b.batch);
        assert!(a.all_converged());
        let one = sample_batch(SamplerKind::Pcfm, &field, &set, &prior, 1, &c).unwrap();
        let mut u0 = vec![0.0; g.len()];
        sample_prior_into(&prior, &g, &mut c.seed.stream(0), &mut u0);
        assert_eq!(
            one.batch.sample(0),
            pcfm_sample(&field, &set, &u0, &c).unwrap().state.as_slice()
        );
        let stochastic = SamplerConfig {
            randomize_u0_per_batch: true,
            ..c
        };
        let s = sample_batch(SamplerKind::Pcfm, &field, &set, &prior, 3, &stochastic).unwrap();
        assert!(s.residual_norms.iter().all(|&r| r < 1e-10));
        assert_ne!(s.batch.sample(0), a.batch.sample(0));
    }

    #[test]
    fn rank_deficient_target_sets_flag() {
        // h(u) = (u0^2 + u1^2 - 1, u0^2 + u1^2 - 4): two incompatible circles
        let set = FnConstraint::new(
            2,
            2,
            |u: &[f64]| {
                let r = u[0] * u[0] + u[1] * u[1];
                vec![r - 1.0, r - 4.0]
            },
            |u: &[f64]| DenseMatrix::from_rows(&[vec![2.0 * u[0], 2.0 * u[1]], vec![2.0 * u[0], 2.0 * u[1]]]),
        );
        let field = AnalyticOt::new(vec![0.3, 0.2], vec![1.0, 1.0]).unwrap();
        let c = SamplerConfig {
            final_projection: ProjectionConfig {
                max_iter: 10,
                jitter_scale: 1e-6,
                ..Default::default()
            },
            ..cfg(4, 0.0)
        };
        let out = pcfm_sample(&field, &set, &[0.3, 0.2], &c).unwrap();
        assert!(!out.converged);
        assert!(out.residual_norm > 1.0);
    }
}
