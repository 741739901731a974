//! Constraint enforcement: Gauss-Newton projection steps, the Schur
//! complement solve behind them, and the relaxed penalty correction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{Constraint, ConstraintError};
use crate::flow::{FlowError, VelocityField};
use crate::linalg::{norm2, Cholesky, DenseMatrix, SparseRows};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("singular constraint system: pivot {pivot:e} at row {index} with jitter {jitter:e}")]
    SingularConstraint { index: usize, pivot: f64, jitter: f64 },
    #[error("state became non-finite at projection iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("penalty objective became non-finite at inner step {step}")]
    PenaltyNonFinite { step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub jitter_scale: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            tol: 1e-10,
            max_iter: 50,
            jitter_scale: 1e-12,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.jitter_scale >= 0.0) {
            return Err(ProjectionError::Config(format!(
                "need tol > 0, max_iter >= 1, jitter_scale >= 0 (got {}, {}, {})",
                self.tol, self.max_iter, self.jitter_scale
            )));
        }
        Ok(())
    }
}

/// How the velocity enters the penalty term `‖h(u + γ v)‖²`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyVelocity {
    /// `v` evaluated once at `û` and held fixed.
    #[default]
    Frozen,
    /// `v(u)` re-evaluated at every inner step, differentiated through the field.
    Variable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub steps: usize,
    pub lr: f64,
    pub velocity: PenaltyVelocity,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            lambda: 1.0,
            steps: 20,
            lr: 0.01,
            velocity: PenaltyVelocity::Frozen,
        }
    }
}

impl PenaltyConfig {
    pub fn disabled() -> Self {
        PenaltyConfig {
            lambda: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ProjectionError::Config(format!(
                "need lambda >= 0 and lr > 0 (got {}, {})",
                self.lambda, self.lr
            )));
        }
        Ok(())
    }
}

/// Solves `(J Jᵀ + μ I) λ = r` with `μ = jitter_scale * trace(J Jᵀ) / m`.
pub fn solve_schur(j: &DenseMatrix, r: &[f64], jitter_scale: f64) -> Result<Vec<f64>, ProjectionError> {
    assert_eq!(j.rows(), r.len(), "Schur right-hand side has wrong length");
    solve_gram(j.gram(), r, jitter_scale)
}

/// [`solve_schur`] for an already-formed Gram matrix. The factorization is
/// retried with ten times the jitter, at most three times.
pub fn solve_gram(mut gram: DenseMatrix, r: &[f64], jitter_scale: f64) -> Result<Vec<f64>, ProjectionError> {
    let m = gram.rows();
    let trace: f64 = (0..m).map(|i| gram.get(i, i)).sum();
    let mut mu = jitter_scale * trace / m as f64;
    let base: Vec<f64> = (0..m).map(|i| gram.get(i, i)).collect();
    let mut attempt = 0;
    loop {
        for (i, b) in base.iter().enumerate() {
            gram.set(i, i, b + mu);
        }
        match Cholesky::factor(&gram) {
            Ok(chol) => return Ok(chol.solve(r)),
            Err(p) if attempt >= 3 => {
                return Err(ProjectionError::SingularConstraint {
                    index: p.index,
                    pivot: p.value,
                    jitter: mu,
                })
            }
            Err(_) => {
                attempt += 1;
                mu *= 10.0;
            }
        }
    }
}

fn step_with(u: &[f64], h: &[f64], jac: &SparseRows, jitter_scale: f64) -> Result<Vec<f64>, ProjectionError> {
    let lambda = solve_gram(jac.gram(), h, jitter_scale)?;
    let correction = jac.transpose_mul_vec(&lambda);
    Ok(u.iter().zip(&correction).map(|(a, c)| a - c).collect())
}

/// One Gauss-Newton step `u - Jᵀ (J Jᵀ)⁻¹ h(u)` with the default jitter.
pub fn gauss_newton_step<C: Constraint + ?Sized>(u: &[f64], set: &C) -> Result<Vec<f64>, ProjectionError> {
    gauss_newton_step_with(u, set, ProjectionConfig::default().jitter_scale)
}

pub fn gauss_newton_step_with<C: Constraint + ?Sized>(
    u: &[f64],
    set: &C,
    jitter_scale: f64,
) -> Result<Vec<f64>, ProjectionError> {
    set.check_state(u)?;
    let h = set.eval_residual(u);
    if h.iter().all(|&v| v == 0.0) {
        return Ok(u.to_vec());
    }
    let jac = set.eval_step_jacobian(u, &h);
    step_with(u, &h, &jac, jitter_scale)
}

/// Outcome of [`project_to_manifold`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    /// `‖h‖₂` before each iteration and after the last one.
    pub history: Vec<f64>,
}

impl ProjectionReport {
    /// One `{"iter":k,"residual":r}` line per entry of the history.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (k, r) in self.history.iter().enumerate() {
            out.push_str(&serde_json::json!({"iter": k, "residual": r}).to_string());
            out.push('\n');
        }
        out
    }
}

const BACKTRACK_HALVINGS: usize = 30;

/// Iterated Gauss-Newton until `‖h‖₂ < tol` or `max_iter` steps. Running out
/// of iterations is reported through `converged`, not as an error.
pub fn project_to_manifold<C: Constraint + ?Sized>(
    u: &[f64],
    set: &C,
    cfg: &ProjectionConfig,
) -> Result<(Vec<f64>, ProjectionReport), ProjectionError> {
    cfg.validate()?;
    set.check_state(u)?;
    let mut state = u.to_vec();
    let mut h = set.eval_residual(&state);
    let mut norm = norm2(&h);
    let mut history = vec![norm];
    let mut iterations = 0;
    while !(norm < cfg.tol) && iterations < cfg.max_iter {
        let jac = set.eval_step_jacobian(&state, &h);
        let full = step_with(&state, &h, &jac, cfg.jitter_scale)?;
        iterations += 1;
        if full.iter().any(|v| !v.is_finite()) {
            return Err(ProjectionError::NonFinite { iteration: iterations });
        }
        let mut next_h = set.eval_residual(&full);
        let mut next_norm = norm2(&next_h);
        let mut next = full;
        // piecewise-smooth constraints can overshoot a kink; halve the step
        // until the residual drops, keeping the full step whenever it already does
        if !(next_norm < norm) {
            let mut alpha = 1.0;
            for _ in 0..BACKTRACK_HALVINGS {
                alpha *= 0.5;
                let trial: Vec<f64> = state.iter().zip(&next).map(|(a, b)| a + alpha * (b - a)).collect();
                let th = set.eval_residual(&trial);
                let tn = norm2(&th);
                if tn < norm {
                    next = trial;
                    next_h = th;
                    next_norm = tn;
                    break;
                }
            }
        }
        state = next;
        h = next_h;
        norm = next_norm;
        if !norm.is_finite() {
            return Err(ProjectionError::NonFinite { iteration: iterations });
        }
        history.push(norm);
    }
    Ok((
        state,
        ProjectionReport {
            iterations,
            residual_norm: norm,
            converged: norm < cfg.tol,
            history,
        },
    ))
}

/// Gradient descent on `‖u - û‖² + λ ‖h(u + γ v)‖²` with `γ = 1 - τ'`.
pub fn relaxed_correction<C: Constraint + ?Sized>(
    u_hat: &[f64],
    field: &dyn VelocityField,
    tau_prime: f64,
    set: &C,
    cfg: &PenaltyConfig,
) -> Result<Vec<f64>, ProjectionError> {
    if cfg.lambda == 0.0 || cfg.steps == 0 {
        return Ok(u_hat.to_vec());
    }
    cfg.validate()?;
    set.check_state(u_hat)?;
    let gamma = 1.0 - tau_prime;
    let frozen = match cfg.velocity {
        PenaltyVelocity::Frozen => Some(field.eval(u_hat, tau_prime)?),
        PenaltyVelocity::Variable => None,
    };
    let mut u = u_hat.to_vec();
    for step in 0..cfg.steps {
        let v = match &frozen {
            Some(v) => v.clone(),
            None => field.eval(&u, tau_prime)?,
        };
        let z: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + gamma * b).collect();
        if z.iter().any(|x| !x.is_finite()) {
            return Err(ProjectionError::PenaltyNonFinite { step });
        }
        let h = set.eval_residual(&z);
        let objective: f64 =
            u.iter().zip(u_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + cfg.lambda * h.iter().map(|x| x * x).sum::<f64>();
        if !objective.is_finite() {
            return Err(ProjectionError::PenaltyNonFinite { step });
        }
        let jac = set.eval_jacobian(&z);
        // w = Jᵀ h, chained through z(u) in variable mode
        let mut w = jac.transpose_mul_vec(&h);
        if frozen.is_none() && gamma != 0.0 {
            let back = field.vjp(&u, tau_prime, &w)?;
            for (wi, bi) in w.iter_mut().zip(&back) {
                *wi += gamma * bi;
            }
        }
        for ((ui, uh), wi) in u.iter_mut().zip(u_hat).zip(&w) {
            let grad = 2.0 * (*ui - uh) + 2.0 * cfg.lambda * wi;
            *ui -= cfg.lr * grad;
        }
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(ProjectionError::PenaltyNonFinite { step: cfg.steps });
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{ConstraintKind, ConstraintSet, FnConstraint};
    use crate::fields::Grid1D;
    use crate::flow::AnalyticOt;
    use crate::linalg::{dot, norm_inf};

    #[test]
    fn projection_backtracks_past_overshoot() {
        // undamped Newton on atan diverges from x = 2
        let set = FnConstraint::new(
            1,
            1,
            |u| vec![u[0].atan()],
            |u| DenseMatrix::from_rows(&[vec![1.0 / (1.0 + u[0] * u[0])]]),
        );
        let cfg = ProjectionConfig {
            jitter_scale: 0.0,
            ..Default::default()
        };
        let (u, report) = project_to_manifold(&[2.0], &set, &cfg).unwrap();
        assert!(report.converged, "{report:?}");
        assert!(u[0].abs() < 1e-10);
        assert!(report.history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn schur_identity_and_scalar() {
        let eye = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(solve_schur(&eye, &[3.0, 4.0], 0.0).unwrap(), vec![3.0, 4.0]);
        let row = DenseMatrix::from_rows(&[vec![1.0, 1.0]]);
        assert!((solve_schur(&row, &[2.0], 0.0).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn schur_duplicate_rows_need_jitter() {
        let dup = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        match solve_schur(&dup, &[1.0, 1.0], 0.0) {
            Err(ProjectionError::SingularConstraint { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected singular error, got {other:?}"),
        }
        let lam = solve_schur(&dup, &[1.0, 1.0], 1e-12).unwrap();
        assert!(lam.iter().all(|v| v.is_finite()));
        // the resulting correction still solves the consistent system
        let corr = dup.transpose_mul_vec(&lam);
        assert!((corr[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn projection_report_jsonl() {
        let r = ProjectionReport {
            iterations: 1,
            residual_norm: 0.0,
            converged: true,
            history: vec![2.0, 0.0],
        };
        assert_eq!(r.to_jsonl(), "{\"iter\":0,\"residual\":2.0}\n{\"iter\":1,\"residual\":0.0}\n");
    }

    fn circle() -> FnConstraint {
        FnConstraint::new(
            2,
            1,
            |u| vec![u[0] * u[0] + u[1] * u[1] - 1.0],
            |u| DenseMatrix::from_rows(&[vec![2.0 * u[0], 2.0 * u[1]]]),
        )
    }

    #[test]
    fn line_projection_is_closed_form() {
        let line = FnConstraint::affine(DenseMatrix::from_rows(&[vec![1.0, 1.0]]), vec![0.0]);
        // the default jitter leaves a relative shortfall of order 1e-12
        let p = gauss_newton_step(&[1.0, 1.0], &line).unwrap();
        assert!(norm_inf(&p) < 1e-11);
        assert!(norm_inf(&gauss_newton_step_with(&[1.0, 1.0], &line, 0.0).unwrap()) < 1e-15);
    }

    #[test]
    fn circle_single_step_and_full_projection() {
        let c = circle();
        assert_eq!(gauss_newton_step_with(&[2.0, 0.0], &c, 0.0).unwrap(), vec![1.25, 0.0]);
        let cfg = ProjectionConfig {
            tol: 1e-12,
            ..Default::default()
        };
        let (p, report) = project_to_manifold(&[2.0, 0.0], &c, &cfg).unwrap();
        assert!(report.converged && report.iterations <= 6);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-15);
        // a second projection is a no-op within tolerance
        let (q, _) = project_to_manifold(&p, &c, &cfg).unwrap();
        assert!(norm_inf(&[q[0] - p[0], q[1] - p[1]]) < cfg.tol);
    }

    fn tiny_grid() -> Grid1D {
        Grid1D::inclusive(4, 3, (0.0, 1.0), (0.0, 1.0)).unwrap()
    }

    #[test]
    fn feasible_state_is_unchanged() {
        let g = tiny_grid();
        let set = ConstraintSet::new(g, vec![ConstraintKind::LinearMassConservation]).unwrap();
        let u = vec![0.25; g.len()];
        assert_eq!(gauss_newton_step(&u, &set).unwrap(), u);
    }

    #[test]
    fn affine_projection_needs_one_iteration() {
        let g = tiny_grid();
        let set = ConstraintSet::new(
            g,
            vec![
                ConstraintKind::DirichletIc {
                    target: vec![1.0, 2.0, 3.0, 4.0],
                },
                ConstraintKind::LinearMassConservation,
            ],
        )
        .unwrap();
        let u: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.7).sin()).collect();
        let (p, report) = project_to_manifold(&u, &set, &ProjectionConfig::default()).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
        assert!(norm_inf(&set.residual(&p).unwrap()) < 1e-10);
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let g = tiny_grid();
        let set = ConstraintSet::new(g, vec![ConstraintKind::TotalVariationDecay { gamma: 0.5 }]).unwrap();
        // TV is piecewise linear; a far start with one iteration cannot settle
        let u: Vec<f64> = (0..g.len()).map(|k| if k % 2 == 0 { 5.0 } else { -5.0 }).collect();
        let cfg = ProjectionConfig {
            max_iter: 1,
            tol: 1e-14,
            ..Default::default()
        };
        let set2 = ConstraintSet::new(
            g,
            vec![ConstraintKind::RdMassBalance {
                rho: 50.0,
                nu: 0.0,
                g_left: 0.0,
                g_right: 0.0,
            }],
        )
        .unwrap();
        let (_, r2) = project_to_manifold(&u, &set2, &cfg).unwrap();
        assert!(!r2.converged);
        assert_eq!(r2.iterations, 1);
        let (_, r1) = project_to_manifold(&u, &set, &cfg).unwrap();
        assert_eq!(r1.iterations, 1);
    }

    #[test]
    fn penalty_disabled_is_identity() {
        let g = tiny_grid();
        let set = ConstraintSet::new(g, vec![ConstraintKind::LinearMassConservation]).unwrap();
        let u: Vec<f64> = (0..g.len()).map(|k| k as f64).collect();
        let field = AnalyticOt::new(vec![0.0; g.len()], vec![1.0; g.len()]).unwrap();
        let out = relaxed_correction(&u, &field, 0.3, &set, &PenaltyConfig::disabled()).unwrap();
        assert_eq!(out, u);
        let zero_steps = PenaltyConfig {
            steps: 0,
            ..Default::default()
        };
        assert_eq!(relaxed_correction(&u, &field, 0.3, &set, &zero_steps).unwrap(), u);
    }

    #[test]
    fn penalty_fixed_point_when_extrapolation_feasible() {
        let g = tiny_grid();
        let set = ConstraintSet::new(g, vec![ConstraintKind::LinearMassConservation]).unwrap();
        // constant velocity keeps mass equal across slices
        let field = AnalyticOt::new(vec![0.0; g.len()], vec![0.5; g.len()]).unwrap();
        let u = vec![0.2; g.len()];
        let out = relaxed_correction(&u, &field, 0.4, &set, &PenaltyConfig::default()).unwrap();
        assert!(out.iter().zip(&u).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn penalty_converges_to_tikhonov_blend() {
        // γ = 0, affine h(u) = J u - b: minimizer solves (I + λ JᵀJ) u = û + λ Jᵀ b
        let g = tiny_grid();
        let target = vec![0.5, -0.5, 1.0, 0.0];
        let set = ConstraintSet::new(
            g,
            vec![
                ConstraintKind::DirichletIc { target: target.clone() },
                ConstraintKind::LinearMassConservation,
            ],
        )
        .unwrap();
        let n = g.len();
        let u_hat: Vec<f64> = (0..n).map(|k| (k as f64 * 1.3).cos()).collect();
        let field = AnalyticOt::new(vec![0.0; n], vec![0.0; n]).unwrap();
        let cfg = PenaltyConfig {
            lambda: 2.0,
            steps: 500,
            lr: 0.05,
            velocity: PenaltyVelocity::Frozen,
        };
        let out = relaxed_correction(&u_hat, &field, 1.0, &set, &cfg).unwrap();

        let j = set.jacobian(&u_hat).unwrap();
        let zero = vec![0.0; n];
        let b: Vec<f64> = set.residual(&zero).unwrap().iter().map(|v| -v).collect();
        let mut a = DenseMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                let col_dot: f64 = (0..j.rows()).map(|k| j.get(k, r) * j.get(k, c)).sum();
                a.set(r, c, cfg.lambda * col_dot + if r == c { 1.0 } else { 0.0 });
            }
        }
        let jtb = j.transpose_mul_vec(&b);
        let rhs: Vec<f64> = u_hat.iter().zip(&jtb).map(|(x, y)| x + cfg.lambda * y).collect();
        let exact = Cholesky::factor(&a).unwrap().solve(&rhs);
        for (x, y) in out.iter().zip(&exact) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
        assert!(dot(&out, &out).is_finite());
    }
}
