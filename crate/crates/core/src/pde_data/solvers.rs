//! Ground-truth solvers for the three 1-D benchmark problems.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::PdeError;
use crate::constraints::godunov_face_fluxes;
use crate::fields::{Grid1D, SolutionField};

/// Heat initial profile `sin(x + φ)`.
pub fn heat_ic(phi: f64, x: f64) -> f64 {
    (x + phi).sin()
}

/// `u(x, t) = exp(-α t) sin(x + φ)`, exact for `u_t = α u_xx` on a 2π-periodic domain.
pub fn heat_analytic(alpha: f64, phi: f64, grid: &Grid1D) -> SolutionField {
    SolutionField::from_fn(*grid, |x, t| (-alpha * t).exp() * heat_ic(phi, x)).expect("analytic heat values are finite")
}

/// Smoothed step `1 / (1 + exp((x - p_loc) / ε))`.
pub fn burgers_ic(p_loc: f64, eps: f64, x: f64) -> f64 {
    1.0 / (1.0 + ((x - p_loc) / eps).exp())
}

/// Output of [`burgers_godunov_run`] with the bookkeeping needed to audit
/// conservation.
#[derive(Clone, Debug)]
pub struct BurgersRun {
    pub field: SolutionField,
    /// Sub-steps taken inside each output interval.
    pub substeps: Vec<usize>,
    /// `Σ Δt_sub (F_right - F_left)` accumulated over each output interval.
    pub boundary_flux: Vec<f64>,
}

/// Inviscid Burgers by first-order Godunov finite volumes. Every grid node is
/// a cell; the left ghost holds `u_bc`, the right ghost copies the last cell.
pub fn burgers_godunov(p_loc: f64, eps: f64, u_bc: f64, grid: &Grid1D, cfl: f64) -> Result<SolutionField, PdeError> {
    let ic: Vec<f64> = (0..grid.nx).map(|i| burgers_ic(p_loc, eps, grid.x(i))).collect();
    Ok(burgers_godunov_run(&ic, u_bc, grid, cfl)?.field)
}

pub fn burgers_godunov_run(ic: &[f64], u_bc: f64, grid: &Grid1D, cfl: f64) -> Result<BurgersRun, PdeError> {
    let nx = grid.nx;
    if ic.len() != nx {
        return Err(PdeError::InvalidSpec(format!(
            "initial profile has {} points, grid has {nx}",
            ic.len()
        )));
    }
    if !(cfl > 0.0 && cfl < 1.0) {
        return Err(PdeError::InvalidSpec(format!("cfl must lie in (0, 1), got {cfl}")));
    }
    let dx = grid.dx();
    let dt_out = grid.dt();
    let mut values = Vec::with_capacity(grid.len());
    values.extend_from_slice(ic);
    let mut u = ic.to_vec();
    let mut flux = vec![0.0; nx + 1];
    let mut substeps = Vec::with_capacity(grid.nt - 1);
    let mut boundary_flux = Vec::with_capacity(grid.nt - 1);
    for j in 1..grid.nt {
        let mut elapsed = 0.0;
        let mut count = 0;
        let mut net = 0.0;
        while elapsed < dt_out {
            let speed = u.iter().fold(u_bc.abs(), |m, v| m.max(v.abs())).max(1e-12);
            let mut dt = cfl * dx / speed;
            // land exactly on the output time
            if elapsed + dt >= dt_out * (1.0 - 1e-12) {
                dt = dt_out - elapsed;
            }
            godunov_face_fluxes(&u, Some(u_bc), &mut flux);
            let c = dt / dx;
            for i in 0..nx {
                u[i] -= c * (flux[i + 1] - flux[i]);
            }
            net += dt * (flux[nx] - flux[0]);
            elapsed = if dt == dt_out - elapsed { dt_out } else { elapsed + dt };
            count += 1;
            if u.iter().any(|v| !v.is_finite()) {
                return Err(PdeError::BlowUp { time_index: j });
            }
        }
        values.extend_from_slice(&u);
        substeps.push(count);
        boundary_flux.push(net);
    }
    Ok(BurgersRun {
        field: SolutionField::new(*grid, values)?,
        substeps,
        boundary_flux,
    })
}

/// Initial profile family for the reaction problem: a sinusoid plus a
/// Gaussian bump on a constant base.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdIcParams {
    pub base: f64,
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
    pub bump_amp: f64,
    pub bump_center: f64,
    pub bump_width: f64,
}

impl RdIcParams {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.bump_center) / self.bump_width;
        self.base + self.amp * (2.0 * PI * self.freq * x + self.phase).sin() + self.bump_amp * (-0.5 * z * z).exp()
    }

    pub fn profile(&self, grid: &Grid1D) -> Vec<f64> {
        (0..grid.nx).map(|i| self.eval(grid.x(i))).collect()
    }
}

/// Semi-implicit solver for `u_t = ρ u (1 - u) - ν u_x` with boundary
/// fluxes: upwind transport, the reaction's quadratic sink taken implicitly
/// (linearized), `g_L` injected through the left face and `g_R` drawn off at
/// the right face. Sub-steps keep `ν Δt / dx <= cfl`.
pub fn rd_solve(
    ic: &[f64],
    g_left: f64,
    g_right: f64,
    rho: f64,
    nu: f64,
    grid: &Grid1D,
    cfl: f64,
) -> Result<SolutionField, PdeError> {
    let nx = grid.nx;
    if ic.len() != nx {
        return Err(PdeError::InvalidSpec(format!(
            "initial profile has {} points, grid has {nx}",
            ic.len()
        )));
    }
    if !(cfl > 0.0 && cfl < 1.0) || nu < 0.0 {
        return Err(PdeError::InvalidSpec(format!(
            "need cfl in (0, 1) and nu >= 0, got {cfl}, {nu}"
        )));
    }
    let dx = grid.dx();
    let dt_out = grid.dt();
    let n_sub = if nu > 0.0 {
        (nu * dt_out / (cfl * dx)).ceil().max(1.0) as usize
    } else {
        1
    };
    let dt = dt_out / n_sub as f64;
    let mut u = ic.to_vec();
    let mut values = Vec::with_capacity(grid.len());
    values.extend_from_slice(ic);
    let mut face = vec![0.0; nx + 1];
    for j in 1..grid.nt {
        for _ in 0..n_sub {
            face[0] = nu * u[0] + g_left;
            for i in 1..nx {
                face[i] = nu * u[i - 1];
            }
            face[nx] = nu * u[nx - 1] + g_right;
            for i in 0..nx {
                let transport = (face[i] - face[i + 1]) / dx;
                u[i] = (u[i] + dt * rho * u[i] + dt * transport) / (1.0 + dt * rho * u[i]);
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(PdeError::BlowUp { time_index: j });
            }
        }
        values.extend_from_slice(&u);
    }
    Ok(SolutionField::new(*grid, values)?)
}
