use serde::{Deserialize, Serialize};

use super::{ConstraintError, Tag};
use crate::fields::{Grid1D, Quadrature};
use crate::linalg::SparseRowsBuilder;

/// Godunov numerical flux for `f(u) = u²/2`, in the three-case form
/// used by the collocation residual.
///
/// The `uL <= uR` branch is `min(uL²/2, uR²/2)` without a sonic-point
/// correction, so `(-1, 1)` gives `0.5` rather than the entropy value `0`.
pub fn godunov_flux(ul: f64, ur: f64) -> f64 {
    let (fl, fr) = (0.5 * ul * ul, 0.5 * ur * ur);
    if ul <= ur {
        fl.min(fr)
    } else if 0.5 * (ul + ur) > 0.0 {
        fl
    } else {
        fr
    }
}

/// Partial derivatives `(∂F/∂uL, ∂F/∂uR)` of [`godunov_flux`] on the active
/// branch. Ties resolve to the `min` branch and, inside it, to the left state.
pub fn godunov_flux_grad(ul: f64, ur: f64) -> (f64, f64) {
    if ul <= ur {
        if ul * ul <= ur * ur {
            (ul, 0.0)
        } else {
            (0.0, ur)
        }
    } else if 0.5 * (ul + ur) > 0.0 {
        (ul, 0.0)
    } else {
        (0.0, ur)
    }
}

/// One block of the stacked residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `u(:, 0) - target`
    DirichletIc { target: Vec<f64> },
    /// `u(0, t_j) - value` for every time index.
    DirichletBcLeft { value: f64 },
    /// `u(nx-1, t_j) - u(nx-2, t_j)` for every time index.
    NeumannZeroGradientRight,
    /// `M(t_j) - M(t_0)` for `j >= 1`.
    LinearMassConservation,
    /// `M(t_j) - value` for every time index.
    MassTarget { value: f64 },
    /// Mass budget of `u_t = ρ u (1 - u) - ν u_x` with boundary fluxes.
    RdMassBalance { rho: f64, nu: f64, g_left: f64, g_right: f64 },
    /// Mass budget of inviscid Burgers: `M(t_j) - M(t_0)` plus the
    /// accumulated Godunov boundary fluxes.
    BurgersMassConservation {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        left_state: Option<f64>,
    },
    /// `k` unrolled Godunov updates `u(:, j+1) - G(u(:, j))`, `j < k`.
    GodunovFluxCollocation {
        k: usize,
        dt_sim: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        left_state: Option<f64>,
    },
    /// `TV(u(:, nt-1)) - γ TV(u(:, 0))`
    TotalVariationDecay { gamma: f64 },
}

impl ConstraintKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintKind::DirichletIc { .. } => "dirichlet_ic",
            ConstraintKind::DirichletBcLeft { .. } => "dirichlet_bc_left",
            ConstraintKind::NeumannZeroGradientRight => "neumann_zero_gradient_right",
            ConstraintKind::LinearMassConservation => "linear_mass_conservation",
            ConstraintKind::MassTarget { .. } => "mass_target",
            ConstraintKind::RdMassBalance { .. } => "rd_mass_balance",
            ConstraintKind::BurgersMassConservation { .. } => "burgers_mass_conservation",
            ConstraintKind::GodunovFluxCollocation { .. } => "godunov_flux_collocation",
            ConstraintKind::TotalVariationDecay { .. } => "total_variation_decay",
        }
    }

    pub fn tag(&self) -> Tag {
        match self {
            ConstraintKind::DirichletIc { .. } => Tag::Ic,
            ConstraintKind::DirichletBcLeft { .. } | ConstraintKind::NeumannZeroGradientRight => Tag::Bc,
            ConstraintKind::LinearMassConservation
            | ConstraintKind::MassTarget { .. }
            | ConstraintKind::RdMassBalance { .. }
            | ConstraintKind::BurgersMassConservation { .. } => Tag::Cl,
            ConstraintKind::GodunovFluxCollocation { .. } => Tag::Flux,
            ConstraintKind::TotalVariationDecay { .. } => Tag::Tv,
        }
    }

    /// Affine in `u` (constant Jacobian).
    pub fn is_linear(&self) -> bool {
        matches!(
            self,
            ConstraintKind::DirichletIc { .. }
                | ConstraintKind::DirichletBcLeft { .. }
                | ConstraintKind::NeumannZeroGradientRight
                | ConstraintKind::LinearMassConservation
                | ConstraintKind::MassTarget { .. }
        )
    }

    pub fn dim(&self, grid: &Grid1D) -> usize {
        match self {
            ConstraintKind::DirichletIc { .. } => grid.nx,
            ConstraintKind::DirichletBcLeft { .. }
            | ConstraintKind::NeumannZeroGradientRight
            | ConstraintKind::MassTarget { .. } => grid.nt,
            ConstraintKind::LinearMassConservation
            | ConstraintKind::RdMassBalance { .. }
            | ConstraintKind::BurgersMassConservation { .. } => grid.nt - 1,
            ConstraintKind::GodunovFluxCollocation { k, .. } => k * grid.nx,
            ConstraintKind::TotalVariationDecay { .. } => 1,
        }
    }

    pub(crate) fn validate(&self, grid: &Grid1D) -> Result<(), ConstraintError> {
        let bad = |msg: String| Err(ConstraintError::InvalidComponent(format!("{}: {msg}", self.name())));
        let finite = |v: f64| v.is_finite();
        match self {
            ConstraintKind::DirichletIc { target } => {
                if target.len() != grid.nx {
                    return bad(format!("target has {} points, grid has nx={}", target.len(), grid.nx));
                }
                if !target.iter().all(|v| v.is_finite()) {
                    return bad("non-finite target".into());
                }
            }
            ConstraintKind::DirichletBcLeft { value } | ConstraintKind::MassTarget { value } => {
                if !finite(*value) {
                    return bad("non-finite value".into());
                }
            }
            ConstraintKind::RdMassBalance {
                rho,
                nu,
                g_left,
                g_right,
            } => {
                if ![*rho, *nu, *g_left, *g_right].iter().all(|v| v.is_finite()) {
                    return bad("non-finite coefficient".into());
                }
            }
            ConstraintKind::BurgersMassConservation { left_state } => {
                if left_state.is_some_and(|v| !v.is_finite()) {
                    return bad("non-finite left state".into());
                }
            }
            ConstraintKind::GodunovFluxCollocation { k, dt_sim, left_state } => {
                if *k < 1 || *k >= grid.nt {
                    return bad(format!("need 1 <= k < nt, got k={k}, nt={}", grid.nt));
                }
                if !(*dt_sim > 0.0 && dt_sim.is_finite()) {
                    return bad(format!("dt_sim must be positive, got {dt_sim}"));
                }
                if left_state.is_some_and(|v| !v.is_finite()) {
                    return bad("non-finite left state".into());
                }
            }
            ConstraintKind::TotalVariationDecay { gamma } => {
                if !(*gamma > 0.0 && *gamma <= 1.0) {
                    return bad(format!("gamma must lie in (0, 1], got {gamma}"));
                }
            }
            ConstraintKind::NeumannZeroGradientRight | ConstraintKind::LinearMassConservation => {}
        }
        Ok(())
    }

    /// Writes this block's residual into `out` (length `dim`).
    pub(crate) fn residual_into(&self, grid: &Grid1D, quadrature: Quadrature, u: &[f64], out: &mut [f64]) {
        let nx = grid.nx;
        let at = |i: usize, j: usize| u[j * nx + i];
        let slice_sum = |j: usize| u[j * nx..(j + 1) * nx].iter().sum::<f64>();
        match self {
            ConstraintKind::DirichletIc { target } => {
                for (i, r) in out.iter_mut().enumerate() {
                    *r = at(i, 0) - target[i];
                }
            }
            ConstraintKind::DirichletBcLeft { value } => {
                for (j, r) in out.iter_mut().enumerate() {
                    *r = at(0, j) - value;
                }
            }
            ConstraintKind::NeumannZeroGradientRight => {
                for (j, r) in out.iter_mut().enumerate() {
                    *r = at(nx - 1, j) - at(nx - 2, j);
                }
            }
            ConstraintKind::LinearMassConservation => {
                let w = quadrature.weight(grid);
                let m0 = w * slice_sum(0);
                for (r, j) in out.iter_mut().zip(1..) {
                    *r = w * slice_sum(j) - m0;
                }
            }
            ConstraintKind::MassTarget { value } => {
                let w = quadrature.weight(grid);
                for (j, r) in out.iter_mut().enumerate() {
                    *r = w * slice_sum(j) - value;
                }
            }
            ConstraintKind::RdMassBalance {
                rho,
                nu,
                g_left,
                g_right,
            } => {
                let (dx, dt) = (grid.dx(), grid.dt());
                let m0 = dx * slice_sum(0);
                let mut source = 0.0;
                for (r, j) in out.iter_mut().zip(1..) {
                    let l = j - 1;
                    let reaction: f64 = (0..nx).map(|i| at(i, l) * (1.0 - at(i, l + 1))).sum();
                    source += dt * (rho * dx * reaction + nu * (at(0, l) - at(nx - 1, l)));
                    let boundary = j as f64 * dt * (g_left - g_right);
                    *r = dx * slice_sum(j) - (m0 + source + boundary);
                }
            }
            ConstraintKind::BurgersMassConservation { left_state } => {
                let (dx, dt) = (grid.dx(), grid.dt());
                let m0 = dx * slice_sum(0);
                let mut outflow = 0.0;
                for (r, j) in out.iter_mut().zip(1..) {
                    let l = j - 1;
                    let (ul, ur) = (at(0, l), at(nx - 1, l));
                    let inflow = godunov_flux(left_state.unwrap_or(ul), ul);
                    outflow += dt * (godunov_flux(ur, ur) - inflow);
                    *r = dx * slice_sum(j) - m0 + outflow;
                }
            }
            ConstraintKind::GodunovFluxCollocation { k, dt_sim, left_state } => {
                let c = dt_sim / grid.dx();
                let mut flux = vec![0.0; nx + 1];
                for j in 0..*k {
                    let cur = &u[j * nx..(j + 1) * nx];
                    let next = &u[(j + 1) * nx..(j + 2) * nx];
                    godunov_face_fluxes(cur, *left_state, &mut flux);
                    for i in 0..nx {
                        let stepped = cur[i] - c * (flux[i + 1] - flux[i]);
                        out[j * nx + i] = next[i] - stepped;
                    }
                }
            }
            ConstraintKind::TotalVariationDecay { gamma } => {
                let tv = |j: usize| -> f64 { u[j * nx..(j + 1) * nx].windows(2).map(|w| (w[1] - w[0]).abs()).sum() };
                out[0] = tv(grid.nt - 1) - gamma * tv(0);
            }
        }
    }

    /// Appends this block's Jacobian rows to `rows`.
    pub(crate) fn jacobian_into(&self, grid: &Grid1D, quadrature: Quadrature, u: &[f64], rows: &mut SparseRowsBuilder) {
        let (nx, nt) = (grid.nx, grid.nt);
        let flat = |i: usize, j: usize| j * nx + i;
        let at = |i: usize, j: usize| u[j * nx + i];
        match self {
            ConstraintKind::DirichletIc { .. } => {
                for i in 0..nx {
                    rows.add(flat(i, 0), 1.0);
                    rows.finish_row();
                }
            }
            ConstraintKind::DirichletBcLeft { .. } => {
                for j in 0..nt {
                    rows.add(flat(0, j), 1.0);
                    rows.finish_row();
                }
            }
            ConstraintKind::NeumannZeroGradientRight => {
                for j in 0..nt {
                    rows.add(flat(nx - 1, j), 1.0);
                    rows.add(flat(nx - 2, j), -1.0);
                    rows.finish_row();
                }
            }
            ConstraintKind::LinearMassConservation => {
                let w = quadrature.weight(grid);
                for j in 1..nt {
                    for i in 0..nx {
                        rows.add(flat(i, j), w);
                        rows.add(flat(i, 0), -w);
                    }
                    rows.finish_row();
                }
            }
            ConstraintKind::MassTarget { .. } => {
                let w = quadrature.weight(grid);
                for j in 0..nt {
                    for i in 0..nx {
                        rows.add(flat(i, j), w);
                    }
                    rows.finish_row();
                }
            }
            ConstraintKind::RdMassBalance { rho, nu, .. } => {
                let (dx, dt) = (grid.dx(), grid.dt());
                for j in 1..nt {
                    for i in 0..nx {
                        rows.add(flat(i, j), dx);
                        rows.add(flat(i, 0), -dx);
                    }
                    for l in 0..j {
                        for i in 0..nx {
                            rows.add(flat(i, l), -dt * rho * dx * (1.0 - at(i, l + 1)));
                            rows.add(flat(i, l + 1), dt * rho * dx * at(i, l));
                        }
                        rows.add(flat(0, l), -dt * nu);
                        rows.add(flat(nx - 1, l), dt * nu);
                    }
                    rows.finish_row();
                }
            }
            ConstraintKind::BurgersMassConservation { left_state } => {
                let (dx, dt) = (grid.dx(), grid.dt());
                for j in 1..nt {
                    for i in 0..nx {
                        rows.add(flat(i, j), dx);
                        rows.add(flat(i, 0), -dx);
                    }
                    for l in 0..j {
                        let (ul, ur) = (at(0, l), at(nx - 1, l));
                        // d/du of F(ur, ur) = ur²/2
                        rows.add(flat(nx - 1, l), dt * ur);
                        let d_inflow = match left_state {
                            Some(g) => godunov_flux_grad(*g, ul).1,
                            None => ul,
                        };
                        rows.add(flat(0, l), -dt * d_inflow);
                    }
                    rows.finish_row();
                }
            }
            ConstraintKind::GodunovFluxCollocation { k, dt_sim, left_state } => {
                let c = dt_sim / grid.dx();
                for j in 0..*k {
                    let cur = &u[j * nx..(j + 1) * nx];
                    for i in 0..nx {
                        rows.add(flat(i, j + 1), 1.0);
                        rows.add(flat(i, j), -1.0);
                        // + c * (F_{i+1/2} - F_{i-1/2})
                        let (dr_l, dr_r) = if i + 1 < nx {
                            godunov_flux_grad(cur[i], cur[i + 1])
                        } else {
                            (cur[i], 0.0)
                        };
                        rows.add(flat(i, j), c * dr_l);
                        if i + 1 < nx {
                            rows.add(flat(i + 1, j), c * dr_r);
                        }
                        if i > 0 {
                            let (dl_l, dl_r) = godunov_flux_grad(cur[i - 1], cur[i]);
                            rows.add(flat(i - 1, j), -c * dl_l);
                            rows.add(flat(i, j), -c * dl_r);
                        } else {
                            let d = match left_state {
                                Some(g) => godunov_flux_grad(*g, cur[0]).1,
                                None => cur[0],
                            };
                            rows.add(flat(0, j), -c * d);
                        }
                        rows.finish_row();
                    }
                }
            }
            ConstraintKind::TotalVariationDecay { gamma } => {
                for (j, weight) in [(nt - 1, 1.0), (0, -gamma)] {
                    for i in 0..nx {
                        let mut d = 0.0;
                        if i > 0 {
                            d += sign(at(i, j) - at(i - 1, j));
                        }
                        if i + 1 < nx {
                            d -= sign(at(i + 1, j) - at(i, j));
                        }
                        if d != 0.0 {
                            rows.add(flat(i, j), weight * d);
                        }
                    }
                }
                rows.finish_row();
            }
        }
    }
}

/// Face fluxes `F_{i-1/2}` for `i = 0..=nx` of one spatial profile: the left
/// ghost state is `left_state` (or the first cell when absent), the right
/// ghost copies the last cell.
pub(crate) fn godunov_face_fluxes(cells: &[f64], left_state: Option<f64>, flux: &mut [f64]) {
    let nx = cells.len();
    flux[0] = godunov_flux(left_state.unwrap_or(cells[0]), cells[0]);
    for i in 1..nx {
        flux[i] = godunov_flux(cells[i - 1], cells[i]);
    }
    flux[nx] = godunov_flux(cells[nx - 1], cells[nx - 1]);
}

impl ConstraintKind {
    /// Generalized Jacobian rows for a Newton step from `u` with block
    /// residual `h`. Smooth blocks use the exact Jacobian. For variation
    /// decay, a plain subgradient step moves only the edge points of flat
    /// extrema and overshoots the next kink, so the row instead points the
    /// step along the merged-block descent path of [`tv_step_row`].
    pub(crate) fn step_jacobian_into(
        &self,
        grid: &Grid1D,
        quadrature: Quadrature,
        u: &[f64],
        h: &[f64],
        rows: &mut SparseRowsBuilder,
    ) {
        let ConstraintKind::TotalVariationDecay { gamma } = self else {
            return self.jacobian_into(grid, quadrature, u, rows);
        };
        let nx = grid.nx;
        for (j, weight) in [(grid.nt - 1, 1.0), (0, -gamma)] {
            if weight == 0.0 {
                continue;
            }
            let grad = tv_step_row(&u[j * nx..(j + 1) * nx], h[0] / weight);
            for (i, d) in grad.into_iter().enumerate() {
                if d != 0.0 {
                    rows.add(j * nx + i, weight * d);
                }
            }
        }
        rows.finish_row();
    }
}

/// Step row for the variation of `profile` when the step should lower it by
/// `excess`. Blocks are moved down the steepest path, merging each pair of
/// neighbours at the moment they meet, until the variation has dropped by
/// `excess`. The returned row `r` makes a Newton step on `r . δ = -excess`
/// land on the end of that path. Raising the variation never merges
/// neighbours, so the block gradient is returned as is.
pub(crate) fn tv_step_row(profile: &[f64], excess: f64) -> Vec<f64> {
    let n = profile.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let scale = profile.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tie = 1e-12 * (1.0 + scale);
    let mut diffs: Vec<f64> = profile.windows(2).map(|w| w[1] - w[0]).collect();
    // merged[k]: points k and k+1 move together
    let mut merged: Vec<bool> = diffs.iter().map(|d| d.abs() <= tie).collect();
    let first = block_gradient(&diffs, &merged);
    if !(excess > 0.0) {
        return first;
    }
    let mut moved = vec![0.0; n];
    let mut left = excess;
    loop {
        let grad = block_gradient(&diffs, &merged);
        let rate: f64 = grad.iter().map(|g| g * g).sum();
        if rate == 0.0 {
            break;
        }
        // first pair to meet while moving along -grad
        let mut hit: Option<(usize, f64)> = None;
        for k in 0..n - 1 {
            let closing = grad[k + 1] - grad[k];
            if merged[k] || closing * diffs[k] <= 0.0 {
                continue;
            }
            let t = diffs[k] / closing;
            if hit.is_none_or(|(_, best)| t < best) {
                hit = Some((k, t));
            }
        }
        let need = left / rate;
        let t = match hit {
            Some((_, t_hit)) if t_hit < need => t_hit,
            _ => need,
        };
        for (m, g) in moved.iter_mut().zip(&grad) {
            *m -= t * g;
        }
        for k in 0..n - 1 {
            diffs[k] -= t * (grad[k + 1] - grad[k]);
        }
        left -= t * rate;
        match hit {
            Some((k, t_hit)) if t_hit < need => {
                diffs[k] = 0.0;
                merged[k] = true;
            }
            _ => break,
        }
    }
    let sq: f64 = moved.iter().map(|m| m * m).sum();
    if sq == 0.0 {
        return first;
    }
    moved.iter().map(|m| -excess * m / sq).collect()
}

/// Variation gradient when each run of merged neighbours shares one value:
/// the block's net derivative spread evenly over its points.
fn block_gradient(diffs: &[f64], merged: &[bool]) -> Vec<f64> {
    let n = diffs.len() + 1;
    let mut grad = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && merged[end] {
            end += 1;
        }
        let mut net = 0.0;
        if start > 0 {
            net += sign(diffs[start - 1]);
        }
        if end + 1 < n {
            net -= sign(diffs[end]);
        }
        let share = net / (end - start + 1) as f64;
        grad[start..=end].iter_mut().for_each(|g| *g = share);
        start = end + 1;
    }
    grad
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
