//! Ground-truth data for the 1-D benchmarks: heat (closed form), inviscid
//! Burgers (Godunov) and reaction-advection (semi-implicit upwind).

mod solvers;

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use solvers::{burgers_godunov, burgers_godunov_run, burgers_ic, heat_analytic, heat_ic, rd_solve, BurgersRun, RdIcParams};

use crate::fields::io::BatchMeta;
use crate::fields::{FieldError, Grid1D, RngSeed, SampleBatch, SolutionField, Spacing};

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("solver blew up at output time index {time_index}")]
    BlowUp { time_index: usize },
    #[error("invalid problem specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Grid(#[from] FieldError),
    #[error("problem `{0}` is out of scope (supported: heat, burgers, reaction-advection)")]
    OutOfScope(String),
    #[error("every solve failed ({failures} attempts)")]
    EmptyDataset { failures: usize },
}

/// Closed interval a parameter is drawn from uniformly. `lo == hi` pins it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Range { lo: v, hi: v }
    }

    fn check(&self, name: &str) -> Result<(), PdeError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(PdeError::InvalidSpec(format!(
                "range {name} = [{}, {}] is empty or non-finite",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * rng.random::<f64>()
        }
    }
}

/// Ranges for the reaction problem's initial profiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdIcFamily {
    pub base: Range,
    pub amp: Range,
    pub freq: Range,
    pub phase: Range,
    pub bump_amp: Range,
    pub bump_center: Range,
    pub bump_width: Range,
}

impl Default for RdIcFamily {
    fn default() -> Self {
        RdIcFamily {
            base: Range::new(0.2, 0.4),
            amp: Range::new(0.05, 0.15),
            freq: Range::new(1.0, 3.0),
            phase: Range::new(0.0, 2.0 * PI),
            bump_amp: Range::new(0.0, 0.3),
            bump_center: Range::new(0.2, 0.8),
            bump_width: Range::new(0.05, 0.15),
        }
    }
}

impl RdIcFamily {
    fn check(&self) -> Result<(), PdeError> {
        for (name, r) in [
            ("base", self.base),
            ("amp", self.amp),
            ("freq", self.freq),
            ("phase", self.phase),
            ("bump_amp", self.bump_amp),
            ("bump_center", self.bump_center),
            ("bump_width", self.bump_width),
        ] {
            r.check(name)?;
        }
        if self.bump_width.lo <= 0.0 {
            return Err(PdeError::InvalidSpec("bump_width must be positive".into()));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> RdIcParams {
        RdIcParams {
            base: self.base.draw(rng),
            amp: self.amp.draw(rng),
            freq: self.freq.draw(rng),
            phase: self.phase.draw(rng),
            bump_amp: self.bump_amp.draw(rng),
            bump_center: self.bump_center.draw(rng),
            bump_width: self.bump_width.draw(rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "snake_case")]
pub enum ProblemKind {
    /// Draw "a" is the phase, draw "b" the diffusivity.
    Heat { alpha: Range, phi: Range },
    /// Draw "a" is the step location, draw "b" the left boundary value.
    Burgers { p_loc: Range, eps: f64, u_bc: Range },
    /// Draw "a" is the initial profile, draw "b" the pair of boundary fluxes.
    ReactionAdvection {
        rho: f64,
        nu: f64,
        ic: RdIcFamily,
        g_left: Range,
        g_right: Range,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(flatten)]
    pub kind: ProblemKind,
    pub grid: Grid1D,
    pub cfl: f64,
}

/// Parameters of one solved instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "snake_case")]
pub enum Params {
    Heat {
        alpha: f64,
        phi: f64,
    },
    Burgers {
        p_loc: f64,
        eps: f64,
        u_bc: f64,
    },
    ReactionAdvection {
        ic: RdIcParams,
        g_left: f64,
        g_right: f64,
        rho: f64,
        nu: f64,
    },
}

enum DrawA {
    Heat(f64),
    Burgers(f64),
    Rd(RdIcParams),
}

enum DrawB {
    Heat(f64),
    Burgers(f64),
    Rd(f64, f64),
}

impl ProblemSpec {
    /// Heat on the periodic `[0, 2π) x [0, 1]` grid with `α ~ U(1, 5)`, `φ ~ U(0, π)`.
    pub fn heat(nx: usize, nt: usize) -> Result<Self, PdeError> {
        Ok(ProblemSpec {
            kind: ProblemKind::Heat {
                alpha: Range::new(1.0, 5.0),
                phi: Range::new(0.0, PI),
            },
            grid: Grid1D::periodic(nx, nt, (0.0, 2.0 * PI), (0.0, 1.0))?,
            cfl: 0.5,
        })
    }

    /// Burgers on `[0, 1]^2` with `p_loc ~ U(0.2, 0.8)`, `ε = 0.02`, `u_bc ~ U(0, 1)`.
    pub fn burgers(nx: usize, nt: usize) -> Result<Self, PdeError> {
        Ok(ProblemSpec {
            kind: ProblemKind::Burgers {
                p_loc: Range::new(0.2, 0.8),
                eps: 0.02,
                u_bc: Range::new(0.0, 1.0),
            },
            grid: Grid1D::inclusive(nx, nt, (0.0, 1.0), (0.0, 1.0))?,
            cfl: 0.9,
        })
    }

    /// Reaction-advection on `[0, 1]^2` with `(ρ, ν) = (0.01, 0.005)`.
    pub fn reaction_advection(nx: usize, nt: usize) -> Result<Self, PdeError> {
        Ok(ProblemSpec {
            kind: ProblemKind::ReactionAdvection {
                rho: 0.01,
                nu: 0.005,
                ic: RdIcFamily::default(),
                g_left: Range::new(0.0, 0.01),
                g_right: Range::new(0.0, 0.01),
            },
            grid: Grid1D::inclusive(nx, nt, (0.0, 1.0), (0.0, 1.0))?,
            cfl: 0.5,
        })
    }

    /// Looks a problem up by its command-line name at its reference grid size.
    pub fn by_name(name: &str) -> Result<Self, PdeError> {
        match name {
            "heat" => Self::heat(100, 100),
            "burgers" => Self::burgers(101, 101),
            "reaction-advection" | "reaction_advection" | "rd" | "reaction-diffusion" => Self::reaction_advection(128, 100),
            other => Err(PdeError::OutOfScope(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ProblemKind::Heat { .. } => "heat",
            ProblemKind::Burgers { .. } => "burgers",
            ProblemKind::ReactionAdvection { .. } => "reaction-advection",
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        self.grid.validate()?;
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(PdeError::InvalidSpec(format!("cfl must lie in (0, 1), got {}", self.cfl)));
        }
        match &self.kind {
            ProblemKind::Heat { alpha, phi } => {
                alpha.check("alpha")?;
                phi.check("phi")?;
                if self.grid.spacing != Spacing::Periodic {
                    return Err(PdeError::InvalidSpec("heat needs a periodic spatial grid".into()));
                }
            }
            ProblemKind::Burgers { p_loc, eps, u_bc } => {
                p_loc.check("p_loc")?;
                u_bc.check("u_bc")?;
                if !(*eps > 0.0) {
                    return Err(PdeError::InvalidSpec(format!("eps must be positive, got {eps}")));
                }
            }
            ProblemKind::ReactionAdvection {
                rho,
                nu,
                ic,
                g_left,
                g_right,
            } => {
                ic.check()?;
                g_left.check("g_left")?;
                g_right.check("g_right")?;
                if !(rho.is_finite() && nu.is_finite() && *nu >= 0.0) {
                    return Err(PdeError::InvalidSpec(format!("need finite rho and nu >= 0, got {rho}, {nu}")));
                }
            }
        }
        if !matches!(self.kind, ProblemKind::Heat { .. }) && self.grid.spacing != Spacing::Inclusive {
            return Err(PdeError::InvalidSpec(format!(
                "{} needs an inclusive spatial grid",
                self.name()
            )));
        }
        Ok(())
    }

    fn draw_a(&self, rng: &mut impl Rng) -> DrawA {
        match &self.kind {
            ProblemKind::Heat { phi, .. } => DrawA::Heat(phi.draw(rng)),
            ProblemKind::Burgers { p_loc, .. } => DrawA::Burgers(p_loc.draw(rng)),
            ProblemKind::ReactionAdvection { ic, .. } => DrawA::Rd(ic.draw(rng)),
        }
    }

    fn draw_b(&self, rng: &mut impl Rng) -> DrawB {
        match &self.kind {
            ProblemKind::Heat { alpha, .. } => DrawB::Heat(alpha.draw(rng)),
            ProblemKind::Burgers { u_bc, .. } => DrawB::Burgers(u_bc.draw(rng)),
            ProblemKind::ReactionAdvection { g_left, g_right, .. } => DrawB::Rd(g_left.draw(rng), g_right.draw(rng)),
        }
    }

    fn merge(&self, a: &DrawA, b: &DrawB) -> Params {
        match (&self.kind, a, b) {
            (ProblemKind::Heat { .. }, DrawA::Heat(phi), DrawB::Heat(alpha)) => Params::Heat {
                alpha: *alpha,
                phi: *phi,
            },
            (ProblemKind::Burgers { eps, .. }, DrawA::Burgers(p_loc), DrawB::Burgers(u_bc)) => Params::Burgers {
                p_loc: *p_loc,
                eps: *eps,
                u_bc: *u_bc,
            },
            (ProblemKind::ReactionAdvection { rho, nu, .. }, DrawA::Rd(ic), DrawB::Rd(gl, gr)) => Params::ReactionAdvection {
                ic: *ic,
                g_left: *gl,
                g_right: *gr,
                rho: *rho,
                nu: *nu,
            },
            _ => unreachable!("draws come from the same problem"),
        }
    }

    /// Cartesian product of `n_a` "a" draws with `n_b` "b" draws, "a" outermost.
    pub fn draw_params(&self, n_a: usize, n_b: usize, seed: RngSeed) -> Vec<Params> {
        let mut rng_a = seed.derive(10).rng();
        let mut rng_b = seed.derive(11).rng();
        let a: Vec<DrawA> = (0..n_a).map(|_| self.draw_a(&mut rng_a)).collect();
        let b: Vec<DrawB> = (0..n_b).map(|_| self.draw_b(&mut rng_b)).collect();
        a.iter()
            .flat_map(|a| b.iter().map(move |b| (a, b)))
            .map(|(a, b)| self.merge(a, b))
            .collect()
    }

    pub fn solve(&self, params: &Params) -> Result<SolutionField, PdeError> {
        let g = &self.grid;
        match *params {
            Params::Heat { alpha, phi } => Ok(heat_analytic(alpha, phi, g)),
            Params::Burgers { p_loc, eps, u_bc } => burgers_godunov(p_loc, eps, u_bc, g, self.cfl),
            Params::ReactionAdvection {
                ic,
                g_left,
                g_right,
                rho,
                nu,
            } => rd_solve(&ic.profile(g), g_left, g_right, rho, nu, g, self.cfl),
        }
    }
}

/// Solved samples plus the parameters that produced them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub batch: SampleBatch,
    pub params: Vec<Params>,
    /// Parameter tuples whose solve failed and were dropped.
    pub failures: usize,
}

impl Dataset {
    pub fn meta(&self) -> BatchMeta {
        BatchMeta {
            params: Some(
                self.params
                    .iter()
                    .map(|p| serde_json::to_value(p).expect("params serialize"))
                    .collect::<Vec<Value>>(),
            ),
            sampler: None,
        }
    }
}

/// Solves every tuple (in parallel, order preserved) and drops failures.
pub fn solve_all(spec: &ProblemSpec, params: &[Params]) -> Result<Dataset, PdeError> {
    spec.validate()?;
    let results: Vec<Result<SolutionField, PdeError>> = params.par_iter().map(|p| spec.solve(p)).collect();
    let mut fields = Vec::with_capacity(params.len());
    let mut kept = Vec::with_capacity(params.len());
    let mut failures = 0;
    for (p, r) in params.iter().zip(results) {
        match r {
            Ok(f) => {
                fields.push(f);
                kept.push(*p);
            }
            Err(_) => failures += 1,
        }
    }
    if fields.is_empty() {
        return Err(PdeError::EmptyDataset { failures });
    }
    Ok(Dataset {
        batch: SampleBatch::from_fields(&fields)?,
        params: kept,
        failures,
    })
}

pub fn make_dataset(spec: &ProblemSpec, n_a: usize, n_b: usize, seed: RngSeed) -> Result<Dataset, PdeError> {
    if n_a == 0 || n_b == 0 {
        return Err(PdeError::InvalidSpec("variant counts must be at least 1".into()));
    }
    spec.validate()?;
    solve_all(spec, &spec.draw_params(n_a, n_b, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burgers_two_by_two() {
        let spec = ProblemSpec::burgers(21, 11).unwrap();
        let d = make_dataset(&spec, 2, 2, RngSeed(4)).unwrap();
        assert_eq!(d.batch.count(), 4);
        assert_eq!(d.params.len(), 4);
        let (p, u) = match (d.params[0], d.params[1], d.params[2]) {
            (
                Params::Burgers { p_loc: a, u_bc: b, .. },
                Params::Burgers { p_loc: a2, u_bc: b2, .. },
                Params::Burgers { p_loc: a3, .. },
            ) => {
                assert_eq!(a, a2);
                assert_ne!(b, b2);
                assert_ne!(a, a3);
                (a, b)
            }
            _ => panic!("wrong params"),
        };
        assert!((0.2..=0.8).contains(&p) && (0.0..=1.0).contains(&u));
    }

    #[test]
    fn heat_grid_of_analytic_samples_is_massless() {
        let spec = ProblemSpec::heat(32, 16).unwrap();
        let d = make_dataset(&spec, 8, 8, RngSeed(1)).unwrap();
        assert_eq!(d.batch.count(), 64);
        for k in 0..64 {
            let f = d.batch.field(k);
            for j in 0..16 {
                assert!(f.mass_at(j).unwrap().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = ProblemSpec::reaction_advection(16, 10).unwrap();
        let a = make_dataset(&spec, 3, 2, RngSeed(9)).unwrap();
        let b = make_dataset(&spec, 3, 2, RngSeed(9)).unwrap();
        assert!(a
            .batch
            .data()
            .iter()
            .zip(b.batch.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(matches!(ProblemSpec::by_name("navier-stokes"), Err(PdeError::OutOfScope(_))));
        let mut spec = ProblemSpec::burgers(11, 11).unwrap();
        spec.cfl = 1.5;
        assert!(spec.validate().is_err());
        let mut heat = ProblemSpec::heat(11, 11).unwrap();
        heat.grid.spacing = Spacing::Inclusive;
        assert!(heat.validate().is_err());
        assert!(make_dataset(&ProblemSpec::heat(8, 8).unwrap(), 0, 3, RngSeed(0)).is_err());
    }

    #[test]
    fn spec_and_params_serialize() {
        let spec = ProblemSpec::reaction_advection(16, 10).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ProblemSpec>(&text).unwrap(), spec);
        let d = make_dataset(&spec, 1, 1, RngSeed(0)).unwrap();
        let v = d.meta().params.unwrap();
        assert_eq!(v[0]["problem"], "reaction_advection");
    }
}
