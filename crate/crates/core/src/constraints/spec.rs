//! JSON description of a constraint stack.
//!
//! ```json
//! {
//!   "components": [
//!     {"kind": "dirichlet_ic", "params": {"profile": {"heat_sine": {"phi": 0.5}}}},
//!     {"kind": "linear_mass_conservation"}
//!   ]
//! }
//! ```
//!
//! A bare array of components is accepted as well.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ConstraintError, ConstraintKind, ConstraintSet, JacobianMode};
use crate::fields::{Grid1D, Quadrature};
use crate::pde_data::{burgers_ic, heat_ic, RdIcParams};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read constraint file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed constraint description: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

/// Spatial profile used as a Dirichlet IC target, resolved against the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSpec {
    Values(Vec<f64>),
    HeatSine {
        phi: f64,
    },
    BurgersStep {
        p_loc: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    RdBump(RdIcParams),
}

fn default_eps() -> f64 {
    0.02
}

impl ProfileSpec {
    pub fn resolve(&self, grid: &Grid1D) -> Vec<f64> {
        let xs = (0..grid.nx).map(|i| grid.x(i));
        match self {
            ProfileSpec::Values(v) => v.clone(),
            ProfileSpec::HeatSine { phi } => xs.map(|x| heat_ic(*phi, x)).collect(),
            ProfileSpec::BurgersStep { p_loc, eps } => xs.map(|x| burgers_ic(*p_loc, *eps, x)).collect(),
            ProfileSpec::RdBump(p) => xs.map(|x| p.eval(x)).collect(),
        }
    }
}

/// One `{kind, params}` entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ComponentSpec {
    DirichletIc {
        profile: ProfileSpec,
    },
    DirichletBcLeft {
        value: f64,
    },
    NeumannZeroGradientRight,
    LinearMassConservation,
    MassTarget {
        value: f64,
    },
    RdMassBalance {
        rho: f64,
        nu: f64,
        g_left: f64,
        g_right: f64,
    },
    BurgersMassConservation {
        #[serde(default)]
        left_state: Option<f64>,
    },
    GodunovFluxCollocation {
        k: usize,
        /// Defaults to the grid time step.
        #[serde(default)]
        dt_sim: Option<f64>,
        #[serde(default)]
        left_state: Option<f64>,
    },
    TotalVariationDecay {
        gamma: f64,
    },
}

impl ComponentSpec {
    pub fn to_kind(&self, grid: &Grid1D) -> ConstraintKind {
        match self {
            ComponentSpec::DirichletIc { profile } => ConstraintKind::DirichletIc {
                target: profile.resolve(grid),
            },
            ComponentSpec::DirichletBcLeft { value } => ConstraintKind::DirichletBcLeft { value: *value },
            ComponentSpec::NeumannZeroGradientRight => ConstraintKind::NeumannZeroGradientRight,
            ComponentSpec::LinearMassConservation => ConstraintKind::LinearMassConservation,
            ComponentSpec::MassTarget { value } => ConstraintKind::MassTarget { value: *value },
            ComponentSpec::RdMassBalance {
                rho,
                nu,
                g_left,
                g_right,
            } => ConstraintKind::RdMassBalance {
                rho: *rho,
                nu: *nu,
                g_left: *g_left,
                g_right: *g_right,
            },
            ComponentSpec::BurgersMassConservation { left_state } => {
                ConstraintKind::BurgersMassConservation { left_state: *left_state }
            }
            ComponentSpec::GodunovFluxCollocation { k, dt_sim, left_state } => ConstraintKind::GodunovFluxCollocation {
                k: *k,
                dt_sim: dt_sim.unwrap_or_else(|| grid.dt()),
                left_state: *left_state,
            },
            ComponentSpec::TotalVariationDecay { gamma } => ConstraintKind::TotalVariationDecay { gamma: *gamma },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub jacobian: JacobianMode,
    #[serde(default)]
    pub quadrature: Quadrature,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecForm {
    Full(ConstraintSpec),
    List(Vec<ComponentSpec>),
}

impl ConstraintSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        Ok(match serde_json::from_str::<SpecForm>(text)? {
            SpecForm::Full(s) => s,
            SpecForm::List(components) => ConstraintSpec {
                components,
                jacobian: JacobianMode::Analytic,
                quadrature: Quadrature::Riemann,
            },
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("constraint spec serializes")
    }

    pub fn build(&self, grid: &Grid1D) -> Result<ConstraintSet, SpecError> {
        let kinds = self.components.iter().map(|c| c.to_kind(grid)).collect();
        Ok(ConstraintSet::new(*grid, kinds)?
            .with_jacobian_mode(self.jacobian)
            .with_quadrature(self.quadrature))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_and_list_forms() {
        let grid = Grid1D::periodic(16, 8, (0.0, std::f64::consts::TAU), (0.0, 1.0)).unwrap();
        let full = r#"{"components": [
            {"kind": "dirichlet_ic", "params": {"profile": {"heat_sine": {"phi": 0.5}}}},
            {"kind": "linear_mass_conservation"}
        ], "quadrature": "sum"}"#;
        let spec = ConstraintSpec::from_json(full).unwrap();
        assert_eq!(spec.quadrature, Quadrature::Sum);
        let set = spec.build(&grid).unwrap();
        assert_eq!(set.m(), 16 + 7);

        let list = r#"[{"kind": "godunov_flux_collocation", "params": {"k": 2}},
                       {"kind": "total_variation_decay", "params": {"gamma": 0.9}}]"#;
        let set = ConstraintSpec::from_json(list).unwrap().build(&grid).unwrap();
        assert_eq!(set.m(), 2 * 16 + 1);
        match &set.kinds()[0] {
            ConstraintKind::GodunovFluxCollocation { dt_sim, .. } => assert_eq!(*dt_sim, grid.dt()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trips_and_rejects_invalid() {
        let spec = ConstraintSpec {
            components: vec![
                ComponentSpec::DirichletBcLeft { value: 0.4 },
                ComponentSpec::BurgersMassConservation { left_state: Some(0.4) },
            ],
            jacobian: JacobianMode::FiniteDifference,
            quadrature: Quadrature::Riemann,
        };
        assert_eq!(ConstraintSpec::from_json(&spec.to_json()).unwrap(), spec);
        assert!(ConstraintSpec::from_json(r#"[{"kind": "nonsense"}]"#).is_err());
        let grid = Grid1D::inclusive(4, 4, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let bad = ConstraintSpec::from_json(r#"[{"kind": "dirichlet_ic", "params": {"profile": {"values": [1, 2]}}}]"#).unwrap();
        assert!(matches!(bad.build(&grid), Err(SpecError::Constraint(_))));
    }
}
