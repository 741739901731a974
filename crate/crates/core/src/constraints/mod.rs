//! Residual operators `h(u)` and their Jacobians, stacked into a [`ConstraintSet`].

mod component;
pub mod spec;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use component::godunov_face_fluxes;
pub use component::{godunov_flux, godunov_flux_grad, ConstraintKind};
pub use spec::{ComponentSpec, ConstraintSpec, SpecError};

use crate::fields::{FieldError, Grid1D, Quadrature, SolutionField};
use crate::linalg::{DenseMatrix, SparseRows};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("field grid does not match the grid the constraint was built for")]
    GridMismatch,
    #[error("state has {actual} entries, grid needs {expected}")]
    Length { expected: usize, actual: usize },
    #[error("non-finite state entry at flat index {0}")]
    NonFinite(usize),
    #[error("invalid constraint component: {0}")]
    InvalidComponent(String),
    #[error("constraint set has no components")]
    Empty,
    #[error("no component carries tag {0}")]
    MissingTag(Tag),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Which physical role a residual block plays; used to slice constraint errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "IC")]
    Ic,
    #[serde(rename = "BC")]
    Bc,
    #[serde(rename = "CL")]
    Cl,
    #[serde(rename = "FLUX")]
    Flux,
    #[serde(rename = "TV")]
    Tv,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Ic => "IC",
            Tag::Bc => "BC",
            Tag::Cl => "CL",
            Tag::Flux => "FLUX",
            Tag::Tv => "TV",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Anything with a residual `h(u)` and a Jacobian; the projection code is
/// written against this so that ad-hoc residuals can be projected too.
pub trait Constraint: Sync {
    /// State dimension `n`.
    fn state_dim(&self) -> usize;
    /// Residual dimension `m`.
    fn residual_dim(&self) -> usize;
    /// Rejects wrong lengths and non-finite entries.
    fn check_state(&self, u: &[f64]) -> Result<(), ConstraintError> {
        if u.len() != self.state_dim() {
            return Err(ConstraintError::Length {
                expected: self.state_dim(),
                actual: u.len(),
            });
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(ConstraintError::NonFinite(i));
        }
        Ok(())
    }
    /// `h(u)` for a state that already passed [`Constraint::check_state`].
    fn eval_residual(&self, u: &[f64]) -> Vec<f64>;
    fn eval_jacobian(&self, u: &[f64]) -> SparseRows;
    /// Jacobian used to build a Newton step at `u` given `h = h(u)`.
    /// Piecewise-smooth residuals may return a generalized Jacobian here.
    fn eval_step_jacobian(&self, u: &[f64], h: &[f64]) -> SparseRows {
        let _ = h;
        self.eval_jacobian(u)
    }
    /// True when `h` is affine.
    fn is_affine(&self) -> bool {
        false
    }
}

type ResidualFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type JacobianFn = dyn Fn(&[f64]) -> DenseMatrix + Send + Sync;

/// A residual given by closures, for problems outside the PDE families.
pub struct FnConstraint {
    n: usize,
    m: usize,
    residual: Box<ResidualFn>,
    jacobian: Box<JacobianFn>,
    affine: bool,
}

impl FnConstraint {
    pub fn new(
        n: usize,
        m: usize,
        residual: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64]) -> DenseMatrix + Send + Sync + 'static,
    ) -> Self {
        FnConstraint {
            n,
            m,
            residual: Box::new(residual),
            jacobian: Box::new(jacobian),
            affine: false,
        }
    }

    /// `h(u) = A u - b`.
    pub fn affine(a: DenseMatrix, b: Vec<f64>) -> Self {
        assert_eq!(a.rows(), b.len());
        let (n, m) = (a.cols(), a.rows());
        let a2 = a.clone();
        let mut c = FnConstraint::new(
            n,
            m,
            move |u| a.mul_vec(u).iter().zip(&b).map(|(x, y)| x - y).collect(),
            move |_| a2.clone(),
        );
        c.affine = true;
        c
    }
}

impl Constraint for FnConstraint {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn residual_dim(&self) -> usize {
        self.m
    }
    fn eval_residual(&self, u: &[f64]) -> Vec<f64> {
        (self.residual)(u)
    }
    fn eval_jacobian(&self, u: &[f64]) -> SparseRows {
        let d = (self.jacobian)(u);
        let mut rows = SparseRows::builder(self.n);
        for r in 0..d.rows() {
            for (c, &v) in d.row(r).iter().enumerate() {
                if v != 0.0 {
                    rows.add(c, v);
                }
            }
            rows.finish_row();
        }
        rows.finish()
    }
    fn is_affine(&self) -> bool {
        self.affine
    }
}

impl Constraint for ConstraintSet {
    fn state_dim(&self) -> usize {
        self.n()
    }
    fn residual_dim(&self) -> usize {
        self.m
    }
    fn eval_residual(&self, u: &[f64]) -> Vec<f64> {
        self.residual_unchecked(u)
    }
    fn eval_jacobian(&self, u: &[f64]) -> SparseRows {
        self.jacobian_sparse_unchecked(u)
    }
    fn eval_step_jacobian(&self, u: &[f64], h: &[f64]) -> SparseRows {
        if self.jacobian_mode != JacobianMode::Analytic {
            return self.jacobian_sparse_unchecked(u);
        }
        let mut rows = SparseRows::builder(self.n());
        for (kind, range) in self.ranges() {
            kind.step_jacobian_into(&self.grid, self.quadrature, u, &h[range], &mut rows);
        }
        rows.finish()
    }
    fn is_affine(&self) -> bool {
        self.is_linear()
    }
}

/// A constraint block validated against a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintComponent {
    grid: Grid1D,
    kind: ConstraintKind,
}

impl ConstraintComponent {
    pub fn new(kind: ConstraintKind, grid: Grid1D) -> Result<Self, ConstraintError> {
        grid.validate()?;
        kind.validate(&grid)?;
        Ok(ConstraintComponent { grid, kind })
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.kind.dim(&self.grid)
    }
}

/// Ordered stack of constraint blocks on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    grid: Grid1D,
    components: Vec<ConstraintKind>,
    offsets: Vec<usize>,
    m: usize,
    jacobian_mode: JacobianMode,
    quadrature: Quadrature,
}

impl ConstraintSet {
    /// Builds a set from raw kinds, validating each against `grid`.
    pub fn new(grid: Grid1D, kinds: Vec<ConstraintKind>) -> Result<Self, ConstraintError> {
        let components = kinds
            .into_iter()
            .map(|k| ConstraintComponent::new(k, grid))
            .collect::<Result<Vec<_>, _>>()?;
        Self::stack(&components)
    }

    /// Vertical concatenation of components, in order.
    pub fn stack(components: &[ConstraintComponent]) -> Result<Self, ConstraintError> {
        let first = components.first().ok_or(ConstraintError::Empty)?;
        let grid = first.grid;
        let mut offsets = Vec::with_capacity(components.len());
        let mut m = 0;
        for c in components {
            if c.grid != grid {
                return Err(ConstraintError::GridMismatch);
            }
            offsets.push(m);
            m += c.dim();
        }
        Ok(ConstraintSet {
            grid,
            components: components.iter().map(|c| c.kind.clone()).collect(),
            offsets,
            m,
            jacobian_mode: JacobianMode::Analytic,
            quadrature: Quadrature::Riemann,
        })
    }

    /// Concatenates whole sets; modes are taken from the first.
    pub fn concat(sets: &[&ConstraintSet]) -> Result<Self, ConstraintError> {
        let first = sets.first().ok_or(ConstraintError::Empty)?;
        let mut comps = Vec::new();
        for s in sets {
            if s.grid != first.grid {
                return Err(ConstraintError::GridMismatch);
            }
            comps.extend(s.components());
        }
        Ok(Self::stack(&comps)?
            .with_jacobian_mode(first.jacobian_mode)
            .with_quadrature(first.quadrature))
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Self {
        self.jacobian_mode = mode;
        self
    }

    /// Quadrature used by the linear mass blocks (`Sum` drops `dx`).
    pub fn with_quadrature(mut self, quadrature: Quadrature) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn kinds(&self) -> &[ConstraintKind] {
        &self.components
    }

    pub fn components(&self) -> Vec<ConstraintComponent> {
        self.components
            .iter()
            .map(|k| ConstraintComponent {
                grid: self.grid,
                kind: k.clone(),
            })
            .collect()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// State dimension `nx * nt`.
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn jacobian_mode(&self) -> JacobianMode {
        self.jacobian_mode
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature
    }

    pub fn is_linear(&self) -> bool {
        self.components.iter().all(ConstraintKind::is_linear)
    }

    /// Row range of each component.
    pub fn ranges(&self) -> impl Iterator<Item = (&ConstraintKind, Range<usize>)> + '_ {
        self.components
            .iter()
            .zip(&self.offsets)
            .map(|(k, &o)| (k, o..o + k.dim(&self.grid)))
    }

    pub fn has_tag(&self, tag: Tag) -> bool {
        self.components.iter().any(|k| k.tag() == tag)
    }

    pub fn tags(&self) -> Vec<Tag> {
        let mut t: Vec<Tag> = self.components.iter().map(ConstraintKind::tag).collect();
        t.sort();
        t.dedup();
        t
    }

    /// Sub-set containing only the components carrying `tag`.
    pub fn restrict(&self, tag: Tag) -> Result<ConstraintSet, ConstraintError> {
        let comps: Vec<_> = self.components().into_iter().filter(|c| c.kind.tag() == tag).collect();
        if comps.is_empty() {
            return Err(ConstraintError::MissingTag(tag));
        }
        Ok(Self::stack(&comps)?
            .with_jacobian_mode(self.jacobian_mode)
            .with_quadrature(self.quadrature))
    }

    /// Stacked residual `h(u)`.
    pub fn residual(&self, u: &[f64]) -> Result<Vec<f64>, ConstraintError> {
        self.check_state(u)?;
        Ok(self.residual_unchecked(u))
    }

    pub fn residual_field(&self, field: &SolutionField) -> Result<Vec<f64>, ConstraintError> {
        if *field.grid() != self.grid {
            return Err(ConstraintError::GridMismatch);
        }
        self.residual(field.values())
    }

    pub(crate) fn residual_unchecked(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (kind, range) in self.ranges() {
            kind.residual_into(&self.grid, self.quadrature, u, &mut out[range]);
        }
        out
    }

    /// Jacobian as sorted sparse rows; this is what the projection code uses.
    pub fn jacobian_sparse(&self, u: &[f64]) -> Result<SparseRows, ConstraintError> {
        self.check_state(u)?;
        Ok(self.jacobian_sparse_unchecked(u))
    }

    pub(crate) fn jacobian_sparse_unchecked(&self, u: &[f64]) -> SparseRows {
        match self.jacobian_mode {
            JacobianMode::Analytic => {
                let mut rows = SparseRows::builder(self.n());
                for kind in &self.components {
                    kind.jacobian_into(&self.grid, self.quadrature, u, &mut rows);
                }
                rows.finish()
            }
            JacobianMode::FiniteDifference => {
                let dense = self.jacobian_fd(u);
                let mut rows = SparseRows::builder(self.n());
                for r in 0..dense.rows() {
                    for (c, &v) in dense.row(r).iter().enumerate() {
                        if v != 0.0 {
                            rows.add(c, v);
                        }
                    }
                    rows.finish_row();
                }
                rows.finish()
            }
        }
    }

    /// Dense `m x n` Jacobian.
    pub fn jacobian(&self, u: &[f64]) -> Result<DenseMatrix, ConstraintError> {
        self.check_state(u)?;
        Ok(match self.jacobian_mode {
            JacobianMode::Analytic => self.jacobian_sparse_unchecked(u).to_dense(),
            JacobianMode::FiniteDifference => self.jacobian_fd(u),
        })
    }

    pub fn jacobian_field(&self, field: &SolutionField) -> Result<DenseMatrix, ConstraintError> {
        if *field.grid() != self.grid {
            return Err(ConstraintError::GridMismatch);
        }
        self.jacobian(field.values())
    }

    /// Central differences with step `sqrt(eps) * max(1, |u_i|)`.
    fn jacobian_fd(&self, u: &[f64]) -> DenseMatrix {
        let (m, n) = (self.m, self.n());
        let mut jac = DenseMatrix::zeros(m, n);
        let mut probe = u.to_vec();
        let root_eps = f64::EPSILON.sqrt();
        for c in 0..n {
            let h = root_eps * u[c].abs().max(1.0);
            probe[c] = u[c] + h;
            let plus = self.residual_unchecked(&probe);
            probe[c] = u[c] - h;
            let minus = self.residual_unchecked(&probe);
            probe[c] = u[c];
            for r in 0..m {
                jac.set(r, c, (plus[r] - minus[r]) / (2.0 * h));
            }
        }
        jac
    }

    /// Residual entries belonging to components with `tag`, concatenated.
    pub fn tagged_residual(&self, u: &[f64], tag: Tag) -> Result<Vec<f64>, ConstraintError> {
        if !self.has_tag(tag) {
            return Err(ConstraintError::MissingTag(tag));
        }
        let full = self.residual(u)?;
        Ok(self
            .ranges()
            .filter(|(k, _)| k.tag() == tag)
            .flat_map(|(_, r)| full[r].to_vec())
            .collect())
    }
}
