//! Uniform space-time grids and the discretized fields that live on them.
//!
//! A [`SolutionField`] stores `u(x_i, t_j)` in a flat array with the spatial
//! index running fastest: `values[j * nx + i]`. Every constraint, solver and
//! metric in the crate relies on this layout.

pub mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("index (i={i}, j={j}) out of range for grid nx={nx}, nt={nt}")]
    Index { i: usize, j: usize, nx: usize, nt: usize },
    #[error("time index {j} out of range for nt={nt}")]
    TimeIndex { j: usize, nt: usize },
    #[error("expected {expected} values, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("samples do not share one grid")]
    GridMismatch,
    #[error("a batch needs at least one sample")]
    EmptyBatch,
}

/// How the spatial nodes are placed inside `[x_min, x_max]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    /// Both endpoints are nodes: `dx = (x_max - x_min) / (nx - 1)`.
    #[default]
    Inclusive,
    /// The right endpoint is identified with the left one and left out:
    /// `dx = (x_max - x_min) / nx`.
    Periodic,
}

/// Weighting used when a spatial sum stands in for `∫ u dx`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// `dx * Σ_i u_i`
    #[default]
    Riemann,
    /// `Σ_i u_i`, for comparison with code that drops the cell width.
    Sum,
}

impl Quadrature {
    pub fn weight(self, grid: &Grid1D) -> f64 {
        match self {
            Quadrature::Riemann => grid.dx(),
            Quadrature::Sum => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub nx: usize,
    pub nt: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    #[serde(default)]
    pub spacing: Spacing,
}

impl Grid1D {
    pub fn new(nx: usize, nt: usize, x_range: (f64, f64), t_range: (f64, f64), spacing: Spacing) -> Result<Self, FieldError> {
        let grid = Grid1D {
            nx,
            nt,
            x_min: x_range.0,
            x_max: x_range.1,
            t_min: t_range.0,
            t_max: t_range.1,
            spacing,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid with both spatial endpoints included.
    pub fn inclusive(nx: usize, nt: usize, x_range: (f64, f64), t_range: (f64, f64)) -> Result<Self, FieldError> {
        Self::new(nx, nt, x_range, t_range, Spacing::Inclusive)
    }

    /// Grid whose spatial axis wraps around (last point excluded).
    pub fn periodic(nx: usize, nt: usize, x_range: (f64, f64), t_range: (f64, f64)) -> Result<Self, FieldError> {
        Self::new(nx, nt, x_range, t_range, Spacing::Periodic)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.nx < 2 || self.nt < 2 {
            return Err(FieldError::InvalidGrid(format!(
                "need nx >= 2 and nt >= 2, got nx={}, nt={}",
                self.nx, self.nt
            )));
        }
        let finite = [self.x_min, self.x_max, self.t_min, self.t_max].iter().all(|v| v.is_finite());
        if !finite || self.x_max <= self.x_min || self.t_max <= self.t_min {
            return Err(FieldError::InvalidGrid(format!(
                "bad extents x=[{}, {}], t=[{}, {}]",
                self.x_min, self.x_max, self.t_min, self.t_max
            )));
        }
        let (dx, dt) = (self.dx(), self.dt());
        if !(dx > 0.0 && dx.is_finite() && dt > 0.0 && dt.is_finite()) {
            return Err(FieldError::InvalidGrid(format!("degenerate spacing dx={dx}, dt={dt}")));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        let cells = match self.spacing {
            Spacing::Inclusive => self.nx - 1,
            Spacing::Periodic => self.nx,
        };
        (self.x_max - self.x_min) / cells as f64
    }

    pub fn dt(&self) -> f64 {
        (self.t_max - self.t_min) / (self.nt - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn t(&self, j: usize) -> f64 {
        self.t_min + j as f64 * self.dt()
    }

    /// Number of grid points, `nx * nt`.
    pub fn len(&self) -> usize {
        self.nx * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn flat(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolutionField {
    grid: Grid1D,
    values: Vec<f64>,
}

impl SolutionField {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self, FieldError> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(FieldError::Length {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(k));
        }
        Ok(SolutionField { grid, values })
    }

    /// Samples `f(x, t)` at every grid node.
    pub fn from_fn(grid: Grid1D, f: impl Fn(f64, f64) -> f64) -> Result<Self, FieldError> {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.nt {
            let t = grid.t(j);
            for i in 0..grid.nx {
                values.push(f(grid.x(i), t));
            }
        }
        Self::new(grid, values)
    }

    pub fn constant(grid: Grid1D, c: f64) -> Result<Self, FieldError> {
        Self::new(grid, vec![c; grid.len()])
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn index(&self, i: usize, j: usize) -> Result<f64, FieldError> {
        let g = &self.grid;
        if i >= g.nx || j >= g.nt {
            return Err(FieldError::Index {
                i,
                j,
                nx: g.nx,
                nt: g.nt,
            });
        }
        Ok(self.values[g.flat(i, j)])
    }

    /// Spatial profile at time index `j`.
    pub fn slice(&self, j: usize) -> Result<&[f64], FieldError> {
        time_slice(&self.grid, &self.values, j)
    }

    /// Riemann-sum mass `dx * Σ_i u(i, j)`.
    pub fn mass_at(&self, j: usize) -> Result<f64, FieldError> {
        self.mass_at_with(j, Quadrature::Riemann)
    }

    pub fn mass_at_with(&self, j: usize, quadrature: Quadrature) -> Result<f64, FieldError> {
        mass_at(&self.grid, &self.values, j, quadrature)
    }

    /// `Σ_{i=0}^{nx-2} |u(i+1, j) - u(i, j)|`.
    pub fn total_variation_at(&self, j: usize) -> Result<f64, FieldError> {
        total_variation_at(&self.grid, &self.values, j)
    }
}

pub(crate) fn time_slice<'a>(grid: &Grid1D, values: &'a [f64], j: usize) -> Result<&'a [f64], FieldError> {
    if j >= grid.nt {
        return Err(FieldError::TimeIndex { j, nt: grid.nt });
    }
    Ok(&values[j * grid.nx..(j + 1) * grid.nx])
}

/// Mass of time slice `j` of a raw state vector laid out on `grid`.
pub fn mass_at(grid: &Grid1D, values: &[f64], j: usize, quadrature: Quadrature) -> Result<f64, FieldError> {
    let slice = time_slice(grid, values, j)?;
    Ok(quadrature.weight(grid) * slice.iter().sum::<f64>())
}

/// Discrete total variation of time slice `j` of a raw state vector.
pub fn total_variation_at(grid: &Grid1D, values: &[f64], j: usize) -> Result<f64, FieldError> {
    let slice = time_slice(grid, values, j)?;
    Ok(slice.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

/// `count` fields on one grid, stored contiguously sample after sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    grid: Grid1D,
    count: usize,
    data: Vec<f64>,
}

impl SampleBatch {
    pub fn new(grid: Grid1D, data: Vec<f64>) -> Result<Self, FieldError> {
        grid.validate()?;
        let n = grid.len();
        if data.is_empty() {
            return Err(FieldError::EmptyBatch);
        }
        if !data.len().is_multiple_of(n) {
            return Err(FieldError::Length {
                expected: n * (data.len() / n + 1),
                actual: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(k));
        }
        Ok(SampleBatch {
            grid,
            count: data.len() / n,
            data,
        })
    }

    pub fn from_states(grid: Grid1D, states: &[Vec<f64>]) -> Result<Self, FieldError> {
        let n = grid.len();
        let mut data = Vec::with_capacity(n * states.len());
        for s in states {
            if s.len() != n {
                return Err(FieldError::Length {
                    expected: n,
                    actual: s.len(),
                });
            }
            data.extend_from_slice(s);
        }
        Self::new(grid, data)
    }

    pub fn from_fields(fields: &[SolutionField]) -> Result<Self, FieldError> {
        let first = fields.first().ok_or(FieldError::EmptyBatch)?;
        let grid = *first.grid();
        if fields.iter().any(|f| *f.grid() != grid) {
            return Err(FieldError::GridMismatch);
        }
        let mut data = Vec::with_capacity(grid.len() * fields.len());
        for f in fields {
            data.extend_from_slice(f.values());
        }
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn field(&self, k: usize) -> SolutionField {
        SolutionField {
            grid: self.grid,
            values: self.sample(k).to_vec(),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.grid.len())
    }

    /// Keeps the samples at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, FieldError> {
        let mut data = Vec::with_capacity(indices.len() * self.grid.len());
        for &k in indices {
            if k >= self.count {
                return Err(FieldError::Index {
                    i: k,
                    j: 0,
                    nx: self.count,
                    nt: 1,
                });
            }
            data.extend_from_slice(self.sample(k));
        }
        Self::new(self.grid, data)
    }
}

/// Seed for every random stream in the crate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent stream for sample `index`; the same `(seed, index)` pair
    /// always yields the same sequence.
    pub fn stream(self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }

    /// Derives a seed for a named sub-task so that unrelated consumers of one
    /// user seed do not share streams.
    pub fn derive(self, salt: u64) -> RngSeed {
        // splitmix64 finalizer
        let mut z = self.0 ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn unit_grid(nx: usize, nt: usize) -> Grid1D {
        Grid1D::inclusive(nx, nt, (0.0, 1.0), (0.0, 1.0)).unwrap()
    }

    #[test]
    fn index_follows_layout() {
        let f = SolutionField::new(unit_grid(2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.index(1, 1).unwrap(), 4.0);
        assert_eq!(f.index(0, 0).unwrap(), 1.0);
        assert_eq!(f.index(1, 0).unwrap(), 2.0);
        assert!(matches!(f.index(2, 0), Err(FieldError::Index { .. })));
        assert!(matches!(f.index(0, 2), Err(FieldError::Index { .. })));
    }

    #[test]
    fn constant_field_index() {
        let f = SolutionField::constant(unit_grid(5, 4), 2.5).unwrap();
        for j in 0..4 {
            for i in 0..5 {
                assert_eq!(f.index(i, j).unwrap(), 2.5);
            }
        }
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid1D::inclusive(1, 4, (0.0, 1.0), (0.0, 1.0)).is_err());
        assert!(Grid1D::inclusive(4, 1, (0.0, 1.0), (0.0, 1.0)).is_err());
        assert!(Grid1D::inclusive(4, 4, (1.0, 1.0), (0.0, 1.0)).is_err());
        assert!(Grid1D::inclusive(4, 4, (0.0, 1.0), (0.0, f64::NAN)).is_err());
        let g = Grid1D::periodic(100, 3, (0.0, 2.0 * PI), (0.0, 1.0)).unwrap();
        assert!((g.dx() - 2.0 * PI / 100.0).abs() < 1e-15);
        assert!((unit_grid(11, 3).dx() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_and_bad_length() {
        let g = unit_grid(2, 2);
        assert!(matches!(SolutionField::new(g, vec![0.0; 3]), Err(FieldError::Length { .. })));
        assert!(matches!(
            SolutionField::new(g, vec![0.0, f64::INFINITY, 0.0, 0.0]),
            Err(FieldError::NonFinite(1))
        ));
    }

    #[test]
    fn periodic_sine_has_zero_mass() {
        let g = Grid1D::periodic(100, 2, (0.0, 2.0 * PI), (0.0, 1.0)).unwrap();
        let f = SolutionField::from_fn(g, |x, _| (x + PI / 4.0).sin()).unwrap();
        assert!(f.mass_at(0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn constant_mass_is_riemann_sum() {
        let g = unit_grid(11, 2);
        let f = SolutionField::constant(g, 3.0).unwrap();
        // direct summation oracle: 11 nodes, dx = 0.1
        let oracle: f64 = (0..11).map(|_| 0.1 * 3.0).sum();
        assert!((f.mass_at(1).unwrap() - oracle).abs() < 1e-12);
        assert!((f.mass_at_with(1, Quadrature::Sum).unwrap() - 33.0).abs() < 1e-12);
        assert_eq!(SolutionField::constant(g, 0.0).unwrap().mass_at(0).unwrap(), 0.0);
        assert!(matches!(f.mass_at(2), Err(FieldError::TimeIndex { .. })));
    }

    #[test]
    fn total_variation_examples() {
        let g = unit_grid(11, 2);
        let ramp = SolutionField::from_fn(g, |x, _| x).unwrap();
        assert!((ramp.total_variation_at(0).unwrap() - 1.0).abs() < 1e-12);
        let flat = SolutionField::constant(g, 7.0).unwrap();
        assert_eq!(flat.total_variation_at(1).unwrap(), 0.0);
        let step = SolutionField::new(unit_grid(4, 2), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(step.total_variation_at(0).unwrap(), 1.0);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let seed = RngSeed(42);
        let a: Vec<u64> = (0..4).map(|_| 0).scan(seed.stream(3), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(seed.stream(3), |r, _| Some(r.random())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(seed.stream(4), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn mass_is_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            u in proptest::collection::vec(-5.0f64..5.0, 12),
            v in proptest::collection::vec(-5.0f64..5.0, 12),
        ) {
            let g = unit_grid(4, 3);
            let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            for j in 0..3 {
                let lhs = mass_at(&g, &combo, j, Quadrature::Riemann).unwrap();
                let rhs = a * mass_at(&g, &u, j, Quadrature::Riemann).unwrap()
                    + b * mass_at(&g, &v, j, Quadrature::Riemann).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-10);
            }
        }

        #[test]
        fn total_variation_zero_iff_constant(u in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let g = unit_grid(3, 2);
            for j in 0..2 {
                let tv = total_variation_at(&g, &u, j).unwrap();
                let s = &u[j * 3..j * 3 + 3];
                prop_assert!(tv >= 0.0);
                prop_assert_eq!(tv == 0.0, s.iter().all(|&x| x == s[0]));
            }
        }
    }
}
