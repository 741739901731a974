use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::fields::{Grid1D, RngSeed, SolutionField, Spacing};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    WhiteGaussian,
    /// White noise convolved along `x` with a Gaussian kernel of this
    /// length scale (in units of `x`), then rescaled to unit variance.
    /// With `time_length_scale` the noise is also smoothed along `t`.
    SmoothedGaussian {
        length_scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        time_length_scale: Option<f64>,
    },
}

/// Prior noise measure. `scale` multiplies the unit-variance draw; zero
/// collapses the prior onto the zero field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(flatten)]
    pub kind: PriorKind,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl PriorSpec {
    pub fn white() -> Self {
        PriorSpec {
            kind: PriorKind::WhiteGaussian,
            scale: 1.0,
        }
    }

    pub fn smoothed(length_scale: f64) -> Self {
        PriorSpec {
            kind: PriorKind::SmoothedGaussian {
                length_scale,
                time_length_scale: None,
            },
            scale: 1.0,
        }
    }

    /// Separable smoothing in space and time.
    pub fn smoothed_space_time(length_scale: f64, time_length_scale: f64) -> Self {
        PriorSpec {
            kind: PriorKind::SmoothedGaussian {
                length_scale,
                time_length_scale: Some(time_length_scale),
            },
            scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if let PriorKind::SmoothedGaussian {
            length_scale,
            time_length_scale,
        } = self.kind
        {
            for l in std::iter::once(length_scale).chain(time_length_scale) {
                if !(l > 0.0 && l.is_finite()) {
                    return Err(format!("length scales must be positive, got {l}"));
                }
            }
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(format!("scale must be non-negative, got {}", self.scale));
        }
        Ok(())
    }
}

/// Per-node kernel taps `(offset, weight)` along one axis of `n` nodes,
/// normalized so the smoothed value has unit variance.
fn kernel_taps(n: usize, step: f64, periodic: bool, length_scale: f64) -> Vec<Vec<(usize, f64)>> {
    let period = step * n as f64;
    let reach = 4.0 * length_scale;
    (0..n)
        .map(|i| {
            let mut taps: Vec<(usize, f64)> = (0..n)
                .filter_map(|k| {
                    let mut d = (i as f64 - k as f64).abs() * step;
                    if periodic {
                        d = d.min(period - d);
                    }
                    (d <= reach).then(|| (k, (-0.5 * (d / length_scale).powi(2)).exp()))
                })
                .collect();
            let norm = taps.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            for t in &mut taps {
                t.1 /= norm;
            }
            taps
        })
        .collect()
}

/// Draws one prior state into `out` (length `nx * nt`).
pub fn sample_prior_into(spec: &PriorSpec, grid: &Grid1D, rng: &mut impl Rng, out: &mut [f64]) {
    debug_assert_eq!(out.len(), grid.len());
    let (nx, nt) = (grid.nx, grid.nt);
    match spec.kind {
        PriorKind::WhiteGaussian => {
            for v in out.iter_mut() {
                *v = spec.scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        PriorKind::SmoothedGaussian {
            length_scale,
            time_length_scale,
        } => {
            let taps = kernel_taps(nx, grid.dx(), grid.spacing == Spacing::Periodic, length_scale);
            let mut noise = vec![0.0; nx];
            for j in 0..nt {
                for v in noise.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let slice = &mut out[j * nx..(j + 1) * nx];
                for (s, t) in slice.iter_mut().zip(&taps) {
                    *s = t.iter().map(|&(k, w)| w * noise[k]).sum::<f64>();
                }
            }
            // the space-smoothed slices are independent, so a second
            // unit-norm kernel along t keeps unit variance
            if let Some(lt) = time_length_scale {
                let ttaps = kernel_taps(nt, grid.dt(), false, lt);
                let mut column = vec![0.0; nt];
                for i in 0..nx {
                    for (j, c) in column.iter_mut().enumerate() {
                        *c = out[j * nx + i];
                    }
                    for (j, t) in ttaps.iter().enumerate() {
                        out[j * nx + i] = t.iter().map(|&(k, w)| w * column[k]).sum::<f64>();
                    }
                }
            }
            for v in out.iter_mut() {
                *v *= spec.scale;
            }
        }
    }
}

/// A prior draw; a pure function of `(spec, grid, seed)`.
pub fn sample_prior(spec: &PriorSpec, grid: &Grid1D, seed: RngSeed) -> SolutionField {
    let mut values = vec![0.0; grid.len()];
    sample_prior_into(spec, grid, &mut seed.rng(), &mut values);
    SolutionField::new(*grid, values).expect("prior draws are finite")
}
