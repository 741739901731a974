//! Fully connected tanh network on the flattened grid, with a Fourier time
//! embedding appended to the input. Backprop is written out by hand.

use std::f64::consts::PI;

use matrixmultiply::dgemm;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_input, FlowError, VelocityField};

pub const TIME_EMBED_DIM: usize = 5;

/// `[τ, sin 2πτ, cos 2πτ, sin 4πτ, cos 4πτ]`
pub fn time_embedding(tau: f64) -> [f64; TIME_EMBED_DIM] {
    let w = 2.0 * PI * tau;
    [tau, w.sin(), w.cos(), (2.0 * w).sin(), (2.0 * w).cos()]
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// `fan_out x fan_in`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpField {
    state_dim: usize,
    layers: Vec<Layer>,
}

/// Activations kept for the backward pass.
pub(crate) struct Tape {
    batch: usize,
    /// Input of every layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

/// `C (m x n) = A (m x k) * B (k x n)` on row-major buffers, with explicit strides for A and B.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass buffers sized for the given shapes and strides.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub(crate) fn output(&self) -> &[f64] {
        &self.output
    }
}

impl MlpField {
    /// Random init: weights `N(0, 1/fan_in)`, zero biases.
    pub fn new(state_dim: usize, hidden: &[usize], seed: u64) -> Result<Self, FlowError> {
        let mut field = Self::zeros(state_dim, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut field.layers {
            let normal = Normal::new(0.0, 1.0 / (layer.fan_in as f64).sqrt()).expect("positive std");
            for w in &mut layer.weights {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(field)
    }

    pub fn zeros(state_dim: usize, hidden: &[usize]) -> Result<Self, FlowError> {
        let mut widths = vec![state_dim + TIME_EMBED_DIM];
        widths.extend_from_slice(hidden);
        widths.push(state_dim);
        Self::from_widths(&widths)
    }

    /// Zero network with the full width list `[n + embed, hidden.., n]`.
    pub fn from_widths(widths: &[usize]) -> Result<Self, FlowError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(FlowError::Config(format!("bad layer widths {widths:?}")));
        }
        let state_dim = *widths.last().expect("non-empty");
        if widths[0] != state_dim + TIME_EMBED_DIM {
            return Err(FlowError::Config(format!(
                "input width {} must equal state dim {} plus {TIME_EMBED_DIM}",
                widths[0], state_dim
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                fan_in: w[0],
                fan_out: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(MlpField { state_dim, layers })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in];
        w.extend(self.layers.iter().map(|l| l.fan_out));
        w
    }

    pub fn hidden(&self) -> Vec<usize> {
        let w = self.widths();
        w[1..w.len() - 1].to_vec()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in storage order: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), FlowError> {
        if p.len() != self.num_params() {
            return Err(FlowError::Dim {
                expected: self.num_params(),
                actual: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite("parameter"));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Adds `scale * delta` to the parameters in storage order.
    pub(crate) fn add_to_params(&mut self, delta: &[f64], scale: f64) {
        let mut off = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w += scale * delta[off];
                off += 1;
            }
        }
    }

    /// Forward pass on a batch of states (row-major `batch x n`).
    pub(crate) fn forward(&self, states: &[f64], taus: &[f64]) -> Tape {
        let batch = taus.len();
        let n = self.state_dim;
        debug_assert_eq!(states.len(), batch * n);
        let width = n + TIME_EMBED_DIM;
        let mut x = vec![0.0; batch * width];
        for b in 0..batch {
            let row = &mut x[b * width..(b + 1) * width];
            row[..n].copy_from_slice(&states[b * n..(b + 1) * n]);
            row[n..].copy_from_slice(&time_embedding(taus[b]));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; batch * l.fan_out];
            for b in 0..batch {
                y[b * l.fan_out..(b + 1) * l.fan_out].copy_from_slice(&l.bias);
            }
            // y += x Wᵀ
            gemm(
                batch, l.fan_in, l.fan_out, &x, l.fan_in, 1, &l.weights, 1, l.fan_in, &mut y, 1.0,
            );
            if li != last {
                for v in &mut y {
                    *v = v.tanh();
                }
            }
            inputs.push(std::mem::replace(&mut x, y));
        }
        Tape {
            batch,
            inputs,
            output: x,
        }
    }

    /// Backward pass from `d_out` (`batch x n`). Returns the parameter
    /// gradient (storage order) when `want_params`, and the gradient with
    /// respect to the state part of the input.
    pub(crate) fn backward(&self, tape: &Tape, d_out: &[f64], want_params: bool) -> (Option<Vec<f64>>, Vec<f64>) {
        let batch = tape.batch;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut delta = d_out.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let x = &tape.inputs[li];
            if want_params {
                let mut gw = vec![0.0; l.weights.len()];
                // gw = deltaᵀ x
                gemm(l.fan_out, batch, l.fan_in, &delta, 1, l.fan_out, x, l.fan_in, 1, &mut gw, 0.0);
                let mut gb = vec![0.0; l.fan_out];
                for b in 0..batch {
                    for (g, d) in gb.iter_mut().zip(&delta[b * l.fan_out..(b + 1) * l.fan_out]) {
                        *g += d;
                    }
                }
                grads.push((gw, gb));
            }
            let mut dx = vec![0.0; batch * l.fan_in];
            // dx = delta W
            gemm(
                batch, l.fan_out, l.fan_in, &delta, l.fan_out, 1, &l.weights, l.fan_in, 1, &mut dx, 0.0,
            );
            if li > 0 {
                // x = tanh(pre), dpre = dx * (1 - x²)
                for (d, xv) in dx.iter_mut().zip(x) {
                    *d *= 1.0 - xv * xv;
                }
            }
            delta = dx;
        }
        let n = self.state_dim;
        let width = n + TIME_EMBED_DIM;
        let mut d_state = Vec::with_capacity(batch * n);
        for b in 0..batch {
            d_state.extend_from_slice(&delta[b * width..b * width + n]);
        }
        let params = want_params.then(|| {
            let mut p = Vec::with_capacity(self.num_params());
            for (gw, gb) in grads.into_iter().rev() {
                p.extend(gw);
                p.extend(gb);
            }
            p
        });
        (params, d_state)
    }

    /// Batched evaluation; `states` is row-major `taus.len() x n`.
    pub fn eval_batch(&self, states: &[f64], taus: &[f64]) -> Vec<f64> {
        self.forward(states, taus).output
    }
}

impl VelocityField for MlpField {
    fn dim(&self) -> usize {
        self.state_dim
    }

    fn eval(&self, u: &[f64], tau: f64) -> Result<Vec<f64>, FlowError> {
        check_input(self.state_dim, u, tau)?;
        let out = self.forward(u, &[tau]).output;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite("field output"));
        }
        Ok(out)
    }

    fn vjp(&self, u: &[f64], tau: f64, w: &[f64]) -> Result<Vec<f64>, FlowError> {
        check_input(self.state_dim, u, tau)?;
        if w.len() != self.state_dim {
            return Err(FlowError::Dim {
                expected: self.state_dim,
                actual: w.len(),
            });
        }
        let tape = self.forward(u, &[tau]);
        Ok(self.backward(&tape, w, false).1)
    }
}
