//! Conditional flow matching on straight interpolants.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_prior_into, FlowError, MlpField, PriorSpec, VelocityField};
use crate::fields::{RngSeed, SampleBatch};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// SGD with heavy-ball momentum.
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: RngSeed,
    pub momentum: f64,
    pub optimizer: Optimizer,
    /// Random interpolant draws per epoch; defaults to the dataset size.
    pub pairs_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: RngSeed(0),
            momentum: 0.9,
            optimizer: Optimizer::Sgd,
            pairs_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(FlowError::Config(format!(
                "need batch_size >= 1, learning_rate > 0, momentum in [0, 1) (got {}, {}, {})",
                self.batch_size, self.learning_rate, self.momentum
            )));
        }
        if self.pairs_per_epoch == Some(0) {
            return Err(FlowError::Config("pairs_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub field: MlpField,
    /// Mean minibatch loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss on a fixed monitoring draw before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Minibatch of interpolants: states `u_τ`, times and targets `u1 - u0`.
struct Draw {
    states: Vec<f64>,
    taus: Vec<f64>,
    targets: Vec<f64>,
}

fn draw(dataset: &SampleBatch, prior: &PriorSpec, indices: &[usize], rng: &mut impl Rng) -> Draw {
    let grid = dataset.grid();
    let n = grid.len();
    let mut states = vec![0.0; indices.len() * n];
    let mut targets = vec![0.0; indices.len() * n];
    let mut taus = Vec::with_capacity(indices.len());
    let mut u0 = vec![0.0; n];
    for (b, &idx) in indices.iter().enumerate() {
        sample_prior_into(prior, grid, rng, &mut u0);
        let tau: f64 = rng.random();
        let u1 = dataset.sample(idx);
        let (s, t) = (&mut states[b * n..(b + 1) * n], &mut targets[b * n..(b + 1) * n]);
        for i in 0..n {
            s[i] = (1.0 - tau) * u0[i] + tau * u1[i];
            t[i] = u1[i] - u0[i];
        }
        taus.push(tau);
    }
    Draw { states, taus, targets }
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64
}

/// CFM loss of `field` on `pairs` seeded interpolant draws.
pub fn cfm_loss(field: &MlpField, dataset: &SampleBatch, prior: &PriorSpec, pairs: usize, seed: RngSeed) -> f64 {
    let mut rng = seed.rng();
    let indices: Vec<usize> = (0..pairs).map(|k| k % dataset.count()).collect();
    let mut total = 0.0;
    for chunk in indices.chunks(64) {
        let d = draw(dataset, prior, chunk, &mut rng);
        total += mse(&field.eval_batch(&d.states, &d.taus), &d.targets) * chunk.len() as f64;
    }
    total / pairs as f64
}

/// Trains a fresh network with hidden widths `hidden`.
pub fn train_cfm(
    dataset: &SampleBatch,
    prior: &PriorSpec,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, FlowError> {
    let field = MlpField::new(dataset.grid().len(), hidden, cfg.seed.derive(1).0)?;
    continue_training(field, dataset, prior, cfg)
}

/// Trains an existing network further.
pub fn continue_training(
    mut field: MlpField,
    dataset: &SampleBatch,
    prior: &PriorSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, FlowError> {
    cfg.validate()?;
    prior.validate().map_err(FlowError::Config)?;
    if field.dim() != dataset.grid().len() {
        return Err(FlowError::Dim {
            expected: field.dim(),
            actual: dataset.grid().len(),
        });
    }
    let monitor_seed = cfg.seed.derive(2);
    let monitor_pairs = dataset.count().clamp(64, 256);
    let initial_loss = cfm_loss(&field, dataset, prior, monitor_pairs, monitor_seed);

    let mut rng = cfg.seed.derive(3).rng();
    let np = field.num_params();
    let mut m1 = vec![0.0; np];
    let mut m2 = vec![0.0; np];
    let mut step_count = 0i32;
    let pairs = cfg.pairs_per_epoch.unwrap_or(dataset.count());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = Vec::new();

    for epoch in 0..cfg.epochs {
        // sample indices: shuffled passes over the dataset
        while order.len() < pairs {
            let mut pass: Vec<usize> = (0..dataset.count()).collect();
            pass.shuffle(&mut rng);
            order.extend(pass);
        }
        let epoch_indices: Vec<usize> = order.drain(..pairs).collect();
        let mut loss_sum = 0.0;
        for chunk in epoch_indices.chunks(cfg.batch_size) {
            let d = draw(dataset, prior, chunk, &mut rng);
            let tape = field.forward(&d.states, &d.taus);
            let pred = tape.output();
            let loss = mse(pred, &d.targets);
            if !loss.is_finite() {
                return Err(FlowError::TrainingDiverged { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            let scale = 2.0 / pred.len() as f64;
            let d_out: Vec<f64> = pred.iter().zip(&d.targets).map(|(p, t)| scale * (p - t)).collect();
            let grad = field.backward(&tape, &d_out, true).0.expect("parameter gradient");
            step_count += 1;
            let update = match cfg.optimizer {
                Optimizer::Sgd => {
                    for (v, g) in m1.iter_mut().zip(&grad) {
                        *v = cfg.momentum * *v + g;
                    }
                    m1.clone()
                }
                Optimizer::Adam => {
                    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                    let c1 = 1.0 - f64::powi(b1, step_count);
                    let c2 = 1.0 - f64::powi(b2, step_count);
                    m1.iter_mut()
                        .zip(m2.iter_mut())
                        .zip(&grad)
                        .map(|((a, b), g)| {
                            *a = b1 * *a + (1.0 - b1) * g;
                            *b = b2 * *b + (1.0 - b2) * g * g;
                            (*a / c1) / ((*b / c2).sqrt() + eps)
                        })
                        .collect()
                }
            };
            field.add_to_params(&update, -cfg.learning_rate);
        }
        let epoch_loss = loss_sum / pairs as f64;
        if !epoch_loss.is_finite() || field.params().iter().any(|p| !p.is_finite()) {
            return Err(FlowError::TrainingDiverged { epoch });
        }
        epoch_losses.push(epoch_loss);
    }
    let final_loss = cfm_loss(&field, dataset, prior, monitor_pairs, monitor_seed);
    Ok(TrainOutcome {
        field,
        epoch_losses,
        initial_loss,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Grid1D;
    use crate::flow::VelocityField;

    fn grid() -> Grid1D {
        Grid1D::inclusive(6, 4, (0.0, 1.0), (0.0, 1.0)).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_field() {
        let g = grid();
        let data = SampleBatch::new(g, vec![0.5; g.len()]).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            seed: RngSeed(3),
            ..Default::default()
        };
        let out = train_cfm(&data, &PriorSpec::white(), &[8], &cfg).unwrap();
        let fresh = MlpField::new(g.len(), &[8], RngSeed(3).derive(1).0).unwrap();
        assert_eq!(out.field, fresh);
        assert!(out.epoch_losses.is_empty());
        assert_eq!(out.initial_loss, out.final_loss);
    }

    #[test]
    fn collapsed_prior_learns_constant_velocity() {
        let g = grid();
        let target: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.37).sin()).collect();
        let data = SampleBatch::new(g, target.clone()).unwrap();
        let cfg = TrainConfig {
            epochs: 400,
            batch_size: 16,
            learning_rate: 3e-3,
            optimizer: Optimizer::Adam,
            pairs_per_epoch: Some(16),
            seed: RngSeed(1),
            ..Default::default()
        };
        let out = train_cfm(&data, &PriorSpec::white().with_scale(0.0), &[32], &cfg).unwrap();
        let norm = target.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut err = 0.0;
        for k in 0..=10 {
            let tau = k as f64 / 10.0;
            let u: Vec<f64> = target.iter().map(|v| tau * v).collect();
            let v = out.field.eval(&u, tau).unwrap();
            err += v.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / norm;
        }
        assert!(err / 11.0 < 0.05, "relative error {}", err / 11.0);
    }

    #[test]
    fn default_sgd_reduces_loss() {
        let g = grid();
        let states: Vec<Vec<f64>> = (0..8)
            .map(|s| (0..g.len()).map(|k| ((k + s) as f64 * 0.3).cos()).collect())
            .collect();
        let data = SampleBatch::from_states(g, &states).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            ..Default::default()
        };
        let out = train_cfm(&data, &PriorSpec::white(), &[16], &cfg).unwrap();
        assert_eq!(out.epoch_losses.len(), 50);
        assert!(out.final_loss < out.initial_loss);
    }

    #[test]
    fn divergence_is_reported() {
        let g = grid();
        let data = SampleBatch::new(g, vec![1e3; g.len()]).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e6,
            ..Default::default()
        };
        assert!(matches!(
            train_cfm(&data, &PriorSpec::white(), &[8], &cfg),
            Err(FlowError::TrainingDiverged { .. })
        ));
    }
}
