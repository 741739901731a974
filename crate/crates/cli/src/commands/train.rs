use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::json;

use pcfm::fields::RngSeed;
use pcfm::flow::{save_checkpoint, train_cfm, ModelCard, Optimizer, PriorSpec, TrainConfig};

use super::{ensure_distinct, load_batch, resolve_out, write_text};
use crate::error::CliError;
use crate::manifest::RunRecorder;

pub const LOSS_FILE: &str = "loss.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    White,
    Smoothed,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "128,128")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Heavy-ball momentum for `--optimizer sgd`.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Interpolant draws per epoch (default: dataset size).
    #[arg(long)]
    pub pairs_per_epoch: Option<usize>,
    #[arg(long, value_enum, default_value_t = PriorArg::Smoothed)]
    pub prior: PriorArg,
    /// Spatial correlation length of the smoothed prior, in units of x.
    #[arg(long, default_value_t = 0.15)]
    pub length_scale: f64,
    /// Temporal correlation length of the smoothed prior, in units of t.
    #[arg(long)]
    pub time_length_scale: Option<f64>,
    /// Standard deviation multiplier of the prior.
    #[arg(long, default_value_t = 1.0)]
    pub prior_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    fn prior(&self) -> Result<PriorSpec, CliError> {
        let base = match (self.prior, self.time_length_scale) {
            (PriorArg::White, None) => PriorSpec::white(),
            (PriorArg::White, Some(_)) => return Err(CliError::usage("--time-length-scale needs --prior smoothed")),
            (PriorArg::Smoothed, None) => PriorSpec::smoothed(self.length_scale),
            (PriorArg::Smoothed, Some(lt)) => PriorSpec::smoothed_space_time(self.length_scale, lt),
        };
        let prior = base.with_scale(self.prior_scale);
        prior.validate().map_err(|e| CliError::usage(format!("prior flags: {e}")))?;
        Ok(prior)
    }
}

pub fn run(a: TrainArgs, argv: &[String]) -> Result<(), CliError> {
    if a.hidden.is_empty() || a.hidden.contains(&0) {
        return Err(CliError::usage("--hidden needs one or more positive widths"));
    }
    let prior = a.prior()?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: RngSeed(a.seed),
        momentum: a.momentum,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
        pairs_per_epoch: a.pairs_per_epoch,
    };
    cfg.validate()?;

    let mut rec = RunRecorder::new("train", argv);
    rec.input(&a.data)?;
    rec.seed("train", a.seed);
    let stem = a
        .data
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    let out = resolve_out(a.out.clone(), format!("models/{stem}-seed{}", a.seed));
    ensure_distinct(&out, &[&a.data])?;

    let dataset = load_batch(&a.data)?;
    let outcome = train_cfm(&dataset, &prior, &a.hidden, &cfg)?;

    let training = json!({
        "config": cfg,
        "hidden": a.hidden,
        "dataset": a.data.display().to_string(),
        "initial_loss": outcome.initial_loss,
        "final_loss": outcome.final_loss,
    });
    let mut card = ModelCard::for_field(&outcome.field);
    card.grid = Some(*dataset.grid());
    card.prior = Some(prior);
    card.training = Some(training.clone());
    save_checkpoint(&outcome.field, &card, &out)?;

    let mut csv = String::from("epoch,loss\n");
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l:e}", e + 1);
    }
    write_text(&out.join(LOSS_FILE), &csv)?;
    rec.finish(&out, json!({ "prior": prior, "training": training }))?;
    println!(
        "trained {} epochs: monitor loss {:.4e} -> {:.4e}; model in {}",
        a.epochs,
        outcome.initial_loss,
        outcome.final_loss,
        out.display()
    );
    Ok(())
}
