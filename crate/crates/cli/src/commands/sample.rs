use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use pcfm::fields::io::{serialize_batch_with, BatchMeta};
use pcfm::pcfm::{sample_batch, SamplerError};

use super::{ensure_distinct, load_constraints, load_model, residuals_csv, resolve_out, write_text, SamplerFlags};
use crate::error::CliError;
use crate::manifest::RunRecorder;

pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const CONSTRAINTS_FILE: &str = "constraints.json";

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Constraint stack JSON.
    #[arg(long)]
    pub constraints: PathBuf,
    /// Flow steps.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Penalty weight of the relaxed correction (0 disables it).
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(a: SampleArgs, argv: &[String]) -> Result<(), CliError> {
    a.sampler.check()?;
    let mut rec = RunRecorder::new("sample", argv);
    rec.input(&a.model)?;
    rec.input(&a.constraints)?;
    rec.seed("sampler", a.sampler.seed);
    let method = a.sampler.method;
    let out = resolve_out(
        a.out.clone(),
        format!(
            "samples/{}-n{}-lambda{}-seed{}",
            serde_json::to_value(method)
                .expect("method serializes")
                .as_str()
                .unwrap_or("run"),
            a.steps,
            a.lambda,
            a.sampler.seed
        ),
    );
    ensure_distinct(&out, &[&a.model, &a.constraints])?;

    let model = load_model(&a.model)?;
    let (spec, set) = load_constraints(&a.constraints, &model.grid)?;
    let cfg = a.sampler.config(a.steps, a.lambda);

    let outcome = match sample_batch(method.into(), &model.field, &set, &model.prior, a.sampler.count, &cfg) {
        Ok(o) => o,
        Err(SamplerError::AllFailed(failures)) => {
            let mut csv = String::from("index,residual_norm,converged,error\n");
            for (i, e) in &failures {
                csv.push_str(&format!("{i},,false,{}\n", super::csv_field(e)));
            }
            write_text(&out.join(RESIDUALS_FILE), &csv)?;
            return Err(SamplerError::AllFailed(failures).into());
        }
        Err(e) => return Err(e.into()),
    };

    let sampler_meta = json!({
        "method": method,
        "config": cfg,
        "count_requested": a.sampler.count,
        "indices": outcome.indices,
        "model": a.model.display().to_string(),
        "constraints": spec,
    });
    let meta = BatchMeta {
        params: None,
        sampler: Some(sampler_meta.clone()),
    };
    serialize_batch_with(&outcome.batch, &out, &meta)?;
    write_text(&out.join(RESIDUALS_FILE), &residuals_csv(&outcome))?;
    write_text(&out.join(CONSTRAINTS_FILE), &spec.to_json())?;
    rec.finish(&out, sampler_meta)?;

    let max = outcome.residual_norms.iter().cloned().fold(0.0, f64::max);
    let unconverged = outcome.converged.iter().filter(|c| !**c).count();
    if !outcome.failures.is_empty() || unconverged > 0 {
        eprintln!(
            "warning: {} samples failed, {} did not reach the projection tolerance (see {})",
            outcome.failures.len(),
            unconverged,
            RESIDUALS_FILE
        );
    }
    println!(
        "wrote {} samples to {}; max residual {max:.3e}",
        outcome.batch.count(),
        out.display()
    );
    Ok(())
}
