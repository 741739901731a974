use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use pcfm::constraints::{ConstraintKind, ConstraintSet};
use pcfm::metrics::{full_report, MetricsReport};
use pcfm::pcfm::sample_batch;

use super::eval::{normalization, write_plots};
use super::{ensure_distinct, load_batch, load_constraints, load_model, resolve_out, write_text, SamplerFlags};
use crate::error::CliError;
use crate::manifest::RunRecorder;

pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Base constraint stack; collocation sweeps append to it.
    #[arg(long)]
    pub constraints: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Flow step counts to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10,100")]
    pub steps: Vec<usize>,
    /// Penalty weights to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    pub lambda: Vec<f64>,
    /// Godunov collocation counts to sweep (0 = none), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub collocation: Vec<usize>,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[arg(long)]
    pub raw_norm: bool,
    /// Mass-residual charts and mean heatmaps per cell.
    #[arg(long)]
    pub plots: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Cell {
    steps: usize,
    lambda: f64,
    collocation: Option<usize>,
}

impl Cell {
    fn label(&self) -> String {
        let mut s = format!("n{}-lambda{}", self.steps, self.lambda);
        if let Some(k) = self.collocation {
            s.push_str(&format!("-k{k}"));
        }
        s
    }
}

fn cells(a: &AblateArgs) -> Result<Vec<Cell>, CliError> {
    if a.steps.is_empty() || a.lambda.is_empty() {
        return Err(CliError::usage("empty sweep: --steps and --lambda need at least one value"));
    }
    if a.steps.contains(&0) {
        return Err(CliError::usage("--steps values must be at least 1"));
    }
    let ks: Vec<Option<usize>> = if a.collocation.is_empty() {
        vec![None]
    } else {
        a.collocation.iter().map(|k| Some(*k)).collect()
    };
    let mut out = Vec::new();
    for &steps in &a.steps {
        for &lambda in &a.lambda {
            for &collocation in &ks {
                out.push(Cell {
                    steps,
                    lambda,
                    collocation,
                });
            }
        }
    }
    Ok(out)
}

/// The base stack plus `k` collocation points, reusing the inflow value of
/// the stack's Burgers mass balance when it carries one.
fn with_collocation(base: &ConstraintSet, k: usize) -> Result<ConstraintSet, CliError> {
    if k == 0 {
        return Ok(base.clone());
    }
    let g = *base.grid();
    if k >= g.nt {
        return Err(CliError::usage(format!("--collocation {k} needs k < nt = {}", g.nt)));
    }
    let left_state = base.kinds().iter().find_map(|c| match c {
        ConstraintKind::BurgersMassConservation { left_state } => *left_state,
        _ => None,
    });
    let mut kinds: Vec<ConstraintKind> = base
        .kinds()
        .iter()
        .filter(|c| !matches!(c, ConstraintKind::GodunovFluxCollocation { .. }))
        .cloned()
        .collect();
    kinds.push(ConstraintKind::GodunovFluxCollocation {
        k,
        dt_sim: g.dt(),
        left_state,
    });
    Ok(ConstraintSet::new(g, kinds)?
        .with_jacobian_mode(base.jacobian_mode())
        .with_quadrature(base.quadrature()))
}

pub fn run(a: AblateArgs, argv: &[String]) -> Result<(), CliError> {
    a.sampler.check()?;
    let sweep = cells(&a)?;
    let mut rec = RunRecorder::new("ablate", argv);
    rec.input(&a.model)?;
    rec.input(&a.constraints)?;
    rec.input(&a.reference)?;
    rec.seed("sampler", a.sampler.seed);
    let out = resolve_out(a.out.clone(), "ablate".into());
    ensure_distinct(&out, &[&a.model, &a.constraints, &a.reference])?;

    let model = load_model(&a.model)?;
    let reference = load_batch(&a.reference)?;
    if *reference.grid() != model.grid {
        return Err(CliError::Data("reference batch and model live on different grids".into()));
    }
    let (_, base) = load_constraints(&a.constraints, &model.grid)?;
    let norm = normalization(a.raw_norm);

    let mut csv = format!(
        "steps,lambda,collocation,method,{},converged,failed\n",
        MetricsReport::CSV_HEADER
    );
    let mut rows = Vec::new();
    for cell in &sweep {
        let set = with_collocation(&base, cell.collocation.unwrap_or(0))?;
        let cfg = a.sampler.config(cell.steps, cell.lambda);
        let outcome = sample_batch(
            a.sampler.method.into(),
            &model.field,
            &set,
            &model.prior,
            a.sampler.count,
            &cfg,
        )?;
        let report = full_report(&outcome.batch, &reference, &set, norm)?;
        let converged = outcome.converged.iter().filter(|c| **c).count();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            cell.steps,
            cell.lambda,
            cell.collocation.map(|k| k.to_string()).unwrap_or_default(),
            serde_json::to_value(a.sampler.method)
                .expect("method serializes")
                .as_str()
                .unwrap_or(""),
            report.csv_row(),
            converged,
            outcome.failures.len()
        );
        println!("{}: mmse {:.4e}, ce {:?}", cell.label(), report.mmse, report.ce);
        if a.plots {
            write_plots(&out, &cell.label(), &set, &outcome.batch)?;
        }
        rows.push(json!({
            "steps": cell.steps,
            "lambda": cell.lambda,
            "collocation": cell.collocation,
            "config": cfg,
            "report": report,
        }));
    }
    write_text(&out.join(ABLATION_FILE), &csv)?;
    rec.finish(
        &out,
        json!({
            "method": a.sampler.method,
            "count": a.sampler.count,
            "normalization": norm,
            "cells": rows,
        }),
    )?;
    println!("{} cells written to {}", sweep.len(), out.join(ABLATION_FILE).display());
    Ok(())
}
