use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;

use pcfm::constraints::{ConstraintSet, Tag};
use pcfm::fields::{mass_at, SampleBatch};
use pcfm::metrics::{full_report, pointwise_mean, MetricsReport, Normalization};

use super::{csv_field, ensure_distinct, load_batch, load_constraints, resolve_out, write_text};
use crate::error::CliError;
use crate::manifest::RunRecorder;
use crate::plots::{band_chart, heatmap_csv};

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Generated batch directories; one metrics row each.
    #[arg(long, required = true, num_args = 1..)]
    pub generated: Vec<PathBuf>,
    /// Row labels, one per generated batch (default: directory names).
    #[arg(long, num_args = 1..)]
    pub label: Vec<String>,
    /// Reference batch directory.
    #[arg(long)]
    pub reference: PathBuf,
    /// Constraint stack used for the constraint errors.
    #[arg(long)]
    pub constraints: PathBuf,
    /// Report unnormalized squared norms instead of grid means.
    #[arg(long)]
    pub raw_norm: bool,
    /// Also write mass-residual SVG charts and mean-field heatmap CSVs.
    #[arg(long)]
    pub plots: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn normalization(raw: bool) -> Normalization {
    if raw {
        Normalization::Raw
    } else {
        Normalization::GridMean
    }
}

/// Distinct, file-name-safe labels.
fn labels(dirs: &[PathBuf], given: &[String]) -> Result<Vec<String>, CliError> {
    if !given.is_empty() && given.len() != dirs.len() {
        return Err(CliError::usage(format!(
            "{} labels for {} generated batches",
            given.len(),
            dirs.len()
        )));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (k, d) in dirs.iter().enumerate() {
        let base = given
            .get(k)
            .cloned()
            .or_else(|| d.file_name().map(|s| s.to_string_lossy().into_owned()))
            .unwrap_or_else(|| format!("batch{k}"));
        let safe: String = base
            .chars()
            .map(|c| if c.is_alphanumeric() || "-_.".contains(c) { c } else { '_' })
            .collect();
        let mut label = safe.clone();
        let mut n = 1;
        while !seen.insert(label.clone()) {
            n += 1;
            label = format!("{safe}-{n}");
        }
        out.push(label);
    }
    Ok(out)
}

/// Per-sample mass residual over time: the conservation-tagged residual when
/// the stack has one, otherwise the drift `M(t) - M(t_0)`.
pub fn mass_residual_series(set: &ConstraintSet, batch: &SampleBatch) -> Result<(Vec<f64>, Vec<Vec<f64>>), CliError> {
    let g = *batch.grid();
    let mut rows = Vec::with_capacity(batch.count());
    if set.has_tag(Tag::Cl) {
        let cl = set.restrict(Tag::Cl)?;
        for s in batch.samples() {
            rows.push(cl.residual(s)?);
        }
    } else {
        for s in batch.samples() {
            let m0 = mass_at(&g, s, 0, set.quadrature())?;
            rows.push(
                (0..g.nt)
                    .map(|j| mass_at(&g, s, j, set.quadrature()).map(|m| m - m0))
                    .collect::<Result<_, _>>()?,
            );
        }
    }
    let len = rows.first().map_or(0, Vec::len);
    // residual entries line up with the last `len` time levels
    let ts = (g.nt - len.min(g.nt)..g.nt).map(|j| g.t(j)).collect();
    Ok((ts, rows))
}

pub fn mean_std(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let len = rows.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..len).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..len)
        .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    (mean, std)
}

pub fn write_plots(out: &Path, label: &str, set: &ConstraintSet, batch: &SampleBatch) -> Result<(), CliError> {
    let (ts, rows) = mass_residual_series(set, batch)?;
    let (mean, std) = mean_std(&rows);
    let svg = band_chart(&format!("mass residual: {label}"), "t", "residual", &ts, &mean, &std);
    write_text(&out.join(format!("mass_residual_{label}.svg")), &svg)?;
    write_text(
        &out.join(format!("mean_{label}.csv")),
        &heatmap_csv(batch.grid(), &pointwise_mean(batch)),
    )
}

pub fn report_json(label: &str, r: &MetricsReport) -> serde_json::Value {
    json!({ "label": label, "report": r })
}

pub fn run(a: EvalArgs, argv: &[String]) -> Result<(), CliError> {
    let names = labels(&a.generated, &a.label)?;
    let mut rec = RunRecorder::new("eval", argv);
    for g in &a.generated {
        rec.input(g)?;
    }
    rec.input(&a.reference)?;
    rec.input(&a.constraints)?;
    let out = resolve_out(a.out.clone(), "eval".into());
    let mut inputs: Vec<&Path> = a.generated.iter().map(PathBuf::as_path).collect();
    inputs.extend([a.reference.as_path(), a.constraints.as_path()]);
    ensure_distinct(&out, &inputs)?;

    let reference = load_batch(&a.reference)?;
    let (_, set) = load_constraints(&a.constraints, reference.grid())?;
    let norm = normalization(a.raw_norm);

    let mut csv = format!("label,{}\n", MetricsReport::CSV_HEADER);
    let mut reports = Vec::new();
    for (dir, label) in a.generated.iter().zip(&names) {
        let batch = load_batch(dir)?;
        let r = full_report(&batch, &reference, &set, norm)?;
        let _ = writeln!(csv, "{},{}", csv_field(label), r.csv_row());
        println!("{label}: mmse {:.4e}, ce {:?}", r.mmse, r.ce);
        reports.push(report_json(label, &r));
        if a.plots {
            write_plots(&out, label, &set, &batch)?;
        }
    }
    if a.plots {
        write_text(
            &out.join("mean_reference.csv"),
            &heatmap_csv(reference.grid(), &pointwise_mean(&reference)),
        )?;
    }
    write_text(&out.join(METRICS_CSV), &csv)?;
    write_text(
        &out.join(METRICS_JSON),
        &serde_json::to_string_pretty(&serde_json::Value::Array(reports)).expect("reports serialize"),
    )?;
    rec.finish(
        &out,
        json!({
            "generated": a.generated,
            "labels": names,
            "reference": a.reference,
            "constraints": a.constraints,
            "normalization": norm,
            "plots": a.plots,
        }),
    )?;
    println!("metrics in {}", out.join(METRICS_CSV).display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_unique_and_safe() {
        let dirs = vec![PathBuf::from("a/run x"), PathBuf::from("b/run x")];
        assert_eq!(labels(&dirs, &[]).unwrap(), vec!["run_x", "run_x-2"]);
        assert!(labels(&dirs, &["one".into()]).is_err());
    }

    #[test]
    fn mean_std_is_population() {
        let (m, s) = mean_std(&[vec![0.0, 1.0], vec![2.0, 1.0]]);
        assert_eq!((m, s), (vec![1.0, 1.0], vec![1.0, 0.0]));
    }
}
