pub mod ablate;
pub mod eval;
pub mod gen_data;
pub mod sample;
pub mod train;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use pcfm::constraints::{ConstraintSet, ConstraintSpec};
use pcfm::fields::io::deserialize_batch;
use pcfm::fields::{Grid1D, RngSeed, SampleBatch};
use pcfm::flow::{load_checkpoint, MlpField, PriorSpec};
use pcfm::pcfm::{BatchOutcome, SamplerConfig, SamplerKind};
use pcfm::projection::{PenaltyConfig, PenaltyVelocity, ProjectionConfig};

use crate::error::CliError;
use crate::manifest::write_atomic;

pub const DATA_DIR_ENV: &str = "PCFM_DATA_DIR";

/// Root for outputs whose directory was not given explicitly.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("pcfm-data"))
}

pub fn resolve_out(explicit: Option<PathBuf>, default_rel: String) -> PathBuf {
    explicit.unwrap_or_else(|| data_root().join(default_rel))
}

/// Refuses output locations that coincide with an input, so no command
/// overwrites what it reads.
pub fn ensure_distinct(out: &Path, inputs: &[&Path]) -> Result<(), CliError> {
    let canon = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let o = canon(out);
    for i in inputs {
        if o == canon(i) {
            return Err(CliError::usage(format!(
                "output {} must differ from input {}",
                out.display(),
                i.display()
            )));
        }
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())
}

pub fn load_batch(dir: &Path) -> Result<SampleBatch, CliError> {
    Ok(deserialize_batch(dir)?)
}

pub struct Model {
    pub field: MlpField,
    pub grid: Grid1D,
    pub prior: PriorSpec,
}

pub fn load_model(dir: &Path) -> Result<Model, CliError> {
    let (field, card) = load_checkpoint(dir)?;
    let grid = card
        .grid
        .ok_or_else(|| CliError::Data(format!("model in {} records no grid", dir.display())))?;
    let prior = card
        .prior
        .ok_or_else(|| CliError::Data(format!("model in {} records no prior", dir.display())))?;
    Ok(Model { field, grid, prior })
}

pub fn load_constraints(path: &Path, grid: &Grid1D) -> Result<(ConstraintSpec, ConstraintSet), CliError> {
    let spec = ConstraintSpec::from_path(path)?;
    let set = spec.build(grid)?;
    Ok((spec, set))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pcfm,
    Eci,
    Vanilla,
}

impl From<Method> for SamplerKind {
    fn from(m: Method) -> Self {
        match m {
            Method::Pcfm => SamplerKind::Pcfm,
            Method::Eci => SamplerKind::Eci,
            Method::Vanilla => SamplerKind::Vanilla,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VelocityArg {
    Frozen,
    Variable,
}

/// Sampler knobs shared by `sample` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct SamplerFlags {
    /// Sampling method.
    #[arg(long, value_enum, default_value_t = Method::Pcfm)]
    pub method: Method,
    /// Inner gradient steps of the relaxed penalty correction.
    #[arg(long, default_value_t = 20)]
    pub penalty_steps: usize,
    /// Step size of the relaxed penalty correction.
    #[arg(long, default_value_t = 0.01)]
    pub penalty_lr: f64,
    /// Whether the penalty re-evaluates the velocity at every inner step.
    #[arg(long, value_enum, default_value_t = VelocityArg::Frozen)]
    pub penalty_velocity: VelocityArg,
    /// Euler substeps when shooting to the endpoint.
    #[arg(long, default_value_t = 1)]
    pub shoot_steps: usize,
    /// Redraw the interpolation anchor from the prior at every step.
    #[arg(long)]
    pub randomize_anchor: bool,
    /// Residual tolerance of the final projection.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Iteration cap of the final projection.
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    /// Samples to draw.
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// Sampler seed; sample `i` uses stream `i` of it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SamplerFlags {
    pub fn config(&self, n_steps: usize, lambda: f64) -> SamplerConfig {
        SamplerConfig {
            n_steps,
            n_shoot: self.shoot_steps,
            penalty: PenaltyConfig {
                lambda,
                steps: self.penalty_steps,
                lr: self.penalty_lr,
                velocity: match self.penalty_velocity {
                    VelocityArg::Frozen => PenaltyVelocity::Frozen,
                    VelocityArg::Variable => PenaltyVelocity::Variable,
                },
            },
            final_projection: ProjectionConfig {
                tol: self.tol,
                max_iter: self.max_iter,
                ..ProjectionConfig::default()
            },
            randomize_u0_per_batch: self.randomize_anchor,
            seed: RngSeed(self.seed),
        }
    }

    pub fn check(&self) -> Result<(), CliError> {
        if self.count == 0 {
            return Err(CliError::usage("--count must be at least 1"));
        }
        Ok(())
    }
}

/// `index,residual_norm,converged,error`, one row per requested sample.
pub fn residuals_csv(out: &BatchOutcome) -> String {
    let mut rows: Vec<(usize, String)> = Vec::new();
    for ((i, r), c) in out.indices.iter().zip(&out.residual_norms).zip(&out.converged) {
        rows.push((*i, format!("{i},{r:e},{c},")));
    }
    for (i, e) in &out.failures {
        rows.push((*i, format!("{i},,false,{}", csv_field(e))));
    }
    rows.sort_by_key(|r| r.0);
    let mut text = String::from("index,residual_norm,converged,error\n");
    for (_, r) in rows {
        let _ = writeln!(text, "{r}");
    }
    text
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
