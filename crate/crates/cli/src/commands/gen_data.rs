use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::json;

use pcfm::fields::io::serialize_batch_with;
use pcfm::fields::{Grid1D, RngSeed, Spacing};
use pcfm::pde_data::{make_dataset, ProblemKind, ProblemSpec, Range};

use super::{ensure_distinct, resolve_out, write_text};
use crate::error::CliError;
use crate::manifest::RunRecorder;

pub const PROBLEM_FILE: &str = "problem.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpacingArg {
    Inclusive,
    Periodic,
}

/// `lo:hi`, or a single value that pins the parameter.
fn parse_range(s: &str) -> Result<Range, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}` is not a number: {e}"));
    let r = match s.split_once(':') {
        Some((lo, hi)) => Range::new(num(lo)?, num(hi)?),
        None => Range::fixed(num(s)?),
    };
    if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
        return Err(format!("`{s}` is not a finite interval lo:hi with lo <= hi"));
    }
    Ok(r)
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// heat, burgers or reaction-advection.
    #[arg(long, required_unless_present = "spec")]
    pub problem: Option<String>,
    /// Complete problem description as JSON (as written to problem.json); flags override it.
    #[arg(long, value_name = "FILE", conflicts_with = "problem")]
    pub spec: Option<PathBuf>,
    /// Number of "a" variants (phase, step location or initial profile).
    #[arg(long, default_value_t = 8)]
    pub na: usize,
    /// Number of "b" variants (diffusivity, inflow value or flux pair).
    #[arg(long, default_value_t = 8)]
    pub nb: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub x_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub x_max: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t_max: Option<f64>,
    #[arg(long, value_enum)]
    pub spacing: Option<SpacingArg>,
    #[arg(long)]
    pub cfl: Option<f64>,

    /// Heat diffusivity range.
    #[arg(long, value_parser = parse_range)]
    pub alpha: Option<Range>,
    /// Heat initial phase range.
    #[arg(long, value_parser = parse_range)]
    pub phi: Option<Range>,
    /// Burgers step location range.
    #[arg(long, value_parser = parse_range)]
    pub p_loc: Option<Range>,
    /// Burgers step smoothing width.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Burgers left boundary value range.
    #[arg(long, value_parser = parse_range)]
    pub u_bc: Option<Range>,
    /// Reaction rate.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Advection speed.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Left boundary flux range.
    #[arg(long, value_parser = parse_range)]
    pub g_left: Option<Range>,
    /// Right boundary flux range.
    #[arg(long, value_parser = parse_range)]
    pub g_right: Option<Range>,
    #[arg(long, value_parser = parse_range)]
    pub ic_base: Option<Range>,
    #[arg(long, value_parser = parse_range)]
    pub ic_amp: Option<Range>,
    #[arg(long, value_parser = parse_range)]
    pub ic_freq: Option<Range>,
    #[arg(long, value_parser = parse_range, allow_negative_numbers = true)]
    pub ic_phase: Option<Range>,
    #[arg(long, value_parser = parse_range)]
    pub ic_bump_amp: Option<Range>,
    #[arg(long, value_parser = parse_range)]
    pub ic_bump_center: Option<Range>,
    #[arg(long, value_parser = parse_range)]
    pub ic_bump_width: Option<Range>,
}

fn not_for(flag: &str, problem: &str) -> CliError {
    CliError::usage(format!("--{flag} does not apply to problem `{problem}`"))
}

/// Base spec from `--problem` or `--spec`, with every given flag applied.
pub fn resolve_spec(a: &GenDataArgs) -> Result<ProblemSpec, CliError> {
    let mut spec = match (&a.problem, &a.spec) {
        (Some(name), _) => ProblemSpec::by_name(name)?,
        (None, Some(path)) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("malformed problem description {}: {e}", path.display())))?
        }
        (None, None) => return Err(CliError::usage("one of --problem or --spec is required")),
    };

    let g = spec.grid;
    let spacing = match a.spacing {
        Some(SpacingArg::Inclusive) => Spacing::Inclusive,
        Some(SpacingArg::Periodic) => Spacing::Periodic,
        None => g.spacing,
    };
    spec.grid = Grid1D::new(
        a.nx.unwrap_or(g.nx),
        a.nt.unwrap_or(g.nt),
        (a.x_min.unwrap_or(g.x_min), a.x_max.unwrap_or(g.x_max)),
        (a.t_min.unwrap_or(g.t_min), a.t_max.unwrap_or(g.t_max)),
        spacing,
    )
    .map_err(|e| CliError::usage(format!("grid flags: {e}")))?;
    if let Some(c) = a.cfl {
        spec.cfl = c;
    }

    let name = spec.name();
    let heat_flags = [("alpha", a.alpha.is_some()), ("phi", a.phi.is_some())];
    let burgers_flags = [
        ("p-loc", a.p_loc.is_some()),
        ("eps", a.eps.is_some()),
        ("u-bc", a.u_bc.is_some()),
    ];
    let rd_flags = [
        ("rho", a.rho.is_some()),
        ("nu", a.nu.is_some()),
        ("g-left", a.g_left.is_some()),
        ("g-right", a.g_right.is_some()),
        ("ic-base", a.ic_base.is_some()),
        ("ic-amp", a.ic_amp.is_some()),
        ("ic-freq", a.ic_freq.is_some()),
        ("ic-phase", a.ic_phase.is_some()),
        ("ic-bump-amp", a.ic_bump_amp.is_some()),
        ("ic-bump-center", a.ic_bump_center.is_some()),
        ("ic-bump-width", a.ic_bump_width.is_some()),
    ];
    let foreign: Vec<&(&str, bool)> = match spec.kind {
        ProblemKind::Heat { .. } => burgers_flags.iter().chain(&rd_flags).collect(),
        ProblemKind::Burgers { .. } => heat_flags.iter().chain(&rd_flags).collect(),
        ProblemKind::ReactionAdvection { .. } => heat_flags.iter().chain(&burgers_flags).collect(),
    };
    if let Some((flag, _)) = foreign.into_iter().find(|(_, set)| *set) {
        return Err(not_for(flag, name));
    }

    match &mut spec.kind {
        ProblemKind::Heat { alpha, phi } => {
            set(alpha, a.alpha);
            set(phi, a.phi);
        }
        ProblemKind::Burgers { p_loc, eps, u_bc } => {
            set(p_loc, a.p_loc);
            set(eps, a.eps);
            set(u_bc, a.u_bc);
        }
        ProblemKind::ReactionAdvection {
            rho,
            nu,
            ic,
            g_left,
            g_right,
        } => {
            set(rho, a.rho);
            set(nu, a.nu);
            set(g_left, a.g_left);
            set(g_right, a.g_right);
            set(&mut ic.base, a.ic_base);
            set(&mut ic.amp, a.ic_amp);
            set(&mut ic.freq, a.ic_freq);
            set(&mut ic.phase, a.ic_phase);
            set(&mut ic.bump_amp, a.ic_bump_amp);
            set(&mut ic.bump_center, a.ic_bump_center);
            set(&mut ic.bump_width, a.ic_bump_width);
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

pub fn run(a: GenDataArgs, argv: &[String]) -> Result<(), CliError> {
    if a.na == 0 || a.nb == 0 {
        return Err(CliError::usage("--na and --nb must be at least 1"));
    }
    let spec = resolve_spec(&a)?;
    let mut rec = RunRecorder::new("gen-data", argv);
    if let Some(p) = &a.spec {
        rec.input(p)?;
    }
    rec.seed("data", a.seed);
    let out = resolve_out(
        a.out.clone(),
        format!("datasets/{}-{}x{}-seed{}", spec.name(), a.na, a.nb, a.seed),
    );
    if let Some(p) = &a.spec {
        ensure_distinct(&out, &[p])?;
    }

    let data = make_dataset(&spec, a.na, a.nb, RngSeed(a.seed))?;
    if data.failures > 0 {
        eprintln!("warning: {} of {} solves failed and were dropped", data.failures, a.na * a.nb);
    }
    serialize_batch_with(&data.batch, &out, &data.meta())?;
    write_text(
        &out.join(PROBLEM_FILE),
        &serde_json::to_string_pretty(&spec).expect("problem spec serializes"),
    )?;
    let config = json!({
        "problem": spec,
        "na": a.na,
        "nb": a.nb,
        "seed": a.seed,
        "samples": data.batch.count(),
        "dropped": data.failures,
    });
    rec.finish(&out, config)?;
    println!(
        "wrote {} samples of `{}` to {}",
        data.batch.count(),
        spec.name(),
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_parse_pairs_and_points() {
        assert_eq!(parse_range("1:5").unwrap(), Range::new(1.0, 5.0));
        assert_eq!(parse_range("0.7").unwrap(), Range::fixed(0.7));
        assert!(parse_range("5:1").is_err());
        assert!(parse_range("a:b").is_err());
    }
}
