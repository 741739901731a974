use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn pcfm(args: &[&str], data_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcfm"))
        .args(args)
        .env("PCFM_DATA_DIR", data_dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], data_dir: &Path) -> Output {
    let out = pcfm(args, data_dir);
    assert!(
        out.status.success(),
        "pcfm {args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn example(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(name)
        .display()
        .to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

/// Small heat dataset and a briefly trained model on a 16 x 8 grid.
struct Heat {
    dir: TempDir,
    data: PathBuf,
    model: PathBuf,
}

impl Heat {
    fn new(epochs: usize) -> Heat {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data");
        let model = dir.path().join("model");
        ok(
            &[
                "gen-data",
                "--problem",
                "heat",
                "--na",
                "3",
                "--nb",
                "2",
                "--nx",
                "16",
                "--nt",
                "8",
                "--out",
                &s(&data),
            ],
            dir.path(),
        );
        ok(
            &[
                "train",
                "--data",
                &s(&data),
                "--epochs",
                &epochs.to_string(),
                "--hidden",
                "16",
                "--batch-size",
                "4",
                "--out",
                &s(&model),
            ],
            dir.path(),
        );
        Heat { dir, data, model }
    }

    fn sample(&self, name: &str, constraints: &str, extra: &[&str]) -> PathBuf {
        let out = self.dir.path().join(name);
        let (model, out_s) = (s(&self.model), s(&out));
        let mut args = vec![
            "sample",
            "--model",
            &model,
            "--constraints",
            constraints,
            "--steps",
            "5",
            "--count",
            "4",
            "--out",
            &out_s,
        ];
        args.extend_from_slice(extra);
        ok(&args, self.dir.path());
        out
    }
}

fn residual_norms(dir: &Path) -> Vec<f64> {
    lines(&dir.join("residuals.csv"))
        .iter()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn gen_data_writes_grid_of_instances_deterministically() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(
            &[
                "gen-data",
                "--problem",
                "heat",
                "--na",
                "3",
                "--nb",
                "2",
                "--nx",
                "16",
                "--nt",
                "8",
                "--seed",
                "4",
                "--out",
                &s(&out),
            ],
            dir.path(),
        );
        out
    };
    let (a, b) = (run("a"), run("b"));
    let bytes = std::fs::read(a.join("data.bin")).unwrap();
    assert_eq!(bytes.len(), 6 * 16 * 8 * 8);
    assert_eq!(bytes, std::fs::read(b.join("data.bin")).unwrap());
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["seeds"]["data"], 4);
    assert!(a.join("problem.json").exists());
}

#[test]
fn default_output_lands_under_data_dir() {
    let dir = TempDir::new().unwrap();
    ok(
        &[
            "gen-data",
            "--problem",
            "heat",
            "--na",
            "1",
            "--nb",
            "1",
            "--nx",
            "8",
            "--nt",
            "4",
        ],
        dir.path(),
    );
    assert!(dir.path().join("datasets/heat-1x1-seed0/data.bin").exists());
}

#[test]
fn out_of_scope_problem_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = pcfm(
        &["gen-data", "--problem", "navier-stokes", "--na", "1", "--nb", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let foreign = pcfm(&["gen-data", "--problem", "heat", "--u-bc", "0.5"], dir.path());
    assert_eq!(foreign.status.code(), Some(1));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = pcfm(
        &["train", "--data", &s(&dir.path().join("nope")), "--epochs", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_logs_one_loss_row_per_epoch() {
    let heat = Heat::new(3);
    let rows = lines(&heat.model.join("loss.csv"));
    assert_eq!(rows[0], "epoch,loss");
    assert_eq!(rows.len(), 4);

    let zero = heat.dir.path().join("zero");
    ok(
        &[
            "train",
            "--data",
            &s(&heat.data),
            "--epochs",
            "0",
            "--hidden",
            "8",
            "--out",
            &s(&zero),
        ],
        heat.dir.path(),
    );
    assert_eq!(lines(&zero.join("loss.csv")).len(), 1);
}

#[test]
fn pcfm_samples_satisfy_constraints_and_vanilla_does_not() {
    let heat = Heat::new(2);
    let pc = heat.sample("pcfm", &example("heat_ic_mass.json"), &[]);
    let norms = residual_norms(&pc);
    assert_eq!(norms.len(), 4);
    assert!(norms.iter().all(|r| *r < 1e-8), "{norms:?}");
    assert!(pc.join("constraints.json").exists());

    let van = heat.sample("vanilla", &example("heat_ic_mass.json"), &["--method", "vanilla"]);
    assert!(residual_norms(&van).iter().all(|r| *r > 1e-6));

    let eci = pcfm(
        &[
            "sample",
            "--model",
            &s(&heat.model),
            "--constraints",
            &example("heat_ic_mass_tvd.json"),
            "--method",
            "eci",
            "--count",
            "2",
        ],
        heat.dir.path(),
    );
    assert_eq!(eci.status.code(), Some(1));
}

#[test]
fn eval_against_itself_is_zero_and_plots_are_optional() {
    let heat = Heat::new(2);
    let pc = heat.sample("pcfm", &example("heat_ic_mass.json"), &[]);
    let van = heat.sample("vanilla", &example("heat_ic_mass.json"), &["--method", "vanilla"]);
    let out = heat.dir.path().join("eval");
    ok(
        &[
            "eval",
            "--generated",
            &s(&pc),
            &s(&van),
            "--reference",
            &s(&pc),
            "--constraints",
            &example("heat_ic_mass.json"),
            "--out",
            &s(&out),
        ],
        heat.dir.path(),
    );
    let rows = lines(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 3);
    let own: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(own[0], "pcfm");
    assert_eq!(own[1].parse::<f64>().unwrap(), 0.0);
    assert!(!std::fs::read_dir(&out)
        .unwrap()
        .any(|e| e.unwrap().path().extension().is_some_and(|x| x == "svg")));

    let plotted = heat.dir.path().join("eval-plots");
    ok(
        &[
            "eval",
            "--generated",
            &s(&van),
            "--reference",
            &s(&heat.data),
            "--constraints",
            &example("heat_ic_mass.json"),
            "--plots",
            "--out",
            &s(&plotted),
        ],
        heat.dir.path(),
    );
    let svg = std::fs::read_to_string(plotted.join("mass_residual_vanilla.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(plotted.join("mean_vanilla.csv").exists());
}

#[test]
fn ablate_writes_one_row_per_cell() {
    let heat = Heat::new(2);
    let out = heat.dir.path().join("ablate");
    ok(
        &[
            "ablate",
            "--model",
            &s(&heat.model),
            "--constraints",
            &example("heat_ic_mass.json"),
            "--reference",
            &s(&heat.data),
            "--steps",
            "2,3",
            "--lambda",
            "0,1",
            "--penalty-steps",
            "2",
            "--count",
            "2",
            "--out",
            &s(&out),
        ],
        heat.dir.path(),
    );
    let rows = lines(&out.join("ablation.csv"));
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("steps,lambda,collocation,method,"));

    let empty = pcfm(
        &[
            "ablate",
            "--model",
            &s(&heat.model),
            "--constraints",
            &example("heat_ic_mass.json"),
            "--reference",
            &s(&heat.data),
            "--steps",
            "",
        ],
        heat.dir.path(),
    );
    assert_eq!(empty.status.code(), Some(1));
}

#[test]
fn every_example_stack_parses_against_its_grid() {
    let dir = TempDir::new().unwrap();
    for (problem, nx, nt, files) in [
        ("heat", "16", "8", &["heat_ic_mass.json", "heat_ic_mass_tvd.json"][..]),
        (
            "burgers",
            "16",
            "8",
            &["burgers_bc_mass.json", "burgers_ic_mass_flux.json"][..],
        ),
        ("reaction-advection", "16", "8", &["rd_ic_mass.json"][..]),
    ] {
        let data = dir.path().join(problem);
        let model = dir.path().join(format!("{problem}-model"));
        ok(
            &[
                "gen-data",
                "--problem",
                problem,
                "--na",
                "1",
                "--nb",
                "1",
                "--nx",
                nx,
                "--nt",
                nt,
                "--out",
                &s(&data),
            ],
            dir.path(),
        );
        ok(
            &[
                "train",
                "--data",
                &s(&data),
                "--epochs",
                "0",
                "--hidden",
                "8",
                "--out",
                &s(&model),
            ],
            dir.path(),
        );
        for f in files {
            let out = dir.path().join(format!("s-{f}"));
            ok(
                &[
                    "sample",
                    "--model",
                    &s(&model),
                    "--constraints",
                    &example(f),
                    "--steps",
                    "2",
                    "--count",
                    "1",
                    "--out",
                    &s(&out),
                ],
                dir.path(),
            );
        }
    }
}

#[test]
fn replay_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d");
    ok(
        &[
            "gen-data",
            "--problem",
            "burgers",
            "--na",
            "2",
            "--nb",
            "2",
            "--nx",
            "16",
            "--nt",
            "8",
            "--seed",
            "9",
            "--out",
            &s(&out),
        ],
        dir.path(),
    );
    let first = std::fs::read(out.join("data.bin")).unwrap();
    std::fs::remove_file(out.join("data.bin")).unwrap();
    let manifest = dir.path().join("run.json");
    std::fs::copy(out.join("run.json"), &manifest).unwrap();
    ok(&["replay", &s(&manifest)], dir.path());
    assert_eq!(first, std::fs::read(out.join("data.bin")).unwrap());
}

#[test]
fn help_succeeds_and_bad_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    ok(&["--help"], dir.path());
    assert_eq!(pcfm(&["sample", "--bogus"], dir.path()).status.code(), Some(1));
}
