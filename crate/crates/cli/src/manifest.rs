//! Run manifests: what was run, with which resolved configuration, on which
//! inputs, producing which outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const RUN_FILE: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command line as invoked; `pcfm replay` feeds it back to the parser.
    pub argv: Vec<String>,
    /// Every setting after defaults were applied.
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
    pub duration_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Digests of a file, or of every regular file directly inside a directory
/// (sorted by name, the run manifest itself excluded).
pub fn digests(path: &Path) -> Result<Vec<FileDigest>, CliError> {
    let mut files = Vec::new();
    if path.is_dir() {
        let entries = fs::read_dir(path).map_err(|e| CliError::Data(format!("cannot list {}: {e}", path.display())))?;
        for entry in entries {
            let p = entry.map_err(|e| CliError::Data(e.to_string()))?.path();
            if p.is_file() && p.file_name().is_some_and(|n| n != RUN_FILE) {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    files
        .into_iter()
        .map(|p| {
            Ok(FileDigest {
                sha256: sha256_file(&p)?,
                path: p.display().to_string(),
            })
        })
        .collect()
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let fail = |e: std::io::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("malformed run manifest {}: {e}", path.display())))
}

/// Collects manifest fields over the course of a command.
pub struct RunRecorder {
    started: Instant,
    command: String,
    argv: Vec<String>,
    inputs: Vec<FileDigest>,
    seeds: BTreeMap<String, u64>,
}

impl RunRecorder {
    pub fn new(command: &str, argv: &[String]) -> Self {
        RunRecorder {
            started: Instant::now(),
            command: command.into(),
            argv: argv.to_vec(),
            inputs: Vec::new(),
            seeds: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.extend(digests(path)?);
        Ok(())
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), value);
    }

    /// Digests everything in `out_dir` and writes `run.json` there.
    pub fn finish(self, out_dir: &Path, config: Value) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            command: self.command,
            argv: self.argv,
            config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: digests(out_dir)?,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join(RUN_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("run manifest serializes");
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
