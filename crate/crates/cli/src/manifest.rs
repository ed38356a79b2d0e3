//! `manifest.toml`: the resolved flags, seed, outputs, and status of a run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{Common, Failure, Outcome};

#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    status: &'a str,
    outputs: Vec<String>,
    args: &'a A,
}

/// Creates the output directory.
pub fn prepare(common: &Common) -> Outcome<PathBuf> {
    fs::create_dir_all(&common.out_dir)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", common.out_dir.display())))?;
    Ok(common.out_dir.clone())
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Outcome<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// Writes the manifest, then passes `result` through.
pub fn finish<A: Serialize>(
    command: &str,
    common: &Common,
    args: &A,
    outputs: &[PathBuf],
    result: Outcome,
) -> Outcome {
    let status = match &result {
        Ok(()) => "ok",
        Err(Failure::Tolerance(_)) => "tolerance-failure",
        Err(Failure::Usage(_)) => "error",
    };
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: common.seed,
        status,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        args,
    };
    let text = toml::to_string(&m).map_err(|e| Failure::Usage(format!("cannot encode manifest: {e}")))?;
    write_text(&common.out_dir, "manifest.toml", &text)?;
    result
}
