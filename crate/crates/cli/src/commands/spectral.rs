use std::fmt::Write;

use clap::Args;
use patchwork::spectral::{check_sweep, IdentityReport, EXPECTATION_TOL, ORACLE_TOL};
use serde::Serialize;

use super::parse_list;
use crate::manifest::{finish, prepare, write_text};
use crate::{Common, Failure, Outcome};

#[derive(Debug, Args, Serialize)]
pub struct SpectralArgs {
    /// Signal lengths, comma separated.
    #[arg(long, default_value = "8,12,16,32")]
    pub n: String,
    /// Strides, comma separated; each must divide every length.
    #[arg(long, default_value = "1,2,4")]
    pub p: String,
    /// Random filter and signal draws per (n, p).
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    /// Overrides the tolerance of the direct-sum comparisons.
    #[arg(long)]
    pub oracle_tol: Option<f64>,
    /// Overrides the tolerance of the jitter expectation.
    #[arg(long)]
    pub expectation_tol: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

pub fn run(a: &SpectralArgs) -> Outcome {
    let dir = prepare(&a.common)?;
    let mut outputs = Vec::new();
    let res = body(a, &dir, &mut outputs);
    finish("spectral-check", &a.common, a, &outputs, res)
}

fn body(a: &SpectralArgs, dir: &std::path::Path, outputs: &mut Vec<std::path::PathBuf>) -> Outcome {
    let ns: Vec<usize> = parse_list(&a.n, "length")?;
    let ps: Vec<usize> = parse_list(&a.p, "stride")?;
    if a.seeds == 0 {
        return Err(Failure::Usage("--seeds must be positive".into()));
    }
    let mut total = IdentityReport::default();
    for &n in &ns {
        for &p in &ps {
            let base = a.common.seed.wrapping_add((n as u64) << 32 | p as u64);
            total.merge(&check_sweep(n, p, a.seeds, base)?);
        }
    }
    let mut table = String::from("identity\tmax_rel_err\ttolerance\tstatus\n");
    let mut failed = Vec::new();
    for (name, err, tol) in total.rows() {
        let tol = match name {
            "expectation_vs_closed_form" => a.expectation_tol.unwrap_or(EXPECTATION_TOL),
            "composed_vs_pipeline" => tol,
            _ => a.oracle_tol.unwrap_or(ORACLE_TOL),
        };
        let ok = err < tol;
        if !ok {
            failed.push(name);
        }
        let _ = writeln!(table, "{name}\t{err:.3e}\t{tol:.1e}\t{}", if ok { "pass" } else { "FAIL" });
    }
    print!("{table}");
    println!("{} cases", total.cases);
    outputs.push(write_text(dir, "spectral.tsv", &table)?);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Tolerance(format!("identities above tolerance: {}", failed.join(", "))))
    }
}
