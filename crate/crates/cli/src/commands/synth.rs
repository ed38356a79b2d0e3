use std::path::{Path, PathBuf};

use clap::Args;
use patchwork::synthetic::{generate, Kind, SyntheticSpec, DEFAULT_DT};
use patchwork::tensorfield::write_container;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::parse_list;
use crate::manifest::{finish, prepare};
use crate::{Common, Outcome};

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// `advection`, `pure-mode`, or `mixed`.
    #[arg(long, default_value = "advection")]
    pub kind: String,
    /// Grid extents, comma separated (2 or 3 axes).
    #[arg(long, default_value = "16,16")]
    pub extents: String,
    /// Snapshots per trajectory.
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub trajectories: usize,
    /// Time between snapshots.
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    /// Fixed wavenumber for `pure-mode`, comma separated; drawn when absent.
    #[arg(long)]
    pub mode: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

pub fn run(a: &SynthArgs) -> Outcome {
    let dir = prepare(&a.common)?;
    let mut outputs = Vec::new();
    let res = body(a, &dir, &mut outputs);
    finish("gen-synthetic", &a.common, a, &outputs, res)
}

fn body(a: &SynthArgs, dir: &Path, outputs: &mut Vec<PathBuf>) -> Outcome {
    let spec = SyntheticSpec {
        kind: a.kind.parse::<Kind>()?,
        extents: parse_list(&a.extents, "extent")?,
        steps: a.steps,
        trajectories: a.trajectories,
        dt: a.dt,
        mode: a.mode.as_deref().map(|m| parse_list(m, "wavenumber")).transpose()?,
    };
    let trajs = generate(&spec, &mut ChaCha8Rng::seed_from_u64(a.common.seed))?;
    for (i, t) in trajs.iter().enumerate() {
        let path = dir.join(format!("traj_{i:03}.ckt"));
        write_container(t, &path)?;
        println!("{}", path.display());
        outputs.push(path);
    }
    Ok(())
}
