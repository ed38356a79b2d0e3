use std::path::{Path, PathBuf};

use clap::Args;
use patchwork::augment::{apply_to_trajectory, embed_trajectory, enumerate_group, stride_time, stride_time_with_phase};
use patchwork::tensorfield::{read_container, write_container};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::manifest::{finish, prepare};
use crate::{Common, Failure, Outcome};

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    /// Input trajectory container.
    #[arg(long)]
    pub container: PathBuf,
    /// Group element index in `0..48`; 2-d inputs are embedded in 3-d first.
    #[arg(long, default_value_t = 0)]
    pub element: usize,
    /// Keep every k-th snapshot.
    #[arg(long, default_value_t = 1)]
    pub time_stride: usize,
    /// Fixed stride phase; drawn from the seed when absent.
    #[arg(long)]
    pub phase: Option<usize>,
    /// Output container.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

pub fn run(a: &AugmentArgs) -> Outcome {
    let dir = prepare(&a.common)?;
    let mut outputs = Vec::new();
    let res = body(a, &dir, &mut outputs);
    finish("augment", &a.common, a, &outputs, res)
}

fn body(a: &AugmentArgs, _dir: &Path, outputs: &mut Vec<PathBuf>) -> Outcome {
    let group = enumerate_group();
    let r = group
        .get(a.element)
        .ok_or_else(|| Failure::Usage(format!("--element {} outside 0..{}", a.element, group.len())))?;
    let traj = read_container(&a.container)?;
    let traj = if traj.layout().dim() == 2 { embed_trajectory(&traj)? } else { traj };
    let rotated = apply_to_trajectory(&traj, r)?;
    let (strided, phase) = match a.phase {
        Some(p) => (stride_time_with_phase(&rotated, a.time_stride, p)?, p),
        None => stride_time(&rotated, a.time_stride, &mut ChaCha8Rng::seed_from_u64(a.common.seed))?,
    };
    write_container(&strided, &a.out)?;
    outputs.push(a.out.clone());
    println!(
        "element\t{}\tmatrix\t{:?}\tdet\t{}\nstride\t{}\tphase\t{phase}\tsnapshots\t{}",
        a.element,
        r.matrix(),
        r.det(),
        a.time_stride,
        strided.len()
    );
    Ok(())
}
