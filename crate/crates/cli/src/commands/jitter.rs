use std::f64::consts::PI;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use patchwork::patching::{autoencode, AxisStages, PatchPlan, PatchWeights, MASK_CHANNELS};
use patchwork::spectral::Spectrum;
use patchwork::tensorfield::{Boundary, BoundarySpec, Grid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::parse_list;
use crate::manifest::{finish, prepare, write_text};
use crate::{Common, Failure, Outcome};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryArg {
    Periodic,
    Open,
    Closed,
}

impl From<BoundaryArg> for Boundary {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Periodic => Boundary::Periodic,
            BoundaryArg::Open => Boundary::Open,
            BoundaryArg::Closed => Boundary::Closed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemoMode {
    /// One pass without jitter.
    Single,
    /// Mean over every legal jitter offset.
    Averaged,
}

#[derive(Debug, Args, Serialize)]
pub struct JitterArgs {
    /// Stage kernels and strides as `p1,s1,p2,s2`.
    #[arg(long, default_value = "2,2,2,2")]
    pub plan: String,
    #[arg(long, value_enum, default_value = "periodic")]
    pub boundary: BoundaryArg,
    #[arg(long, value_enum, default_value = "single")]
    pub mode: DemoMode,
    /// Signal length.
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    /// Wavenumber of the input mode.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Hidden channels between the two encoder stages.
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    /// Token channels.
    #[arg(long, default_value_t = 4)]
    pub tokens: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

pub fn run(a: &JitterArgs) -> Outcome {
    let dir = prepare(&a.common)?;
    let mut outputs = Vec::new();
    let res = body(a, &dir, &mut outputs);
    finish("jitter-demo", &a.common, a, &outputs, res)
}

fn body(a: &JitterArgs, dir: &Path, outputs: &mut Vec<PathBuf>) -> Outcome {
    let st: Vec<usize> = parse_list(&a.plan, "plan")?;
    let [p1, s1, p2, s2] = st[..] else {
        return Err(Failure::Usage(format!("--plan needs four numbers, got `{}`", a.plan)));
    };
    if a.n == 0 || a.k == 0 || 2 * a.k >= a.n {
        return Err(Failure::Usage(format!("need 0 < k < n/2, got k = {} and n = {}", a.k, a.n)));
    }
    let plan = PatchPlan::new(
        &[a.n],
        BoundarySpec::uniform(1, a.boundary.into()),
        vec![AxisStages::new(p1, s1, p2, s2)?],
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let w = PatchWeights::random(&plan, 1 + MASK_CHANNELS, a.hidden, a.tokens, 1, false, &mut rng);
    let u: Vec<f64> = (0..a.n).map(|x| (2.0 * PI * (a.k * x) as f64 / a.n as f64).cos()).collect();
    let g = Grid::from_vec(1, &[a.n], u.clone())?;
    let offsets: Vec<usize> = match a.mode {
        DemoMode::Single => vec![0],
        DemoMode::Averaged => (0..plan.axis(0).jitter_bound()).collect(),
    };
    let mut out = vec![0.0; a.n];
    for &j in &offsets {
        let v = autoencode(&g, &plan, &w, &[j])?;
        for (o, x) in out.iter_mut().zip(v.data()) {
            *o += x / offsets.len() as f64;
        }
    }
    let (si, so) = (Spectrum::from_real(&u), Spectrum::from_real(&out));
    let mut table = String::from("bin\tfrequency\tinput_energy\toutput_energy\n");
    let (mut signal, mut alias) = (0.0, 0.0);
    for (b, (ci, co)) in si.coeffs().iter().zip(so.coeffs()).enumerate() {
        let freq = if 2 * b <= a.n { b as i64 } else { b as i64 - a.n as i64 };
        let _ = writeln!(table, "{b}\t{freq}\t{:.9e}\t{:.9e}", ci.norm_sqr(), co.norm_sqr());
        if freq.unsigned_abs() as usize == a.k {
            signal += co.norm_sqr();
        } else {
            alias += co.norm_sqr();
        }
    }
    outputs.push(write_text(dir, "spectrum.tsv", &table)?);
    print!("{table}");
    println!("offsets\t{}\nsignal_energy\t{signal:.9e}\nalias_energy\t{alias:.9e}", offsets.len());
    Ok(())
}
