use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use patchwork::emulator::{
    build_samples, rollout, train_linear_path, BlockWeights, Emulator, EmulatorConfig, Mode, Task, TrainConfig,
};
use patchwork::metrics::{MetricReport, StepRange};
use patchwork::normalize::{compute_dataset_stats, NormMode};
use patchwork::patching::PatchPlan;
use patchwork::spectral::dft_nd;
use patchwork::tensorfield::{read_container, FieldSet, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::parse_list;
use crate::manifest::{finish, prepare, write_text};
use crate::{Common, Failure, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args, Serialize)]
pub struct RolloutArgs {
    /// Trajectory container; the first snapshots seed the rollout and the
    /// rest are the reference.
    #[arg(long)]
    pub container: PathBuf,
    /// TOML model configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fresh patch jitter every rollout step.
    #[arg(long, value_enum, default_value = "on")]
    pub jitter: Switch,
    /// Predicted steps.
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    /// Comma-separated tables to write: `vrmse`, `spectrum`.
    #[arg(long, default_value = "vrmse")]
    pub report: String,
    /// Averaging windows over rollout steps, e.g. `1:20,21:60`.
    #[arg(long, default_value = "1:10,11:30")]
    pub windows: String,
    /// Exit 1 when the mean VRMSE over the whole horizon exceeds this.
    #[arg(long)]
    pub max_vrmse: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Linear,
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    Dataset,
    Trajectory,
}

/// Model and training settings read from `--config`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelKind,
    pub tau: usize,
    pub target_tokens: usize,
    pub overlap: usize,
    /// Channels between the two encoder stages.
    pub hidden: usize,
    /// Token channels.
    pub tokens: usize,
    pub nonlinear: bool,
    pub norm: NormKind,
    /// Full-batch training steps on the container itself (linear model only).
    pub train_steps: usize,
    pub lr: f64,
    pub train_jitter: bool,
    pub heads: usize,
    pub groups: usize,
    pub blocks: usize,
    pub mlp_width: usize,
    pub rolls: bool,
    /// Scale of the attention output projections at initialization.
    pub out_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model: ModelKind::Linear,
            tau: 2,
            target_tokens: 8,
            overlap: 0,
            hidden: 8,
            tokens: 8,
            nonlinear: false,
            norm: NormKind::Dataset,
            train_steps: 200,
            lr: 0.1,
            train_jitter: true,
            heads: 2,
            groups: 2,
            blocks: 2,
            mlp_width: 16,
            rolls: true,
            out_scale: 0.1,
        }
    }
}

#[derive(Serialize)]
struct Resolved<'a> {
    #[serde(flatten)]
    args: &'a RolloutArgs,
    model: &'a ModelConfig,
}

pub fn run(a: &RolloutArgs) -> Outcome {
    let dir = prepare(&a.common)?;
    let mut outputs = Vec::new();
    let cfg = load_config(a.config.as_deref());
    let res = cfg.as_ref().map_err(clone_failure).and_then(|c| body(a, c, &dir, &mut outputs));
    let default = ModelConfig::default();
    let resolved = Resolved { args: a, model: cfg.as_ref().unwrap_or(&default) };
    finish("rollout-eval", &a.common, &resolved, &outputs, res)
}

fn clone_failure(f: &Failure) -> Failure {
    match f {
        Failure::Tolerance(m) => Failure::Tolerance(m.clone()),
        Failure::Usage(m) => Failure::Usage(m.clone()),
    }
}

fn load_config(path: Option<&Path>) -> Outcome<ModelConfig> {
    let Some(p) = path else {
        return Ok(ModelConfig::default());
    };
    let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("bad config {}: {e}", p.display())))
}

fn build_model(c: &ModelConfig, traj: &Trajectory, norm: &NormMode, rng: &mut ChaCha8Rng) -> Outcome<Emulator> {
    let layout = traj.layout();
    let plan = PatchPlan::auto(layout.extents(), traj.boundary().clone(), c.target_tokens, c.overlap)?;
    let fields = layout.fields().to_vec();
    let linear = Emulator::random_linear(fields.clone(), plan.clone(), c.tau, c.hidden, c.tokens, c.nonlinear, rng)?;
    match c.model {
        ModelKind::Linear => {
            if c.train_steps == 0 {
                return Ok(linear);
            }
            let samples = build_samples(std::slice::from_ref(traj), c.tau, Task::NextDelta, norm)?;
            let tc = TrainConfig { steps: c.train_steps, lr: c.lr, jitter: c.train_jitter, seed: rand::Rng::gen(rng) };
            let (m, rep) = train_linear_path(&linear, &samples, &tc)?;
            println!("training loss\t{:.6e}\t->\t{:.6e}", rep.losses[0], rep.losses[c.train_steps]);
            Ok(m)
        }
        ModelKind::Attention => {
            let config = EmulatorConfig {
                hidden: c.tokens,
                heads: c.heads,
                groups: c.groups,
                blocks: c.blocks,
                mlp_width: c.mlp_width,
                tau: c.tau,
                token_extents: plan.token_extents(),
                mode: Mode::AttentionForward,
                rolls: c.rolls,
            };
            config.validate()?;
            let blocks = (0..c.blocks).map(|_| BlockWeights::random(&config, c.out_scale, rng)).collect();
            Ok(Emulator::new(config, plan, linear.patch, linear.mix, blocks, fields)?)
        }
    }
}

fn body(a: &RolloutArgs, c: &ModelConfig, dir: &Path, outputs: &mut Vec<PathBuf>) -> Outcome {
    let reports: Vec<String> = parse_list(&a.report, "report")?;
    if let Some(bad) = reports.iter().find(|r| !matches!(r.as_str(), "vrmse" | "spectrum")) {
        return Err(Failure::Usage(format!("unknown report `{bad}`; expected vrmse or spectrum")));
    }
    let ranges = a.windows.split(',').map(|w| StepRange::parse(w.trim())).collect::<Result<Vec<_>, _>>()?;
    let traj = read_container(&a.container)?;
    let seed_len = c.tau.max(2);
    if a.horizon == 0 || seed_len + a.horizon > traj.len() {
        return Err(Failure::Usage(format!(
            "horizon {} needs {} snapshots after the {seed_len}-snapshot history; the container has {}",
            a.horizon,
            a.horizon,
            traj.len()
        )));
    }
    let norm = match c.norm {
        NormKind::Dataset => NormMode::Dataset(compute_dataset_stats(std::slice::from_ref(&traj))?),
        NormKind::Trajectory => NormMode::PerTrajectory,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let model = build_model(c, &traj, &norm, &mut rng)?;
    let init = traj.window(0, seed_len)?;
    let out = rollout(&model, &init, a.horizon, a.jitter == Switch::On, &norm, &mut rng)?;
    let pred = &out.snapshots()[seed_len..];
    let truth = &traj.snapshots()[seed_len..seed_len + a.horizon];
    let metrics = MetricReport::from_rollout(pred, truth, &ranges)?;
    let whole = MetricReport::from_rollout(pred, truth, &[StepRange::new(1, a.horizon)?])?;
    let mean = whole.windows[0].field_mean().unwrap_or(f64::NAN);
    if reports.iter().any(|r| r == "vrmse") {
        outputs.push(write_text(dir, "vrmse.tsv", &metrics.to_tsv())?);
        let windows = metrics.windows_tsv();
        outputs.push(write_text(dir, "windows.tsv", &windows)?);
        print!("{windows}");
    }
    if reports.iter().any(|r| r == "spectrum") {
        outputs.push(write_text(dir, "spectrum.tsv", &spectrum_table(pred, truth)?)?);
    }
    println!("mean_vrmse\t{mean:.6e}");
    match a.max_vrmse {
        Some(limit) if !(mean <= limit) => {
            Err(Failure::Tolerance(format!("mean VRMSE {mean:.4e} exceeds {limit:.4e}")))
        }
        _ => Ok(()),
    }
}

/// Energy per integer radial wavenumber shell of each field's first component.
fn spectrum_table(pred: &[FieldSet], truth: &[FieldSet]) -> Outcome<String> {
    let mut out = String::from("step\tfield\tshell\tpred_energy\ttruth_energy\n");
    for (s, (p, t)) in pred.iter().zip(truth).enumerate() {
        for (f, meta) in t.fields().iter().enumerate() {
            let ext = t.extents();
            let ch = t.field_channels(f).start;
            let (ep, et) = (shells(p.grid().channel(ch), ext)?, shells(t.grid().channel(ch), ext)?);
            for (k, (a, b)) in ep.iter().zip(&et).enumerate() {
                let _ = writeln!(out, "{}\t{}\t{k}\t{a:.9e}\t{b:.9e}", s + 1, meta.name);
            }
        }
    }
    Ok(out)
}

fn shells(values: &[f64], ext: &[usize]) -> Outcome<Vec<f64>> {
    let spec = dft_nd(values, ext)?;
    let cells = values.len() as f64;
    let kmax: f64 = ext.iter().map(|&n| ((n / 2) as f64).powi(2)).sum::<f64>().sqrt();
    let mut e = vec![0.0; kmax.round() as usize + 1];
    let mut idx = vec![0usize; ext.len()];
    for (flat, c) in spec.iter().enumerate() {
        patchwork::tensorfield::unravel(flat, ext, &mut idx);
        let r2: f64 = idx
            .iter()
            .zip(ext)
            .map(|(&i, &n)| {
                let k = if 2 * i <= n { i as f64 } else { i as f64 - n as f64 };
                k * k
            })
            .sum();
        e[r2.sqrt().round() as usize] += c.norm_sqr() / (cells * cells);
    }
    Ok(e)
}
