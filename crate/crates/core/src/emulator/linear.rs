//! Hand-differentiated training of the linear-path processor and patch weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::normalize::{normalize_in, normalize_out, NormMode};
use crate::patching::{
    conv, conv_transpose, conv_transpose_weight_grad, conv_weight_grad, pad_with_jitter, silu, silu_grad,
    unjitter_and_crop, ConvWeights, PatchPlan,
};
use crate::tensorfield::{delta, Grid, Trajectory};

use super::{Emulator, Mode};

/// What the model is asked to predict from a history window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// The delta to the snapshot after the window.
    NextDelta,
    /// The last delta inside the window; exactly learnable by a linear model.
    InputDelta,
}

/// Normalized history frames and the normalized target delta.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frames: Vec<Grid>,
    pub target: Grid,
}

/// Every window of `tau` history frames with its target. Statistics come from
/// the history frames alone, so per-trajectory normalization needs `tau >= 2`.
pub fn build_samples(trajs: &[Trajectory], tau: usize, task: Task, norm: &NormMode) -> Result<Vec<Sample>> {
    if tau == 0 || (task == Task::InputDelta && tau < 2) {
        return Err(Error::Config(format!("history length {tau} is too short for {task:?}")));
    }
    let need = tau + usize::from(task == Task::NextDelta);
    let mut out = Vec::new();
    for traj in trajs {
        for s in 0..(traj.len() + 1).saturating_sub(need) {
            let hist = &traj.snapshots()[s..s + tau];
            let stats = match norm {
                NormMode::Dataset(st) => st.clone(),
                NormMode::PerTrajectory => norm.stats_for(&traj.window(s, tau)?)?,
            };
            let frames = hist.iter().map(|u| Ok(normalize_in(u, &stats)?.into_grid())).collect::<Result<Vec<_>>>()?;
            let d = delta(traj, s + need - 1)?;
            out.push(Sample { frames, target: normalize_out(&d, &stats)?.into_grid() });
        }
    }
    if out.is_empty() {
        return Err(Error::Range(format!("no trajectory is long enough for {need} snapshots")));
    }
    Ok(out)
}

/// Gradients in the shape of the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub enc1: ConvWeights,
    pub enc2: ConvWeights,
    pub dec2: ConvWeights,
    pub dec1: ConvWeights,
    pub mix: Vec<f64>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        [self.enc1.data(), self.enc2.data(), self.dec2.data(), self.dec1.data(), &self.mix].concat()
    }
}

impl Emulator {
    /// All trainable parameters in [`Gradients::flatten`] order.
    pub fn params(&self) -> Vec<f64> {
        let p = &self.patch;
        [p.enc1.data(), p.enc2.data(), p.dec2.data(), p.dec1.data(), &self.mix].concat()
    }

    pub fn set_params(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.params().len() {
            return Err(Error::Dimension(format!("{} parameters, model has {}", v.len(), self.params().len())));
        }
        let mut rest = v;
        for w in [&mut self.patch.enc1, &mut self.patch.enc2, &mut self.patch.dec2, &mut self.patch.dec1] {
            let n = w.data().len();
            w.data_mut().copy_from_slice(&rest[..n]);
            rest = &rest[n..];
        }
        self.mix.copy_from_slice(rest);
        Ok(())
    }
}

/// Per-channel L1 weight: the loss is a mean over fields of a mean over that
/// field's channels and cells.
fn channel_weights(model: &Emulator, cells: usize) -> Vec<f64> {
    let dim = model.plan.ndim();
    let k = model.fields().len() as f64;
    model
        .fields()
        .iter()
        .flat_map(|f| {
            let n = f.components(dim);
            std::iter::repeat_n(1.0 / (k * (n * cells) as f64), n)
        })
        .collect()
}

fn act(g: &Grid, on: bool) -> Grid {
    let mut g = g.clone();
    if on {
        g.data_mut().iter_mut().for_each(|v| *v = silu(*v));
    }
    g
}

fn act_back(grad: &mut Grid, pre: &Grid, on: bool) {
    if on {
        for (g, &x) in grad.data_mut().iter_mut().zip(pre.data()) {
            *g *= silu_grad(x);
        }
    }
}

/// Adjoint of [`unjitter_and_crop`] followed by the periodic re-pad of a decoded core.
fn crop_adjoint(g: &Grid, plan: &PatchPlan, j: &[usize]) -> Grid {
    let mut out = g.clone();
    for (a, ax) in plan.axes().iter().enumerate().rev() {
        out = if ax.periodic {
            out.roll(a, j[a] as isize).pad(a, ax.pad_lo(), ax.pad_hi(), false)
        } else {
            out.pad(a, ax.pad_lo(), ax.pad_hi(), false).roll(a, j[a] as isize)
        };
    }
    for (a, ax) in plan.axes().iter().enumerate() {
        if ax.periodic {
            out = out.fold(a, ax.extent, ax.pad_lo());
        }
    }
    out
}

fn add_into(acc: &mut ConvWeights, g: &ConvWeights) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

/// Mean L1 loss over `samples` and its gradient, using jitter `jitters[i]` for sample `i`.
pub fn loss_and_grad(model: &Emulator, samples: &[Sample], jitters: &[Vec<usize>]) -> Result<(f64, Gradients)> {
    if model.config.mode != Mode::LinearPath {
        return Err(Error::Config("only the linear path is trainable".into()));
    }
    if samples.is_empty() || jitters.len() != samples.len() {
        return Err(Error::Dimension(format!("{} samples with {} jitters", samples.len(), jitters.len())));
    }
    let (plan, w) = (&model.plan, &model.patch);
    let sa = plan.stage_axes();
    let nl = w.nonlinear;
    let zero = |c: &ConvWeights| ConvWeights::zeros(c.cout(), c.cin(), c.kernel());
    let mut grads = Gradients {
        enc1: zero(&w.enc1),
        enc2: zero(&w.enc2),
        dec2: zero(&w.dec2),
        dec1: zero(&w.dec1),
        mix: vec![0.0; model.mix.len()],
    };
    let cw = channel_weights(model, plan.extents().iter().product());
    let inv_n = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    for (s, j) in samples.iter().zip(jitters) {
        if s.frames.len() != model.mix.len() {
            return Err(Error::Dimension(format!("{} frames for history {}", s.frames.len(), model.mix.len())));
        }
        let mut padded = Vec::with_capacity(s.frames.len());
        let mut pre1 = Vec::new();
        let mut hid = Vec::new();
        let mut toks = Vec::new();
        for f in &s.frames {
            let p = pad_with_jitter(f, plan, j)?;
            let a1 = conv(&p, &w.enc1, &sa.enc1)?;
            let h = act(&a1, nl);
            toks.push(conv(&h, &w.enc2, &sa.enc2)?);
            padded.push(p);
            pre1.push(a1);
            hid.push(h);
        }
        let mut z = Grid::zeros(toks[0].channels(), toks[0].extents());
        for (t, &a) in toks.iter().zip(&model.mix) {
            for (o, v) in z.data_mut().iter_mut().zip(t.data()) {
                *o += a * v;
            }
        }
        let b2 = conv_transpose(&z, &w.dec2, &sa.dec2, &sa.dec2_extents)?;
        let h2 = act(&b2, nl);
        let core = conv_transpose(&h2, &w.dec1, &sa.dec1, &sa.dec1_extents)?;
        let out = unjitter_and_crop(&plan.repad_periodic(&core), plan, j)?;
        if !out.same_shape(&s.target) {
            return Err(Error::Dimension("prediction and target shapes differ".into()));
        }

        let cells = out.cells();
        let mut g_out = Grid::zeros(out.channels(), out.extents());
        for c in 0..out.channels() {
            let (o, t) = (out.channel(c), s.target.channel(c));
            let g = g_out.channel_mut(c);
            for i in 0..cells {
                let r = o[i] - t[i];
                loss += cw[c] * r.abs() * inv_n;
                g[i] = cw[c] * r.signum() * inv_n;
            }
        }
        let g_core = crop_adjoint(&g_out, plan, j);
        add_into(&mut grads.dec1, &conv_transpose_weight_grad(&h2, &g_core, &sa.dec1)?);
        let mut g_b2 = conv(&g_core, &w.dec1, &sa.dec1)?;
        act_back(&mut g_b2, &b2, nl);
        add_into(&mut grads.dec2, &conv_transpose_weight_grad(&z, &g_b2, &sa.dec2)?);
        let g_z = conv(&g_b2, &w.dec2, &sa.dec2)?;
        for (t, &a) in model.mix.iter().enumerate() {
            grads.mix[t] += g_z.data().iter().zip(toks[t].data()).map(|(x, y)| x * y).sum::<f64>();
            let mut g_zt = g_z.clone();
            g_zt.data_mut().iter_mut().for_each(|v| *v *= a);
            add_into(&mut grads.enc2, &conv_weight_grad(&hid[t], &g_zt, &sa.enc2)?);
            let mut g_h = conv_transpose(&g_zt, &w.enc2, &sa.enc2, hid[t].extents())?;
            act_back(&mut g_h, &pre1[t], nl);
            add_into(&mut grads.enc1, &conv_weight_grad(&padded[t], &g_h, &sa.enc1)?);
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Peak Adam learning rate; cosine-decayed to zero over `steps`.
    pub lr: f64,
    /// Draw a fresh jitter per sample and step.
    pub jitter: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before each update.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn reduction(&self) -> f64 {
        match (self.losses.first(), self.losses.last()) {
            (Some(a), Some(b)) => a / b,
            _ => 1.0,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.99;
const ADAM_EPS: f64 = 1e-12;

/// Full-batch Adam on the L1 delta loss. The final entry of `losses` is the loss
/// after the last update.
pub fn train_linear_path(model: &Emulator, samples: &[Sample], cfg: &TrainConfig) -> Result<(Emulator, TrainReport)> {
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = m.params();
    let (mut m1, mut m2) = (vec![0.0; params.len()], vec![0.0; params.len()]);
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let plan = m.plan.clone();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<usize>> {
        samples
            .iter()
            .map(|_| if cfg.jitter { plan.draw_jitter(rng) } else { plan.zero_jitter() })
            .collect()
    };
    for t in 0..cfg.steps {
        let jit = draw(&mut rng);
        let (loss, g) = loss_and_grad(&m, samples, &jit)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss is {loss} at step {t}")));
        }
        losses.push(loss);
        let lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / cfg.steps as f64).cos());
        let (b1, b2) = (1.0 - BETA1.powi(t as i32 + 1), 1.0 - BETA2.powi(t as i32 + 1));
        for (((p, g), a), b) in params.iter_mut().zip(g.flatten()).zip(&mut m1).zip(&mut m2) {
            *a = BETA1 * *a + (1.0 - BETA1) * g;
            *b = BETA2 * *b + (1.0 - BETA2) * g * g;
            *p -= lr * (*a / b1) / ((*b / b2).sqrt() + ADAM_EPS);
        }
        m.set_params(&params)?;
    }
    let jit = draw(&mut rng);
    let (loss, _) = loss_and_grad(&m, samples, &jit)?;
    if !loss.is_finite() {
        return Err(Error::Training(format!("loss is {loss} after training")));
    }
    losses.push(loss);
    Ok((m, TrainReport { losses }))
}
