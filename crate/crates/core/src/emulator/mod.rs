//! A toy space-time factorized emulator.
//!
//! Each normalized history frame is padded, jittered, and encoded into a token
//! grid by the shared patch encoder. A processor maps the `tau` token grids to
//! one: either a learned linear mix over history slots ([`Mode::LinearPath`],
//! trainable with hand-derived gradients) or alternating spatial/temporal
//! attention blocks ([`Mode::AttentionForward`], forward only). The decoder
//! turns the result into a normalized delta, and a step is
//! `u_{t+1} = u_t + denormalize_out(delta)`.

mod alias;
mod attention;
mod linear;

pub use attention::{
    axial_rope, forward, forward_all, rms_group_norm, rope_bands, spatial_block, temporal_block, AttnWeights,
    BlockState, BlockWeights, SpatialWeights, TemporalWeights, Tokens, ROPE_BASE,
};
pub use alias::{alias_trace, alias_trials, sample_and_hold, AliasSetup, AliasTrial};
pub use linear::{
    build_samples, loss_and_grad, train_linear_path, Gradients, Sample, Task, TrainConfig, TrainReport,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::normalize::{apply_delta, normalize_in, NormMode};
use crate::patching::{
    pad_with_jitter, patch_decode, patch_encode, unjitter_and_crop, PatchPlan, PatchWeights, TokenGrid, MASK_CHANNELS,
};
use crate::tensorfield::{FieldMeta, FieldSet, Grid, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    LinearPath,
    AttentionForward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorConfig {
    /// Token channel width.
    pub hidden: usize,
    pub heads: usize,
    /// Channel groups of the RMS group norm.
    pub groups: usize,
    pub blocks: usize,
    pub mlp_width: usize,
    /// History length.
    pub tau: usize,
    pub token_extents: Vec<usize>,
    pub mode: Mode,
    /// Random periodic rolls between attention blocks.
    pub rolls: bool,
}

impl EmulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.groups == 0 || self.tau == 0 {
            return Err(Error::Config("widths, heads, groups, and history length must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) || !self.hidden.is_multiple_of(self.groups) {
            return Err(Error::Config(format!(
                "hidden width {} must be divisible by heads {} and groups {}",
                self.hidden, self.heads, self.groups
            )));
        }
        if self.mode == Mode::AttentionForward {
            rope_bands(self.hidden / self.heads, self.token_extents.len())?;
        }
        Ok(())
    }
}

/// Patch encoder/decoder plus processor weights and the output field layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Emulator {
    pub config: EmulatorConfig,
    pub plan: PatchPlan,
    pub patch: PatchWeights,
    /// Per-history-slot weights of the linear processor.
    pub mix: Vec<f64>,
    pub blocks: Vec<BlockWeights>,
    fields: Vec<FieldMeta>,
}

impl Emulator {
    /// Checks that every part agrees with `config`.
    pub fn new(
        config: EmulatorConfig,
        plan: PatchPlan,
        patch: PatchWeights,
        mix: Vec<f64>,
        blocks: Vec<BlockWeights>,
        fields: Vec<FieldMeta>,
    ) -> Result<Self> {
        config.validate()?;
        let dim = plan.ndim();
        let channels: usize = fields.iter().map(|f| f.components(dim)).sum();
        if patch.input_channels() != channels + MASK_CHANNELS || patch.output_channels() != channels {
            return Err(Error::Dimension(format!(
                "patch weights map {} -> {} channels, fields need {} -> {channels}",
                patch.input_channels(),
                patch.output_channels(),
                channels + MASK_CHANNELS
            )));
        }
        if patch.token_channels() != config.hidden || plan.token_extents() != config.token_extents {
            return Err(Error::Config(format!(
                "encoder yields {:?} x {} tokens, config expects {:?} x {}",
                plan.token_extents(),
                patch.token_channels(),
                config.token_extents,
                config.hidden
            )));
        }
        if mix.len() != config.tau {
            return Err(Error::Dimension(format!("{} mix weights for history {}", mix.len(), config.tau)));
        }
        if config.mode == Mode::AttentionForward && blocks.len() != config.blocks {
            return Err(Error::Dimension(format!("{} blocks for {} configured", blocks.len(), config.blocks)));
        }
        Ok(Emulator { config, plan, patch, mix, blocks, fields })
    }

    /// Random linear-path model; `mix` starts at the last slot.
    pub fn random_linear(
        fields: Vec<FieldMeta>,
        plan: PatchPlan,
        tau: usize,
        hidden: usize,
        tokens: usize,
        nonlinear: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let c: usize = fields.iter().map(|f| f.components(plan.ndim())).sum();
        let patch = PatchWeights::random(&plan, c + MASK_CHANNELS, hidden, tokens, c, nonlinear, rng);
        let config = EmulatorConfig {
            hidden: tokens,
            heads: 1,
            groups: 1,
            blocks: 0,
            mlp_width: 0,
            tau,
            token_extents: plan.token_extents(),
            mode: Mode::LinearPath,
            rolls: false,
        };
        let mut mix = vec![0.0; tau];
        mix[tau - 1] = 1.0;
        Emulator::new(config, plan, patch, mix, vec![], fields)
    }

    pub fn fields(&self) -> &[FieldMeta] {
        &self.fields
    }

    pub fn channels(&self) -> usize {
        self.patch.output_channels()
    }

    /// Normalized delta from `tau` normalized frames under jitter `j`.
    pub fn predict(&self, frames: &[Grid], j: &[usize], rng: &mut impl Rng) -> Result<Grid> {
        let tau = self.config.tau;
        if frames.len() != tau {
            return Err(Error::Dimension(format!("{} frames for history {tau}", frames.len())));
        }
        let tokens = frames
            .iter()
            .map(|f| Ok(patch_encode(&pad_with_jitter(f, &self.plan, j)?, &self.plan, &self.patch)?.tokens))
            .collect::<Result<Vec<_>>>()?;
        let mixed = match self.config.mode {
            Mode::LinearPath => {
                let mut acc = Grid::zeros(tokens[0].channels(), tokens[0].extents());
                for (z, &a) in tokens.iter().zip(&self.mix) {
                    for (o, v) in acc.data_mut().iter_mut().zip(z.data()) {
                        *o += a * v;
                    }
                }
                acc
            }
            Mode::AttentionForward => {
                let periodic: Vec<bool> = self.plan.axes().iter().map(|a| a.periodic).collect();
                let hist = Tokens::from_grids(&tokens)?;
                forward(&hist, &self.config, &self.blocks, &periodic, rng)?.to_grid(0)
            }
        };
        let decoded = patch_decode(&TokenGrid { tokens: mixed, plan: self.plan.clone() }, &self.patch)?;
        unjitter_and_crop(&decoded, &self.plan, j)
    }

    /// One autoregressive step from the last `tau` snapshots of `window`.
    /// Per-trajectory statistics come from those snapshots, so need `tau >= 2`.
    pub fn step(&self, window: &Trajectory, norm: &NormMode, jitter: bool, rng: &mut impl Rng) -> Result<FieldSet> {
        let tau = self.config.tau;
        if window.len() < tau {
            return Err(Error::Range(format!("window of {} snapshots for history {tau}", window.len())));
        }
        let start = window.len() - tau;
        let stats = match norm {
            NormMode::Dataset(s) => s.clone(),
            NormMode::PerTrajectory => norm.stats_for(&window.window(start, tau)?)?,
        };
        let recent = &window.snapshots()[start..];
        let frames = recent
            .iter()
            .map(|s| Ok(normalize_in(s, &stats)?.into_grid()))
            .collect::<Result<Vec<_>>>()?;
        let j = if jitter { self.plan.draw_jitter(rng) } else { self.plan.zero_jitter() };
        let delta = self.predict(&frames, &j, rng)?;
        let last = recent.last().expect("tau >= 1");
        apply_delta(last, &last.with_grid(delta)?, &stats)
    }
}

/// Autoregressive rollout. The result holds the initial snapshots followed by
/// `horizon` predictions.
pub fn rollout(
    model: &Emulator,
    initial: &Trajectory,
    horizon: usize,
    jitter: bool,
    norm: &NormMode,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::Range("rollout horizon must be at least 1".into()));
    }
    let tau = model.config.tau;
    if initial.len() < tau {
        return Err(Error::Range(format!("{} initial snapshots for history {tau}", initial.len())));
    }
    let keep = tau.max(2).min(initial.len());
    let mut snaps = initial.snapshots().to_vec();
    for step in 1..=horizon {
        let window = Trajectory::new(snaps[snaps.len() - keep..].to_vec(), initial.dt_index(), initial.boundary().clone())?;
        let next = model.step(&window, norm, jitter, rng).map_err(|e| Error::Rollout { step, message: e.to_string() })?;
        if next.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Rollout { step, message: "prediction is not finite".into() });
        }
        snaps.push(next);
    }
    Trajectory::new(snaps, initial.dt_index(), initial.boundary().clone())
}
