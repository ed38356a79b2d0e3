//! Alias audit of the linear path on a pure Fourier mode.
//!
//! The model is a sample-and-hold autoencoder: the encoder keeps the first
//! cell of each patch and the decoder repeats it over the whole patch, scaled
//! by a gain. Point sampling has a flat transfer function, so every alias of
//! the input mode survives encoding at full strength. Without jitter the
//! aliases are reinjected with the same phase every step and add coherently;
//! with a fresh shift per step their phases are random and the expected
//! alias term cancels.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rollout, Emulator, EmulatorConfig, Mode};
use crate::error::{Error, Result};
use crate::normalize::{NormMode, NormStats};
use crate::patching::{AxisStages, ConvWeights, PatchPlan, PatchWeights, MASK_CHANNELS};
use crate::spectral::mode_energy_split;
use crate::tensorfield::{BoundarySpec, FieldMeta, FieldSet, Grid, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct AliasSetup {
    pub extents: Vec<usize>,
    /// Patch size and stride on every axis.
    pub stride: usize,
    /// Integer wavenumber of the input mode.
    pub mode: Vec<i64>,
    /// Decoder gain, i.e. the delta is `gain * hold(sample(u))`.
    pub gain: f64,
    pub steps: usize,
}

impl AliasSetup {
    /// 16x16 periodic grid, 4x4 patches, mode (3, 3), ten steps.
    pub fn reference() -> Self {
        AliasSetup {
            extents: vec![16, 16],
            stride: 4,
            mode: vec![3, 3],
            gain: 0.1,
            steps: 10,
        }
    }

    pub fn plan(&self) -> Result<PatchPlan> {
        let st = AxisStages::new(self.stride, self.stride, 1, 1)?;
        let d = self.extents.len();
        PatchPlan::new(&self.extents, BoundarySpec::periodic(d), vec![st; d])
    }

    /// `cos(2 pi k . x / n + phase)` on the grid, twice, as a two-snapshot history.
    pub fn initial(&self, phase: f64) -> Result<Trajectory> {
        if self.mode.len() != self.extents.len() {
            return Err(Error::Dimension(format!("mode {:?} for extents {:?}", self.mode, self.extents)));
        }
        let cells: usize = self.extents.iter().product();
        let mut idx = vec![0usize; self.extents.len()];
        let data = (0..cells)
            .map(|flat| {
                crate::tensorfield::unravel(flat, &self.extents, &mut idx);
                let arg: f64 = idx
                    .iter()
                    .zip(&self.mode)
                    .zip(&self.extents)
                    .map(|((&x, &k), &n)| k as f64 * x as f64 / n as f64)
                    .sum();
                (2.0 * PI * arg + phase).cos()
            })
            .collect();
        let u = FieldSet::new(vec![FieldMeta::scalar("u")], Grid::from_vec(1, &self.extents, data)?)?;
        Trajectory::new(vec![u.clone(), u], 1, BoundarySpec::periodic(self.extents.len()))
    }
}

/// Linear-path model with one history slot and sample-and-hold weights.
pub fn sample_and_hold(plan: &PatchPlan, gain: f64) -> Result<Emulator> {
    let k1: Vec<usize> = plan.axes().iter().map(|a| a.stages.p1).collect();
    let k2: Vec<usize> = plan.axes().iter().map(|a| a.stages.p2).collect();
    if k2.iter().any(|&p| p != 1) {
        return Err(Error::Plan("sample-and-hold weights need a single-stage plan".into()));
    }
    let mut enc1 = ConvWeights::zeros(1, 1 + MASK_CHANNELS, &k1);
    enc1.set(0, 0, 0, 1.0);
    let mut dec1 = ConvWeights::zeros(1, 1, &k1);
    for kk in 0..dec1.kernel_cells() {
        dec1.set(0, 0, kk, gain);
    }
    let unit = ConvWeights::from_vec(1, 1, &k2, vec![1.0])?;
    let patch = PatchWeights { enc1, enc2: unit.clone(), dec2: unit, dec1, nonlinear: false };
    let config = EmulatorConfig {
        hidden: 1,
        heads: 1,
        groups: 1,
        blocks: 0,
        mlp_width: 0,
        tau: 1,
        token_extents: plan.token_extents(),
        mode: Mode::LinearPath,
        rolls: false,
    };
    Emulator::new(config, plan.clone(), patch, vec![1.0], vec![], vec![FieldMeta::scalar("u")])
}

/// Alias energy over signal energy after each rollout step.
pub fn alias_trace(setup: &AliasSetup, phase: f64, jitter: bool, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let model = sample_and_hold(&setup.plan()?, setup.gain)?;
    let init = setup.initial(phase)?;
    let norm = NormMode::Dataset(NormStats::unit(1));
    let traj = rollout(&model, &init, setup.steps, jitter, &norm, rng)?;
    traj.snapshots()[init.len()..]
        .iter()
        .map(|s| {
            let (sig, alias) = mode_energy_split(s.values(), &setup.extents, &setup.mode)?;
            Ok(alias / sig)
        })
        .collect()
}

/// Final-step alias ratios of one paired seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AliasTrial {
    pub seed: u64,
    pub plain: f64,
    pub jittered: f64,
}

impl AliasTrial {
    pub fn reduction(&self) -> f64 {
        self.plain / self.jittered
    }
}

/// One trial per seed. The seed fixes the mode phase shared by both runs and
/// the jitter draws of the jittered run.
pub fn alias_trials(setup: &AliasSetup, seeds: std::ops::Range<u64>) -> Result<Vec<AliasTrial>> {
    seeds
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let last = |v: Vec<f64>| *v.last().expect("steps >= 1");
            let plain = last(alias_trace(setup, phase, false, &mut rng)?);
            let jittered = last(alias_trace(setup, phase, true, &mut rng)?);
            Ok(AliasTrial { seed, plain, jittered })
        })
        .collect()
}
