//! Asymmetric reversible RMS normalization and the normalized delta loss.
//!
//! Inputs are divided by the per-field RMS of the history window; model outputs
//! are deltas and are multiplied by the per-field RMS of the window's
//! consecutive differences. The rollout step is
//! `u_{t+1} = u_t + denormalize_out(M(normalize_in(U)))`.

use crate::error::{Error, Result};
use crate::tensorfield::{delta, FieldSet, Trajectory};

/// Floor applied to every scale.
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    input: Vec<f64>,
    output: Vec<f64>,
}

/// Where statistics come from.
#[derive(Debug, Clone, PartialEq)]
pub enum NormMode {
    /// Computed from each history window.
    PerTrajectory,
    /// Fixed statistics computed once over a dataset.
    Dataset(NormStats),
}

impl NormMode {
    pub fn stats_for(&self, window: &Trajectory) -> Result<NormStats> {
        match self {
            NormMode::PerTrajectory => compute_stats(window),
            NormMode::Dataset(s) => Ok(s.clone()),
        }
    }
}

impl NormStats {
    /// Scales are floored at [`EPS`].
    pub fn new(input: Vec<f64>, output: Vec<f64>) -> Result<Self> {
        if input.len() != output.len() {
            return Err(Error::Dimension(format!(
                "{} input scales vs {} output scales",
                input.len(),
                output.len()
            )));
        }
        if input.iter().chain(&output).any(|v| !v.is_finite()) {
            return Err(Error::Validation("normalization scales must be finite".into()));
        }
        Ok(NormStats {
            input: input.into_iter().map(|v| v.max(EPS)).collect(),
            output: output.into_iter().map(|v| v.max(EPS)).collect(),
        })
    }

    pub fn unit(fields: usize) -> Self {
        NormStats {
            input: vec![1.0; fields],
            output: vec![1.0; fields],
        }
    }

    pub fn input_scales(&self) -> &[f64] {
        &self.input
    }

    pub fn output_scales(&self) -> &[f64] {
        &self.output
    }

    pub fn fields(&self) -> usize {
        self.input.len()
    }
}

/// Running per-field sums of squares and counts.
#[derive(Default)]
struct Accum {
    sq: Vec<f64>,
    n: Vec<usize>,
}

impl Accum {
    fn add(&mut self, fs: &FieldSet) {
        let k = fs.fields().len();
        if self.sq.is_empty() {
            self.sq = vec![0.0; k];
            self.n = vec![0; k];
        }
        for f in 0..k {
            let v = fs.field_values(f);
            self.sq[f] += v.iter().map(|x| x * x).sum::<f64>();
            self.n[f] += v.len();
        }
    }

    fn rms(&self) -> Vec<f64> {
        self.sq.iter().zip(&self.n).map(|(s, &n)| (s / n as f64).sqrt()).collect()
    }
}

fn accumulate(windows: &[&Trajectory]) -> Result<NormStats> {
    let (mut inp, mut out) = (Accum::default(), Accum::default());
    for w in windows {
        if w.len() < 2 {
            return Err(Error::Range(format!("window of length {} has no deltas", w.len())));
        }
        if !w.layout().same_layout(windows[0].layout()) {
            return Err(Error::Dimension("windows have different field layouts".into()));
        }
        for s in w.snapshots() {
            inp.add(s);
        }
        for t in 1..w.len() {
            out.add(&delta(w, t)?);
        }
    }
    NormStats::new(inp.rms(), out.rms())
}

/// Per-field RMS over time, space, and components of the window and of its deltas.
pub fn compute_stats(window: &Trajectory) -> Result<NormStats> {
    accumulate(&[window])
}

/// Pooled statistics over every trajectory of a dataset.
pub fn compute_dataset_stats(trajs: &[Trajectory]) -> Result<NormStats> {
    if trajs.is_empty() {
        return Err(Error::Range("no trajectories to compute statistics from".into()));
    }
    accumulate(&trajs.iter().collect::<Vec<_>>())
}

fn scale_fields(u: &FieldSet, stats: &NormStats, scales: &[f64], divide: bool) -> Result<FieldSet> {
    if u.fields().len() != stats.fields() {
        return Err(Error::Dimension(format!(
            "field set has {} fields, statistics have {}",
            u.fields().len(),
            stats.fields()
        )));
    }
    let mut g = u.grid().clone();
    let cells = g.cells();
    for (f, &s) in scales.iter().enumerate() {
        let r = u.field_channels(f);
        for v in &mut g.data_mut()[r.start * cells..r.end * cells] {
            *v = if divide { *v / s } else { *v * s };
        }
    }
    u.with_grid(g)
}

pub fn normalize_in(u: &FieldSet, stats: &NormStats) -> Result<FieldSet> {
    scale_fields(u, stats, &stats.input, true)
}

pub fn denormalize_in(u: &FieldSet, stats: &NormStats) -> Result<FieldSet> {
    scale_fields(u, stats, &stats.input, false)
}

/// Divides a delta by the output scale; the training-target side of the contract.
pub fn normalize_out(d: &FieldSet, stats: &NormStats) -> Result<FieldSet> {
    scale_fields(d, stats, &stats.output, true)
}

pub fn denormalize_out(d: &FieldSet, stats: &NormStats) -> Result<FieldSet> {
    scale_fields(d, stats, &stats.output, false)
}

pub fn normalize_window(window: &Trajectory, stats: &NormStats) -> Result<Vec<FieldSet>> {
    window.snapshots().iter().map(|s| normalize_in(s, stats)).collect()
}

/// `u_t + denormalize_out(model_out)`.
pub fn apply_delta(u_t: &FieldSet, model_out: &FieldSet, stats: &NormStats) -> Result<FieldSet> {
    let d = denormalize_out(model_out, stats)?;
    u_t.zip_with(&d, |a, b| a + b)
}

/// Mean over fields of `mean_cells |pred - truth| / output_scale`.
pub fn normalized_loss(pred: &FieldSet, truth: &FieldSet, stats: &NormStats) -> Result<f64> {
    if !pred.same_layout(truth) {
        return Err(Error::Dimension("prediction and truth layouts differ".into()));
    }
    if pred.fields().len() != stats.fields() {
        return Err(Error::Dimension(format!(
            "field set has {} fields, statistics have {}",
            pred.fields().len(),
            stats.fields()
        )));
    }
    let k = pred.fields().len();
    let total: f64 = (0..k)
        .map(|f| {
            let (p, t) = (pred.field_values(f), truth.field_values(f));
            let l1 = p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
            l1 / stats.output[f]
        })
        .sum();
    Ok(total / k as f64)
}
