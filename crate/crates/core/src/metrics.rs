//! Rollout metrics: VMSE, VRMSE, windowed means and medians across trajectories.
//!
//! For a field with components `c` and cells `x`:
//! `VMSE = mean_x Σ_c (p - t)² / (mean_x Σ_c (t - t̄_c)² + ε)` and
//! `VRMSE = sqrt(mean_x Σ_c (p - t)²) / sqrt(mean_x Σ_c (t - t̄_c)² + ε)`,
//! where `t̄_c` is the spatial mean of component `c`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::normalize::EPS;
use crate::tensorfield::FieldSet;

fn check(pred: &FieldSet, truth: &FieldSet) -> Result<()> {
    if !pred.same_layout(truth) {
        return Err(Error::Dimension(format!(
            "prediction layout ({:?}, {} channels) differs from truth ({:?}, {} channels)",
            pred.extents(),
            pred.channels(),
            truth.extents(),
            truth.channels()
        )));
    }
    Ok(())
}

/// Per-field `(mean squared error, truth variance)`, both summed over components.
fn moments(pred: &FieldSet, truth: &FieldSet) -> Vec<(f64, f64)> {
    let cells = truth.cells() as f64;
    (0..truth.fields().len())
        .map(|f| {
            let (p, t) = (pred.field_values(f), truth.field_values(f));
            let n = truth.cells();
            let (mut err, mut var) = (0.0, 0.0);
            for c in 0..t.len() / n {
                let (pc, tc) = (&p[c * n..(c + 1) * n], &t[c * n..(c + 1) * n]);
                let mean = tc.iter().sum::<f64>() / cells;
                err += pc.iter().zip(tc).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                var += tc.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>();
            }
            (err / cells, var / cells)
        })
        .collect()
}

pub fn vmse(pred: &FieldSet, truth: &FieldSet) -> Result<Vec<f64>> {
    check(pred, truth)?;
    Ok(moments(pred, truth).into_iter().map(|(e, v)| e / (v + EPS)).collect())
}

pub fn vrmse(pred: &FieldSet, truth: &FieldSet) -> Result<Vec<f64>> {
    check(pred, truth)?;
    Ok(moments(pred, truth)
        .into_iter()
        .map(|(e, v)| e.sqrt() / (v + EPS).sqrt())
        .collect())
}

/// Spatial mean of every channel, broadcast back over the grid.
pub fn spatial_mean(u: &FieldSet) -> Result<FieldSet> {
    let mut g = u.grid().clone();
    let n = g.cells();
    for c in 0..g.channels() {
        let ch = g.channel_mut(c);
        let m = ch.iter().sum::<f64>() / n as f64;
        ch.fill(m);
    }
    u.with_grid(g)
}

/// Inclusive 1-indexed step range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRange {
    pub first: usize,
    pub last: usize,
}

impl StepRange {
    pub fn new(first: usize, last: usize) -> Result<Self> {
        if first == 0 || first > last {
            return Err(Error::Range(format!(
                "step range [{first}:{last}] is empty or not 1-indexed"
            )));
        }
        Ok(StepRange { first, last })
    }

    /// Parses `a:b`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::Range(format!("step range `{s}` is not of the form a:b")))?;
        let num = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Range(format!("step range `{s}` has a non-integer bound")))
        };
        Self::new(num(a)?, num(b)?)
    }
}

impl std::fmt::Display for StepRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.first, self.last)
    }
}

/// Mean of `per_step[first-1 ..= last-1]` over the steps that exist; `None` when
/// the trajectory ends before `first`.
pub fn window_mean(per_step: &[f64], range: StepRange) -> Option<f64> {
    if range.first > per_step.len() {
        return None;
    }
    let last = range.last.min(per_step.len());
    let vals = &per_step[range.first - 1..last];
    Some(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Middle order statistic, or the mean of the two middle ones for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Window means of one trajectory's rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSummary {
    pub range: StepRange,
    /// Per field; `None` when no step of the window is available.
    pub per_field: Vec<Option<f64>>,
}

impl WindowSummary {
    /// Unweighted mean across fields.
    pub fn field_mean(&self) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.per_field.iter().copied().collect();
        vals.filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub fields: Vec<String>,
    /// `per_step[s][f]` is the VRMSE of field `f` at rollout step `s + 1`.
    pub per_step: Vec<Vec<f64>>,
    pub windows: Vec<WindowSummary>,
}

/// Aggregates per-step per-field values over each range.
pub fn window_aggregate(fields: Vec<String>, per_step: Vec<Vec<f64>>, ranges: &[StepRange]) -> Result<MetricReport> {
    if let Some(s) = per_step.iter().position(|r| r.len() != fields.len()) {
        return Err(Error::Dimension(format!(
            "step {} has {} values for {} fields",
            s + 1,
            per_step[s].len(),
            fields.len()
        )));
    }
    let windows = ranges
        .iter()
        .map(|&range| WindowSummary {
            range,
            per_field: (0..fields.len())
                .map(|f| {
                    let col: Vec<f64> = per_step.iter().map(|r| r[f]).collect();
                    window_mean(&col, range)
                })
                .collect(),
        })
        .collect();
    Ok(MetricReport {
        fields,
        per_step,
        windows,
    })
}

impl MetricReport {
    /// VRMSE of each predicted step against the matching truth step.
    pub fn from_rollout(pred: &[FieldSet], truth: &[FieldSet], ranges: &[StepRange]) -> Result<Self> {
        if pred.len() != truth.len() || pred.is_empty() {
            return Err(Error::Dimension(format!(
                "{} predicted steps vs {} truth steps",
                pred.len(),
                truth.len()
            )));
        }
        let per_step = pred
            .iter()
            .zip(truth)
            .map(|(p, t)| vrmse(p, t))
            .collect::<Result<Vec<_>>>()?;
        let fields = truth[0].fields().iter().map(|f| f.name.clone()).collect();
        window_aggregate(fields, per_step, ranges)
    }

    /// `step<TAB>field<TAB>value` rows with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\tfield\tvrmse\n");
        for (s, row) in self.per_step.iter().enumerate() {
            for (f, v) in row.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{:.9e}", s + 1, self.fields[f], v);
            }
        }
        out
    }

    /// `window<TAB>field<TAB>mean` rows, `NA` for unavailable windows.
    pub fn windows_tsv(&self) -> String {
        let mut out = String::from("window\tfield\tmean_vrmse\n");
        for w in &self.windows {
            for (f, v) in w.per_field.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{}", w.range, self.fields[f], fmt_opt(*v));
            }
            let _ = writeln!(out, "{}\tmean\t{}", w.range, fmt_opt(w.field_mean()));
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.9e}"))
}

/// Median across trajectories of each window's field mean. Trajectories with
/// no available steps in a window do not take part in that window's median.
pub fn median_across(reports: &[MetricReport]) -> Vec<(StepRange, Option<f64>)> {
    let Some(first) = reports.first() else {
        return vec![];
    };
    (0..first.windows.len())
        .map(|w| {
            let vals: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.windows.get(w).and_then(|s| s.field_mean()))
                .collect();
            (first.windows[w].range, median(&vals))
        })
        .collect()
}
