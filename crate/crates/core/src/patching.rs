//! Two-stage strided patch encoder/decoder with compute-adaptive strides,
//! boundary-aware padding, and patch jitter with exact inversion.
//!
//! Per axis a plan holds two stages `(p1, s1)` and `(p2, s2)`; the composed
//! receptive field is `p_eff = p1 + s1 (p2 - 1)` with stride `s_eff = s1 s2`.
//!
//! Periodic axes are rolled by `j ∈ [0, extent)` and then circularly padded by
//! `p_eff - s_eff` cells (split `floor/ceil` between the low and high side), which
//! yields exactly `extent / s_eff` tokens. Non-periodic axes are zero padded by
//! `pad_total = floor(s_eff / 2) + p_eff - s_eff` on both sides (plus the minimal
//! high-side pad that makes the token count integral), the matching boundary-mask
//! channel is set to 1 in the padded cells, and the result is rolled by
//! `j ∈ [0, pad_total]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensorfield::{row_major_strides, unravel};
use crate::tensorfield::{BoundarySpec, FieldSet, Grid};

/// Number of boundary-mask channels appended by [`pad_and_jitter`].
pub const MASK_CHANNELS: usize = 3;

/// Kernel sizes and strides of the two stages on one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisStages {
    pub p1: usize,
    pub s1: usize,
    pub p2: usize,
    pub s2: usize,
}

impl AxisStages {
    pub const IDENTITY: AxisStages = AxisStages {
        p1: 1,
        s1: 1,
        p2: 1,
        s2: 1,
    };

    pub fn new(p1: usize, s1: usize, p2: usize, s2: usize) -> Result<Self> {
        if s1 == 0 || s2 == 0 || p1 < s1 || p2 < s2 {
            return Err(Error::Plan(format!(
                "stages need p1 >= s1 >= 1 and p2 >= s2 >= 1, got ({p1},{s1},{p2},{s2})"
            )));
        }
        Ok(AxisStages { p1, s1, p2, s2 })
    }

    pub fn p_eff(&self) -> usize {
        self.p1 + self.s1 * (self.p2 - 1)
    }

    pub fn s_eff(&self) -> usize {
        self.s1 * self.s2
    }

    pub fn pad_stride(&self) -> usize {
        self.p_eff() - self.s_eff()
    }

    pub fn is_overlapping(&self) -> bool {
        self.p1 != self.s1 || self.p2 != self.s2
    }
}

fn split_stride(s: usize) -> (usize, usize) {
    let s2 = (1..=s).filter(|d| s.is_multiple_of(*d) && d * d <= s).max().unwrap_or(1);
    (s / s2, s2)
}

fn pick_stride(extent: usize, target: usize, candidates: impl Iterator<Item = usize>) -> usize {
    // Ties go to the smaller stride, i.e. the finer token grid.
    candidates
        .min_by_key(|&s| (extent.div_ceil(s).abs_diff(target), s))
        .unwrap_or(1)
}

fn check_target(extent: usize, target: usize) -> Result<()> {
    if target == 0 || extent < target {
        return Err(Error::Plan(format!(
            "cannot plan {target} tokens over an extent of {extent}"
        )));
    }
    Ok(())
}

fn stages_for(s_eff: usize, overlap: usize) -> AxisStages {
    let (s1, s2) = split_stride(s_eff);
    AxisStages {
        p1: s1 + overlap,
        s1,
        p2: s2,
        s2,
    }
}

/// Picks `s_eff` minimizing `|ceil(extent / s_eff) - target|` and factors it as
/// `s1 >= s2` with `s2` the largest divisor not above `sqrt(s_eff)`.
///
/// `overlap` widens the first-stage kernel: `p1 = s1 + overlap`.
pub fn plan_strides(extent: usize, target: usize, overlap: usize) -> Result<AxisStages> {
    check_target(extent, target)?;
    Ok(stages_for(pick_stride(extent, target, 1..=extent), overlap))
}

/// As [`plan_strides`] but restricted to strides dividing `extent`, as periodic
/// axes require.
pub fn plan_strides_periodic(extent: usize, target: usize, overlap: usize) -> Result<AxisStages> {
    check_target(extent, target)?;
    let s = pick_stride(extent, target, (1..=extent).filter(|s| extent.is_multiple_of(*s)));
    Ok(stages_for(s, overlap))
}

/// Resolved padding for one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisPlan {
    pub stages: AxisStages,
    pub extent: usize,
    pub periodic: bool,
    /// Zero pad per side on non-periodic axes; 0 on periodic axes.
    pub pad_total: usize,
    /// Extra high-side zero pad making the token count integral.
    pub extra: usize,
}

impl AxisPlan {
    /// Cells added below the data.
    pub fn pad_lo(&self) -> usize {
        if self.periodic {
            self.stages.pad_stride() / 2
        } else {
            self.pad_total
        }
    }

    /// Cells added above the data.
    pub fn pad_hi(&self) -> usize {
        if self.periodic {
            self.stages.pad_stride() - self.pad_lo()
        } else {
            self.pad_total + self.extra
        }
    }

    pub fn padded_extent(&self) -> usize {
        self.extent + self.pad_lo() + self.pad_hi()
    }

    pub fn tokens(&self) -> usize {
        (self.padded_extent() - self.stages.p_eff()) / self.stages.s_eff() + 1
    }

    /// Exclusive upper bound on the jitter offset.
    pub fn jitter_bound(&self) -> usize {
        if self.periodic {
            self.extent
        } else {
            self.pad_total + 1
        }
    }
}

/// Per-axis stages and padding for one grid shape and boundary topology.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPlan {
    axes: Vec<AxisPlan>,
    boundary: BoundarySpec,
}

impl PatchPlan {
    pub fn new(extents: &[usize], boundary: BoundarySpec, stages: Vec<AxisStages>) -> Result<Self> {
        if extents.len() != boundary.ndim() || stages.len() != extents.len() {
            return Err(Error::Dimension(format!(
                "plan for {} axes given {} boundary axes and {} stage sets",
                extents.len(),
                boundary.ndim(),
                stages.len()
            )));
        }
        let mut axes = Vec::with_capacity(extents.len());
        for (a, (&extent, st)) in extents.iter().zip(stages).enumerate() {
            let st = AxisStages::new(st.p1, st.s1, st.p2, st.s2)?;
            let periodic = boundary.is_periodic(a);
            let (s, ps) = (st.s_eff(), st.pad_stride());
            let axis = if periodic {
                if extent % s != 0 {
                    return Err(Error::Plan(format!(
                        "periodic axis {a} has extent {extent}, not a multiple of s_eff = {s}"
                    )));
                }
                AxisPlan {
                    stages: st,
                    extent,
                    periodic,
                    pad_total: 0,
                    extra: 0,
                }
            } else {
                let pad_total = s / 2 + ps;
                let padded = extent + 2 * pad_total;
                if padded < st.p_eff() {
                    return Err(Error::Plan(format!(
                        "axis {a}: extent {extent} too small for p_eff = {}",
                        st.p_eff()
                    )));
                }
                let extra = (s - (padded - st.p_eff()) % s) % s;
                AxisPlan {
                    stages: st,
                    extent,
                    periodic,
                    pad_total,
                    extra,
                }
            };
            if extent == 0 || (axis.padded_extent() - st.p_eff()) % s != 0 {
                return Err(Error::Plan(format!("axis {a}: token count is not integral")));
            }
            axes.push(axis);
        }
        Ok(PatchPlan { axes, boundary })
    }

    /// Plans every axis towards `target` tokens.
    pub fn auto(extents: &[usize], boundary: BoundarySpec, target: usize, overlap: usize) -> Result<Self> {
        let stages = extents
            .iter()
            .enumerate()
            .map(|(a, &e)| {
                if boundary.is_periodic(a) {
                    plan_strides_periodic(e, target, overlap)
                } else {
                    plan_strides(e, target, overlap)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(extents, boundary, stages)
    }

    pub fn axes(&self) -> &[AxisPlan] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &AxisPlan {
        &self.axes[a]
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.boundary
    }

    pub fn extents(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.extent).collect()
    }

    pub fn padded_extents(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.padded_extent()).collect()
    }

    pub fn token_extents(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.tokens()).collect()
    }

    /// Extents after the first encoder stage.
    pub fn hidden_extents(&self) -> Vec<usize> {
        self.axes
            .iter()
            .map(|a| (a.padded_extent() - a.stages.p1) / a.stages.s1 + 1)
            .collect()
    }

    pub fn draw_jitter(&self, rng: &mut impl Rng) -> Vec<usize> {
        self.axes.iter().map(|a| rng.gen_range(0..a.jitter_bound())).collect()
    }

    pub fn zero_jitter(&self) -> Vec<usize> {
        vec![0; self.axes.len()]
    }

    fn check_jitter(&self, j: &[usize], err: fn(String) -> Error) -> Result<()> {
        if j.len() != self.axes.len() {
            return Err(err(format!("jitter has {} axes, plan has {}", j.len(), self.axes.len())));
        }
        for (a, (&ja, ax)) in j.iter().zip(&self.axes).enumerate() {
            if ja >= ax.jitter_bound() {
                return Err(err(format!(
                    "jitter {ja} on axis {a} outside [0, {})",
                    ax.jitter_bound()
                )));
            }
        }
        Ok(())
    }
}

/// Pads `grid`, appends the boundary masks, and applies the jitter `j`.
pub fn pad_with_jitter(grid: &Grid, plan: &PatchPlan, j: &[usize]) -> Result<Grid> {
    if grid.extents() != plan.extents().as_slice() {
        return Err(Error::Dimension(format!(
            "field extents {:?} do not match plan extents {:?}",
            grid.extents(),
            plan.extents()
        )));
    }
    plan.check_jitter(j, Error::Dimension)?;
    let c = grid.channels();
    let masks = Grid::zeros(MASK_CHANNELS, grid.extents());
    let mut out = Grid::concat_channels(&[grid, &masks])?;
    // Every axis is padded before any mask is written so corner cells keep the
    // masks of all axes whose padding they belong to.
    for (a, ax) in plan.axes.iter().enumerate() {
        out = if ax.periodic {
            out.roll(a, j[a] as isize).pad(a, ax.pad_lo(), ax.pad_hi(), true)
        } else {
            out.pad(a, ax.pad_lo(), ax.pad_hi(), false)
        };
    }
    for (a, ax) in plan.axes.iter().enumerate().filter(|(_, ax)| !ax.periodic) {
        let [lo, hi] = plan.boundary.axis(a);
        let n = out.extents()[a];
        set_mask(&mut out, a, 0..ax.pad_lo(), c + lo.mask_channel());
        set_mask(&mut out, a, ax.pad_lo() + ax.extent..n, c + hi.mask_channel());
    }
    for (a, _) in plan.axes.iter().enumerate().filter(|(_, ax)| !ax.periodic) {
        out = out.roll(a, j[a] as isize);
    }
    Ok(out)
}

fn set_mask(g: &mut Grid, axis: usize, range: std::ops::Range<usize>, channel: usize) {
    let ext = g.extents().to_vec();
    let inner: usize = ext[axis + 1..].iter().product();
    let outer: usize = ext[..axis].iter().product();
    let n = ext[axis];
    let data = g.channel_mut(channel);
    for o in 0..outer {
        for i in range.clone() {
            let start = (o * n + i) * inner;
            data[start..start + inner].fill(1.0);
        }
    }
}

/// Draws a jitter from `rng`, then [`pad_with_jitter`].
pub fn pad_and_jitter(field: &FieldSet, plan: &PatchPlan, rng: &mut impl Rng) -> Result<(Grid, Vec<usize>)> {
    let j = plan.draw_jitter(rng);
    Ok((pad_with_jitter(field.grid(), plan, &j)?, j))
}

/// Inverts the jitter and removes padding; mask channels, if any, are kept.
pub fn unjitter_and_crop(grid: &Grid, plan: &PatchPlan, j: &[usize]) -> Result<Grid> {
    plan.check_jitter(j, Error::Inversion)?;
    if grid.extents() != plan.padded_extents().as_slice() {
        return Err(Error::Inversion(format!(
            "grid extents {:?} do not match padded extents {:?}",
            grid.extents(),
            plan.padded_extents()
        )));
    }
    let mut out = grid.clone();
    for (a, ax) in plan.axes.iter().enumerate() {
        out = if ax.periodic {
            out.crop(a, ax.pad_lo(), ax.extent).roll(a, -(j[a] as isize))
        } else {
            out.roll(a, -(j[a] as isize)).crop(a, ax.pad_lo(), ax.extent)
        };
    }
    Ok(out)
}

/// Per-cell count of distinct boundary types whose padded region contains the
/// cell, laid out on the padded grid before jitter. This is the exact value of
/// the mask-channel sum at each cell.
pub fn mask_coverage(plan: &PatchPlan) -> Vec<usize> {
    let ext = plan.padded_extents();
    let cells: usize = ext.iter().product();
    let mut idx = vec![0; ext.len()];
    (0..cells)
        .map(|flat| {
            unravel(flat, &ext, &mut idx);
            let mut seen = [false; MASK_CHANNELS];
            for (a, ax) in plan.axes.iter().enumerate() {
                if ax.periodic {
                    continue;
                }
                let [lo, hi] = plan.boundary.axis(a);
                if idx[a] < ax.pad_lo() {
                    seen[lo.mask_channel()] = true;
                } else if idx[a] >= ax.pad_lo() + ax.extent {
                    seen[hi.mask_channel()] = true;
                }
            }
            seen.iter().filter(|&&s| s).count()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Strided N-d convolution with exact adjoint.

/// How one axis is indexed by a strided convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisMode {
    /// Output `m` reads input `m s + κ`; `out = (n - k) / s + 1`.
    Valid,
    /// Output `m` reads input `(m s + κ - offset) mod n`; `out = n / s`.
    Circular { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisConv {
    pub k: usize,
    pub s: usize,
    pub mode: AxisMode,
}

impl AxisConv {
    pub fn out_extent(&self, n: usize) -> Result<usize> {
        match self.mode {
            AxisMode::Valid if n >= self.k && (n - self.k).is_multiple_of(self.s) => Ok((n - self.k) / self.s + 1),
            AxisMode::Circular { .. } if n.is_multiple_of(self.s) && n > 0 => Ok(n / self.s),
            _ => Err(Error::Dimension(format!(
                "axis of extent {n} incompatible with kernel {} stride {} ({:?})",
                self.k, self.s, self.mode
            ))),
        }
    }

    /// Input extent that produces `m` outputs.
    pub fn in_extent(&self, m: usize) -> usize {
        match self.mode {
            AxisMode::Valid => (m - 1) * self.s + self.k,
            AxisMode::Circular { .. } => m * self.s,
        }
    }

    fn source(&self, n: usize, m: usize, kk: usize) -> usize {
        match self.mode {
            AxisMode::Valid => m * self.s + kk,
            AxisMode::Circular { offset } => (m * self.s + kk + n - offset % n) % n,
        }
    }
}

/// Dense weights `W[o][i][κ]` with `κ` a row-major index over the kernel window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    cout: usize,
    cin: usize,
    kernel: Vec<usize>,
    data: Vec<f64>,
}

impl ConvWeights {
    pub fn zeros(cout: usize, cin: usize, kernel: &[usize]) -> Self {
        let k: usize = kernel.iter().product();
        ConvWeights {
            cout,
            cin,
            kernel: kernel.to_vec(),
            data: vec![0.0; cout * cin * k],
        }
    }

    pub fn from_vec(cout: usize, cin: usize, kernel: &[usize], data: Vec<f64>) -> Result<Self> {
        let k: usize = kernel.iter().product();
        if data.len() != cout * cin * k {
            return Err(Error::Dimension(format!(
                "weights have {} values, expected {cout} x {cin} x {k}",
                data.len()
            )));
        }
        Ok(ConvWeights {
            cout,
            cin,
            kernel: kernel.to_vec(),
            data,
        })
    }

    /// Entries uniform in `[-scale, scale)`.
    pub fn random(cout: usize, cin: usize, kernel: &[usize], scale: f64, rng: &mut impl Rng) -> Self {
        let mut w = Self::zeros(cout, cin, kernel);
        for v in &mut w.data {
            *v = rng.gen_range(-scale..scale);
        }
        w
    }

    /// One output channel per `(input channel, kernel offset)`, copying that value.
    pub fn space_to_depth(cin: usize, kernel: &[usize]) -> Self {
        let k: usize = kernel.iter().product();
        let mut w = Self::zeros(cin * k, cin, kernel);
        for i in 0..cin {
            for kk in 0..k {
                w.set(i * k + kk, i, kk, 1.0);
            }
        }
        w
    }

    pub fn cout(&self) -> usize {
        self.cout
    }

    pub fn cin(&self) -> usize {
        self.cin
    }

    pub fn kernel(&self) -> &[usize] {
        &self.kernel
    }

    pub fn kernel_cells(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, o: usize, i: usize, kk: usize) -> f64 {
        self.data[(o * self.cin + i) * self.kernel_cells() + kk]
    }

    pub fn set(&mut self, o: usize, i: usize, kk: usize, v: f64) {
        let k = self.kernel_cells();
        self.data[(o * self.cin + i) * k + kk] = v;
    }

    fn check_axes(&self, axes: &[AxisConv]) -> Result<()> {
        if axes.len() != self.kernel.len() || axes.iter().zip(&self.kernel).any(|(a, &k)| a.k != k) {
            return Err(Error::Dimension(format!(
                "kernel {:?} does not match axis specs {:?}",
                self.kernel,
                axes.iter().map(|a| a.k).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }
}

/// Output extents and, for each `(output cell, kernel offset)`, the flat input cell.
fn gather_map(in_ext: &[usize], axes: &[AxisConv]) -> Result<(Vec<usize>, Vec<usize>)> {
    if in_ext.len() != axes.len() {
        return Err(Error::Dimension(format!(
            "{}-d grid given {} axis specs",
            in_ext.len(),
            axes.len()
        )));
    }
    let out_ext = in_ext
        .iter()
        .zip(axes)
        .map(|(&n, ax)| ax.out_extent(n))
        .collect::<Result<Vec<_>>>()?;
    let kernel: Vec<usize> = axes.iter().map(|a| a.k).collect();
    let k: usize = kernel.iter().product();
    let out_cells: usize = out_ext.iter().product();
    let strides = row_major_strides(in_ext);
    let d = in_ext.len();
    let (mut mi, mut ki) = (vec![0; d], vec![0; d]);
    let mut map = Vec::with_capacity(out_cells * k);
    for m in 0..out_cells {
        unravel(m, &out_ext, &mut mi);
        for kk in 0..k {
            unravel(kk, &kernel, &mut ki);
            let flat = (0..d)
                .map(|a| axes[a].source(in_ext[a], mi[a], ki[a]) * strides[a])
                .sum();
            map.push(flat);
        }
    }
    Ok((out_ext, map))
}

/// `y[o, m] = Σ_{i,κ} W[o,i,κ] x[i, src(m, κ)]`.
pub fn conv(x: &Grid, w: &ConvWeights, axes: &[AxisConv]) -> Result<Grid> {
    w.check_axes(axes)?;
    if x.channels() != w.cin {
        return Err(Error::Dimension(format!(
            "conv input has {} channels, weights expect {}",
            x.channels(),
            w.cin
        )));
    }
    let (out_ext, map) = gather_map(x.extents(), axes)?;
    let k = w.kernel_cells();
    let (in_cells, out_cells) = (x.cells(), map.len() / k);
    let xd = x.data();
    let mut out = vec![0.0; w.cout * out_cells];
    for o in 0..w.cout {
        for i in 0..w.cin {
            let wrow = &w.data[(o * w.cin + i) * k..(o * w.cin + i + 1) * k];
            let xc = &xd[i * in_cells..(i + 1) * in_cells];
            let orow = &mut out[o * out_cells..(o + 1) * out_cells];
            for (m, acc) in orow.iter_mut().enumerate() {
                let src = &map[m * k..(m + 1) * k];
                *acc += wrow.iter().zip(src).map(|(wv, &s)| wv * xc[s]).sum::<f64>();
            }
        }
    }
    Grid::from_vec(w.cout, &out_ext, out)
}

/// Adjoint of [`conv`] in its input: `x[i, src(m, κ)] += W[o,i,κ] y[o, m]`.
///
/// `in_ext` is the extent of the space being reconstructed.
pub fn conv_transpose(y: &Grid, w: &ConvWeights, axes: &[AxisConv], in_ext: &[usize]) -> Result<Grid> {
    w.check_axes(axes)?;
    if y.channels() != w.cout {
        return Err(Error::Dimension(format!(
            "transposed conv input has {} channels, weights expect {}",
            y.channels(),
            w.cout
        )));
    }
    let (out_ext, map) = gather_map(in_ext, axes)?;
    if out_ext != y.extents() {
        return Err(Error::Dimension(format!(
            "transposed conv input extents {:?} do not produce {:?}",
            y.extents(),
            in_ext
        )));
    }
    let k = w.kernel_cells();
    let in_cells: usize = in_ext.iter().product();
    let out_cells = y.cells();
    // Invert the gather map into per-input-cell lists ordered by kernel offset, so
    // each output value is a gather whose summation order is shift invariant.
    let mut start = vec![0usize; in_cells + 1];
    for &src in &map {
        start[src + 1] += 1;
    }
    for c in 0..in_cells {
        start[c + 1] += start[c];
    }
    let mut fill = start.clone();
    let mut entries = vec![(0usize, 0usize); map.len()];
    for kk in 0..k {
        for m in 0..out_cells {
            let src = map[m * k + kk];
            entries[fill[src]] = (m, kk);
            fill[src] += 1;
        }
    }
    let yd = y.data();
    let mut x = vec![0.0; w.cin * in_cells];
    for i in 0..w.cin {
        let xc = &mut x[i * in_cells..(i + 1) * in_cells];
        for (c, xv) in xc.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(m, kk) in &entries[start[c]..start[c + 1]] {
                for o in 0..w.cout {
                    acc += w.data[(o * w.cin + i) * k + kk] * yd[o * out_cells + m];
                }
            }
            *xv = acc;
        }
    }
    Grid::from_vec(w.cin, in_ext, x)
}

/// `∂/∂W[o,i,κ] of Σ gy ⊙ conv(x, W)`, i.e. `Σ_m gy[o,m] x[i, src(m,κ)]`.
pub fn conv_weight_grad(x: &Grid, gy: &Grid, axes: &[AxisConv]) -> Result<ConvWeights> {
    let (out_ext, map) = gather_map(x.extents(), axes)?;
    if out_ext != gy.extents() {
        return Err(Error::Dimension(format!(
            "gradient extents {:?} do not match conv output {:?}",
            gy.extents(),
            out_ext
        )));
    }
    let kernel: Vec<usize> = axes.iter().map(|a| a.k).collect();
    let mut g = ConvWeights::zeros(gy.channels(), x.channels(), &kernel);
    let k = g.kernel_cells();
    let (in_cells, out_cells) = (x.cells(), gy.cells());
    for o in 0..gy.channels() {
        let gc = &gy.data()[o * out_cells..(o + 1) * out_cells];
        for i in 0..x.channels() {
            let xc = &x.data()[i * in_cells..(i + 1) * in_cells];
            let grow = &mut g.data[(o * x.channels() + i) * k..(o * x.channels() + i + 1) * k];
            for (m, &gv) in gc.iter().enumerate() {
                for (acc, &s) in grow.iter_mut().zip(&map[m * k..(m + 1) * k]) {
                    *acc += gv * xc[s];
                }
            }
        }
    }
    Ok(g)
}

/// Adjoint of [`conv_transpose`] in its weights: `Σ_m y[o,m] gx[i, src(m,κ)]`.
pub fn conv_transpose_weight_grad(y: &Grid, gx: &Grid, axes: &[AxisConv]) -> Result<ConvWeights> {
    conv_weight_grad(gx, y, axes)
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let sg = 1.0 / (1.0 + (-x).exp());
    sg * (1.0 + x * (1.0 - sg))
}

// ---------------------------------------------------------------------------
// Encoder / decoder.

/// Stage axis specs used by the encoder and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct StageAxes {
    pub enc1: Vec<AxisConv>,
    pub enc2: Vec<AxisConv>,
    pub dec2: Vec<AxisConv>,
    pub dec1: Vec<AxisConv>,
    /// Extents reconstructed by the second and first decoder stage.
    pub dec2_extents: Vec<usize>,
    pub dec1_extents: Vec<usize>,
}

impl PatchPlan {
    /// Encoder stages read the padded grid with valid convolutions. Decoder stages
    /// are valid transposes on non-periodic axes and circular transposes on
    /// periodic ones, the latter reconstructing only the `extent` core.
    pub fn stage_axes(&self) -> StageAxes {
        let valid = |k, s| AxisConv {
            k,
            s,
            mode: AxisMode::Valid,
        };
        let mut sa = StageAxes {
            enc1: vec![],
            enc2: vec![],
            dec2: vec![],
            dec1: vec![],
            dec2_extents: vec![],
            dec1_extents: vec![],
        };
        for (ax, hidden) in self.axes.iter().zip(self.hidden_extents()) {
            let st = ax.stages;
            sa.enc1.push(valid(st.p1, st.s1));
            sa.enc2.push(valid(st.p2, st.s2));
            if ax.periodic {
                sa.dec2.push(AxisConv {
                    k: st.p2,
                    s: st.s2,
                    mode: AxisMode::Circular { offset: 0 },
                });
                sa.dec1.push(AxisConv {
                    k: st.p1,
                    s: st.s1,
                    mode: AxisMode::Circular { offset: ax.pad_lo() },
                });
                sa.dec2_extents.push(ax.extent / st.s1);
                sa.dec1_extents.push(ax.extent);
            } else {
                sa.dec2.push(valid(st.p2, st.s2));
                sa.dec1.push(valid(st.p1, st.s1));
                sa.dec2_extents.push(hidden);
                sa.dec1_extents.push(ax.padded_extent());
            }
        }
        sa
    }

    /// Circularly re-pads periodic axes of a decoded core to the padded extents.
    pub fn repad_periodic(&self, g: &Grid) -> Grid {
        let mut out = g.clone();
        for (a, ax) in self.axes.iter().enumerate() {
            if ax.periodic {
                out = out.pad(a, ax.pad_lo(), ax.pad_hi(), true);
            }
        }
        out
    }
}

/// Weights of both encoder stages and both decoder stages.
///
/// Decoder weights are stored in the orientation of the encoder stage they
/// mirror: `dec2` maps token channels (`cout`) back to hidden channels (`cin`),
/// `dec1` maps hidden channels (`cout`) to output channels (`cin`).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchWeights {
    pub enc1: ConvWeights,
    pub enc2: ConvWeights,
    pub dec2: ConvWeights,
    pub dec1: ConvWeights,
    pub nonlinear: bool,
}

fn kernels(plan: &PatchPlan) -> (Vec<usize>, Vec<usize>) {
    (
        plan.axes.iter().map(|a| a.stages.p1).collect(),
        plan.axes.iter().map(|a| a.stages.p2).collect(),
    )
}

impl PatchWeights {
    /// Random weights scaled by `1/sqrt(fan-in)`.
    pub fn random(
        plan: &PatchPlan,
        cin: usize,
        hidden: usize,
        tokens: usize,
        cout: usize,
        nonlinear: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let (k1, k2) = kernels(plan);
        let n1: usize = k1.iter().product();
        let n2: usize = k2.iter().product();
        let sc = |fan: usize| 1.0 / (fan as f64).sqrt();
        PatchWeights {
            enc1: ConvWeights::random(hidden, cin, &k1, sc(cin * n1), rng),
            enc2: ConvWeights::random(tokens, hidden, &k2, sc(hidden * n2), rng),
            dec2: ConvWeights::random(tokens, hidden, &k2, sc(tokens), rng),
            dec1: ConvWeights::random(hidden, cout, &k1, sc(hidden), rng),
            nonlinear,
        }
    }

    /// Lossless linear weights for non-overlapping plans: encode rearranges each
    /// patch into channels and decode puts the first `cout` input channels back.
    pub fn space_to_depth(plan: &PatchPlan, cin: usize, cout: usize) -> Result<Self> {
        if plan.axes.iter().any(|a| a.stages.is_overlapping()) {
            return Err(Error::Plan("space-to-depth weights need p = s on every stage".into()));
        }
        if cout > cin {
            return Err(Error::Dimension(format!("cannot decode {cout} channels from {cin}")));
        }
        let (k1, k2) = kernels(plan);
        let enc1 = ConvWeights::space_to_depth(cin, &k1);
        let enc2 = ConvWeights::space_to_depth(enc1.cout, &k2);
        let mut dec1 = ConvWeights::zeros(enc1.cout, cout, &k1);
        let n1 = enc1.kernel_cells();
        for i in 0..cout {
            for kk in 0..n1 {
                dec1.set(i * n1 + kk, i, kk, 1.0);
            }
        }
        Ok(PatchWeights {
            dec2: enc2.clone(),
            enc1,
            enc2,
            dec1,
            nonlinear: false,
        })
    }

    pub fn input_channels(&self) -> usize {
        self.enc1.cin
    }

    pub fn output_channels(&self) -> usize {
        self.dec1.cin
    }

    pub fn token_channels(&self) -> usize {
        self.enc2.cout
    }

    fn check(&self) -> Result<()> {
        let ok = self.enc2.cin == self.enc1.cout
            && self.dec2.cout == self.enc2.cout
            && self.dec1.cout == self.dec2.cin;
        if !ok {
            return Err(Error::Dimension(format!(
                "inconsistent stage channels: enc {}->{}->{} / {}->{}, dec {}->{} / {}->{}",
                self.enc1.cin,
                self.enc1.cout,
                self.enc2.cin,
                self.enc2.cout,
                self.enc2.cout,
                self.dec2.cout,
                self.dec2.cin,
                self.dec1.cout,
                self.dec1.cin
            )));
        }
        Ok(())
    }
}

/// Token array plus the plan that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub tokens: Grid,
    pub plan: PatchPlan,
}

fn activate(g: Grid, on: bool) -> Grid {
    if !on {
        return g;
    }
    let mut g = g;
    for v in g.data_mut() {
        *v = silu(*v);
    }
    g
}

/// Encodes a padded (and jittered) grid into tokens.
pub fn patch_encode(padded: &Grid, plan: &PatchPlan, weights: &PatchWeights) -> Result<TokenGrid> {
    weights.check()?;
    if padded.extents() != plan.padded_extents().as_slice() {
        return Err(Error::Dimension(format!(
            "encoder input extents {:?}, plan expects {:?}",
            padded.extents(),
            plan.padded_extents()
        )));
    }
    let sa = plan.stage_axes();
    let h = activate(conv(padded, &weights.enc1, &sa.enc1)?, weights.nonlinear);
    let tokens = conv(&h, &weights.enc2, &sa.enc2)?;
    Ok(TokenGrid {
        tokens,
        plan: plan.clone(),
    })
}

/// Decodes tokens back to a grid of padded extents.
pub fn patch_decode(tokens: &TokenGrid, weights: &PatchWeights) -> Result<Grid> {
    weights.check()?;
    let plan = &tokens.plan;
    if tokens.tokens.extents() != plan.token_extents().as_slice() {
        return Err(Error::Dimension(format!(
            "token extents {:?}, plan expects {:?}",
            tokens.tokens.extents(),
            plan.token_extents()
        )));
    }
    let sa = plan.stage_axes();
    let h = conv_transpose(&tokens.tokens, &weights.dec2, &sa.dec2, &sa.dec2_extents)?;
    let h = activate(h, weights.nonlinear);
    let core = conv_transpose(&h, &weights.dec1, &sa.dec1, &sa.dec1_extents)?;
    Ok(plan.repad_periodic(&core))
}

/// Pad, jitter by `j`, encode, decode, un-jitter, crop.
pub fn autoencode(grid: &Grid, plan: &PatchPlan, weights: &PatchWeights, j: &[usize]) -> Result<Grid> {
    let padded = pad_with_jitter(grid, plan, j)?;
    let tokens = patch_encode(&padded, plan, weights)?;
    unjitter_and_crop(&patch_decode(&tokens, weights)?, plan, j)
}
