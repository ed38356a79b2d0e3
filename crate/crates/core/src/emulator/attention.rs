//! Forward-only space-time factorized transformer blocks.
//!
//! Tokens are channels-last: `data[(t * cells + s) * width + c]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::normalize::EPS;
use crate::patching::silu;
use crate::tensorfield::{row_major_strides, unravel, Grid};

use super::EmulatorConfig;

pub const ROPE_BASE: f64 = 10_000.0;

/// A `steps x cells x width` token sequence over a spatial token grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens {
    steps: usize,
    extents: Vec<usize>,
    width: usize,
    data: Vec<f64>,
}

impl Tokens {
    pub fn new(steps: usize, extents: &[usize], width: usize, data: Vec<f64>) -> Result<Self> {
        let cells: usize = extents.iter().product();
        if data.len() != steps * cells * width {
            return Err(Error::Dimension(format!(
                "{} values for {steps} steps x {cells} cells x {width} channels",
                data.len()
            )));
        }
        Ok(Tokens { steps, extents: extents.to_vec(), width, data })
    }

    pub fn zeros(steps: usize, extents: &[usize], width: usize) -> Self {
        let cells: usize = extents.iter().product();
        Tokens { steps, extents: extents.to_vec(), width, data: vec![0.0; steps * cells * width] }
    }

    /// Stacks channel-major grids, one per step.
    pub fn from_grids(grids: &[Grid]) -> Result<Self> {
        let first = grids.first().ok_or_else(|| Error::Dimension("no token grids".into()))?;
        let (ext, width, cells) = (first.extents().to_vec(), first.channels(), first.cells());
        let mut data = Vec::with_capacity(grids.len() * cells * width);
        for g in grids {
            if g.extents() != ext.as_slice() || g.channels() != width {
                return Err(Error::Dimension("token grids differ in shape".into()));
            }
            for s in 0..cells {
                data.extend((0..width).map(|c| g.data()[c * cells + s]));
            }
        }
        Tokens::new(grids.len(), &ext, width, data)
    }

    pub fn to_grid(&self, t: usize) -> Grid {
        let cells = self.cells();
        let step = self.step(t);
        let mut out = vec![0.0; cells * self.width];
        for s in 0..cells {
            for c in 0..self.width {
                out[c * cells + s] = step[s * self.width + c];
            }
        }
        Grid::from_vec(self.width, &self.extents, out).expect("shape is consistent")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn step(&self, t: usize) -> &[f64] {
        let n = self.cells() * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn step_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.cells() * self.width;
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Cyclic spatial roll of every step: output cell `x` holds input `x - shift`.
    pub fn roll(&self, shift: &[isize]) -> Tokens {
        let cells = self.cells();
        let strides = row_major_strides(&self.extents);
        let mut idx = vec![0; self.extents.len()];
        let mut dst_of = vec![0; cells];
        for (s, d) in dst_of.iter_mut().enumerate() {
            unravel(s, &self.extents, &mut idx);
            *d = idx
                .iter()
                .zip(&self.extents)
                .zip(shift.iter().chain(std::iter::repeat(&0)))
                .zip(&strides)
                .map(|(((&i, &n), &sh), &st)| (i as isize + sh).rem_euclid(n as isize) as usize * st)
                .sum();
        }
        let mut out = self.clone();
        let w = self.width;
        for t in 0..self.steps {
            let (src, dst) = (self.step(t), out.step_mut(t));
            for (s, &d) in dst_of.iter().enumerate() {
                dst[d * w..(d + 1) * w].copy_from_slice(&src[s * w..(s + 1) * w]);
            }
        }
        out
    }

    /// Grid coordinates of every spatial cell.
    pub fn positions(&self) -> Vec<Vec<f64>> {
        let mut idx = vec![0; self.extents.len()];
        (0..self.cells())
            .map(|s| {
                unravel(s, &self.extents, &mut idx);
                idx.iter().map(|&i| i as f64).collect()
            })
            .collect()
    }
}

/// `x / sqrt(mean_group(x^2) + eps) * gain`, per channel group of one token.
pub fn rms_group_norm(x: &[f64], groups: usize, gain: &[f64]) -> Result<Vec<f64>> {
    if groups == 0 || !x.len().is_multiple_of(groups) {
        return Err(Error::Config(format!("{} channels do not split into {groups} groups", x.len())));
    }
    if gain.len() != x.len() {
        return Err(Error::Dimension(format!("{} gains for {} channels", gain.len(), x.len())));
    }
    let g = x.len() / groups;
    let mut out = Vec::with_capacity(x.len());
    for chunk in x.chunks(g) {
        let r = (chunk.iter().map(|v| v * v).sum::<f64>() / g as f64 + EPS).sqrt();
        out.extend(chunk.iter().map(|v| v / r));
    }
    for (o, &w) in out.iter_mut().zip(gain) {
        *o *= w;
    }
    Ok(out)
}

/// Axis and angular frequency of each coordinate pair `(2f, 2f + 1)`.
///
/// Pairs are split into contiguous bands, one per axis, earlier axes taking the
/// remainder. Within a band of `b` pairs, pair `i` turns at `base^(-i/b)`.
pub fn rope_bands(head_dim: usize, axes: usize) -> Result<Vec<(usize, f64)>> {
    if !head_dim.is_multiple_of(2) {
        return Err(Error::Config(format!("rotary encoding needs an even head dim, got {head_dim}")));
    }
    let pairs = head_dim / 2;
    if axes == 0 || pairs < axes {
        return Err(Error::Config(format!("{pairs} rotary pairs cannot cover {axes} axes")));
    }
    let mut out = Vec::with_capacity(pairs);
    for a in 0..axes {
        let band = pairs / axes + usize::from(a < pairs % axes);
        for i in 0..band {
            out.push((a, ROPE_BASE.powf(-(i as f64) / band as f64)));
        }
    }
    Ok(out)
}

/// Rotates each coordinate pair by `theta * position[axis]`.
pub fn axial_rope(v: &[f64], position: &[f64]) -> Result<Vec<f64>> {
    let bands = rope_bands(v.len(), position.len())?;
    let mut out = v.to_vec();
    for (f, &(a, theta)) in bands.iter().enumerate() {
        let (s, c) = (theta * position[a]).sin_cos();
        let (x, y) = (v[2 * f], v[2 * f + 1]);
        out[2 * f] = c * x - s * y;
        out[2 * f + 1] = s * x + c * y;
    }
    Ok(out)
}

/// Row-major `rows x cols` matrix times vector.
fn matvec(w: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows).map(|r| w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()
}

/// Projections and per-head QK-norm gains shared by both block kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnWeights {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    /// `heads x head_dim`.
    pub q_gain: Vec<f64>,
    pub k_gain: Vec<f64>,
}

impl AttnWeights {
    fn zeros(c: usize) -> Self {
        AttnWeights {
            wq: vec![0.0; c * c],
            wk: vec![0.0; c * c],
            wv: vec![0.0; c * c],
            wo: vec![0.0; c * c],
            q_gain: vec![0.0; c],
            k_gain: vec![0.0; c],
        }
    }

    fn random(c: usize, out_scale: f64, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (c as f64).sqrt();
        AttnWeights {
            wq: random_matrix(c, c, s, rng),
            wk: random_matrix(c, c, s, rng),
            wv: random_matrix(c, c, s, rng),
            wo: random_matrix(c, c, s * out_scale, rng),
            q_gain: vec![1.0; c],
            k_gain: vec![1.0; c],
        }
    }

    fn check(&self, c: usize) -> Result<()> {
        let ok = [&self.wq, &self.wk, &self.wv, &self.wo].iter().all(|m| m.len() == c * c)
            && self.q_gain.len() == c
            && self.k_gain.len() == c;
        if !ok {
            return Err(Error::Dimension(format!("attention weights do not match width {c}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    pub norm_gain: Vec<f64>,
    pub attn: AttnWeights,
    /// SwiGLU: `w2 (silu(w1 x) * (w3 x))`, `w1, w3: mlp x width`, `w2: width x mlp`.
    pub w1: Vec<f64>,
    pub w3: Vec<f64>,
    pub w2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalWeights {
    pub norm_gain: Vec<f64>,
    pub attn: AttnWeights,
    /// `heads x (2 tau - 1)` relative-offset bias, indexed by `i - j + tau - 1`.
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub spatial: SpatialWeights,
    pub temporal: TemporalWeights,
}

impl BlockWeights {
    pub fn zeros(cfg: &EmulatorConfig) -> Self {
        let (c, m) = (cfg.hidden, cfg.mlp_width);
        BlockWeights {
            spatial: SpatialWeights {
                norm_gain: vec![0.0; c],
                attn: AttnWeights::zeros(c),
                w1: vec![0.0; m * c],
                w3: vec![0.0; m * c],
                w2: vec![0.0; c * m],
            },
            temporal: TemporalWeights {
                norm_gain: vec![0.0; c],
                attn: AttnWeights::zeros(c),
                bias: vec![0.0; cfg.heads * (2 * cfg.tau - 1)],
            },
        }
    }

    /// Unit gains, `1/sqrt(fan-in)` projections, and residual branches damped by `out_scale`.
    pub fn random(cfg: &EmulatorConfig, out_scale: f64, rng: &mut impl Rng) -> Self {
        let (c, m) = (cfg.hidden, cfg.mlp_width);
        let sc = 1.0 / (c as f64).sqrt();
        BlockWeights {
            spatial: SpatialWeights {
                norm_gain: vec![1.0; c],
                attn: AttnWeights::random(c, out_scale, rng),
                w1: random_matrix(m, c, sc, rng),
                w3: random_matrix(m, c, sc, rng),
                w2: random_matrix(c, m, out_scale / (m as f64).sqrt(), rng),
            },
            temporal: TemporalWeights {
                norm_gain: vec![1.0; c],
                attn: AttnWeights::random(c, out_scale, rng),
                bias: random_matrix(cfg.heads, 2 * cfg.tau - 1, 0.1, rng),
            },
        }
    }
}

/// Multi-head attention over `xn` (already normalized), returning `Wo` outputs.
///
/// `bias(h, i, j)` is `None` for masked pairs. `positions`, when given, drive
/// axial RoPE on queries and keys.
fn attend(
    xn: &[Vec<f64>],
    w: &AttnWeights,
    heads: usize,
    positions: Option<&[Vec<f64>]>,
    bias: impl Fn(usize, usize, usize) -> Option<f64>,
) -> Result<Vec<Vec<f64>>> {
    let c = xn[0].len();
    w.check(c)?;
    let dh = c / heads;
    let n = xn.len();
    let mut q: Vec<Vec<f64>> = xn.iter().map(|x| matvec(&w.wq, x, c)).collect();
    let mut k: Vec<Vec<f64>> = xn.iter().map(|x| matvec(&w.wk, x, c)).collect();
    let v: Vec<Vec<f64>> = xn.iter().map(|x| matvec(&w.wv, x, c)).collect();
    for (vecs, gain) in [(&mut q, &w.q_gain), (&mut k, &w.k_gain)] {
        for (i, x) in vecs.iter_mut().enumerate() {
            for h in 0..heads {
                let r = h * dh..(h + 1) * dh;
                let mut head = rms_group_norm(&x[r.clone()], 1, &gain[r.clone()])?;
                if let Some(p) = positions {
                    head = axial_rope(&head, &p[i])?;
                }
                x[r].copy_from_slice(&head);
            }
        }
    }
    let scale = 1.0 / (dh as f64).sqrt();
    let mut mixed = vec![vec![0.0; c]; n];
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        for i in 0..n {
            let scores: Vec<Option<f64>> = (0..n)
                .map(|j| {
                    bias(h, i, j).map(|b| {
                        q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale + b
                    })
                })
                .collect();
            let mx = scores.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let e: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |s| (s - mx).exp())).collect();
            let z: f64 = e.iter().sum();
            for (j, &ej) in e.iter().enumerate() {
                if ej == 0.0 {
                    continue;
                }
                let a = ej / z;
                for (o, &vv) in mixed[i][r.clone()].iter_mut().zip(&v[j][r.clone()]) {
                    *o += a * vv;
                }
            }
        }
    }
    Ok(mixed.iter().map(|m| matvec(&w.wo, m, c)).collect())
}

fn split_tokens(x: &[f64], c: usize) -> Result<Vec<Vec<f64>>> {
    if c == 0 || x.is_empty() || !x.len().is_multiple_of(c) {
        return Err(Error::Dimension(format!("{} values do not form tokens of width {c}", x.len())));
    }
    Ok(x.chunks(c).map(<[f64]>::to_vec).collect())
}

/// `u + MLP(v') + Attention(v')` with `v' = RMSGroupNorm(u)`, over the tokens of
/// one time slice. `x` is `n x width`; `positions` has one entry per token.
pub fn spatial_block(x: &[f64], positions: &[Vec<f64>], w: &SpatialWeights, cfg: &EmulatorConfig) -> Result<Vec<f64>> {
    let c = cfg.hidden;
    let toks = split_tokens(x, c)?;
    if positions.len() != toks.len() {
        return Err(Error::Dimension(format!("{} positions for {} tokens", positions.len(), toks.len())));
    }
    let m = cfg.mlp_width;
    if w.w1.len() != m * c || w.w3.len() != m * c || w.w2.len() != c * m {
        return Err(Error::Dimension("MLP weights do not match the configured widths".into()));
    }
    let xn = toks.iter().map(|t| rms_group_norm(t, cfg.groups, &w.norm_gain)).collect::<Result<Vec<_>>>()?;
    let att = attend(&xn, &w.attn, cfg.heads, Some(positions), |_, _, _| Some(0.0))?;
    let mut out = Vec::with_capacity(x.len());
    for ((u, v), a) in toks.iter().zip(&xn).zip(&att) {
        let gate = matvec(&w.w1, v, m);
        let lin = matvec(&w.w3, v, m);
        let hidden: Vec<f64> = gate.iter().zip(&lin).map(|(g, l)| silu(*g) * l).collect();
        let mlp = matvec(&w.w2, &hidden, c);
        out.extend((0..c).map(|i| u[i] + mlp[i] + a[i]));
    }
    Ok(out)
}

/// `u + Attention(RMSGroupNorm(u))`, causally masked over the `tau` steps of one
/// spatial location, with a learned bias per head and time offset.
pub fn temporal_block(x: &[f64], w: &TemporalWeights, cfg: &EmulatorConfig) -> Result<Vec<f64>> {
    let toks = split_tokens(x, cfg.hidden)?;
    let n = toks.len();
    if n > cfg.tau {
        return Err(Error::Dimension(format!("{n} steps exceed history length {}", cfg.tau)));
    }
    let span = 2 * cfg.tau - 1;
    if w.bias.len() != cfg.heads * span {
        return Err(Error::Dimension(format!("bias table has {} entries, expected {}", w.bias.len(), cfg.heads * span)));
    }
    let xn = toks.iter().map(|t| rms_group_norm(t, cfg.groups, &w.norm_gain)).collect::<Result<Vec<_>>>()?;
    let att = attend(&xn, &w.attn, cfg.heads, None, |h, i, j| {
        (j <= i).then(|| w.bias[h * span + i + cfg.tau - 1 - j])
    })?;
    Ok(toks.iter().zip(&att).flat_map(|(u, a)| u.iter().zip(a).map(|(p, q)| p + q)).collect())
}

/// Total inter-block roll; undone by one inverse shift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockState {
    offsets: Vec<usize>,
    extents: Vec<usize>,
}

impl BlockState {
    pub fn new(extents: &[usize]) -> Self {
        BlockState { offsets: vec![0; extents.len()], extents: extents.to_vec() }
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn push(&mut self, shift: &[usize]) {
        for ((o, &s), &n) in self.offsets.iter_mut().zip(shift).zip(&self.extents) {
            *o = (*o + s) % n;
        }
    }

    pub fn inverse(&self) -> Vec<isize> {
        self.offsets.iter().map(|&o| -(o as isize)).collect()
    }
}

fn apply_spatial(tokens: &Tokens, w: &SpatialWeights, cfg: &EmulatorConfig, pos: &[Vec<f64>]) -> Result<Tokens> {
    let mut out = tokens.clone();
    for t in 0..tokens.steps {
        let y = spatial_block(tokens.step(t), pos, w, cfg)?;
        out.step_mut(t).copy_from_slice(&y);
    }
    Ok(out)
}

fn apply_temporal(tokens: &Tokens, w: &TemporalWeights, cfg: &EmulatorConfig) -> Result<Tokens> {
    let (c, cells, steps) = (tokens.width, tokens.cells(), tokens.steps);
    let mut out = tokens.clone();
    let mut seq = vec![0.0; steps * c];
    for s in 0..cells {
        for t in 0..steps {
            seq[t * c..(t + 1) * c].copy_from_slice(&tokens.step(t)[s * c..(s + 1) * c]);
        }
        let y = temporal_block(&seq, w, cfg)?;
        for t in 0..steps {
            out.step_mut(t)[s * c..(s + 1) * c].copy_from_slice(&y[t * c..(t + 1) * c]);
        }
    }
    Ok(out)
}

/// Every block on every step, with random periodic rolls between blocks and one
/// inverse roll at the end. `periodic[a]` says whether token axis `a` wraps.
pub fn forward_all(
    history: &Tokens,
    cfg: &EmulatorConfig,
    blocks: &[BlockWeights],
    periodic: &[bool],
    rng: &mut impl Rng,
) -> Result<Tokens> {
    cfg.validate()?;
    if history.width != cfg.hidden || history.extents != cfg.token_extents {
        return Err(Error::Dimension(format!(
            "tokens {:?} x {} do not match configured grid {:?} x {}",
            history.extents, history.width, cfg.token_extents, cfg.hidden
        )));
    }
    if blocks.len() != cfg.blocks {
        return Err(Error::Dimension(format!("{} block weights for {} blocks", blocks.len(), cfg.blocks)));
    }
    if periodic.len() != history.extents.len() {
        return Err(Error::Dimension("periodicity flags do not match token axes".into()));
    }
    if cfg.rolls && periodic.iter().any(|&p| !p) {
        return Err(Error::Config("inter-block rolls require every token axis to be periodic".into()));
    }
    let pos = history.positions();
    let mut state = BlockState::new(&history.extents);
    let mut x = history.clone();
    for (b, w) in blocks.iter().enumerate() {
        x = apply_spatial(&x, &w.spatial, cfg, &pos)?;
        x = apply_temporal(&x, &w.temporal, cfg)?;
        if cfg.rolls && b + 1 < blocks.len() {
            let shift: Vec<usize> = history.extents.iter().map(|&n| rng.gen_range(0..n)).collect();
            x = x.roll(&shift.iter().map(|&s| s as isize).collect::<Vec<_>>());
            state.push(&shift);
        }
    }
    Ok(x.roll(&state.inverse()))
}

/// Output tokens of the final history slot.
pub fn forward(
    history: &Tokens,
    cfg: &EmulatorConfig,
    blocks: &[BlockWeights],
    periodic: &[bool],
    rng: &mut impl Rng,
) -> Result<Tokens> {
    let all = forward_all(history, cfg, blocks, periodic, rng)?;
    let last = all.step(all.steps - 1).to_vec();
    Tokens::new(1, &all.extents, all.width, last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::Mode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(tau: usize, ext: &[usize]) -> EmulatorConfig {
        EmulatorConfig {
            hidden: 8,
            heads: 2,
            groups: 2,
            blocks: 2,
            mlp_width: 12,
            tau,
            token_extents: ext.to_vec(),
            mode: Mode::AttentionForward,
            rolls: true,
        }
    }

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn group_norm_closed_form_and_errors() {
        let y = rms_group_norm(&[1.0; 6], 3, &[1.0; 6]).unwrap();
        assert!(y.iter().all(|&v| v == 1.0 / (1.0 + EPS).sqrt()));
        assert!(matches!(rms_group_norm(&[1.0; 6], 4, &[1.0; 6]), Err(Error::Config(_))));
        assert!(matches!(rms_group_norm(&[1.0; 6], 3, &[1.0; 5]), Err(Error::Dimension(_))));
    }

    #[test]
    fn rope_bands_partition_pairs() {
        let b = rope_bands(10, 2).unwrap();
        assert_eq!(b.iter().filter(|(a, _)| *a == 0).count(), 3);
        assert_eq!(b.iter().filter(|(a, _)| *a == 1).count(), 2);
        assert_eq!(b[0].1, 1.0);
        assert!(matches!(rope_bands(7, 1), Err(Error::Config(_))));
        assert!(matches!(rope_bands(2, 2), Err(Error::Config(_))));
        let v = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(axial_rope(&v, &[0.0, 0.0]).unwrap(), v);
    }

    #[test]
    fn zero_weights_are_identity() {
        let c = cfg(3, &[2, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_vec(4 * 8, &mut rng);
        let z = BlockWeights::zeros(&c);
        let pos = Tokens::zeros(1, &[2, 2], 8).positions();
        assert_eq!(spatial_block(&x, &pos, &z.spatial, &c).unwrap(), x);
        let seq = rand_vec(3 * 8, &mut rng);
        assert_eq!(temporal_block(&seq, &z.temporal, &c).unwrap(), seq);
    }

    #[test]
    fn single_token_attention_is_value_projection() {
        let c = cfg(1, &[1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w = BlockWeights::random(&c, 1.0, &mut rng);
        w.spatial.w2.fill(0.0);
        let x = rand_vec(8, &mut rng);
        let xn = rms_group_norm(&x, 2, &w.spatial.norm_gain).unwrap();
        let want: Vec<f64> = x
            .iter()
            .zip(matvec(&w.spatial.attn.wo, &matvec(&w.spatial.attn.wv, &xn, 8), 8))
            .map(|(a, b)| a + b)
            .collect();
        let got = spatial_block(&x, &[vec![0.0, 0.0]], &w.spatial, &c).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
        // tau = 1 temporal attention sees only itself.
        let xt = rms_group_norm(&x, 2, &w.temporal.norm_gain).unwrap();
        let want: Vec<f64> = x
            .iter()
            .zip(matvec(&w.temporal.attn.wo, &matvec(&w.temporal.attn.wv, &xt, 8), 8))
            .map(|(a, b)| a + b)
            .collect();
        let got = temporal_block(&x, &w.temporal, &c).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn spatial_block_is_permutation_equivariant() {
        let c = cfg(2, &[3, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = BlockWeights::random(&c, 1.0, &mut rng);
        let x = rand_vec(6 * 8, &mut rng);
        let pos = Tokens::zeros(1, &[3, 2], 8).positions();
        let perm = [4, 0, 5, 2, 1, 3];
        let xp: Vec<f64> = perm.iter().flat_map(|&p| x[p * 8..(p + 1) * 8].to_vec()).collect();
        let pp: Vec<Vec<f64>> = perm.iter().map(|&p| pos[p].clone()).collect();
        let y = spatial_block(&x, &pos, &w.spatial, &c).unwrap();
        let yp = spatial_block(&xp, &pp, &w.spatial, &c).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for k in 0..8 {
                assert!((yp[i * 8 + k] - y[p * 8 + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn temporal_block_is_causal() {
        let c = cfg(4, &[1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = BlockWeights::random(&c, 1.0, &mut rng);
        let x = rand_vec(4 * 8, &mut rng);
        let y = temporal_block(&x, &w.temporal, &c).unwrap();
        for t in 0..4 {
            let mut xp = x.clone();
            for v in &mut xp[(t + 1) * 8..] {
                *v += rng.gen_range(-5.0..5.0);
            }
            let yp = temporal_block(&xp, &w.temporal, &c).unwrap();
            assert_eq!(&yp[..(t + 1) * 8], &y[..(t + 1) * 8]);
        }
    }

    #[test]
    fn forward_is_causal_and_deterministic() {
        let c = cfg(3, &[4, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let blocks: Vec<_> = (0..2).map(|_| BlockWeights::random(&c, 0.5, &mut rng)).collect();
        let h = Tokens::new(3, &[4, 2], 8, rand_vec(3 * 8 * 8, &mut rng)).unwrap();
        let run = |h: &Tokens, seed| forward_all(h, &c, &blocks, &[true, true], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let y = run(&h, 9);
        assert_eq!(y, run(&h, 9));
        let mut h2 = h.clone();
        for v in h2.step_mut(2) {
            *v = -*v;
        }
        let y2 = run(&h2, 9);
        assert_eq!(y.step(0), y2.step(0));
        assert_eq!(y.step(1), y2.step(1));
        assert_ne!(y.step(2), y2.step(2));
    }

    #[test]
    fn zero_blocks_forward_is_identity_and_rolls_need_periodicity() {
        let c = cfg(2, &[3, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let blocks = vec![BlockWeights::zeros(&c); 2];
        let h = Tokens::new(2, &[3, 3], 8, rand_vec(2 * 9 * 8, &mut rng)).unwrap();
        let y = forward(&h, &c, &blocks, &[true, true], &mut rng).unwrap();
        assert_eq!(y.step(0), h.step(1));
        assert!(matches!(forward(&h, &c, &blocks, &[true, false], &mut rng), Err(Error::Config(_))));
        let mut nr = c.clone();
        nr.rolls = false;
        assert!(forward(&h, &nr, &blocks, &[true, false], &mut rng).is_ok());
    }

    #[test]
    fn token_grid_round_trip_and_roll_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Grid::from_vec(3, &[2, 4], rand_vec(24, &mut rng)).unwrap();
        let t = Tokens::from_grids(&[g.clone(), g.clone()]).unwrap();
        assert_eq!(t.to_grid(1), g);
        let r = t.roll(&[1, 3]);
        assert_eq!(r.to_grid(0), g.roll(0, 1).roll(1, 3));
        assert_eq!(r.roll(&[-1, -3]), t);
        let mut st = BlockState::new(&[2, 4]);
        st.push(&[1, 3]);
        st.push(&[1, 2]);
        assert_eq!(st.offsets(), &[0, 1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn group_norm_unit_rms_and_scale_invariance(seed in any::<u64>(), c in 0.5f64..100.0) {
            // Magnitudes bounded away from zero keep the 1e-8 floor negligible.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = rand_vec(12, &mut rng).into_iter().map(|v| v.signum() * (0.5 + 0.5 * v.abs())).collect();
            let y = rms_group_norm(&x, 3, &[1.0; 12]).unwrap();
            for g in y.chunks(4) {
                let rms = (g.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
                prop_assert!((rms - 1.0).abs() < 1e-6);
            }
            let ys = rms_group_norm(&x.iter().map(|v| v * c).collect::<Vec<_>>(), 3, &[1.0; 12]).unwrap();
            for (a, b) in y.iter().zip(&ys) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn rope_is_relative_and_isometric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (q, k) = (rand_vec(12, &mut rng), rand_vec(12, &mut rng));
            let p: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..32.0)).collect();
            let r: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..32.0)).collect();
            let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-16.0..16.0)).collect();
            let shift = |v: &[f64]| v.iter().zip(&s).map(|(a, b)| a + b).collect::<Vec<_>>();
            let base = dot(&axial_rope(&q, &p).unwrap(), &axial_rope(&k, &r).unwrap());
            let moved = dot(&axial_rope(&q, &shift(&p)).unwrap(), &axial_rope(&k, &shift(&r)).unwrap());
            prop_assert!((base - moved).abs() < 1e-9);
            let n0 = dot(&q, &q).sqrt();
            let n1 = { let v = axial_rope(&q, &p).unwrap(); dot(&v, &v).sqrt() };
            prop_assert!((n0 - n1).abs() < 1e-12);
        }
    }
}
