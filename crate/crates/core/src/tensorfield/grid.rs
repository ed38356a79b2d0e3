use crate::error::{Error, Result};

/// Dense channel-major array over a regular N-d grid.
///
/// Element `(c, x_0, .., x_{d-1})` lives at `c * cells + ravel(x)` where `ravel`
/// is row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    channels: usize,
    extents: Vec<usize>,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(channels: usize, extents: &[usize]) -> Self {
        let cells: usize = extents.iter().product();
        Grid {
            channels,
            extents: extents.to_vec(),
            data: vec![0.0; channels * cells],
        }
    }

    pub fn from_vec(channels: usize, extents: &[usize], data: Vec<f64>) -> Result<Self> {
        let cells: usize = extents.iter().product();
        if data.len() != channels * cells {
            return Err(Error::Dimension(format!(
                "grid data has {} values, expected {} channels x {} cells",
                data.len(),
                channels,
                cells
            )));
        }
        Ok(Grid {
            channels,
            extents: extents.to_vec(),
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn ndim(&self) -> usize {
        self.extents.len()
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.cells();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.cells();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Row-major strides of the spatial part.
    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.extents)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.channels == other.channels && self.extents == other.extents
    }

    /// Cyclic shift along `axis`: `out[i] = self[(i - shift) mod n]`.
    pub fn roll(&self, axis: usize, shift: isize) -> Grid {
        let n = self.extents[axis];
        let s = shift.rem_euclid(n as isize) as usize;
        if s == 0 {
            return self.clone();
        }
        let strides = self.strides();
        let inner = strides[axis];
        let outer = self.channels * self.cells() / (n * inner);
        let mut out = vec![0.0; self.data.len()];
        for o in 0..outer {
            let base = o * n * inner;
            for i in 0..n {
                let src = base + i * inner;
                let dst = base + ((i + s) % n) * inner;
                out[dst..dst + inner].copy_from_slice(&self.data[src..src + inner]);
            }
        }
        Grid {
            channels: self.channels,
            extents: self.extents.clone(),
            data: out,
        }
    }

    /// Pads `axis` by `lo`/`hi` cells, either with zeros or by periodic wrap.
    pub fn pad(&self, axis: usize, lo: usize, hi: usize, circular: bool) -> Grid {
        let n = self.extents[axis];
        let m = n + lo + hi;
        let mut extents = self.extents.clone();
        extents[axis] = m;
        let inner: usize = self.extents[axis + 1..].iter().product();
        let outer = self.channels * self.extents[..axis].iter().product::<usize>();
        let mut out = vec![0.0; outer * m * inner];
        for o in 0..outer {
            for i in 0..m {
                let src_i = if i >= lo && i < lo + n {
                    Some(i - lo)
                } else if circular {
                    Some((i as isize - lo as isize).rem_euclid(n as isize) as usize)
                } else {
                    None
                };
                if let Some(si) = src_i {
                    let src = (o * n + si) * inner;
                    let dst = (o * m + i) * inner;
                    out[dst..dst + inner].copy_from_slice(&self.data[src..src + inner]);
                }
            }
        }
        Grid {
            channels: self.channels,
            extents,
            data: out,
        }
    }

    /// Keeps `len` cells of `axis` starting at `start`.
    pub fn crop(&self, axis: usize, start: usize, len: usize) -> Grid {
        let n = self.extents[axis];
        assert!(start + len <= n, "crop window out of bounds");
        let mut extents = self.extents.clone();
        extents[axis] = len;
        let inner: usize = self.extents[axis + 1..].iter().product();
        let outer = self.channels * self.extents[..axis].iter().product::<usize>();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * n + start) * inner;
            out.extend_from_slice(&self.data[src..src + len * inner]);
        }
        Grid {
            channels: self.channels,
            extents,
            data: out,
        }
    }

    /// Periodic fold of `axis` onto `period` cells: output cell `x` accumulates every
    /// input cell `i` with `(i - offset) mod period == x`. Adjoint of a circular pad.
    pub fn fold(&self, axis: usize, period: usize, offset: usize) -> Grid {
        let n = self.extents[axis];
        let mut extents = self.extents.clone();
        extents[axis] = period;
        let inner: usize = self.extents[axis + 1..].iter().product();
        let outer = self.channels * self.extents[..axis].iter().product::<usize>();
        let mut out = vec![0.0; outer * period * inner];
        for o in 0..outer {
            for i in 0..n {
                let x = (i as isize - offset as isize).rem_euclid(period as isize) as usize;
                let src = (o * n + i) * inner;
                let dst = (o * period + x) * inner;
                for q in 0..inner {
                    out[dst + q] += self.data[src + q];
                }
            }
        }
        Grid {
            channels: self.channels,
            extents,
            data: out,
        }
    }

    /// Keeps the listed channels in order.
    pub fn select_channels(&self, channels: std::ops::Range<usize>) -> Grid {
        let n = self.cells();
        let data = self.data[channels.start * n..channels.end * n].to_vec();
        Grid {
            channels: channels.len(),
            extents: self.extents.clone(),
            data,
        }
    }

    /// Stacks grids of identical extents along the channel axis.
    pub fn concat_channels(parts: &[&Grid]) -> Result<Grid> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("cannot concatenate zero grids".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.extents != first.extents {
                return Err(Error::Dimension(format!(
                    "extent mismatch in concat: {:?} vs {:?}",
                    p.extents, first.extents
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(Grid {
            channels,
            extents: first.extents.clone(),
            data,
        })
    }
}

pub fn row_major_strides(extents: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; extents.len()];
    for a in (0..extents.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * extents[a + 1];
    }
    strides
}

/// Writes the multi-index of flat offset `flat` into `idx`.
pub fn unravel(mut flat: usize, extents: &[usize], idx: &mut [usize]) {
    for a in (0..extents.len()).rev() {
        idx[a] = flat % extents[a];
        flat /= extents[a];
    }
}
