//! Discretized physical fields, trajectories, and their on-disk container.
//!
//! A [`FieldSet`] stores named fields of tensor order 0, 1, or 2 on a regular
//! 2-d or 3-d grid. Channels are laid out field-major, then tensor-component-major
//! (row-major over the component indices), so a 3-d velocity occupies three
//! contiguous channels `v_x, v_y, v_z` and a rank-2 tensor occupies `d*d`
//! channels `T_xx, T_xy, .., T_zz`.

mod container;
mod grid;

pub use container::{read_container, write_container, CONTAINER_MAGIC};
pub use grid::{row_major_strides, unravel, Grid};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Topology of one side of one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    Periodic,
    Open,
    Closed,
}

impl Boundary {
    /// Index of the boundary-mask channel carrying this topology.
    pub fn mask_channel(self) -> usize {
        match self {
            Boundary::Periodic => 0,
            Boundary::Open => 1,
            Boundary::Closed => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::Periodic => "periodic",
            Boundary::Open => "open",
            Boundary::Closed => "closed",
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "periodic" => Ok(Boundary::Periodic),
            "open" => Ok(Boundary::Open),
            "closed" => Ok(Boundary::Closed),
            other => Err(Error::Validation(format!("unknown boundary tag `{other}`"))),
        }
    }
}

/// Per-axis `[low side, high side]` boundary tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundarySpec {
    sides: Vec<[Boundary; 2]>,
}

impl BoundarySpec {
    pub fn new(sides: Vec<[Boundary; 2]>) -> Result<Self> {
        for (axis, [lo, hi]) in sides.iter().enumerate() {
            if (*lo == Boundary::Periodic) != (*hi == Boundary::Periodic) {
                return Err(Error::Validation(format!(
                    "axis {axis}: periodicity must hold on both sides (got {lo}/{hi})"
                )));
            }
        }
        Ok(BoundarySpec { sides })
    }

    pub fn uniform(ndim: usize, b: Boundary) -> Self {
        BoundarySpec {
            sides: vec![[b, b]; ndim],
        }
    }

    pub fn periodic(ndim: usize) -> Self {
        Self::uniform(ndim, Boundary::Periodic)
    }

    pub fn ndim(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[[Boundary; 2]] {
        &self.sides
    }

    pub fn axis(&self, axis: usize) -> [Boundary; 2] {
        self.sides[axis]
    }

    pub fn is_periodic(&self, axis: usize) -> bool {
        self.sides[axis][0] == Boundary::Periodic
    }

    pub fn all_periodic(&self) -> bool {
        (0..self.ndim()).all(|a| self.is_periodic(a))
    }
}

/// Metadata of one physical field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMeta {
    pub name: String,
    /// Tensor order: 0 scalar, 1 vector, 2 rank-2 tensor.
    pub order: u8,
    /// Elementwise transform the stored values already carry (e.g. `log10`).
    /// Recorded only; nothing in this crate applies or inverts it.
    pub transform: Option<String>,
}

impl FieldMeta {
    pub fn new(name: impl Into<String>, order: u8) -> Self {
        FieldMeta {
            name: name.into(),
            order,
            transform: None,
        }
    }

    pub fn scalar(name: impl Into<String>) -> Self {
        Self::new(name, 0)
    }

    pub fn vector(name: impl Into<String>) -> Self {
        Self::new(name, 1)
    }

    pub fn tensor(name: impl Into<String>) -> Self {
        Self::new(name, 2)
    }

    pub fn components(&self, dim: usize) -> usize {
        dim.pow(self.order as u32)
    }
}

/// Named physical fields on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    fields: Vec<FieldMeta>,
    dim: usize,
    grid: Grid,
}

impl FieldSet {
    pub fn new(fields: Vec<FieldMeta>, grid: Grid) -> Result<Self> {
        let dim = grid.ndim();
        if dim != 2 && dim != 3 {
            return Err(Error::Validation(format!(
                "spatial dimensionality must be 2 or 3, got {dim}"
            )));
        }
        if let Some(a) = grid.extents().iter().position(|&e| e == 0) {
            return Err(Error::Validation(format!("axis {a} has zero extent")));
        }
        for f in &fields {
            if f.order > 2 {
                return Err(Error::Validation(format!(
                    "field `{}` has tensor order {}, expected 0, 1, or 2",
                    f.name, f.order
                )));
            }
        }
        let expected: usize = fields.iter().map(|f| f.components(dim)).sum();
        if expected != grid.channels() {
            return Err(Error::Validation(format!(
                "channel count {} does not match fields (expected {expected})",
                grid.channels()
            )));
        }
        if let Some(i) = grid.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at flat index {i}",
                grid.data()[i]
            )));
        }
        Ok(FieldSet { fields, dim, grid })
    }

    pub fn zeros(fields: Vec<FieldMeta>, extents: &[usize]) -> Result<Self> {
        let dim = extents.len();
        let channels = fields.iter().map(|f| f.components(dim)).sum();
        Self::new(fields, Grid::zeros(channels, extents))
    }

    pub fn fields(&self) -> &[FieldMeta] {
        &self.fields
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[usize] {
        self.grid.extents()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        self.grid.data()
    }

    pub fn channels(&self) -> usize {
        self.grid.channels()
    }

    pub fn cells(&self) -> usize {
        self.grid.cells()
    }

    /// Channel range occupied by field `i`.
    pub fn field_channels(&self, i: usize) -> std::ops::Range<usize> {
        let start: usize = self.fields[..i].iter().map(|f| f.components(self.dim)).sum();
        start..start + self.fields[i].components(self.dim)
    }

    /// Values of field `i` (all of its components).
    pub fn field_values(&self, i: usize) -> &[f64] {
        let r = self.field_channels(i);
        let n = self.cells();
        &self.grid.data()[r.start * n..r.end * n]
    }

    /// True when names, orders, dimensionality and extents agree.
    pub fn same_layout(&self, other: &FieldSet) -> bool {
        self.dim == other.dim
            && self.extents() == other.extents()
            && self.fields.len() == other.fields.len()
            && self
                .fields
                .iter()
                .zip(&other.fields)
                .all(|(a, b)| a.name == b.name && a.order == b.order)
    }

    /// Same layout, new values. Values are checked for finiteness.
    pub fn with_grid(&self, grid: Grid) -> Result<FieldSet> {
        if grid.channels() != self.channels() || grid.extents() != self.extents() {
            return Err(Error::Dimension(format!(
                "grid shape {}x{:?} does not match field layout {}x{:?}",
                grid.channels(),
                grid.extents(),
                self.channels(),
                self.extents()
            )));
        }
        FieldSet::new(self.fields.clone(), grid)
    }

    /// Elementwise combination with another field set of identical layout.
    pub fn zip_with(&self, other: &FieldSet, f: impl Fn(f64, f64) -> f64) -> Result<FieldSet> {
        if !self.same_layout(other) {
            return Err(Error::Dimension("field layouts differ".into()));
        }
        let data = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(&a, &b)| f(a, b))
            .collect();
        let grid = Grid::from_vec(self.channels(), self.extents(), data)?;
        FieldSet::new(self.fields.clone(), grid)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<FieldSet> {
        let data = self.values().iter().map(|&a| f(a)).collect();
        let grid = Grid::from_vec(self.channels(), self.extents(), data)?;
        FieldSet::new(self.fields.clone(), grid)
    }
}

/// Time-ordered snapshots sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    snapshots: Vec<FieldSet>,
    dt_index: usize,
    boundary: BoundarySpec,
}

impl Trajectory {
    pub fn new(snapshots: Vec<FieldSet>, dt_index: usize, boundary: BoundarySpec) -> Result<Self> {
        if snapshots.len() < 2 {
            return Err(Error::Validation(format!(
                "trajectory needs at least 2 snapshots, got {}",
                snapshots.len()
            )));
        }
        if dt_index == 0 {
            return Err(Error::Validation("dt_index must be positive".into()));
        }
        let first = &snapshots[0];
        if let Some(t) = snapshots.iter().position(|s| !s.same_layout(first)) {
            return Err(Error::Validation(format!(
                "snapshot {t} layout differs from snapshot 0"
            )));
        }
        if boundary.ndim() != first.dim() {
            return Err(Error::Validation(format!(
                "boundary spec has {} axes, fields have {}",
                boundary.ndim(),
                first.dim()
            )));
        }
        Ok(Trajectory {
            snapshots,
            dt_index,
            boundary,
        })
    }

    pub fn snapshots(&self) -> &[FieldSet] {
        &self.snapshots
    }

    pub fn snapshot(&self, t: usize) -> &FieldSet {
        &self.snapshots[t]
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn dt_index(&self) -> usize {
        self.dt_index
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.boundary
    }

    pub fn layout(&self) -> &FieldSet {
        &self.snapshots[0]
    }

    pub fn into_snapshots(self) -> Vec<FieldSet> {
        self.snapshots
    }

    /// Contiguous sub-window `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Trajectory> {
        if start + len > self.len() {
            return Err(Error::Range(format!(
                "window [{start}, {}) exceeds trajectory length {}",
                start + len,
                self.len()
            )));
        }
        Trajectory::new(
            self.snapshots[start..start + len].to_vec(),
            self.dt_index,
            self.boundary.clone(),
        )
    }
}

/// `snapshot[t] - snapshot[t - 1]`.
pub fn delta(traj: &Trajectory, t: usize) -> Result<FieldSet> {
    if t == 0 || t >= traj.len() {
        return Err(Error::Range(format!(
            "delta index {t} outside 1..{}",
            traj.len()
        )));
    }
    traj.snapshots[t].zip_with(&traj.snapshots[t - 1], |a, b| a - b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_set(values: Vec<f64>, extents: &[usize]) -> FieldSet {
        let g = Grid::from_vec(1, extents, values).unwrap();
        FieldSet::new(vec![FieldMeta::scalar("u")], g).unwrap()
    }

    fn random_traj(rng: &mut ChaCha8Rng, len: usize) -> Trajectory {
        let fields = vec![FieldMeta::scalar("p"), FieldMeta::vector("v")];
        let snaps = (0..len)
            .map(|_| {
                let data = (0..3 * 12).map(|_| rng.gen_range(-2.0..2.0)).collect();
                FieldSet::new(fields.clone(), Grid::from_vec(3, &[3, 4], data).unwrap()).unwrap()
            })
            .collect();
        Trajectory::new(snaps, 1, BoundarySpec::periodic(2)).unwrap()
    }

    #[test]
    fn channel_count_must_match_orders() {
        let g = Grid::zeros(3, &[4, 4]);
        let err = FieldSet::new(vec![FieldMeta::vector("v")], g).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(FieldSet::new(
            vec![FieldMeta::vector("v")],
            Grid::zeros(3, &[4, 4, 1])
        )
        .is_ok());
        let t = FieldSet::new(vec![FieldMeta::tensor("s")], Grid::zeros(4, &[2, 2])).unwrap();
        assert_eq!(t.channels(), 4);
    }

    #[test]
    fn rejects_bad_dim_and_nan() {
        assert!(FieldSet::new(vec![FieldMeta::scalar("u")], Grid::zeros(1, &[4])).is_err());
        assert!(
            FieldSet::new(vec![FieldMeta::scalar("u")], Grid::zeros(1, &[2, 2, 2, 2])).is_err()
        );
        let g = Grid::from_vec(1, &[1, 2], vec![0.0, f64::NAN]).unwrap();
        assert!(FieldSet::new(vec![FieldMeta::scalar("u")], g).is_err());
        assert!(FieldSet::new(vec![FieldMeta::scalar("u")], Grid::zeros(1, &[0, 2])).is_err());
    }

    #[test]
    fn periodicity_is_an_axis_property() {
        assert!(BoundarySpec::new(vec![[Boundary::Periodic, Boundary::Open]]).is_err());
        assert!(BoundarySpec::new(vec![[Boundary::Open, Boundary::Closed]]).is_ok());
    }

    #[test]
    fn trajectory_needs_two_matching_snapshots() {
        let a = scalar_set(vec![1.0], &[1, 1]);
        assert!(Trajectory::new(vec![a.clone()], 1, BoundarySpec::periodic(2)).is_err());
        let b = scalar_set(vec![1.0, 2.0], &[1, 2]);
        assert!(Trajectory::new(vec![a, b], 1, BoundarySpec::periodic(2)).is_err());
    }

    #[test]
    fn delta_of_constant_is_zero() {
        let a = scalar_set(vec![0.3; 6], &[2, 3]);
        let tr = Trajectory::new(vec![a.clone(), a.clone(), a], 1, BoundarySpec::periodic(2))
            .unwrap();
        assert!(delta(&tr, 2).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_single_cell() {
        let tr = Trajectory::new(
            vec![scalar_set(vec![1.0], &[1, 1]), scalar_set(vec![3.5], &[1, 1])],
            1,
            BoundarySpec::periodic(2),
        )
        .unwrap();
        assert_eq!(delta(&tr, 1).unwrap().values(), &[2.5]);
        assert!(matches!(delta(&tr, 0), Err(Error::Range(_))));
        assert!(matches!(delta(&tr, 2), Err(Error::Range(_))));
    }

    #[test]
    fn delta_reconstructs_next_snapshot_to_one_ulp() {
        // (a - b) + b rounds twice, so arbitrary reals reconstruct to within one
        // rounding of the larger operand rather than bit-exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tr = random_traj(&mut rng, 6);
        for t in 1..tr.len() {
            let d = delta(&tr, t).unwrap();
            let rebuilt = tr.snapshot(t - 1).zip_with(&d, |a, b| a + b).unwrap();
            for ((r, x), p) in rebuilt
                .values()
                .iter()
                .zip(tr.snapshot(t).values())
                .zip(tr.snapshot(t - 1).values())
            {
                assert!((r - x).abs() <= f64::EPSILON * x.abs().max(p.abs()));
            }
        }
    }

    #[test]
    fn delta_on_dyadic_grid_is_bit_exact() {
        // Values on a coarse dyadic lattice make every difference exact, so the
        // cumulative sum reproduces each snapshot to 0 ULP.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fields = vec![FieldMeta::scalar("u")];
        let snaps: Vec<_> = (0..8)
            .map(|_| {
                let data = (0..16).map(|_| rng.gen_range(-512i32..512) as f64 / 64.0).collect();
                FieldSet::new(fields.clone(), Grid::from_vec(1, &[4, 4], data).unwrap()).unwrap()
            })
            .collect();
        let tr = Trajectory::new(snaps, 2, BoundarySpec::periodic(2)).unwrap();
        let mut acc = tr.snapshot(0).clone();
        for t in 1..tr.len() {
            acc = acc.zip_with(&delta(&tr, t).unwrap(), |a, b| a + b).unwrap();
            assert_eq!(acc.values(), tr.snapshot(t).values());
        }
    }
}
