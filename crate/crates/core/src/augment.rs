//! Physically consistent augmentation: 2D-to-3D embedding, the 48-element
//! octahedral group acting on grids and tensor components, and time striding.
//!
//! An element is a signed permutation `R` with `R[i][perm[i]] = sign[i]`. It acts
//! on positions as `x' = R x` about the grid center, so output axis `i` reads
//! input axis `perm[i]`, reversed when `sign[i] = -1`. Components transform as
//! `v' = R v` (order 1) and `T' = R T Rᵀ` (order 2). This is a left action:
//! applying `R1` then `R2` equals applying `R2 R1`.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensorfield::{row_major_strides, unravel, Boundary, BoundarySpec, FieldSet, Grid, Trajectory};

/// Signed 3x3 permutation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OctahedralElement {
    perm: [usize; 3],
    sign: [i8; 3],
}

impl OctahedralElement {
    pub const IDENTITY: OctahedralElement = OctahedralElement {
        perm: [0, 1, 2],
        sign: [1, 1, 1],
    };

    pub fn new(perm: [usize; 3], sign: [i8; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for &p in &perm {
            if p > 2 || seen[p] {
                return Err(Error::Validation(format!("{perm:?} is not a permutation of 0..3")));
            }
            seen[p] = true;
        }
        if sign.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Validation(format!("signs {sign:?} must be +1 or -1")));
        }
        Ok(OctahedralElement { perm, sign })
    }

    /// Accepts exactly the signed permutation matrices.
    pub fn from_matrix(m: [[i8; 3]; 3]) -> Result<Self> {
        let mut perm = [0; 3];
        let mut sign = [0; 3];
        for i in 0..3 {
            let nz: Vec<usize> = (0..3).filter(|&j| m[i][j] != 0).collect();
            if nz.len() != 1 {
                return Err(Error::Validation(format!("row {i} of {m:?} is not a signed unit row")));
            }
            perm[i] = nz[0];
            sign[i] = m[i][nz[0]];
        }
        Self::new(perm, sign)
    }

    pub fn matrix(&self) -> [[i8; 3]; 3] {
        let mut m = [[0; 3]; 3];
        for i in 0..3 {
            m[i][self.perm[i]] = self.sign[i];
        }
        m
    }

    pub fn perm(&self) -> [usize; 3] {
        self.perm
    }

    pub fn sign(&self) -> [i8; 3] {
        self.sign
    }

    pub fn det(&self) -> i8 {
        let p = self.perm;
        let inversions = (0..3)
            .flat_map(|i| (i + 1..3).map(move |j| (i, j)))
            .filter(|&(i, j)| p[i] > p[j])
            .count();
        let parity = if inversions % 2 == 0 { 1 } else { -1 };
        parity * self.sign.iter().product::<i8>()
    }

    /// Matrix product `self · rhs`.
    pub fn compose(&self, rhs: &OctahedralElement) -> OctahedralElement {
        // (A B)[i][rhs.perm[perm[i]]] = sign[i] * rhs.sign[perm[i]]
        let mut perm = [0; 3];
        let mut sign = [0; 3];
        for i in 0..3 {
            perm[i] = rhs.perm[self.perm[i]];
            sign[i] = self.sign[i] * rhs.sign[self.perm[i]];
        }
        OctahedralElement { perm, sign }
    }

    /// The transpose.
    pub fn inverse(&self) -> OctahedralElement {
        let mut perm = [0; 3];
        let mut sign = [0; 3];
        for i in 0..3 {
            perm[self.perm[i]] = i;
            sign[self.perm[i]] = self.sign[i];
        }
        OctahedralElement { perm, sign }
    }

    /// Whether the element maps the grid onto itself: every output axis reads an
    /// input axis of equal extent.
    pub fn is_admissible(&self, extents: &[usize]) -> bool {
        extents.len() == 3 && (0..3).all(|i| extents[self.perm[i]] == extents[i])
    }

    pub fn apply_vector(&self, v: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = signed(self.sign[i], v[self.perm[i]]);
        }
        out
    }
}

impl fmt::Display for OctahedralElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.matrix();
        write!(f, "[{:?}, {:?}, {:?}]", m[0], m[1], m[2])
    }
}

fn signed(s: i8, v: f64) -> f64 {
    if s < 0 {
        -v
    } else {
        v
    }
}

/// All 48 elements in a fixed order: permutations in lexicographic order, then
/// sign patterns counting in binary with bit `i` set meaning `sign[i] = -1`.
pub fn enumerate_group() -> Vec<OctahedralElement> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(48);
    for perm in PERMS {
        for bits in 0..8u8 {
            let mut sign = [1i8; 3];
            for (i, s) in sign.iter_mut().enumerate() {
                if bits & (1 << i) != 0 {
                    *s = -1;
                }
            }
            out.push(OctahedralElement { perm, sign });
        }
    }
    out
}

/// Appends a singleton third axis; vectors gain a zero z-component and rank-2
/// tensors become 3x3 with zero third row and column.
pub fn embed_2d_in_3d(field: &FieldSet) -> Result<FieldSet> {
    if field.dim() != 2 {
        return Err(Error::Dimension(format!(
            "embedding expects a 2D field set, got dim {}",
            field.dim()
        )));
    }
    let mut extents = field.extents().to_vec();
    extents.push(1);
    let cells = field.cells();
    let zero = vec![0.0; cells];
    let mut data = Vec::new();
    let g = field.grid();
    let mut ch = 0;
    for meta in field.fields() {
        match meta.order {
            0 => data.extend_from_slice(g.channel(ch)),
            1 => {
                data.extend_from_slice(g.channel(ch));
                data.extend_from_slice(g.channel(ch + 1));
                data.extend_from_slice(&zero);
            }
            _ => {
                for r in 0..3 {
                    for c in 0..3 {
                        if r < 2 && c < 2 {
                            data.extend_from_slice(g.channel(ch + 2 * r + c));
                        } else {
                            data.extend_from_slice(&zero);
                        }
                    }
                }
            }
        }
        ch += meta.components(2);
    }
    let channels = data.len() / cells;
    FieldSet::new(field.fields().to_vec(), Grid::from_vec(channels, &extents, data)?)
}

/// Embeds every snapshot; the new singleton axis is tagged periodic on both sides.
pub fn embed_trajectory(traj: &Trajectory) -> Result<Trajectory> {
    let snaps = traj.snapshots().iter().map(embed_2d_in_3d).collect::<Result<Vec<_>>>()?;
    let mut sides = traj.boundary().sides().to_vec();
    sides.push([Boundary::Periodic; 2]);
    Trajectory::new(snaps, traj.dt_index(), BoundarySpec::new(sides)?)
}

/// Spatial relabeling plus the tensor transformation law. Rejects elements that
/// would change the grid extents.
pub fn apply_group_element(field: &FieldSet, r: &OctahedralElement) -> Result<FieldSet> {
    if field.dim() != 3 {
        return Err(Error::Dimension(format!(
            "group action expects a 3D field set, got dim {}",
            field.dim()
        )));
    }
    let ext = field.extents().to_vec();
    if !r.is_admissible(&ext) {
        return Err(Error::Validation(format!(
            "element {r} maps extents {ext:?} onto {:?}",
            [ext[r.perm[0]], ext[r.perm[1]], ext[r.perm[2]]]
        )));
    }
    let src = source_cells(&ext, r);
    let g = field.grid();
    let cells = g.cells();
    let moved = |c: usize| -> Vec<f64> {
        let ch = g.channel(c);
        src.iter().map(|&s| ch[s]).collect()
    };
    let mut data = Vec::with_capacity(g.data().len());
    let mut ch = 0;
    for meta in field.fields() {
        match meta.order {
            0 => data.extend(moved(ch)),
            1 => {
                for i in 0..3 {
                    let s = r.sign[i];
                    data.extend(moved(ch + r.perm[i]).into_iter().map(|v| signed(s, v)));
                }
            }
            _ => {
                for i in 0..3 {
                    for k in 0..3 {
                        let s = r.sign[i] * r.sign[k];
                        let comp = ch + 3 * r.perm[i] + r.perm[k];
                        data.extend(moved(comp).into_iter().map(|v| signed(s, v)));
                    }
                }
            }
        }
        ch += meta.components(3);
    }
    debug_assert_eq!(data.len(), g.channels() * cells);
    field.with_grid(Grid::from_vec(g.channels(), &ext, data)?)
}

/// For every output cell, the flat input cell it reads.
fn source_cells(ext: &[usize], r: &OctahedralElement) -> Vec<usize> {
    let cells: usize = ext.iter().product();
    let strides = row_major_strides(ext);
    let mut y = [0usize; 3];
    (0..cells)
        .map(|flat| {
            unravel(flat, ext, &mut y);
            (0..3)
                .map(|i| {
                    let a = r.perm[i];
                    let xa = if r.sign[i] > 0 { y[i] } else { ext[a] - 1 - y[i] };
                    xa * strides[a]
                })
                .sum()
        })
        .collect()
}

/// Boundary tags follow their axes; a reversed axis swaps its low and high side.
pub fn transform_boundary(b: &BoundarySpec, r: &OctahedralElement) -> Result<BoundarySpec> {
    if b.ndim() != 3 {
        return Err(Error::Dimension(format!("boundary spec has {} axes, expected 3", b.ndim())));
    }
    let sides = (0..3)
        .map(|i| {
            let [lo, hi] = b.axis(r.perm[i]);
            if r.sign[i] > 0 {
                [lo, hi]
            } else {
                [hi, lo]
            }
        })
        .collect();
    BoundarySpec::new(sides)
}

pub fn apply_to_trajectory(traj: &Trajectory, r: &OctahedralElement) -> Result<Trajectory> {
    let snaps = traj
        .snapshots()
        .iter()
        .map(|s| apply_group_element(s, r))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(snaps, traj.dt_index(), transform_boundary(traj.boundary(), r)?)
}

pub const MAX_TIME_STRIDE: usize = 5;

fn strided_len(len: usize, k: usize, phase: usize) -> usize {
    if phase >= len {
        0
    } else {
        (len - phase).div_ceil(k)
    }
}

/// Keeps snapshots `phase, phase + k, ...` and multiplies `dt_index` by `k`.
pub fn stride_time_with_phase(traj: &Trajectory, k: usize, phase: usize) -> Result<Trajectory> {
    if !(1..=MAX_TIME_STRIDE).contains(&k) {
        return Err(Error::Range(format!("time stride {k} outside 1..={MAX_TIME_STRIDE}")));
    }
    if phase >= k {
        return Err(Error::Range(format!("phase {phase} must be below the stride {k}")));
    }
    if strided_len(traj.len(), k, phase) < 2 {
        return Err(Error::Range(format!(
            "stride {k} at phase {phase} leaves fewer than 2 of {} snapshots",
            traj.len()
        )));
    }
    let snaps = traj.snapshots().iter().skip(phase).step_by(k).cloned().collect();
    Trajectory::new(snaps, traj.dt_index() * k, traj.boundary().clone())
}

/// [`stride_time_with_phase`] at a phase drawn uniformly from those leaving at
/// least two snapshots. Returns the phase used.
pub fn stride_time(traj: &Trajectory, k: usize, rng: &mut impl Rng) -> Result<(Trajectory, usize)> {
    if !(1..=MAX_TIME_STRIDE).contains(&k) {
        return Err(Error::Range(format!("time stride {k} outside 1..={MAX_TIME_STRIDE}")));
    }
    let phases: Vec<usize> = (0..k).filter(|&p| strided_len(traj.len(), k, p) >= 2).collect();
    if phases.is_empty() {
        return Err(Error::Range(format!(
            "trajectory of length {} too short for time stride {k}",
            traj.len()
        )));
    }
    let phase = phases[rng.gen_range(0..phases.len())];
    Ok((stride_time_with_phase(traj, k, phase)?, phase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorfield::FieldMeta;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn random_field(ext: &[usize], rng: &mut ChaCha8Rng) -> FieldSet {
        let fields = vec![FieldMeta::scalar("p"), FieldMeta::vector("v"), FieldMeta::tensor("s")];
        let ch = 1 + 3 + 9;
        let n = ch * ext.iter().product::<usize>();
        let g = Grid::from_vec(ch, ext, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        FieldSet::new(fields, g).unwrap()
    }

    fn matmul(a: [[i8; 3]; 3], b: [[i8; 3]; 3]) -> [[i8; 3]; 3] {
        let mut c = [[0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        c
    }

    #[test]
    fn group_has_48_distinct_elements_24_proper() {
        let g = enumerate_group();
        assert_eq!(g.len(), 48);
        assert_eq!(g.iter().collect::<HashSet<_>>().len(), 48);
        assert_eq!(g.iter().filter(|e| e.det() == 1).count(), 24);
    }

    #[test]
    fn compose_and_inverse_match_matrices() {
        let g = enumerate_group();
        let set: HashSet<_> = g.iter().copied().collect();
        for a in &g {
            let m = a.matrix();
            let mut mt = [[0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    mt[i][j] = m[j][i];
                }
            }
            assert_eq!(matmul(m, mt), OctahedralElement::IDENTITY.matrix());
            assert_eq!(a.inverse().matrix(), mt);
            for b in &g {
                let ab = a.compose(b);
                assert_eq!(ab.matrix(), matmul(a.matrix(), b.matrix()));
                assert!(set.contains(&ab));
            }
        }
    }

    #[test]
    fn from_matrix_rejects_non_group_matrices() {
        assert!(OctahedralElement::from_matrix([[1, 0, 0], [0, 1, 0], [0, 0, 1]]).is_ok());
        assert!(matches!(
            OctahedralElement::from_matrix([[1, 1, 0], [0, 1, 0], [0, 0, 1]]),
            Err(Error::Validation(_))
        ));
        assert!(OctahedralElement::from_matrix([[2, 0, 0], [0, 1, 0], [0, 0, 1]]).is_err());
        assert!(OctahedralElement::from_matrix([[1, 0, 0], [1, 0, 0], [0, 0, 1]]).is_err());
    }

    #[test]
    fn embed_velocity_and_tensor() {
        let g = Grid::from_vec(2 + 4, &[1, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let f = FieldSet::new(vec![FieldMeta::vector("v"), FieldMeta::tensor("s")], g).unwrap();
        let e = embed_2d_in_3d(&f).unwrap();
        assert_eq!(e.extents(), &[1, 2, 1]);
        assert_eq!(e.channels(), 3 + 9);
        let g = e.grid();
        assert_eq!(g.channel(0), &[1.0, 2.0]);
        assert_eq!(g.channel(1), &[3.0, 4.0]);
        assert_eq!(g.channel(2), &[0.0, 0.0]);
        // tensor block rows: (s00 s01 0)(s10 s11 0)(0 0 0)
        let t: Vec<&[f64]> = (3..12).map(|c| g.channel(c)).collect();
        assert_eq!(t[0], &[5.0, 6.0]);
        assert_eq!(t[1], &[7.0, 8.0]);
        assert_eq!(t[3], &[9.0, 10.0]);
        assert_eq!(t[4], &[11.0, 12.0]);
        for z in [2, 5, 6, 7, 8] {
            assert_eq!(t[z], &[0.0, 0.0]);
        }
        assert!(matches!(embed_2d_in_3d(&e), Err(Error::Dimension(_))));
    }

    #[test]
    fn embed_scalar_keeps_values() {
        let g = Grid::from_vec(1, &[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = FieldSet::new(vec![FieldMeta::scalar("p")], g).unwrap();
        let e = embed_2d_in_3d(&f).unwrap();
        assert_eq!(e.values(), f.values());
        assert_eq!(e.extents(), &[2, 2, 1]);
    }

    #[test]
    fn identity_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(&[3, 3, 3], &mut rng);
        assert_eq!(apply_group_element(&f, &OctahedralElement::IDENTITY).unwrap(), f);
    }

    #[test]
    fn quarter_turn_about_z_rotates_uniform_velocity() {
        let rz = OctahedralElement::from_matrix([[0, -1, 0], [1, 0, 0], [0, 0, 1]]).unwrap();
        assert_eq!(rz.det(), 1);
        let mut g = Grid::zeros(3, &[2, 2, 2]);
        g.channel_mut(0).fill(1.0);
        let f = FieldSet::new(vec![FieldMeta::vector("v")], g).unwrap();
        let out = apply_group_element(&f, &rz).unwrap();
        assert!(out.grid().channel(0).iter().all(|&v| v == 0.0));
        assert!(out.grid().channel(1).iter().all(|&v| v == 1.0));
        assert!(out.grid().channel(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quarter_turn_moves_cells() {
        // A marker at x=(1,0,0) maps to R x = (0,1,0) relative to the center.
        let rz = OctahedralElement::from_matrix([[0, -1, 0], [1, 0, 0], [0, 0, 1]]).unwrap();
        let mut g = Grid::zeros(1, &[3, 3, 1]);
        g.channel_mut(0)[2 * 3 + 1] = 1.0; // cell (2,1,0), offset (+1,0,0)
        let f = FieldSet::new(vec![FieldMeta::scalar("m")], g).unwrap();
        let out = apply_group_element(&f, &rz).unwrap();
        assert_eq!(out.grid().channel(0)[3 + 2], 1.0); // cell (1,2,0), offset (0,+1,0)
    }

    #[test]
    fn inadmissible_elements_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_field(&[2, 3, 3], &mut rng);
        let swap_xy = OctahedralElement::new([1, 0, 2], [1, 1, 1]).unwrap();
        assert!(matches!(apply_group_element(&f, &swap_xy), Err(Error::Validation(_))));
        let swap_yz = OctahedralElement::new([0, 2, 1], [1, -1, 1]).unwrap();
        assert!(apply_group_element(&f, &swap_yz).is_ok());
        let admissible = enumerate_group().iter().filter(|e| e.is_admissible(&[2, 3, 3])).count();
        assert_eq!(admissible, 16);
    }

    #[test]
    fn action_law_and_inverse_on_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(&[2, 2, 2], &mut rng);
        let g = enumerate_group();
        let images: Vec<FieldSet> = g.iter().map(|r| apply_group_element(&f, r).unwrap()).collect();
        for (i, r1) in g.iter().enumerate() {
            assert_eq!(apply_group_element(&images[i], &r1.inverse()).unwrap(), f);
            for r2 in &g {
                let lhs = apply_group_element(&images[i], r2).unwrap();
                let rhs = apply_group_element(&f, &r2.compose(r1)).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn outer_product_follows_tensor_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ext = [3, 3, 3];
        let cells = 27;
        let a: Vec<f64> = (0..3 * cells).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3 * cells).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let outer = |a: &[f64], b: &[f64]| -> Vec<f64> {
            let mut t = Vec::with_capacity(9 * cells);
            for i in 0..3 {
                for k in 0..3 {
                    t.extend((0..cells).map(|x| a[i * cells + x] * b[k * cells + x]));
                }
            }
            t
        };
        let mut data = a.clone();
        data.extend_from_slice(&b);
        data.extend(outer(&a, &b));
        let f = FieldSet::new(
            vec![FieldMeta::vector("a"), FieldMeta::vector("b"), FieldMeta::tensor("ab")],
            Grid::from_vec(15, &ext, data).unwrap(),
        )
        .unwrap();
        for r in enumerate_group() {
            let out = apply_group_element(&f, &r).unwrap();
            let d = out.values();
            let expect = outer(&d[..3 * cells], &d[3 * cells..6 * cells]);
            let err = expect.iter().zip(&d[6 * cells..]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-12);
        }
    }

    #[test]
    fn embedded_zero_component_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2 * 16;
        let g = Grid::from_vec(2, &[4, 4], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let e = embed_2d_in_3d(&FieldSet::new(vec![FieldMeta::vector("v")], g).unwrap()).unwrap();
        for r in enumerate_group().iter().filter(|r| r.is_admissible(e.extents())) {
            let out = apply_group_element(&e, r).unwrap();
            assert!(out.grid().channel(2).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn vector_magnitudes_are_preserved_as_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_field(&[2, 2, 2], &mut rng);
        let norms = |fs: &FieldSet| {
            let d = fs.field_values(1);
            let mut v: Vec<f64> = (0..8)
                .map(|x| (d[x] * d[x] + d[8 + x] * d[8 + x] + d[16 + x] * d[16 + x]).sqrt())
                .collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let before = norms(&f);
        for r in enumerate_group() {
            let after = norms(&apply_group_element(&f, &r).unwrap());
            for (x, y) in before.iter().zip(&after) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn boundary_tags_follow_axes() {
        let b = BoundarySpec::new(vec![
            [Boundary::Open, Boundary::Closed],
            [Boundary::Periodic; 2],
            [Boundary::Closed, Boundary::Closed],
        ])
        .unwrap();
        let r = OctahedralElement::new([1, 0, 2], [1, -1, 1]).unwrap();
        let t = transform_boundary(&b, &r).unwrap();
        assert_eq!(t.axis(0), [Boundary::Periodic; 2]);
        assert_eq!(t.axis(1), [Boundary::Closed, Boundary::Open]);
        assert_eq!(t.axis(2), [Boundary::Closed, Boundary::Closed]);
    }

    fn scalar_traj(len: usize) -> Trajectory {
        let snaps = (0..len)
            .map(|t| FieldSet::new(vec![FieldMeta::scalar("u")], Grid::from_vec(1, &[1, 1], vec![t as f64]).unwrap()).unwrap())
            .collect();
        Trajectory::new(snaps, 1, BoundarySpec::periodic(2)).unwrap()
    }

    fn times(t: &Trajectory) -> Vec<f64> {
        t.snapshots().iter().map(|s| s.values()[0]).collect()
    }

    #[test]
    fn stride_time_examples() {
        let t = scalar_traj(11);
        assert_eq!(stride_time_with_phase(&t, 1, 0).unwrap(), t);
        let s = stride_time_with_phase(&t, 5, 0).unwrap();
        assert_eq!(times(&s), vec![0.0, 5.0, 10.0]);
        assert_eq!(s.dt_index(), 5);
        for p in 1..5 {
            assert_eq!(stride_time_with_phase(&t, 5, p).unwrap().len(), 2);
        }
        assert!(matches!(stride_time_with_phase(&t, 6, 0), Err(Error::Range(_))));
        assert!(matches!(stride_time_with_phase(&scalar_traj(3), 3, 1), Err(Error::Range(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(stride_time(&scalar_traj(2), 2, &mut rng).is_err());
        let (s, p) = stride_time(&scalar_traj(4), 3, &mut rng).unwrap();
        assert_eq!(p, 0);
        assert_eq!(times(&s), vec![0.0, 3.0]);
    }

    proptest! {
        #[test]
        fn stride_two_twice_is_stride_four(len in 8usize..30, p1 in 0usize..2, p2 in 0usize..2) {
            let t = scalar_traj(len);
            let once = stride_time_with_phase(&t, 2, p1).unwrap();
            if let Ok(twice) = stride_time_with_phase(&once, 2, p2) {
                let direct = stride_time_with_phase(&t, 4, p1 + 2 * p2).unwrap();
                prop_assert_eq!(twice, direct);
            }
        }

        #[test]
        fn random_element_round_trips(seed in any::<u64>(), idx in 0usize..48) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(&[2, 2, 2], &mut rng);
            let r = enumerate_group()[idx];
            let back = apply_group_element(&apply_group_element(&f, &r).unwrap(), &r.inverse()).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
