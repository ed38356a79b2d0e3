//! Synthetic periodic trajectories with closed-form solutions.
//!
//! Every kind solves `du/dt = nu du/dx0` on the unit torus, so
//! `u(x, t) = u0(x + nu t e0)`. Positions are carried in cell units and
//! reduced modulo the extent before evaluation, which makes integer-cell
//! displacements reproduce cyclic shifts bit for bit.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensorfield::{BoundarySpec, FieldMeta, FieldSet, Grid, Trajectory};

pub const NU_RANGE: (f64, f64) = (0.05, 0.25);
pub const CENTER_RANGE: (f64, f64) = (0.25, 0.75);
pub const SIGMA_RANGE: (f64, f64) = (0.05, 0.25);
/// Large enough that one step moves a bump by a few cells, so per-step
/// deltas have the same order of magnitude as the fields themselves.
pub const DEFAULT_DT: f64 = 1.0;
/// Periodic images summed per axis on each side.
const IMAGES: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Advection,
    PureMode,
    Mixed,
}

impl FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "advection" => Ok(Kind::Advection),
            "pure-mode" => Ok(Kind::PureMode),
            "mixed" => Ok(Kind::Mixed),
            _ => Err(Error::Config(format!("unknown synthetic kind `{s}`"))),
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Advection => "advection",
            Kind::PureMode => "pure-mode",
            Kind::Mixed => "mixed",
        })
    }
}

/// A Gaussian bump `exp(-|x - center|^2 / (2 sigma^2))`, periodized.
#[derive(Debug, Clone, PartialEq)]
pub struct Bump {
    pub center: Vec<f64>,
    pub sigma: f64,
    pub amplitude: f64,
}

/// `amplitude * cos(2 pi k . x + phase)` with integer wavenumbers `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub k: Vec<i64>,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Initial {
    pub bumps: Vec<Bump>,
    pub modes: Vec<Mode>,
}

impl Initial {
    /// Value at a point of the unit torus.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for b in &self.bumps {
            let mut prod = b.amplitude;
            for (xi, ci) in x.iter().zip(&b.center) {
                let s: f64 = (-IMAGES..=IMAGES)
                    .map(|n| {
                        let d = xi - ci + n as f64;
                        (-d * d / (2.0 * b.sigma * b.sigma)).exp()
                    })
                    .sum();
                prod *= s;
            }
            v += prod;
        }
        for m in &self.modes {
            let arg: f64 = x.iter().zip(&m.k).map(|(xi, &k)| k as f64 * xi).sum();
            v += m.amplitude * (2.0 * PI * arg + m.phase).cos();
        }
        v
    }
}

/// One advected trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Advection {
    pub nu: f64,
    pub initial: Initial,
}

impl Advection {
    /// Exact snapshot at time `t` on a grid of `extents` cells.
    pub fn snapshot(&self, extents: &[usize], t: f64) -> Result<FieldSet> {
        check_extents(extents)?;
        let n0 = extents[0] as f64;
        let shift = self.nu * t * n0;
        let cells: usize = extents.iter().product();
        let mut data = Vec::with_capacity(cells);
        let mut idx = vec![0usize; extents.len()];
        let mut x = vec![0.0; extents.len()];
        for flat in 0..cells {
            crate::tensorfield::unravel(flat, extents, &mut idx);
            for (a, (&i, &n)) in idx.iter().zip(extents).enumerate() {
                let cell = if a == 0 { (i as f64 + shift).rem_euclid(n0) } else { i as f64 };
                x[a] = cell / n as f64;
            }
            data.push(self.initial.eval(&x));
        }
        FieldSet::new(vec![FieldMeta::scalar("u")], Grid::from_vec(1, extents, data)?)
    }

    pub fn trajectory(&self, extents: &[usize], steps: usize, dt: f64) -> Result<Trajectory> {
        if steps < 2 {
            return Err(Error::Config(format!("trajectories need at least 2 steps, got {steps}")));
        }
        let snaps = (0..steps).map(|t| self.snapshot(extents, t as f64 * dt)).collect::<Result<Vec<_>>>()?;
        Trajectory::new(snaps, 1, BoundarySpec::periodic(extents.len()))
    }
}

fn check_extents(extents: &[usize]) -> Result<()> {
    if !(2..=3).contains(&extents.len()) || extents.iter().any(|&n| n < 2) {
        return Err(Error::Config(format!("synthetic extents {extents:?} must be 2D or 3D with at least 2 cells per axis")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: Kind,
    pub extents: Vec<usize>,
    pub steps: usize,
    pub trajectories: usize,
    pub dt: f64,
    /// Wavenumber of the pure mode; drawn per trajectory when `None`.
    pub mode: Option<Vec<i64>>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..=hi)
}

/// Draws one trajectory's parameters.
pub fn draw(spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<Advection> {
    check_extents(&spec.extents)?;
    let d = spec.extents.len();
    let nu = uniform(rng, NU_RANGE);
    let bump = |rng: &mut dyn rand::RngCore| Bump {
        center: (0..d).map(|_| uniform(rng, CENTER_RANGE)).collect(),
        sigma: uniform(rng, SIGMA_RANGE),
        amplitude: 1.0,
    };
    let nyquist: Vec<i64> = spec.extents.iter().map(|&n| (n as i64 - 1) / 2).collect();
    let random_mode = |rng: &mut dyn rand::RngCore, amp: f64| Mode {
        k: nyquist.iter().map(|&m| rng.gen_range(-m..=m)).collect(),
        amplitude: amp,
        phase: rng.gen_range(0.0..2.0 * PI),
    };
    let initial = match spec.kind {
        Kind::Advection => Initial { bumps: vec![bump(rng)], modes: vec![] },
        Kind::PureMode => {
            let m = match &spec.mode {
                Some(k) if k.len() == d => Mode { k: k.clone(), amplitude: 1.0, phase: 0.0 },
                Some(k) => return Err(Error::Config(format!("mode {k:?} does not match {d} axes"))),
                None => random_mode(rng, 1.0),
            };
            Initial { bumps: vec![], modes: vec![m] }
        }
        Kind::Mixed => Initial {
            bumps: vec![bump(rng)],
            modes: (0..3).map(|_| random_mode(rng, 0.25)).collect(),
        },
    };
    Ok(Advection { nu, initial })
}

/// `spec.trajectories` independent trajectories.
pub fn generate(spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<Vec<Trajectory>> {
    if spec.trajectories == 0 {
        return Err(Error::Config("at least one trajectory is required".into()));
    }
    if !(spec.dt.is_finite() && spec.dt > 0.0) {
        return Err(Error::Config(format!("time step {} must be positive", spec.dt)));
    }
    (0..spec.trajectories).map(|_| draw(spec, rng)?.trajectory(&spec.extents, spec.steps, spec.dt)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(kind: Kind) -> SyntheticSpec {
        SyntheticSpec { kind, extents: vec![16, 16], steps: 6, trajectories: 3, dt: 0.1, mode: None }
    }

    #[test]
    fn zero_velocity_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = draw(&spec(Kind::Mixed), &mut rng).unwrap();
        a.nu = 0.0;
        let t = a.trajectory(&[16, 16], 5, 0.3).unwrap();
        assert!(t.snapshots().iter().all(|s| s == t.snapshot(0)));
    }

    #[test]
    fn one_cell_per_step_is_a_cyclic_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [Kind::Advection, Kind::PureMode, Kind::Mixed] {
            let mut a = draw(&spec(kind), &mut rng).unwrap();
            a.nu = 1.0 / 16.0;
            let t = a.trajectory(&[16, 8], 6, 1.0).unwrap();
            for s in 1..6 {
                assert_eq!(t.snapshot(s).grid(), &t.snapshot(0).grid().roll(0, -(s as isize)));
            }
        }
    }

    #[test]
    fn parameters_lie_in_their_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = draw(&spec(Kind::Advection), &mut rng).unwrap();
            assert!((NU_RANGE.0..=NU_RANGE.1).contains(&a.nu));
            let b = &a.initial.bumps[0];
            assert!((SIGMA_RANGE.0..=SIGMA_RANGE.1).contains(&b.sigma));
            assert!(b.center.iter().all(|c| (CENTER_RANGE.0..=CENTER_RANGE.1).contains(c)));
        }
    }

    #[test]
    fn pure_mode_matches_closed_form_and_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = spec(Kind::PureMode);
        s.mode = Some(vec![3, 3]);
        let a = draw(&s, &mut rng).unwrap();
        let u = a.snapshot(&[16, 16], 0.0).unwrap();
        let want = (2.0 * PI * (3.0 * 5.0 + 3.0 * 7.0) / 16.0).cos();
        assert!((u.values()[5 * 16 + 7] - want).abs() < 1e-12);
        s.mode = Some(vec![1]);
        assert!(draw(&s, &mut rng).is_err());
        s.extents = vec![16];
        assert!(matches!(generate(&s, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&spec(Kind::Mixed), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate(&spec(Kind::Mixed), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].len(), 6);
    }
}
