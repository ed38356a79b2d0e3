//! Exact 1-d frequency-domain model of strided convolution, transposed
//! convolution, their composition, and the patch-jitter expectation.
//!
//! Conventions:
//! - Signal spectra are Fourier-series coefficients, `û[k] = (1/N) Σ_x u[x] e^{-2πi kx/N}`,
//!   so that `u[x] = Σ_k û[k] e^{+2πi kx/N}`.
//! - Filter transfer functions are unnormalized: `ĝ[k] = Σ_n g[n] e^{-2πi kn/N}`.
//! - The strided convolution keeps every `P`-th sample of the circular convolution `g * u`.
//! - The transposed convolution zero-stuffs by `P`, circularly correlates with `h`,
//!   and applies the interpolation gain `P`.
//!
//! Under these conventions the frequency-domain operators below hold with no
//! stray normalization factors, and each one has an `O(N^2)` spatial oracle
//! (`*_spatial`) computed by direct summation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// `e^{-2πi m/n}` with the exponent reduced modulo `n` first.
fn twiddle(m: usize, n: usize) -> Complex64 {
    let r = (m % n) as f64 / n as f64;
    Complex64::from_polar(1.0, -2.0 * PI * r)
}

/// Unnormalized forward DFT.
pub fn dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, &v)| v * twiddle(k * i, n))
                .sum()
        })
        .collect()
}

/// Inverse of [`dft`] (includes the `1/N`).
pub fn idft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            x.iter()
                .enumerate()
                .map(|(k, &v)| v * twiddle(k * i, n).conj())
                .sum::<Complex64>()
                / n as f64
        })
        .collect()
}

/// Unnormalized separable DFT of a row-major real array.
pub fn dft_nd(values: &[f64], extents: &[usize]) -> Result<Vec<Complex64>> {
    let cells: usize = extents.iter().product();
    if values.len() != cells || cells == 0 {
        return Err(Error::Dimension(format!("{} values for extents {extents:?}", values.len())));
    }
    let mut x: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut stride = cells;
    for &n in extents {
        stride /= n;
        let block = n * stride;
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for base in (0..cells).step_by(block) {
            for off in 0..stride {
                for (i, l) in line.iter_mut().enumerate() {
                    *l = x[base + off + i * stride];
                }
                for (i, v) in dft(&line).into_iter().enumerate() {
                    x[base + off + i * stride] = v;
                }
            }
        }
    }
    Ok(x)
}

/// Energy in the bins `±k0` and everywhere else, for a real array.
pub fn mode_energy_split(values: &[f64], extents: &[usize], k0: &[i64]) -> Result<(f64, f64)> {
    if k0.len() != extents.len() {
        return Err(Error::Dimension(format!("mode {k0:?} for extents {extents:?}")));
    }
    let spec = dft_nd(values, extents)?;
    let bin = |sign: i64| -> usize {
        k0.iter().zip(extents).fold(0, |acc, (&k, &n)| acc * n + (sign * k).rem_euclid(n as i64) as usize)
    };
    let (plus, minus) = (bin(1), bin(-1));
    let (mut signal, mut rest) = (0.0, 0.0);
    for (i, c) in spec.iter().enumerate() {
        if i == plus || i == minus {
            signal += c.norm_sqr();
        } else {
            rest += c.norm_sqr();
        }
    }
    Ok((signal, rest))
}

/// Fourier-series coefficients of a length-`N` periodic signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(coeffs: Vec<Complex64>) -> Self {
        Spectrum { coeffs }
    }

    pub fn zeros(n: usize) -> Self {
        Spectrum {
            coeffs: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    /// `e^{+2πi kx/N}` with unit amplitude: a single occupied bin.
    pub fn single_mode(n: usize, k: usize) -> Self {
        let mut s = Self::zeros(n);
        s.coeffs[k % n] = Complex64::new(1.0, 0.0);
        s
    }

    pub fn from_signal(u: &[Complex64]) -> Self {
        let n = u.len() as f64;
        Spectrum {
            coeffs: dft(u).into_iter().map(|c| c / n).collect(),
        }
    }

    pub fn from_real(u: &[f64]) -> Self {
        let c: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self::from_signal(&c)
    }

    pub fn to_signal(&self) -> Vec<Complex64> {
        let n = self.len() as f64;
        idft(&self.coeffs).into_iter().map(|c| c * n).collect()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `coeffs[k] == conj(coeffs[N-k])` within `rel_tol` of the largest coefficient.
    pub fn is_conjugate_symmetric(&self, rel_tol: f64) -> bool {
        let n = self.len();
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        (0..n).all(|k| (self.coeffs[k] - self.coeffs[(n - k) % n].conj()).norm() <= rel_tol * scale)
    }

    pub fn scale(&self, a: Complex64) -> Spectrum {
        Spectrum::new(self.coeffs.iter().map(|&c| c * a).collect())
    }

    pub fn add(&self, other: &Spectrum) -> Spectrum {
        Spectrum::new(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| a + b)
                .collect(),
        )
    }
}

/// `max_k |a_k - b_k| / max_k |b_k|`. Zero reference with zero difference is 0.
pub fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len(), "rel_err length mismatch");
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.norm()).fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

/// Downsampling geometry and the analysis/synthesis filter pair.
#[derive(Debug, Clone)]
pub struct ResampleSetup {
    n: usize,
    p: usize,
    g: Vec<f64>,
    h: Vec<f64>,
    g_hat: Vec<Complex64>,
    h_hat: Vec<Complex64>,
}

/// Unnormalized DFT of `taps` zero-padded to length `n`.
pub fn transfer(taps: &[f64], n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            taps.iter()
                .enumerate()
                .map(|(i, &t)| t * twiddle(k * i, n))
                .sum()
        })
        .collect()
}

impl ResampleSetup {
    pub fn new(n: usize, p: usize, g: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        if n == 0 || p == 0 || !n.is_multiple_of(p) {
            return Err(Error::Dimension(format!(
                "downsample rate {p} must divide signal length {n}"
            )));
        }
        if g.is_empty() || g.len() > n || h.is_empty() || h.len() > n {
            return Err(Error::Dimension(format!(
                "filter lengths ({}, {}) must lie in 1..={n}",
                g.len(),
                h.len()
            )));
        }
        let g_hat = transfer(&g, n);
        let h_hat = transfer(&h, n);
        Ok(ResampleSetup {
            n,
            p,
            g,
            h,
            g_hat,
            h_hat,
        })
    }

    /// Random taps in `[-1, 1)` with lengths drawn from `1..=n`.
    pub fn random(n: usize, p: usize, rng: &mut impl Rng) -> Result<Self> {
        let lg = rng.gen_range(1..=n);
        let lh = rng.gen_range(1..=n);
        let g = (0..lg).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = (0..lh).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self::new(n, p, g, h)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.n / self.p
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn g_hat(&self) -> &[Complex64] {
        &self.g_hat
    }

    pub fn h_hat(&self) -> &[Complex64] {
        &self.h_hat
    }

    fn expect_len(&self, s: &Spectrum, want: usize, what: &str) -> Result<()> {
        if s.len() != want {
            return Err(Error::Dimension(format!(
                "{what} spectrum has length {}, expected {want}",
                s.len()
            )));
        }
        Ok(())
    }
}

/// Strided convolution: `ŷ[k] = Σ_{j=0}^{P-1} ĝ[k+jM] û[k+jM]` for `k < M`.
pub fn strided_conv_freq(setup: &ResampleSetup, u_hat: &Spectrum) -> Result<Spectrum> {
    setup.expect_len(u_hat, setup.n, "input")?;
    let (n, m) = (setup.n, setup.m());
    let u = u_hat.coeffs();
    let coeffs = (0..m)
        .map(|k| {
            (0..setup.p)
                .map(|j| {
                    let kk = (k + j * m) % n;
                    setup.g_hat[kk] * u[kk]
                })
                .sum()
        })
        .collect();
    Ok(Spectrum::new(coeffs))
}

/// Transposed convolution: `v̂[k] = conj(ĥ[k]) ŷ[k mod M]` for `k < N`.
pub fn transposed_conv_freq(setup: &ResampleSetup, y_hat: &Spectrum) -> Result<Spectrum> {
    setup.expect_len(y_hat, setup.m(), "hidden")?;
    let m = setup.m();
    let y = y_hat.coeffs();
    let coeffs = (0..setup.n)
        .map(|k| setup.h_hat[k].conj() * y[k % m])
        .collect();
    Ok(Spectrum::new(coeffs))
}

/// Composition in closed form:
/// `v̂[k] = conj(ĥ[k]) Σ_{j=0}^{P-1} ĝ[k+jM] û[k+jM]`.
pub fn autoencode_freq(setup: &ResampleSetup, u_hat: &Spectrum) -> Result<Spectrum> {
    setup.expect_len(u_hat, setup.n, "input")?;
    let (n, m) = (setup.n, setup.m());
    let u = u_hat.coeffs();
    let coeffs = (0..n)
        .map(|k| {
            let hk = setup.h_hat[k].conj();
            (0..setup.p)
                .map(|j| {
                    let kk = (k + j * m) % n;
                    hk * setup.g_hat[kk] * u[kk]
                })
                .sum()
        })
        .collect();
    Ok(Spectrum::new(coeffs))
}

fn phase(spec: &Spectrum, shift: usize, sign: f64) -> Spectrum {
    let n = spec.len();
    Spectrum::new(
        spec.coeffs()
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let t = twiddle(k * (shift % n), n);
                c * if sign < 0.0 { t } else { t.conj() }
            })
            .collect(),
    )
}

/// Cyclic shift by `s`, encode/decode, inverse shift; computed in frequency.
pub fn jittered_autoencode(setup: &ResampleSetup, u_hat: &Spectrum, shift: usize) -> Result<Spectrum> {
    setup.expect_len(u_hat, setup.n, "input")?;
    let shifted = phase(u_hat, shift, -1.0);
    let v = autoencode_freq(setup, &shifted)?;
    Ok(phase(&v, shift, 1.0))
}

/// Mean of [`jittered_autoencode`] over every integer shift `0..N`.
pub fn jitter_expectation(setup: &ResampleSetup, u_hat: &Spectrum) -> Result<Spectrum> {
    setup.expect_len(u_hat, setup.n, "input")?;
    let n = setup.n;
    let mut acc = Spectrum::zeros(n);
    for s in 0..n {
        acc = acc.add(&jittered_autoencode(setup, u_hat, s)?);
    }
    Ok(acc.scale(Complex64::new(1.0 / n as f64, 0.0)))
}

/// The alias-free response `conj(ĥ[k]) ĝ[k] û[k]`.
pub fn unaliased_response(setup: &ResampleSetup, u_hat: &Spectrum) -> Result<Spectrum> {
    setup.expect_len(u_hat, setup.n, "input")?;
    Ok(Spectrum::new(
        (0..setup.n)
            .map(|k| setup.h_hat[k].conj() * setup.g_hat[k] * u_hat.coeffs()[k])
            .collect(),
    ))
}

// ---------------------------------------------------------------------------
// Spatial-domain oracles, direct O(N^2) summation.

/// `y[m] = Σ_n g[n] u[(mP - n) mod N]`.
pub fn strided_conv_spatial(u: &[Complex64], g: &[f64], p: usize) -> Vec<Complex64> {
    let n = u.len();
    (0..n / p)
        .map(|m| {
            g.iter()
                .enumerate()
                .map(|(i, &gi)| u[(m * p + n * g.len() - i) % n] * gi)
                .sum()
        })
        .collect()
}

/// `v[x] = P Σ_m y[m] h[(mP - x) mod N]`, taps outside `h` are zero.
pub fn transposed_conv_spatial(y: &[Complex64], h: &[f64], p: usize) -> Vec<Complex64> {
    let n = y.len() * p;
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for (m, &ym) in y.iter().enumerate() {
        for (i, &hi) in h.iter().enumerate() {
            // h[i] couples y[m] to x with (mP - x) mod N == i.
            let x = (m * p + n - i % n) % n;
            v[x] += ym * hi * p as f64;
        }
    }
    v
}

/// `w[x] = u[(x - s) mod N]`.
pub fn cyclic_shift(u: &[Complex64], s: isize) -> Vec<Complex64> {
    let n = u.len() as isize;
    (0..n)
        .map(|x| u[(x - s).rem_euclid(n) as usize])
        .collect()
}

/// Shift, strided conv, transposed conv, inverse shift; all in space.
pub fn jittered_autoencode_spatial(u: &[Complex64], g: &[f64], h: &[f64], p: usize, s: usize) -> Vec<Complex64> {
    let shifted = cyclic_shift(u, s as isize);
    let y = strided_conv_spatial(&shifted, g, p);
    let v = transposed_conv_spatial(&y, h, p);
    cyclic_shift(&v, -(s as isize))
}

// ---------------------------------------------------------------------------
// Sweep used by the `spectral-check` command and the acceptance suite.

/// Max relative errors per identity over a parameter sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdentityReport {
    pub strided_vs_oracle: f64,
    pub transposed_vs_oracle: f64,
    pub composed_vs_pipeline: f64,
    pub composed_vs_oracle: f64,
    pub jittered_vs_oracle: f64,
    pub expectation_vs_closed_form: f64,
    pub cases: usize,
}

pub const ORACLE_TOL: f64 = 1e-10;
pub const COMPOSITION_TOL: f64 = 1e-12;
pub const EXPECTATION_TOL: f64 = 1e-9;

impl IdentityReport {
    pub fn merge(&mut self, other: &IdentityReport) {
        self.strided_vs_oracle = self.strided_vs_oracle.max(other.strided_vs_oracle);
        self.transposed_vs_oracle = self.transposed_vs_oracle.max(other.transposed_vs_oracle);
        self.composed_vs_pipeline = self.composed_vs_pipeline.max(other.composed_vs_pipeline);
        self.composed_vs_oracle = self.composed_vs_oracle.max(other.composed_vs_oracle);
        self.jittered_vs_oracle = self.jittered_vs_oracle.max(other.jittered_vs_oracle);
        self.expectation_vs_closed_form = self
            .expectation_vs_closed_form
            .max(other.expectation_vs_closed_form);
        self.cases += other.cases;
    }

    /// `(name, max error, tolerance)` rows.
    pub fn rows(&self) -> Vec<(&'static str, f64, f64)> {
        vec![
            ("strided_vs_oracle", self.strided_vs_oracle, ORACLE_TOL),
            ("transposed_vs_oracle", self.transposed_vs_oracle, ORACLE_TOL),
            ("composed_vs_pipeline", self.composed_vs_pipeline, COMPOSITION_TOL),
            ("composed_vs_oracle", self.composed_vs_oracle, ORACLE_TOL),
            ("jittered_vs_oracle", self.jittered_vs_oracle, ORACLE_TOL),
            ("expectation_vs_closed_form", self.expectation_vs_closed_form, EXPECTATION_TOL),
        ]
    }

    pub fn passes(&self) -> bool {
        self.rows().iter().all(|&(_, e, tol)| e < tol)
    }
}

fn random_signal(n: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), 0.0))
        .collect()
}

/// Checks every identity on one random real signal and filter pair.
pub fn check_case(n: usize, p: usize, rng: &mut impl Rng) -> Result<IdentityReport> {
    let setup = ResampleSetup::random(n, p, rng)?;
    let u = random_signal(n, rng);
    let u_hat = Spectrum::from_signal(&u);

    let y_hat = strided_conv_freq(&setup, &u_hat)?;
    let y = strided_conv_spatial(&u, setup.g(), p);
    let strided = rel_err(y_hat.coeffs(), Spectrum::from_signal(&y).coeffs());

    let y_rand = random_signal(n / p, rng);
    let v_hat = transposed_conv_freq(&setup, &Spectrum::from_signal(&y_rand))?;
    let v = transposed_conv_spatial(&y_rand, setup.h(), p);
    let transposed = rel_err(v_hat.coeffs(), Spectrum::from_signal(&v).coeffs());

    let composed = autoencode_freq(&setup, &u_hat)?;
    let pipeline = transposed_conv_freq(&setup, &y_hat)?;
    let composed_vs_pipeline = rel_err(composed.coeffs(), pipeline.coeffs());
    let v_space = transposed_conv_spatial(&y, setup.h(), p);
    let composed_vs_oracle = rel_err(composed.coeffs(), Spectrum::from_signal(&v_space).coeffs());

    let mut jittered = 0.0f64;
    for s in 0..n {
        let f = jittered_autoencode(&setup, &u_hat, s)?;
        let w = jittered_autoencode_spatial(&u, setup.g(), setup.h(), p, s);
        jittered = jittered.max(rel_err(f.coeffs(), Spectrum::from_signal(&w).coeffs()));
    }

    let expectation = jitter_expectation(&setup, &u_hat)?;
    let closed = unaliased_response(&setup, &u_hat)?;
    let expectation_err = rel_err(expectation.coeffs(), closed.coeffs());

    Ok(IdentityReport {
        strided_vs_oracle: strided,
        transposed_vs_oracle: transposed,
        composed_vs_pipeline,
        composed_vs_oracle,
        jittered_vs_oracle: jittered,
        expectation_vs_closed_form: expectation_err,
        cases: 1,
    })
}

/// Runs [`check_case`] for `seeds` seeds derived from `base_seed`.
pub fn check_sweep(n: usize, p: usize, seeds: u64, base_seed: u64) -> Result<IdentityReport> {
    use rand::SeedableRng;
    let mut report = IdentityReport::default();
    for seed in 0..seeds {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
            base_seed ^ (seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ ((n as u64) << 40) ^ ((p as u64) << 52),
        );
        report.merge(&check_case(n, p, &mut rng)?);
    }
    Ok(report)
}
