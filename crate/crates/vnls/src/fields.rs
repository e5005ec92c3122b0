//! Periodic grids, two-component complex fields, spectral transforms and the
//! two bilinear pairings (hermitian inner product and symplectic form) that
//! everything else is built on.
//!
//! Storage layout is fixed: x fastest, then y, then z, so persisted fields
//! are bit-reproducible.

use std::collections::HashMap;
use std::io::{Read as _, Write as _};
use std::path::Path;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Uniform periodic grid on a cube `[0, L)³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    /// Points per axis (even).
    pub n: usize,
    /// Box edge length L.
    pub length: f64,
}

impl Grid3 {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::Config(format!("grid size {n} must be even and >= 4")));
        }
        if !(length > 0.0) {
            return Err(Error::Config(format!("box length {length} must be positive")));
        }
        Ok(Grid3 { n, length })
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn num_points(&self) -> usize {
        self.n * self.n * self.n
    }

    /// Volume element of one cell.
    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h * h * h
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(3)
    }

    /// Physical coordinate of index `j` along one axis, in `[0, L)`.
    pub fn coord(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    /// Wavenumber of transform index `j`: `2π/L · m` with `m ∈ (−n/2, n/2]`.
    pub fn wavenumber(&self, j: usize) -> f64 {
        let n = self.n;
        let m = if j <= n / 2 { j as isize } else { j as isize - n as isize };
        2.0 * std::f64::consts::PI / self.length * m as f64
    }

    /// Signed minimal-image displacement from `b` to `a` along one axis.
    pub fn min_image(&self, a: f64, b: f64) -> f64 {
        let mut d = a - b;
        let l = self.length;
        d -= (d / l).round() * l;
        d
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.n + iy) * self.n + ix
    }
}

/// Uniform radial grid with nodes `r_j = j·h`, `j = 1..=n`, `h = r_max/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub r_max: f64,
    pub n_points: usize,
}

impl RadialGrid {
    pub fn new(r_max: f64, n_points: usize) -> Result<Self> {
        if !(r_max > 0.0) || n_points < 8 {
            return Err(Error::Config(format!(
                "radial grid needs r_max > 0 and n >= 8, got r_max={r_max}, n={n_points}"
            )));
        }
        Ok(RadialGrid { r_max, n_points })
    }

    pub fn spacing(&self) -> f64 {
        self.r_max / self.n_points as f64
    }

    /// Node `r_j`, 0-based index, nodes in `(0, r_max]`.
    pub fn node(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.spacing()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|j| self.node(j))
    }
}

/// Real radial function sampled on a [`RadialGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub grid: RadialGrid,
    pub values: Vec<f64>,
}

impl RadialProfile {
    pub fn new(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points {
            return Err(Error::Config(format!(
                "profile has {} values for a grid of {} nodes",
                values.len(),
                grid.n_points
            )));
        }
        Ok(RadialProfile { grid, values })
    }

    pub fn zero(grid: RadialGrid) -> Self {
        RadialProfile { grid, values: vec![0.0; grid.n_points] }
    }

    /// Even quadratic extrapolation of the value at r = 0 through the first
    /// two nodes (the profile solves a radial ODE with zero slope at 0).
    pub fn value_at_origin(&self) -> f64 {
        let r1 = self.grid.node(0);
        let r2 = self.grid.node(1);
        let (f1, f2) = (self.values[0], self.values[1]);
        // f(r) = a + b r²  through (r1,f1), (r2,f2)
        let b = (f2 - f1) / (r2 * r2 - r1 * r1);
        f1 - b * r1 * r1
    }

    /// Cubic (Catmull-Rom) interpolation, even around 0, zero beyond r_max.
    pub fn interpolate(&self, r: f64) -> f64 {
        let h = self.grid.spacing();
        if r >= self.grid.r_max {
            return 0.0;
        }
        // virtual node index: sample(k) = value at r = k·h, with sample(0)
        // the extrapolated origin value and even reflection for k < 0.
        let sample = |k: isize| -> f64 {
            let k = k.abs();
            if k == 0 {
                self.value_at_origin()
            } else if (k as usize) <= self.grid.n_points {
                self.values[k as usize - 1]
            } else {
                0.0
            }
        };
        let s = r / h;
        let k0 = s.floor() as isize;
        let t = s - k0 as f64;
        let (p0, p1, p2, p3) = (sample(k0 - 1), sample(k0), sample(k0 + 1), sample(k0 + 2));
        // Catmull-Rom
        0.5 * ((2.0 * p1)
            + (-p0 + p2) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
    }

    /// `4π ∫ w(φ(r)) r² dr` by the trapezoid rule (with the r=0 endpoint).
    pub fn radial_integral(&self, w: impl Fn(f64) -> f64) -> f64 {
        let h = self.grid.spacing();
        let mut acc = 0.0;
        let mut prev = 0.0; // integrand at r=0 vanishes (r² factor)
        for j in 0..self.grid.n_points {
            let r = self.grid.node(j);
            let cur = w(self.values[j]) * r * r;
            acc += 0.5 * (prev + cur) * h;
            prev = cur;
        }
        4.0 * std::f64::consts::PI * acc
    }

    /// L² mass `‖φ‖²_{L²(R³)}`.
    pub fn mass(&self) -> f64 {
        self.radial_integral(|v| v * v)
    }
}

/// Two-component complex field on a [`Grid3`]; the state `u` of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    pub grid: Grid3,
    /// First component u₁, layout x fastest.
    pub u1: Vec<Complex64>,
    /// Second component u₂.
    pub u2: Vec<Complex64>,
}

impl SpinorField {
    pub fn zero(grid: Grid3) -> Self {
        let n = grid.num_points();
        SpinorField { grid, u1: vec![Complex64::ZERO; n], u2: vec![Complex64::ZERO; n] }
    }

    pub fn from_fn(grid: Grid3, mut f: impl FnMut(f64, f64, f64) -> (Complex64, Complex64)) -> Self {
        let mut out = SpinorField::zero(grid);
        let n = grid.n;
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    let idx = grid.index(ix, iy, iz);
                    let (a, b) = f(grid.coord(ix), grid.coord(iy), grid.coord(iz));
                    out.u1[idx] = a;
                    out.u2[idx] = b;
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.u1.iter().chain(self.u2.iter()).all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn check_same_grid(&self, other: &SpinorField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    /// Pointwise map over both components.
    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        SpinorField {
            grid: self.grid,
            u1: self.u1.iter().map(|&z| f(z)).collect(),
            u2: self.u2.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|z| z * c)
    }

    pub fn scale_complex(&self, c: Complex64) -> Self {
        self.map(|z| z * c)
    }

    pub fn add(&self, other: &SpinorField) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        SpinorField {
            grid: self.grid,
            u1: self.u1.iter().zip(&other.u1).map(|(a, b)| a + b).collect(),
            u2: self.u2.iter().zip(&other.u2).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &SpinorField) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        SpinorField {
            grid: self.grid,
            u1: self.u1.iter().zip(&other.u1).map(|(a, b)| a - b).collect(),
            u2: self.u2.iter().zip(&other.u2).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self + c * other` in place.
    pub fn axpy(&mut self, c: f64, other: &SpinorField) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.u1.iter_mut().zip(&other.u1) {
            *a += c * b;
        }
        for (a, b) in self.u2.iter_mut().zip(&other.u2) {
            *a += c * b;
        }
    }

    /// Componentwise complex conjugate (the operator 𝐂).
    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    /// σ₂𝐂: `(u₁, u₂) ↦ (−i ū₂, i ū₁)`.
    pub fn sigma2_conj(&self) -> Self {
        let i = Complex64::I;
        SpinorField {
            grid: self.grid,
            u1: self.u2.iter().map(|&z| -i * z.conj()).collect(),
            u2: self.u1.iter().map(|&z| i * z.conj()).collect(),
        }
    }

    /// σ₃: `(u₁, u₂) ↦ (u₁, −u₂)`.
    pub fn sigma3(&self) -> Self {
        SpinorField {
            grid: self.grid,
            u1: self.u1.clone(),
            u2: self.u2.iter().map(|&z| -z).collect(),
        }
    }

    /// iσ₃: `(u₁, u₂) ↦ (i u₁, −i u₂)`.
    pub fn i_sigma3(&self) -> Self {
        let i = Complex64::I;
        SpinorField {
            grid: self.grid,
            u1: self.u1.iter().map(|&z| i * z).collect(),
            u2: self.u2.iter().map(|&z| -i * z).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        inner_product(self, self).sqrt()
    }
}

/// Hermitian pairing `⟨u,v⟩ = Re ∫ ū·v dx`, grid-sum quadrature.
pub fn inner_product(u: &SpinorField, v: &SpinorField) -> f64 {
    assert_eq!(u.grid, v.grid, "inner_product: grid mismatch");
    let mut acc = 0.0;
    for (a, b) in u.u1.iter().zip(&v.u1) {
        acc += a.re * b.re + a.im * b.im;
    }
    for (a, b) in u.u2.iter().zip(&v.u2) {
        acc += a.re * b.re + a.im * b.im;
    }
    acc * u.grid.cell_volume()
}

/// Checked variant of [`inner_product`].
pub fn try_inner_product(u: &SpinorField, v: &SpinorField) -> Result<f64> {
    u.check_same_grid(v)?;
    Ok(inner_product(u, v))
}

/// Symplectic form `Ω(X,Y) = ⟨iσ₃X, Y⟩`; antisymmetric.
pub fn symplectic_form(x: &SpinorField, y: &SpinorField) -> f64 {
    assert_eq!(x.grid, y.grid, "symplectic_form: grid mismatch");
    // Re( conj(i x1) y1 ) = Re( -i conj(x1) y1 ) = x1.re*y1.im - x1.im*y1.re
    let mut acc = 0.0;
    for (a, b) in x.u1.iter().zip(&y.u1) {
        acc += a.re * b.im - a.im * b.re;
    }
    for (a, b) in x.u2.iter().zip(&y.u2) {
        acc -= a.re * b.im - a.im * b.re;
    }
    acc * x.grid.cell_volume()
}

// ---------------------------------------------------------------------------
// FFT machinery

struct FftPair {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

static FFT_CACHE: Lazy<Mutex<HashMap<usize, Arc<FftPair>>>> = Lazy::new(|| Mutex::new(HashMap::new()));

fn fft_pair(n: usize) -> Arc<FftPair> {
    let mut cache = FFT_CACHE.lock().unwrap();
    cache
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(FftPair {
                fwd: planner.plan_fft_forward(n),
                inv: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// In-place 3D FFT of one scalar component. `forward` is unnormalized; the
/// inverse carries the 1/n³ factor.
pub fn fft3(data: &mut [Complex64], grid: Grid3, forward: bool) {
    let n = grid.n;
    debug_assert_eq!(data.len(), n * n * n);
    let pair = fft_pair(n);
    let fft = if forward { &pair.fwd } else { &pair.inv };
    let mut scratch = vec![Complex64::ZERO; n];

    // x lines are contiguous
    for line in data.chunks_exact_mut(n) {
        fft.process(line);
    }
    // y lines, stride n
    for iz in 0..n {
        for ix in 0..n {
            let base = iz * n * n + ix;
            for iy in 0..n {
                scratch[iy] = data[base + iy * n];
            }
            fft.process(&mut scratch);
            for iy in 0..n {
                data[base + iy * n] = scratch[iy];
            }
        }
    }
    // z lines, stride n²
    for iy in 0..n {
        for ix in 0..n {
            let base = iy * n + ix;
            for iz in 0..n {
                scratch[iz] = data[base + iz * n * n];
            }
            fft.process(&mut scratch);
            for iz in 0..n {
                data[base + iz * n * n] = scratch[iz];
            }
        }
    }
    if !forward {
        let s = 1.0 / (n as f64).powi(3);
        for z in data.iter_mut() {
            *z *= s;
        }
    }
}

/// Apply a transform-space multiplier `m(kx,ky,kz)` to both components.
pub fn apply_multiplier(u: &SpinorField, m: impl Fn(f64, f64, f64) -> Complex64 + Copy) -> SpinorField {
    let grid = u.grid;
    let n = grid.n;
    let mut c1 = u.u1.clone();
    let mut c2 = u.u2.clone();
    fft3(&mut c1, grid, true);
    fft3(&mut c2, grid, true);
    for iz in 0..n {
        let kz = grid.wavenumber(iz);
        for iy in 0..n {
            let ky = grid.wavenumber(iy);
            for ix in 0..n {
                let kx = grid.wavenumber(ix);
                let idx = grid.index(ix, iy, iz);
                let f = m(kx, ky, kz);
                c1[idx] *= f;
                c2[idx] *= f;
            }
        }
    }
    fft3(&mut c1, grid, false);
    fft3(&mut c2, grid, false);
    SpinorField { grid, u1: c1, u2: c2 }
}

/// Spectral Laplacian, componentwise.
pub fn laplacian(u: &SpinorField) -> SpinorField {
    apply_multiplier(u, |kx, ky, kz| Complex64::new(-(kx * kx + ky * ky + kz * kz), 0.0))
}

/// Spectral partial derivative along `axis` (0,1,2). The Nyquist mode is
/// zeroed, as usual for odd multipliers.
pub fn derivative(u: &SpinorField, axis: usize) -> SpinorField {
    let n = u.grid.n;
    let nyq = 2.0 * std::f64::consts::PI / u.grid.length * (n / 2) as f64;
    apply_multiplier(u, move |kx, ky, kz| {
        let k = [kx, ky, kz][axis];
        if (k - nyq).abs() < 1e-12 {
            Complex64::ZERO
        } else {
            Complex64::new(0.0, k)
        }
    })
}

/// Zeros the three Nyquist planes (any index = n/2 for even n).
///
/// The unpaired Nyquist frequency breaks the commutation of pointwise
/// conjugation (σ₂𝐂) with spectral translation: conj maps −k_nyq content
/// onto the missing +k_nyq, which aliases back with the wrong phase. On
/// Nyquist-free fields every symmetry-factor ordering identity holds to
/// roundoff, so lifted solitons are cleaned before use.
pub fn zero_nyquist(u: &mut SpinorField) {
    let grid = u.grid;
    let n = grid.n;
    if n % 2 != 0 {
        return;
    }
    let half = n / 2;
    for comp in [&mut u.u1, &mut u.u2] {
        fft3(comp, grid, false);
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    if ix == half || iy == half || iz == half {
                        comp[grid.index(ix, iy, iz)] = Complex64::ZERO;
                    }
                }
            }
        }
        fft3(comp, grid, true);
    }
}

/// Spectral translation: returns `x ↦ u(x + shift)`.
pub fn translate(u: &SpinorField, shift: [f64; 3]) -> SpinorField {
    apply_multiplier(u, move |kx, ky, kz| {
        Complex64::from_polar(1.0, kx * shift[0] + ky * shift[1] + kz * shift[2])
    })
}

/// Transform-space squared norm `Σ |û|² / n³ · dV` (for Parseval checks).
pub fn spectral_norm_sq(u: &SpinorField) -> f64 {
    let grid = u.grid;
    let mut c1 = u.u1.clone();
    let mut c2 = u.u2.clone();
    fft3(&mut c1, grid, true);
    fft3(&mut c2, grid, true);
    let s: f64 = c1.iter().chain(c2.iter()).map(|z| z.norm_sqr()).sum();
    s / (grid.num_points() as f64) * grid.cell_volume()
}

/// Embed a radial profile into the first component around `center`, with
/// periodic minimal-image distance; second component is zero.
pub fn lift_radial(p: &RadialProfile, grid: Grid3, center: [f64; 3]) -> Result<SpinorField> {
    if p.grid.r_max < 0.5 * grid.length {
        // support must fit in half the box; check the tail actually decayed
        let tail = p.values[p.grid.n_points - 1].abs();
        let peak = p.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 && tail > 1e-10 * peak {
            return Err(Error::Config(format!(
                "radial profile tail {tail:.3e} has not decayed at r_max = {}",
                p.grid.r_max
            )));
        }
    } else {
        let half = 0.5 * grid.length;
        // profile wider than the half box: only allowed if it decayed before L/2
        let j_half = ((half / p.grid.spacing()) as usize).min(p.grid.n_points) - 1;
        let tail = p.values[j_half].abs();
        let peak = p.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // exponential tails make 1e−8 boxes impractically large; 1e−5 keeps
        // the wrap-around artifact below dynamics tolerances
        if peak > 0.0 && tail > 1e-5 * peak {
            return Err(Error::Config(
                "radial profile support exceeds half the box (aliasing risk)".into(),
            ));
        }
    }
    let mut out = SpinorField::zero(grid);
    let n = grid.n;
    for iz in 0..n {
        let dz = grid.min_image(grid.coord(iz), center[2]);
        for iy in 0..n {
            let dy = grid.min_image(grid.coord(iy), center[1]);
            for ix in 0..n {
                let dx = grid.min_image(grid.coord(ix), center[0]);
                let r = (dx * dx + dy * dy + dz * dz).sqrt();
                out.u1[grid.index(ix, iy, iz)] = Complex64::new(p.interpolate(r), 0.0);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Persistence: raw little-endian f64 (Re u1, Im u1, Re u2, Im u2) per node
// plus a JSON sidecar with grid metadata and a content hash.

#[derive(Debug, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub n: usize,
    pub box_length: f64,
    pub sha256: String,
}

pub fn save_field(u: &SpinorField, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(u.grid.num_points() * 32);
    for i in 0..u.grid.num_points() {
        bytes.extend_from_slice(&u.u1[i].re.to_le_bytes());
        bytes.extend_from_slice(&u.u1[i].im.to_le_bytes());
        bytes.extend_from_slice(&u.u2[i].re.to_le_bytes());
        bytes.extend_from_slice(&u.u2[i].im.to_le_bytes());
    }
    let hash = hex_digest(&bytes);
    std::fs::File::create(path)?.write_all(&bytes)?;
    let sidecar = FieldSidecar { n: u.grid.n, box_length: u.grid.length, sha256: hash };
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(path.with_extension("json"), json)?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<SpinorField> {
    let sidecar: FieldSidecar =
        serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    let grid = Grid3::new(sidecar.n, sidecar.box_length)?;
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != grid.num_points() * 32 {
        return Err(Error::Config(format!(
            "field file has {} bytes, expected {}",
            bytes.len(),
            grid.num_points() * 32
        )));
    }
    if hex_digest(&bytes) != sidecar.sha256 {
        return Err(Error::Config("field file content hash mismatch".into()));
    }
    let mut u = SpinorField::zero(grid);
    let mut read_f64 = {
        let mut off = 0usize;
        move |bytes: &[u8]| {
            let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
            v
        }
    };
    for i in 0..grid.num_points() {
        u.u1[i] = Complex64::new(read_f64(&bytes), read_f64(&bytes));
        u.u2[i] = Complex64::new(read_f64(&bytes), read_f64(&bytes));
    }
    Ok(u)
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic pseudo-random field (for tests and perturbation seeds):
/// a band-limited superposition of low modes with a Gaussian envelope.
pub fn random_field(grid: Grid3, seed: u64) -> SpinorField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut u = SpinorField::zero(grid);
    let n = grid.n;
    let kmax = 3isize;
    // random low-frequency Fourier data, then inverse transform
    let mut c1 = vec![Complex64::ZERO; grid.num_points()];
    let mut c2 = vec![Complex64::ZERO; grid.num_points()];
    for mz in -kmax..=kmax {
        for my in -kmax..=kmax {
            for mx in -kmax..=kmax {
                let ix = mx.rem_euclid(n as isize) as usize;
                let iy = my.rem_euclid(n as isize) as usize;
                let iz = mz.rem_euclid(n as isize) as usize;
                let idx = grid.index(ix, iy, iz);
                let amp = (-0.3 * ((mx * mx + my * my + mz * mz) as f64)).exp();
                c1[idx] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * amp;
                c2[idx] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * amp;
            }
        }
    }
    fft3(&mut c1, grid, false);
    fft3(&mut c2, grid, false);
    u.u1 = c1;
    u.u2 = c2;
    u
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> Grid3 {
        Grid3::new(16, 8.0).unwrap()
    }

    #[test]
    fn inner_product_nonnegative_and_constant_field() {
        let grid = small_grid();
        let c = Complex64::new(0.7, -0.4);
        let u = SpinorField::from_fn(grid, |_, _, _| (c, Complex64::ZERO));
        let ip = inner_product(&u, &u);
        assert!((ip - c.norm_sqr() * grid.volume()).abs() < 1e-12 * ip);
        let z = SpinorField::zero(grid);
        assert_eq!(inner_product(&z, &z), 0.0);
    }

    #[test]
    fn inner_product_matches_naive_sum_oracle() {
        let grid = small_grid();
        let u = random_field(grid, 1);
        let v = random_field(grid, 2);
        // independent naive double-loop summation
        let mut acc = 0.0;
        for i in 0..grid.num_points() {
            acc += (u.u1[i].conj() * v.u1[i] + u.u2[i].conj() * v.u2[i]).re;
        }
        acc *= grid.cell_volume();
        let ip = inner_product(&u, &v);
        assert!((ip - acc).abs() <= 1e-12 * acc.abs().max(1.0));
    }

    #[test]
    fn symplectic_form_antisymmetric() {
        let grid = small_grid();
        let x = random_field(grid, 3);
        let y = random_field(grid, 4);
        assert!(symplectic_form(&x, &x).abs() < 1e-12 * inner_product(&x, &x));
        let a = symplectic_form(&x, &y);
        let b = symplectic_form(&y, &x);
        assert!((a + b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn symplectic_of_isigma3() {
        let grid = small_grid();
        let u = random_field(grid, 5);
        let lhs = symplectic_form(&u.i_sigma3(), &u);
        let rhs = -inner_product(&u, &u);
        assert!((lhs - rhs).abs() < 1e-12 * rhs.abs());
    }

    #[test]
    fn laplacian_plane_wave() {
        let grid = small_grid();
        let k = 2.0 * std::f64::consts::PI / grid.length * 2.0; // one lattice mode
        let u = SpinorField::from_fn(grid, |x, _, _| {
            (Complex64::from_polar(1.0, k * x), Complex64::ZERO)
        });
        let lap = laplacian(&u);
        for i in 0..grid.num_points() {
            let expect = -k * k * u.u1[i];
            assert!((lap.u1[i] - expect).norm() < 1e-10);
        }
        let z = SpinorField::from_fn(grid, |_, _, _| (Complex64::new(1.0, 0.0), Complex64::ZERO));
        let lz = laplacian(&z);
        assert!(lz.norm() < 1e-12);
    }

    #[test]
    fn laplacian_matches_finite_differences_on_gaussian() {
        // second-order FD oracle on two resolutions: the gap must shrink O(h²)
        let gap = |n: usize| -> f64 {
            let grid = Grid3::new(n, 10.0).unwrap();
            let c = 5.0;
            let u = SpinorField::from_fn(grid, |x, y, z| {
                let r2 = (x - c).powi(2) + (y - c).powi(2) + (z - c).powi(2);
                (Complex64::new((-r2).exp(), 0.0), Complex64::ZERO)
            });
            let lap = laplacian(&u);
            let h = grid.spacing();
            let mut worst = 0.0f64;
            for iz in 1..n - 1 {
                for iy in 1..n - 1 {
                    for ix in 1..n - 1 {
                        let idx = grid.index(ix, iy, iz);
                        let fd = (u.u1[grid.index(ix + 1, iy, iz)]
                            + u.u1[grid.index(ix - 1, iy, iz)]
                            + u.u1[grid.index(ix, iy + 1, iz)]
                            + u.u1[grid.index(ix, iy - 1, iz)]
                            + u.u1[grid.index(ix, iy, iz + 1)]
                            + u.u1[grid.index(ix, iy, iz - 1)]
                            - 6.0 * u.u1[idx])
                            / (h * h);
                        worst = worst.max((fd - lap.u1[idx]).norm());
                    }
                }
            }
            worst
        };
        let g1 = gap(16);
        let g2 = gap(32);
        // FD error dominates; halving h divides the gap by ~4
        assert!(g2 < g1 / 2.5, "gap did not shrink: {g1} -> {g2}");
    }

    #[test]
    fn parseval() {
        let grid = small_grid();
        let u = random_field(grid, 7);
        let phys = inner_product(&u, &u);
        let spec = spectral_norm_sq(&u);
        assert!((phys - spec).abs() < 1e-10 * phys);
    }

    #[test]
    fn laplacian_self_adjoint() {
        let grid = small_grid();
        let u = random_field(grid, 8);
        let v = random_field(grid, 9);
        let a = inner_product(&laplacian(&u), &v);
        let b = inner_product(&u, &laplacian(&v));
        assert!((a - b).abs() < 1e-10 * u.norm() * v.norm());
    }

    #[test]
    fn lift_radial_basics() {
        let rg = RadialGrid::new(3.5, 256).unwrap();
        let grid = Grid3::new(32, 8.0).unwrap();
        // Gaussian profile, decayed well before r_max
        let prof = RadialProfile::new(rg, rg.nodes().map(|r| (-2.0 * r * r).exp()).collect()).unwrap();
        let center = [grid.coord(4), grid.coord(4), grid.coord(4)];
        let lifted = lift_radial(&prof, grid, center).unwrap();
        let at_center = lifted.u1[grid.index(4, 4, 4)];
        assert!((at_center.re - prof.value_at_origin()).abs() < 1e-6);
        // mass comparison against the radial quadrature oracle
        let grid_mass = inner_product(&lifted, &lifted);
        let radial_mass = prof.mass();
        assert!(
            (grid_mass - radial_mass).abs() < 1e-4 * radial_mass,
            "grid {grid_mass} vs radial {radial_mass}"
        );
        // zero profile lifts to zero
        let z = lift_radial(&RadialProfile::zero(rg), grid, center).unwrap();
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn lift_radial_rejects_undecayed_profile() {
        let rg = RadialGrid::new(30.0, 64).unwrap();
        let grid = small_grid(); // box length 8, half box 4
        let prof = RadialProfile::new(rg, rg.nodes().map(|r| 1.0 / (1.0 + r)).collect()).unwrap();
        assert!(lift_radial(&prof, grid, [0.0; 3]).is_err());
    }

    #[test]
    fn field_roundtrip() {
        let grid = small_grid();
        let u = random_field(grid, 11);
        let dir = std::env::temp_dir().join(format!("vnls-fieldio-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("u.field");
        save_field(&u, &path).unwrap();
        let v = load_field(&path).unwrap();
        assert_eq!(u, v);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn translate_shifts_by_one_cell() {
        let grid = small_grid();
        let u = random_field(grid, 13);
        let h = grid.spacing();
        let t = translate(&u, [h, 0.0, 0.0]);
        // u(x+h) at ix equals u at ix+1
        let mut worst = 0.0f64;
        for iz in 0..grid.n {
            for iy in 0..grid.n {
                for ix in 0..grid.n {
                    let expect = u.u1[grid.index((ix + 1) % grid.n, iy, iz)];
                    worst = worst.max((t.u1[grid.index(ix, iy, iz)] - expect).norm());
                }
            }
        }
        assert!(worst < 1e-10, "worst {worst}");
    }
}
