//! Symplectic split-step integration of iσ₃u̇ + Δu − β(|u|²)u = 0.
//!
//! The equation splits exactly: the linear subflow is diagonal in Fourier
//! space, û_c ↦ e^{∓i|k|²t}û_c with the sign set by the σ₃ component, and
//! the nonlinear subflow is an exact pointwise phase rotation because
//! |u₁|² and |u₂|² are separately constant along it:
//!
//! ```text
//!     u₁ ↦ e^{−iβ(|u|²)t} u₁,   u₂ ↦ e^{+iβ(|u|²)t} u₂.
//! ```
//!
//! Strang composition of the two subflows is time-reversible and globally
//! second order, and conserves Π₄ and Π₇ exactly (both substeps are phase
//! rotations in each component).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fields::{fft3, lift_radial, Grid3, RadialProfile, SpinorField};
use crate::symmetry::{invariants, GroupElement, InvariantVector, SolitonParams};
use crate::symmetry::Nonlinearity;
use crate::{Error, Result};

/// Optional damping layer near the box boundary: a clearly non-conservative
/// diagnostic mode for absorbing outgoing radiation before it wraps around.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpongeConfig {
    /// Damping starts at this fraction of the half box length (per axis,
    /// sup-norm distance from the center).
    pub onset_frac: f64,
    /// Peak damping rate at the box corner.
    pub strength: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Observers fire every this many steps (and on the initial state).
    pub output_every: usize,
    pub sponge: Option<SpongeConfig>,
}

impl EvolutionConfig {
    pub fn validate(&self, _grid: Grid3) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::Config(format!(
                "t_final = {} must be positive",
                self.t_final
            )));
        }
        if self.output_every == 0 {
            return Err(Error::Config("output_every must be at least 1".into()));
        }
        if let Some(s) = self.sponge {
            if !(0.0 < s.onset_frac && s.onset_frac < 1.0) || s.strength < 0.0 {
                return Err(Error::Config("invalid sponge parameters".into()));
            }
        }
        Ok(())
    }

    /// True when dt resolves the fastest linear phase: dt·max|k|² < 2π.
    pub fn resolves_phases(&self, grid: Grid3) -> bool {
        let k_nyq = std::f64::consts::PI * grid.n as f64 / grid.length;
        self.dt * 3.0 * k_nyq * k_nyq < std::f64::consts::TAU
    }
}

/// Record of a run: invariant series and the final state. Heavy snapshot
/// capture is delegated to the observer callback.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub invariants: Vec<InvariantVector>,
    pub final_time: f64,
    pub final_field: SpinorField,
}

fn linear_phase(u: &mut SpinorField, t: f64) {
    let grid = u.grid;
    fft3(&mut u.u1, grid, true);
    fft3(&mut u.u2, grid, true);
    let n = grid.n;
    for iz in 0..n {
        let kz = grid.wavenumber(iz);
        for iy in 0..n {
            let ky = grid.wavenumber(iy);
            for ix in 0..n {
                let kx = grid.wavenumber(ix);
                let k2 = kx * kx + ky * ky + kz * kz;
                let idx = grid.index(ix, iy, iz);
                let ph = Complex64::from_polar(1.0, -k2 * t);
                u.u1[idx] *= ph;
                u.u2[idx] *= ph.conj();
            }
        }
    }
    fft3(&mut u.u1, grid, false);
    fft3(&mut u.u2, grid, false);
}

fn nonlinear_phase(u: &mut SpinorField, t: f64, nl: &Nonlinearity) {
    for (z1, z2) in u.u1.iter_mut().zip(u.u2.iter_mut()) {
        let theta = nl.beta(z1.norm_sqr() + z2.norm_sqr()) * t;
        let ph = Complex64::from_polar(1.0, -theta);
        *z1 *= ph;
        *z2 *= ph.conj();
    }
}

fn apply_sponge(u: &mut SpinorField, dt: f64, s: &SpongeConfig) {
    let grid = u.grid;
    let half = grid.length / 2.0;
    let onset = s.onset_frac * half;
    let n = grid.n;
    for iz in 0..n {
        let dz = grid.min_image(grid.coord(iz), 0.0).abs();
        for iy in 0..n {
            let dy = grid.min_image(grid.coord(iy), 0.0).abs();
            for ix in 0..n {
                let dx = grid.min_image(grid.coord(ix), 0.0).abs();
                let d = dx.max(dy).max(dz);
                if d <= onset {
                    continue;
                }
                let x = (d - onset) / (half - onset);
                let damp = (-dt * s.strength * x * x).exp();
                let idx = grid.index(ix, iy, iz);
                u.u1[idx] *= damp;
                u.u2[idx] *= damp;
            }
        }
    }
}

/// One Strang step: half linear, full nonlinear, half linear.
pub fn step(u: &SpinorField, dt: f64, nl: &Nonlinearity) -> Result<SpinorField> {
    let mut v = u.clone();
    linear_phase(&mut v, dt / 2.0);
    nonlinear_phase(&mut v, dt, nl);
    linear_phase(&mut v, dt / 2.0);
    if !v.is_finite() {
        return Err(Error::BlowUp { t: 0.0 });
    }
    Ok(v)
}

/// Integrates to t_final, firing `observer` on the initial state and after
/// every `output_every` steps. Interior half linear steps are fused.
pub fn evolve(
    u0: &SpinorField,
    cfg: &EvolutionConfig,
    nl: &Nonlinearity,
    mut observer: impl FnMut(f64, &SpinorField) -> Result<()>,
) -> Result<Trajectory> {
    cfg.validate(u0.grid)?;
    let n_steps = (cfg.t_final / cfg.dt).round().max(1.0) as usize;
    let dt = cfg.t_final / n_steps as f64;
    let mut u = u0.clone();
    let mut times = Vec::new();
    let mut invs = Vec::new();
    let mut record = |t: f64, u: &SpinorField| -> Result<()> {
        times.push(t);
        invs.push(invariants(u, nl));
        observer(t, u)
    };
    record(0.0, &u)?;
    let mut done = 0;
    while done < n_steps {
        let block = cfg.output_every.min(n_steps - done);
        // fused Strang block: L(dt/2) [N(dt) L(dt)]^{block−1} N(dt) L(dt/2)
        linear_phase(&mut u, dt / 2.0);
        for b in 0..block {
            nonlinear_phase(&mut u, dt, nl);
            if b + 1 < block {
                linear_phase(&mut u, dt);
            }
        }
        linear_phase(&mut u, dt / 2.0);
        if let Some(s) = &cfg.sponge {
            apply_sponge(&mut u, block as f64 * dt, s);
        }
        if !u.is_finite() {
            return Err(Error::BlowUp { t: done as f64 * dt });
        }
        done += block;
        record(done as f64 * dt, &u)?;
    }
    Ok(Trajectory {
        times,
        invariants: invs,
        final_time: cfg.t_final,
        final_field: u,
    })
}

/// Writes the invariant series as CSV: t, Π₁..Π₇, E.
pub fn invariant_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,pi1,pi2,pi3,pi4,pi5,pi6,pi7,energy\n");
    for (t, iv) in traj.times.iter().zip(&traj.invariants) {
        out.push_str(&format!(
            "{t},{},{},{},{},{},{},{},{}\n",
            iv.pi[0], iv.pi[1], iv.pi[2], iv.pi[3], iv.pi[4], iv.pi[5], iv.pi[6], iv.energy
        ));
    }
    out
}

/// The exact traveling soliton e^{it(ω+v²/4)} e^{iv·(x−tv)/2} φ_ω(x−tv)
/// in the first component, periodically wrapped.
pub fn exact_soliton_at(
    t: f64,
    p: &SolitonParams,
    profile: &RadialProfile,
    grid: Grid3,
    center0: [f64; 3],
) -> Result<SpinorField> {
    let center = [
        (center0[0] + p.v[0] * t).rem_euclid(grid.length),
        (center0[1] + p.v[1] * t).rem_euclid(grid.length),
        (center0[2] + p.v[2] * t).rem_euclid(grid.length),
    ];
    let base = crate::symmetry::make_soliton(p, profile, grid, center)?;
    let v2 = p.v.iter().map(|x| x * x).sum::<f64>();
    let phase = Complex64::from_polar(1.0, t * (p.omega + v2 / 4.0));
    Ok(base.scale_complex(phase))
}

/// Galilean boost: multiplies by e^{±iv·(x−c)/2} (conjugate phase on the
/// second component, matching its conjugate dynamics). Applied to a
/// stationary state this produces a soliton traveling at velocity v.
pub fn apply_boost(u: &SpinorField, v: [f64; 3], center: [f64; 3]) -> SpinorField {
    let grid = u.grid;
    let n = grid.n;
    let mut out = u.clone();
    for iz in 0..n {
        let dz = grid.min_image(grid.coord(iz), center[2]);
        for iy in 0..n {
            let dy = grid.min_image(grid.coord(iy), center[1]);
            for ix in 0..n {
                let dx = grid.min_image(grid.coord(ix), center[0]);
                let ph = 0.5 * (v[0] * dx + v[1] * dy + v[2] * dz);
                let idx = grid.index(ix, iy, iz);
                out.u1[idx] *= Complex64::from_polar(1.0, ph);
                out.u2[idx] *= Complex64::from_polar(1.0, -ph);
            }
        }
    }
    out
}

/// Refines a lifted soliton into a stationary state of the *discretized*
/// equation. The radial shooting profile solves the continuum ODE to ~1e−10,
/// but once sampled on a finite grid its pseudospectral residual
/// Δu − β(|u|²)u − ωu is set by the spectral tail at the grid cutoff
/// (typically ~1e−3 at 48³ boxes), and that residual shows up in dynamics as
/// a frequency wobble and spurious radiation. The fix is a preconditioned
/// fixed-point iteration
///
/// ```text
///     δω = ⟨u, res⟩/‖u‖²,   u ← u + (ω − Δ)^{−1} (res − δω·u),
/// ```
///
/// which contracts the high-wavenumber error geometrically while the
/// component along the soliton itself — the direction that would otherwise
/// make the iteration drift — is absorbed into a small shift of the
/// frequency. Returns the refined field and its discrete frequency ω_d
/// (|ω_d − ω| = O(h²)).
/// Preconditioned MINRES for a symmetric (possibly indefinite) operator.
///
/// Plain three-term Lanczos in the M⁻¹ inner product with on-the-fly
/// Givens QR of the tridiagonal; `apply_minv` must be symmetric positive
/// definite. Returns the last iterate; callers re-check their own
/// (nonlinear) residual, so no convergence flag is reported.
pub(crate) fn minres(
    apply_a: &dyn Fn(&[f64]) -> Vec<f64>,
    apply_minv: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rtol: f64,
    max_iters: usize,
) -> Vec<f64> {
    let n = b.len();
    let dot = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(y).map(|(a, b)| a * b).sum() };
    let mut x = vec![0.0; n];
    let qbar = apply_minv(b);
    let beta1 = dot(b, &qbar).max(0.0).sqrt();
    if beta1 == 0.0 {
        return x;
    }
    // lanczos pair: u_j lives in the original space, q_j = M⁻¹u_j
    let mut u_prev = vec![0.0; n];
    let mut u: Vec<f64> = b.iter().map(|v| v / beta1).collect();
    let mut q: Vec<f64> = qbar.iter().map(|v| v / beta1).collect();
    let mut beta = 0.0;
    let (mut c_prev2, mut s_prev2) = (1.0f64, 0.0f64);
    let (mut c_prev, mut s_prev) = (1.0f64, 0.0f64);
    let mut phibar = beta1;
    let mut d_prev = vec![0.0; n];
    let mut d_prev2 = vec![0.0; n];
    for _ in 0..max_iters {
        let t = apply_a(&q);
        let alpha = dot(&q, &t);
        let r: Vec<f64> = (0..n).map(|i| t[i] - alpha * u[i] - beta * u_prev[i]).collect();
        let qr = apply_minv(&r);
        let beta_next = dot(&r, &qr).max(0.0).sqrt();
        // rotate the new tridiagonal column through the two previous givens
        // rotations, then zero the subdiagonal with a fresh one
        let e0 = s_prev2 * beta;
        let e1t = c_prev2 * beta;
        let e1 = c_prev * e1t + s_prev * alpha;
        let e2 = -s_prev * e1t + c_prev * alpha;
        let rho = e2.hypot(beta_next);
        if rho == 0.0 {
            break;
        }
        let (cj, sj) = (e2 / rho, beta_next / rho);
        let d: Vec<f64> = (0..n)
            .map(|i| (q[i] - e1 * d_prev[i] - e0 * d_prev2[i]) / rho)
            .collect();
        let phi = cj * phibar;
        phibar = -sj * phibar;
        for i in 0..n {
            x[i] += phi * d[i];
        }
        if phibar.abs() <= rtol * beta1 || beta_next == 0.0 {
            break;
        }
        u_prev = std::mem::replace(&mut u, r.iter().map(|v| v / beta_next).collect());
        q = qr.iter().map(|v| v / beta_next).collect();
        beta = beta_next;
        (c_prev2, s_prev2) = (c_prev, s_prev);
        (c_prev, s_prev) = (cj, sj);
        d_prev2 = std::mem::replace(&mut d_prev, d);
    }
    x
}

pub fn refine_soliton(
    u0: &SpinorField,
    omega: f64,
    nl: &Nonlinearity,
    tol: f64,
    max_iters: usize,
) -> Result<(SpinorField, f64)> {
    let grid = u0.grid;
    let n = grid.n;
    let np = grid.num_points();
    let residual_of = |u: &SpinorField, om: f64| -> SpinorField {
        let mut res = crate::fields::laplacian(u);
        for i in 0..np {
            let s = u.u1[i].norm_sqr() + u.u2[i].norm_sqr();
            let f = om + nl.beta(s);
            res.u1[i] -= f * u.u1[i];
            res.u2[i] -= f * u.u2[i];
        }
        res
    };
    // flattened newton unknown: (Re u₁, Im u₁, Re u₂, Im u₂, δω)
    let flatten = |f: &SpinorField, last: f64| -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * np + 1);
        for z in f.u1.iter().chain(f.u2.iter()) {
            v.push(z.re);
            v.push(z.im);
        }
        v.push(last);
        v
    };
    let unflatten = |v: &[f64]| -> (SpinorField, f64) {
        let mut f = SpinorField::zero(grid);
        for i in 0..np {
            f.u1[i] = Complex64::new(v[2 * i], v[2 * i + 1]);
            f.u2[i] = Complex64::new(v[2 * np + 2 * i], v[2 * np + 2 * i + 1]);
        }
        (f, v[4 * np])
    };
    let mut cur = u0.clone();
    let mut om = omega;
    let mut best: Option<(SpinorField, f64, f64)> = None;
    for _ in 0..=max_iters {
        let res = residual_of(&cur, om);
        let rel = res.norm() / cur.norm();
        if !rel.is_finite() {
            return Err(Error::Numerical("soliton refinement diverged".into()));
        }
        if best.as_ref().is_none_or(|b| rel < b.2) {
            best = Some((cur.clone(), om, rel));
        }
        if rel < tol {
            break;
        }
        // newton step on the bordered system
        //     [ J   −u ] [δu]   [−res]          J = Δ − (ω+β) − 2β′|u|² Re(ū ·)
        //     [ −uᵀ  0 ] [δω] = [  0 ],         ⟨u, δu⟩ = 0 fixes the gauge;
        // J is symmetric but indefinite (the linearized potential is a deep
        // well near saturation), so plain preconditioned richardson diverges
        // and the step is solved by minres with a (c − Δ)⁻¹ preconditioner.
        let mut f_pot = vec![0.0; np];
        let mut g_pot = vec![0.0; np];
        for i in 0..np {
            let s = cur.u1[i].norm_sqr() + cur.u2[i].norm_sqr();
            f_pot[i] = om + nl.beta(s);
            g_pot[i] = nl.beta_prime(s);
        }
        let base = cur.clone();
        let apply_a = move |x: &[f64]| -> Vec<f64> {
            let (df, dom) = unflatten(x);
            let lap = crate::fields::laplacian(&df);
            let mut out = SpinorField::zero(grid);
            let mut border = 0.0;
            for i in 0..np {
                let proj = (base.u1[i].conj() * df.u1[i]).re + (base.u2[i].conj() * df.u2[i]).re;
                let ds = 2.0 * proj;
                out.u1[i] = lap.u1[i] - f_pot[i] * df.u1[i] - (g_pot[i] * ds + dom) * base.u1[i];
                out.u2[i] = lap.u2[i] - f_pot[i] * df.u2[i] - (g_pot[i] * ds + dom) * base.u2[i];
                border -= proj;
            }
            flatten(&out, border)
        };
        let shift = om.max(0.3);
        let apply_minv = move |x: &[f64]| -> Vec<f64> {
            let (mut df, dom) = unflatten(x);
            fft3(&mut df.u1, grid, false);
            fft3(&mut df.u2, grid, false);
            for ix in 0..n {
                for iy in 0..n {
                    for iz in 0..n {
                        let k2 = grid.wavenumber(ix).powi(2)
                            + grid.wavenumber(iy).powi(2)
                            + grid.wavenumber(iz).powi(2);
                        let idx = grid.index(ix, iy, iz);
                        let f = 1.0 / (shift + k2);
                        df.u1[idx] *= f;
                        df.u2[idx] *= f;
                    }
                }
            }
            fft3(&mut df.u1, grid, true);
            fft3(&mut df.u2, grid, true);
            flatten(&df, dom)
        };
        let neg = res.scale(-1.0);
        let rhs = flatten(&neg, 0.0);
        let sol = minres(&apply_a, &apply_minv, &rhs, 1e-8, 300);
        let (du, dom) = unflatten(&sol);
        for i in 0..np {
            cur.u1[i] += du.u1[i];
            cur.u2[i] += du.u2[i];
        }
        om += dom;
    }
    let (field, om, rel) = best.unwrap();
    if rel > tol {
        return Err(Error::Numerical(format!(
            "soliton refinement stalled at relative residual {rel:.3e} (tol {tol:.1e})"
        )));
    }
    Ok((field, om))
}

/// Result of the constraint-matching Newton iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedData {
    pub omega: f64,
    pub v: [f64; 3],
    pub b: Complex64,
    /// Multiplier applied to the supplied perturbation.
    pub scale: f64,
    pub iterations: usize,
    /// Max absolute constraint violation |Π_j − p⁰_j| at return.
    pub residual: f64,
    #[serde(skip)]
    pub field: Option<SpinorField>,
}

/// Builds u₀ = T(b)·(Φ_{ω,v} + s·perturbation) and adjusts (ω, v, b, s) by
/// Newton so that Π(u₀) = p⁰ to `tol` absolute. The ground-state profile
/// for a trial ω is produced by `profile_of`.
pub fn prepare_initial_data(
    p0: &SolitonParams,
    perturbation: &SpinorField,
    grid: Grid3,
    center: [f64; 3],
    nl: &Nonlinearity,
    tol: f64,
    mut profile_of: impl FnMut(f64) -> Result<RadialProfile>,
) -> Result<PreparedData> {
    perturbation.check_same_grid(&SpinorField::zero(grid))?;
    let target = p0.p_vector();
    // θ = (ω, v₁, v₂, v₃, b_R, b_I, s)
    let mut theta = [p0.omega, p0.v[0], p0.v[1], p0.v[2], 0.0, 0.0, 1.0];
    let build = |th: &[f64; 7], profile_of: &mut dyn FnMut(f64) -> Result<RadialProfile>|
     -> Result<SpinorField> {
        let profile = profile_of(th[0])?;
        let params = SolitonParams {
            omega: th[0],
            v: [th[1], th[2], th[3]],
            mass: 0.0, // mass is not used by make_soliton
        };
        let mut u = crate::symmetry::make_soliton(&params, &profile, grid, center)?;
        u.axpy(th[6], perturbation);
        let b = Complex64::new(th[4], th[5]);
        if b.norm_sqr() >= 1.0 {
            return Err(Error::NewtonDiverged("|b| reached 1".into()));
        }
        let g = GroupElement::su2_from_b(b)?;
        Ok(crate::symmetry::apply_group(&g, &u))
    };
    let constraint = |u: &SpinorField| -> [f64; 7] {
        let iv = invariants(u, nl);
        let mut c = [0.0; 7];
        for j in 0..7 {
            c[j] = iv.pi[j] - target[j];
        }
        c
    };
    let worst = |c: &[f64; 7]| c.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut u = build(&theta, &mut profile_of)?;
    let mut c = constraint(&u);
    let mut res = worst(&c);
    let scale = p0.p4().max(1.0);
    let mut iterations = 0;
    while res > tol && iterations < 50 {
        // finite-difference Jacobian of the 7 constraints in the 7 params
        let mut jac = nalgebra::DMatrix::zeros(7, 7);
        for k in 0..7 {
            let hk = 1e-6 * theta[k].abs().max(1e-2);
            let mut th = theta;
            th[k] += hk;
            let ck = constraint(&build(&th, &mut profile_of)?);
            for j in 0..7 {
                jac[(j, k)] = (ck[j] - c[j]) / hk;
            }
        }
        let rhs = nalgebra::DVector::from_row_slice(&c);
        // least-squares via truncated SVD: the perturbation-scale column
        // degenerates when the perturbation is small or absent
        let svd = jac.svd(true, true);
        let delta = svd
            .solve(&rhs, 1e-10 * scale)
            .map_err(|e| Error::NewtonDiverged(format!("least-squares solve failed: {e}")))?;
        for k in 0..7 {
            theta[k] -= delta[k];
        }
        u = build(&theta, &mut profile_of)?;
        c = constraint(&u);
        res = worst(&c);
        iterations += 1;
    }
    if res > tol {
        return Err(Error::NewtonDiverged(format!(
            "constraint residual {res:.3e} after {iterations} iterations"
        )));
    }
    let b = Complex64::new(theta[4], theta[5]);
    Ok(PreparedData {
        omega: theta[0],
        v: [theta[1], theta[2], theta[3]],
        b,
        scale: theta[6],
        iterations,
        residual: res,
        field: Some(u),
    })
}

/// Lifts a radial perturbation profile into the first or second component,
/// with an optional 90° phase (convenience for mode kicks).
pub fn lift_perturbation(
    profile: &RadialProfile,
    grid: Grid3,
    center: [f64; 3],
    component: usize,
    phase: Complex64,
) -> Result<SpinorField> {
    let base = lift_radial(profile, grid, center)?;
    let mut out = SpinorField::zero(grid);
    match component {
        0 => out.u1 = base.u1,
        1 => out.u2 = base.u1,
        _ => return Err(Error::Config(format!("component {component} out of range"))),
    }
    Ok(out.scale_complex(phase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{random_field, symplectic_form};
    use crate::groundstate::{solve_ground_state, GroundState, ShootingConfig};
    use crate::symmetry::make_soliton;
    use approx::assert_relative_eq;
    use once_cell::sync::Lazy;
    use std::cell::RefCell;
    use std::collections::HashMap;

    // the stable branch: cubic-quintic at moderate ω (pure cubic solitons
    // are orbitally unstable in 3d and disintegrate within a few periods)
    const NL: Nonlinearity = Nonlinearity::CubicQuintic { gamma: 3.0 / 16.0 };
    const OMEGA: f64 = 0.5;

    static GS: Lazy<GroundState> = Lazy::new(|| {
        solve_ground_state(OMEGA, &NL, &ShootingConfig::default_for(OMEGA)).unwrap()
    });

    fn soliton_grid() -> Grid3 {
        Grid3::new(48, 32.0).unwrap()
    }

    const CENTER: [f64; 3] = [16.0; 3];

    // grid-level stationary state: the raw lift has a pseudospectral
    // residual ~2e−3 at this resolution, which dynamics turn into a visible
    // frequency wobble; the refined pair (ψ, ω_d) is what long evolutions
    // should start from
    static REFINED: Lazy<(SpinorField, f64)> = Lazy::new(|| {
        let gs = &*GS;
        let grid = soliton_grid();
        let p = SolitonParams { omega: gs.omega, v: [0.0; 3], mass: 0.0 };
        let u0 = make_soliton(&p, &gs.profile, grid, CENTER).unwrap();
        refine_soliton(&u0, gs.omega, &NL, 1e-10, 80).unwrap()
    });

    fn cfg(dt: f64, t_final: f64) -> EvolutionConfig {
        EvolutionConfig { dt, t_final, output_every: 1_000_000, sponge: None }
    }

    #[test]
    fn free_plane_wave_is_exact() {
        let grid = Grid3::new(16, 8.0).unwrap();
        let k = 2.0 * std::f64::consts::TAU / grid.length; // two grid modes
        let u0 = SpinorField::from_fn(grid, |x, _, _| {
            (
                Complex64::from_polar(0.7, k * x),
                Complex64::from_polar(0.3, -k * x),
            )
        });
        let t = 0.37;
        let u = step(&u0, t, &Nonlinearity::Zero).unwrap();
        // û_c picks up e^{∓ik²t}
        let exact = SpinorField::from_fn(grid, |x, _, _| {
            (
                Complex64::from_polar(0.7, k * x - k * k * t),
                Complex64::from_polar(0.3, -k * x + k * k * t),
            )
        });
        assert!(u.sub(&exact).norm() < 1e-12 * exact.norm());
    }

    #[test]
    fn constant_density_plane_wave_cubic() {
        // |u|² spatially constant: the nonlinear phase is exact too
        let grid = Grid3::new(16, 8.0).unwrap();
        let k = std::f64::consts::TAU / grid.length;
        let a = 0.9;
        let u0 = SpinorField::from_fn(grid, |x, _, _| {
            (Complex64::from_polar(a, k * x), Complex64::default())
        });
        let nl = Nonlinearity::Cubic;
        let t = 1.3;
        let traj = evolve(&u0, &cfg(t / 100.0, t), &nl, |_, _| Ok(())).unwrap();
        let exact = SpinorField::from_fn(grid, |x, _, _| {
            (
                Complex64::from_polar(a, k * x - (k * k + nl.beta(a * a)) * t),
                Complex64::default(),
            )
        });
        assert!(traj.final_field.sub(&exact).norm() < 1e-10 * exact.norm());
    }

    #[test]
    fn zero_field_stays_zero() {
        let grid = Grid3::new(8, 10.0).unwrap();
        let u = step(&SpinorField::zero(grid), 0.1, &Nonlinearity::Cubic).unwrap();
        assert_eq!(u.norm(), 0.0);
    }

    #[test]
    fn strang_is_second_order() {
        let gs = &*GS;
        let grid = soliton_grid();
        let p = SolitonParams { omega: gs.omega, v: [0.3, 0.0, 0.0], mass: 0.0 };
        let u0 = make_soliton(&p, &gs.profile, grid, CENTER).unwrap();
        let t = 0.4;
        let dts = [0.02, 0.01, 0.005, 0.0025, 0.00125];
        let finals: Vec<SpinorField> = dts
            .iter()
            .map(|&dt| evolve(&u0, &cfg(dt, t), &NL, |_, _| Ok(())).unwrap().final_field)
            .collect();
        // Richardson: ‖u(dt) − u(dt/2)‖ ∝ dt²; fit the log-log slope
        let errs: Vec<f64> = finals.windows(2).map(|w| w[0].sub(&w[1]).norm()).collect();
        let xs: Vec<f64> = dts[..errs.len()].iter().map(|d| d.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope - 2.0).abs() < 0.1, "observed order {slope}, errors {errs:?}");
    }

    #[test]
    fn refinement_reaches_roundoff_and_stays_close() {
        let gs = &*GS;
        let grid = soliton_grid();
        let p = SolitonParams { omega: gs.omega, v: [0.0; 3], mass: 0.0 };
        let u0 = make_soliton(&p, &gs.profile, grid, CENTER).unwrap();
        let (psi, omega_d) = &*REFINED;
        // the refinement is a small, high-wavenumber correction
        assert!(psi.sub(&u0).norm() < 1e-3 * u0.norm());
        assert!((omega_d - gs.omega).abs() < 1e-3);
        // and the result really is a discrete stationary state
        let lap = crate::fields::laplacian(psi);
        let mut res = 0.0_f64;
        for i in 0..grid.num_points() {
            let f = omega_d + NL.beta(psi.u1[i].norm_sqr() + psi.u2[i].norm_sqr());
            res += (lap.u1[i] - f * psi.u1[i]).norm_sqr();
        }
        let res = (res * grid.cell_volume()).sqrt();
        assert!(res < 1e-9 * psi.norm(), "residual {:.3e}", res / psi.norm());
    }

    #[test]
    fn invariants_drift_below_tolerance() {
        let gs = &*GS;
        let (u0, _) = &*REFINED;
        let t_final = 50.0 / gs.omega;
        let mut c = cfg(0.005, t_final);
        c.output_every = 2000;
        let traj = evolve(u0, &c, &NL, |_, _| Ok(())).unwrap();
        let first = traj.invariants[0];
        let scale = first.pi[3].abs().max(1.0);
        for iv in &traj.invariants {
            for j in 0..7 {
                assert!(
                    (iv.pi[j] - first.pi[j]).abs() < 1e-6 * scale,
                    "Π_{} drift {:.3e}",
                    j + 1,
                    (iv.pi[j] - first.pi[j]).abs()
                );
            }
            assert!(
                (iv.energy - first.energy).abs() < 1e-6 * first.energy.abs(),
                "energy drift {:.3e} of {:.3e}",
                (iv.energy - first.energy).abs(),
                first.energy
            );
        }
    }

    #[test]
    fn soliton_profile_is_stationary() {
        let grid = soliton_grid();
        let (u0, omega_d) = &*REFINED;
        // twenty phase periods
        let t = 20.0 * std::f64::consts::TAU / omega_d;
        let traj = evolve(u0, &cfg(0.0075, t), &NL, |_, _| Ok(())).unwrap();
        let u = traj.final_field;
        let gap: f64 = u
            .u1
            .iter()
            .zip(&u0.u1)
            .map(|(a, b)| (a.norm() - b.norm()).powi(2))
            .sum::<f64>()
            * grid.cell_volume();
        assert!(gap.sqrt() < 1e-4, "|u| moved by {:.3e}", gap.sqrt());
    }

    #[test]
    fn time_reversibility() {
        let grid = Grid3::new(16, 12.0).unwrap();
        let u0 = random_field(grid, 3);
        let nl = Nonlinearity::Cubic;
        let fwd = step(&u0, 0.05, &nl).unwrap();
        let back = step(&fwd, -0.05, &nl).unwrap();
        assert!(back.sub(&u0).norm() < 1e-10 * u0.norm());
    }

    #[test]
    fn substep_conservation_laws() {
        let grid = Grid3::new(16, 12.0).unwrap();
        let u0 = random_field(grid, 5);
        let nl = NL;

        // nonlinear substep: |u₁|², |u₂|² pointwise constant
        let mut un = u0.clone();
        nonlinear_phase(&mut un, 0.07, &nl);
        let mut worst: f64 = 0.0;
        for i in 0..grid.num_points() {
            worst = worst.max((un.u1[i].norm_sqr() - u0.u1[i].norm_sqr()).abs());
            worst = worst.max((un.u2[i].norm_sqr() - u0.u2[i].norm_sqr()).abs());
        }
        assert!(worst < 1e-13, "pointwise density drift {worst:.3e}");

        // both substeps conserve Π₄ and Π₇
        let mut ul = u0.clone();
        linear_phase(&mut ul, 0.07);
        let iv0 = invariants(&u0, &nl);
        for u in [&un, &ul] {
            let iv = invariants(u, &nl);
            assert!((iv.pi[3] - iv0.pi[3]).abs() < 1e-12 * iv0.pi[3].abs());
            assert!((iv.pi[6] - iv0.pi[6]).abs() < 1e-12 * iv0.pi[3].abs());
        }
        // the linear substep conserves all seven
        let ivl = invariants(&ul, &nl);
        for j in 0..7 {
            assert!(
                (ivl.pi[j] - iv0.pi[j]).abs() < 1e-11 * iv0.pi[3].abs(),
                "Π_{} moved under the linear flow",
                j + 1
            );
        }
    }

    #[test]
    fn exact_soliton_reduces_to_make_soliton_at_t0() {
        let gs = &*GS;
        let grid = soliton_grid();
        let p = SolitonParams { omega: gs.omega, v: [0.7, 0.0, 0.0], mass: 0.0 };
        let a = exact_soliton_at(0.0, &p, &gs.profile, grid, CENTER).unwrap();
        let b = make_soliton(&p, &gs.profile, grid, CENTER).unwrap();
        assert!(a.sub(&b).norm() < 1e-14 * b.norm());
    }

    #[test]
    fn exact_soliton_phase_rate() {
        let gs = &*GS;
        let grid = soliton_grid();
        let v = [0.4, 0.0, 0.0];
        let p = SolitonParams { omega: gs.omega, v, mass: 0.0 };
        // sample on the moving center x = x0 + v t, at times where the
        // displacement is a whole number of cells
        let h = grid.spacing();
        let ic = grid.n / 2; // CENTER sits on a node
        let at = |m: usize| -> Complex64 {
            let t = m as f64 * h / v[0];
            let u = exact_soliton_at(t, &p, &gs.profile, grid, CENTER).unwrap();
            u.u1[grid.index(ic + m, ic, ic)]
        };
        let (z1, z2) = (at(2), at(3));
        let rate = (z2 / z1).arg() / (h / v[0]);
        let expected = p.omega + v.iter().map(|x| x * x).sum::<f64>() / 4.0;
        // noise floor ~1e−8: the boost phase has a seam at the min-image
        // wrap plane (amplitude ~ the 1e−5 decay guard) whose tie-breaking
        // dithers with t-roundoff, and the Nyquist projection is nonlocal
        // enough to leak a little of that into the center sample
        assert_relative_eq!(rate, expected, max_relative = 5e-8);
    }

    #[test]
    fn traveling_soliton_matches_exact_solution() {
        let gs = &*GS;
        let grid = soliton_grid();
        let (psi, omega_d) = &*REFINED;
        let v = [0.5 * gs.omega.sqrt(), 0.0, 0.0];
        let u0 = apply_boost(psi, v, CENTER);
        let t = 10.0 / gs.omega;
        let traj = evolve(&u0, &cfg(0.005, t), &NL, |_, _| Ok(())).unwrap();
        let p = SolitonParams { omega: *omega_d, v, mass: 0.0 };
        let exact = exact_soliton_at(t, &p, &gs.profile, grid, CENTER).unwrap();
        let gap = traj.final_field.sub(&exact).norm() / exact.norm();
        assert!(gap < 1e-3, "relative gap {gap:.3e}");
    }

    fn cached_profiles() -> impl FnMut(f64) -> Result<RadialProfile> {
        let cache: RefCell<HashMap<u64, RadialProfile>> = RefCell::new(HashMap::new());
        move |omega: f64| {
            let key = omega.to_bits();
            if let Some(p) = cache.borrow().get(&key) {
                return Ok(p.clone());
            }
            let gs = solve_ground_state(omega, &NL, &ShootingConfig::default_for(omega))?;
            cache.borrow_mut().insert(key, gs.profile.clone());
            Ok(gs.profile)
        }
    }

    #[test]
    fn prepare_zero_perturbation_is_identity() {
        let gs = &*GS;
        let grid = soliton_grid();
        let u_ref = make_soliton(
            &SolitonParams { omega: gs.omega, v: [0.0; 3], mass: 0.0 },
            &gs.profile,
            grid,
            CENTER,
        )
        .unwrap();
        // target charges measured from the lifted field itself
        let iv = invariants(&u_ref, &NL);
        let p0 = SolitonParams::at_rest(gs.omega, 2.0 * iv.pi[3]);
        let zero = SpinorField::zero(grid);
        let prep = prepare_initial_data(&p0, &zero, grid, CENTER, &NL, 1e-10, |omega| {
            assert_relative_eq!(omega, gs.omega, max_relative = 1e-12);
            Ok(gs.profile.clone())
        })
        .unwrap();
        assert_eq!(prep.iterations, 0);
        assert!(prep.field.unwrap().sub(&u_ref).norm() < 1e-12 * u_ref.norm());
    }

    #[test]
    fn prepare_kick_satisfies_constraints() {
        let gs = &*GS;
        let grid = soliton_grid();
        let u_ref = make_soliton(
            &SolitonParams { omega: gs.omega, v: [0.0; 3], mass: 0.0 },
            &gs.profile,
            grid,
            CENTER,
        )
        .unwrap();
        let iv = invariants(&u_ref, &NL);
        let p0 = SolitonParams::at_rest(gs.omega, 2.0 * iv.pi[3]);
        // first-component kick along the imaginary direction, ~1e−2 of the peak
        let kick_profile = RadialProfile::new(
            gs.profile.grid,
            gs.profile.grid.nodes().map(|r| 1e-2 * (-0.5 * r * r).exp()).collect(),
        )
        .unwrap();
        let kick = lift_perturbation(&kick_profile, grid, CENTER, 0, Complex64::I).unwrap();
        let prep =
            prepare_initial_data(&p0, &kick, grid, CENTER, &NL, 1e-10, cached_profiles())
                .unwrap();
        let got = invariants(prep.field.as_ref().unwrap(), &NL);
        for (j, (a, b)) in got.pi.iter().zip(p0.p_vector()).enumerate() {
            assert!((a - b).abs() < 1e-10, "Π_{} off by {:.3e}", j + 1, (a - b).abs());
        }
        assert!(prep.iterations > 0);
        // the kick survives in the output at roughly its input size
        assert!((prep.scale - 1.0).abs() < 0.2, "scale {}", prep.scale);
    }

    #[test]
    fn prepare_odd_seed_keeps_momenta_zero() {
        let gs = &*GS;
        let grid = soliton_grid();
        let u_ref = make_soliton(
            &SolitonParams { omega: gs.omega, v: [0.0; 3], mass: 0.0 },
            &gs.profile,
            grid,
            CENTER,
        )
        .unwrap();
        let iv = invariants(&u_ref, &NL);
        let p0 = SolitonParams::at_rest(gs.omega, 2.0 * iv.pi[3]);
        // odd-in-x radiation seed in the first component
        let seed = SpinorField::from_fn(grid, |x, y, z| {
            let (dx, dy, dz) = (x - CENTER[0], y - CENTER[1], z - CENTER[2]);
            let g = (-0.3 * (dx * dx + dy * dy + dz * dz)).exp();
            (Complex64::new(0.0, 1e-3 * dx * g), Complex64::default())
        });
        let prep = prepare_initial_data(&p0, &seed, grid, CENTER, &NL, 1e-10, cached_profiles())
            .unwrap();
        let got = invariants(prep.field.as_ref().unwrap(), &NL);
        for a in 0..3 {
            assert!(got.pi[a].abs() < 1e-10, "Π_{} = {:.3e}", a + 1, got.pi[a]);
        }
    }

    #[test]
    fn csv_has_all_columns() {
        let grid = Grid3::new(8, 10.0).unwrap();
        let u0 = random_field(grid, 1);
        let traj = evolve(&u0, &cfg(0.05, 0.1), &Nonlinearity::Zero, |_, _| Ok(())).unwrap();
        let csv = invariant_csv(&traj);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,pi1,pi2,pi3,pi4,pi5,pi6,pi7,energy"
        );
        assert_eq!(lines.count(), traj.times.len());
    }

    #[test]
    fn minres_solves_symmetric_indefinite_system() {
        use nalgebra::{DMatrix, DVector};
        use rand::{Rng, SeedableRng};
        let n = 24;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
            // indefinite diagonal dominance: alternating-sign shifts
            a[(i, i)] += if i % 2 == 0 { 6.0 } else { -6.0 };
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].abs()).collect();
        let apply_a = |x: &[f64]| -> Vec<f64> {
            (&a * DVector::from_column_slice(x)).iter().copied().collect()
        };
        let apply_minv =
            |x: &[f64]| -> Vec<f64> { x.iter().zip(&diag).map(|(v, d)| v / d).collect() };
        let got = minres(&apply_a, &apply_minv, &b, 1e-12, 200);
        let err = got
            .iter()
            .zip(exact.iter())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-8 * exact.norm(), "err = {err:.3e}");
    }

    #[test]
    fn sponge_damps_boundary_mass() {
        let grid = Grid3::new(16, 12.0).unwrap();
        let u0 = random_field(grid, 9);
        let mut c = cfg(0.01, 0.5);
        c.sponge = Some(SpongeConfig { onset_frac: 0.5, strength: 5.0 });
        let traj = evolve(&u0, &c, &Nonlinearity::Zero, |_, _| Ok(())).unwrap();
        assert!(traj.final_field.norm() < u0.norm());
        let _ = symplectic_form(&traj.final_field, &u0); // grids still agree
    }
}
