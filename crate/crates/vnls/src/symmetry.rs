//! The symmetry group R³×T×SU(2) of the system, its unitary representation
//! on spinor fields, the seven quadratic invariants, the energy, and the
//! solitary-wave constructors.
//!
//! Notation: 𝐂 is componentwise conjugation and σ₂𝐂 maps
//! (u₁,u₂) ↦ (−i ū₂, i ū₁); it anticommutes with i and squares to −1, so
//! (a + b σ₂𝐂) with |a|²+|b|²=1 realizes SU(2) as unit quaternions a + b j.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fields::{
    self, derivative, inner_product, laplacian, translate, Grid3, RadialProfile, SpinorField,
};
use crate::{Error, Result};

/// The local nonlinearity β(s), s = |u|², with its derivative and
/// antiderivative B (B(0) = 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// β(s) = −s + γ s²; focusing cubic with a defocusing quintic
    /// correction, which opens a stable soliton branch.
    CubicQuintic { gamma: f64 },
    /// β(s) = −s (focusing cubic).
    Cubic,
    /// β ≡ 0 (free flow, for integrator tests).
    Zero,
}

impl Nonlinearity {
    pub fn beta(&self, s: f64) -> f64 {
        match *self {
            Nonlinearity::CubicQuintic { gamma } => -s + gamma * s * s,
            Nonlinearity::Cubic => -s,
            Nonlinearity::Zero => 0.0,
        }
    }

    pub fn beta_prime(&self, s: f64) -> f64 {
        match *self {
            Nonlinearity::CubicQuintic { gamma } => -1.0 + 2.0 * gamma * s,
            Nonlinearity::Cubic => -1.0,
            Nonlinearity::Zero => 0.0,
        }
    }

    /// Antiderivative B of β with B(0) = 0.
    pub fn big_b(&self, s: f64) -> f64 {
        match *self {
            Nonlinearity::CubicQuintic { gamma } => -0.5 * s * s + gamma * s * s * s / 3.0,
            Nonlinearity::Cubic => -0.5 * s * s,
            Nonlinearity::Zero => 0.0,
        }
    }
}

/// Element of G = R³ × T × SU(2): translations τ₁..τ₃, phase τ₄, and a
/// unit quaternion (a, b).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupElement {
    pub tau: [f64; 4],
    pub a: Complex64,
    pub b: Complex64,
}

#[derive(Serialize, Deserialize)]
struct GroupElementWire {
    tau: [f64; 4],
    a: [f64; 2],
    b: [f64; 2],
}

impl Serialize for GroupElement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GroupElementWire {
            tau: self.tau,
            a: [self.a.re, self.a.im],
            b: [self.b.re, self.b.im],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroupElement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = GroupElementWire::deserialize(d)?;
        GroupElement::new(
            w.tau,
            Complex64::new(w.a[0], w.a[1]),
            Complex64::new(w.b[0], w.b[1]),
        )
        .map_err(serde::de::Error::custom)
    }
}

impl GroupElement {
    /// Builds a group element, renormalizing (a,b) onto the unit sphere.
    pub fn new(tau: [f64; 4], a: Complex64, b: Complex64) -> Result<Self> {
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Config("SU(2) part (a,b) must be a nonzero finite pair".into()));
        }
        Ok(GroupElement { tau, a: a / n, b: b / n })
    }

    pub fn identity() -> Self {
        GroupElement { tau: [0.0; 4], a: Complex64::new(1.0, 0.0), b: Complex64::ZERO }
    }

    pub fn translation(tau: [f64; 3]) -> Self {
        GroupElement { tau: [tau[0], tau[1], tau[2], 0.0], ..GroupElement::identity() }
    }

    pub fn phase(tau4: f64) -> Self {
        GroupElement { tau: [0.0, 0.0, 0.0, tau4], ..GroupElement::identity() }
    }

    pub fn su2(a: Complex64, b: Complex64) -> Result<Self> {
        GroupElement::new([0.0; 4], a, b)
    }

    /// Pure SU(2) element with a = √(1−|b|²) real positive (the gauge used
    /// in modulation coordinates).
    pub fn su2_from_b(b: Complex64) -> Result<Self> {
        if b.norm_sqr() > 1.0 {
            return Err(Error::Config(format!("|b| = {} exceeds 1", b.norm())));
        }
        let a = Complex64::new((1.0 - b.norm_sqr()).sqrt(), 0.0);
        Ok(GroupElement { tau: [0.0; 4], a, b })
    }

    /// Group product: translations and phase add, quaternions multiply
    /// ((a + bj)(a′ + b′j) = (aa′ − b b̄′) + (ab′ + b ā′) j).
    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        let tau = [
            self.tau[0] + other.tau[0],
            self.tau[1] + other.tau[1],
            self.tau[2] + other.tau[2],
            self.tau[3] + other.tau[3],
        ];
        let a = self.a * other.a - self.b * other.b.conj();
        let b = self.a * other.b + self.b * other.a.conj();
        GroupElement { tau, a, b }
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement {
            tau: [-self.tau[0], -self.tau[1], -self.tau[2], -self.tau[3]],
            a: self.a.conj(),
            b: -self.b,
        }
    }
}

/// T(g)u: spectral translation by (τ₁,τ₂,τ₃), then σ₃-phase e^{iσ₃τ₄},
/// applied to the pointwise SU(2) part (a + b σ₂𝐂)u. The three factors
/// commute, so the order is a convention, not a constraint.
pub fn apply_group(g: &GroupElement, u: &SpinorField) -> SpinorField {
    let mut w = if g.b == Complex64::ZERO && g.a == Complex64::new(1.0, 0.0) {
        u.clone()
    } else {
        let s = u.sigma2_conj();
        SpinorField {
            grid: u.grid,
            u1: u.u1.iter().zip(&s.u1).map(|(&x, &y)| g.a * x + g.b * y).collect(),
            u2: u.u2.iter().zip(&s.u2).map(|(&x, &y)| g.a * x + g.b * y).collect(),
        }
    };
    if g.tau[3] != 0.0 {
        let ph = Complex64::from_polar(1.0, g.tau[3]);
        let phc = ph.conj();
        for z in w.u1.iter_mut() {
            *z *= ph;
        }
        for z in w.u2.iter_mut() {
            *z *= phc;
        }
    }
    if g.tau[0] != 0.0 || g.tau[1] != 0.0 || g.tau[2] != 0.0 {
        w = translate(&w, [g.tau[0], g.tau[1], g.tau[2]]);
    }
    w
}

/// Applies the j-th symmetry generator ◇_j (1-based, j = 1..7):
/// ◇_a = −iσ₃∂_a (a = 1..3), ◇₄ = 1, ◇₅ = σ₃σ₂𝐂, ◇₆ = iσ₃σ₂𝐂, ◇₇ = σ₃.
pub fn diamond(u: &SpinorField, j: usize) -> SpinorField {
    match j {
        1..=3 => derivative(u, j - 1).i_sigma3().scale(-1.0),
        4 => u.clone(),
        5 => u.sigma2_conj().sigma3(),
        6 => u.sigma2_conj().sigma3().map(|z| Complex64::I * z),
        7 => u.sigma3(),
        _ => panic!("diamond index {j} out of range 1..=7"),
    }
}

/// The seven invariants Π_j = ½⟨◇_j u, u⟩ and the energy
/// E = ½⟨−Δu,u⟩ − ½∫B(|u|²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvariantVector {
    pub pi: [f64; 7],
    pub energy: f64,
}

pub fn invariants(u: &SpinorField, nl: &Nonlinearity) -> InvariantVector {
    let dv = u.grid.cell_volume();
    let mut pi = [0.0; 7];
    for a in 0..3 {
        pi[a] = 0.5 * inner_product(&diamond(u, a + 1), u);
    }
    // the pointwise ones are cheap sums
    let mut s4 = 0.0;
    let mut s5 = 0.0;
    let mut s6 = 0.0;
    let mut s7 = 0.0;
    let mut b_int = 0.0;
    for (z1, z2) in u.u1.iter().zip(&u.u2) {
        let n1 = z1.norm_sqr();
        let n2 = z2.norm_sqr();
        s4 += n1 + n2;
        let prod = z1 * z2;
        s5 -= prod.im; // Π₅ = −Im ∫ u₁u₂
        s6 += prod.re; // Π₆ =  Re ∫ u₁u₂
        s7 += n1 - n2;
        b_int += nl.big_b(n1 + n2);
    }
    pi[3] = 0.5 * s4 * dv;
    pi[4] = s5 * dv;
    pi[5] = s6 * dv;
    pi[6] = 0.5 * s7 * dv;
    let kinetic = -0.5 * inner_product(&laplacian(u), u);
    InvariantVector { pi, energy: kinetic - 0.5 * b_int * dv }
}

/// ∇E(u) = −Δu + β(|u|²)u.
pub fn energy_gradient(u: &SpinorField, nl: &Nonlinearity) -> SpinorField {
    let mut g = laplacian(u).scale(-1.0);
    for i in 0..u.grid.num_points() {
        let s = u.u1[i].norm_sqr() + u.u2[i].norm_sqr();
        let b = nl.beta(s);
        g.u1[i] += b * u.u1[i];
        g.u2[i] += b * u.u2[i];
    }
    g
}

/// Soliton parameters: frequency ω, velocity v, and the L² mass
/// m(ω) = ‖φ_ω‖² of the underlying profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolitonParams {
    pub omega: f64,
    pub v: [f64; 3],
    pub mass: f64,
}

impl SolitonParams {
    pub fn at_rest(omega: f64, mass: f64) -> Self {
        SolitonParams { omega, v: [0.0; 3], mass }
    }

    /// The seven conserved charges of the soliton:
    /// p_a = v_a m/4, p₄ = p₇ = m/2, p₅ = p₆ = 0.
    pub fn p_vector(&self) -> [f64; 7] {
        let m = self.mass;
        [
            self.v[0] * m / 4.0,
            self.v[1] * m / 4.0,
            self.v[2] * m / 4.0,
            m / 2.0,
            0.0,
            0.0,
            m / 2.0,
        ]
    }

    pub fn p4(&self) -> f64 {
        self.mass / 2.0
    }
}

/// Lagrange multipliers λ(p): λ_a = −v_a, λ₄ = −ω − v²/4, λ₅..₇ = 0; the
/// soliton satisfies ∇E(Φ) = Σ λ_j ◇_j Φ.
pub fn lambda_of_p(p: &SolitonParams) -> [f64; 7] {
    let v2 = p.v[0] * p.v[0] + p.v[1] * p.v[1] + p.v[2] * p.v[2];
    [-p.v[0], -p.v[1], -p.v[2], -p.omega - v2 / 4.0, 0.0, 0.0, 0.0]
}

/// Builds Φ_p(x) = e^{iv·(x−center)/2} φ_ω(|x−center|) e⃗₁ on the grid,
/// with periodic minimal-image distances.
pub fn make_soliton(
    p: &SolitonParams,
    profile: &RadialProfile,
    grid: Grid3,
    center: [f64; 3],
) -> Result<SpinorField> {
    let k_nyq = std::f64::consts::PI * grid.n as f64 / grid.length;
    for (a, &va) in p.v.iter().enumerate() {
        if va.abs() / 2.0 > k_nyq {
            return Err(Error::Config(format!(
                "velocity component v[{a}] = {va} phases beyond the grid Nyquist wavenumber"
            )));
        }
    }
    let lifted = fields::lift_radial(profile, grid, center)?;
    let n = grid.n;
    let mut out = lifted;
    if p.v != [0.0; 3] {
        for iz in 0..n {
            let dz = grid.min_image(grid.coord(iz), center[2]);
            for iy in 0..n {
                let dy = grid.min_image(grid.coord(iy), center[1]);
                for ix in 0..n {
                    let dx = grid.min_image(grid.coord(ix), center[0]);
                    let ph = 0.5 * (p.v[0] * dx + p.v[1] * dy + p.v[2] * dz);
                    let idx = grid.index(ix, iy, iz);
                    out.u1[idx] *= Complex64::from_polar(1.0, ph);
                }
            }
        }
    }
    fields::zero_nyquist(&mut out);
    Ok(out)
}

/// Closed-form action of the SU(2) element with a = √(1−|b|²) on the
/// triple (Π₅, Π₆, Π₇); the 3×3 matrix is orthogonal.
pub fn su2_pi_transform(b: Complex64, pi: [f64; 3]) -> Result<[f64; 3]> {
    let bsq = b.norm_sqr();
    if bsq > 1.0 {
        return Err(Error::Config(format!("|b| = {} exceeds 1", b.norm())));
    }
    let a = (1.0 - bsq).sqrt();
    let (br, bi) = (b.re, b.im);
    let a2 = a * a;
    let (p5, p6, p7) = (pi[0], pi[1], pi[2]);
    Ok([
        (a2 - br * br + bi * bi) * p5 - 2.0 * br * bi * p6 - 2.0 * a * br * p7,
        -2.0 * br * bi * p5 + (a2 + br * br - bi * bi) * p6 - 2.0 * a * bi * p7,
        2.0 * a * br * p5 + 2.0 * a * bi * p6 + (a2 - bsq) * p7,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{random_field, symplectic_form};
    use proptest::prelude::*;

    fn grid() -> Grid3 {
        Grid3::new(16, 8.0).unwrap()
    }

    fn random_group(seed: u64) -> GroupElement {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = grid();
        let h = g.spacing();
        // lattice-commensurate translations so spectral shifts are exact
        let tau = [
            h * rng.gen_range(0..g.n) as f64,
            h * rng.gen_range(0..g.n) as f64,
            h * rng.gen_range(0..g.n) as f64,
            rng.gen_range(-3.0..3.0),
        ];
        let a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let b = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        GroupElement::new(tau, a / n, b / n).unwrap()
    }

    #[test]
    fn identity_and_phase_action() {
        let u = random_field(grid(), 1);
        let id = GroupElement::identity();
        let v = apply_group(&id, &u);
        assert!(v.sub(&u).norm() < 1e-14);

        let t4 = 0.7;
        let g = GroupElement::phase(t4);
        let w = apply_group(&g, &u);
        let ph = Complex64::from_polar(1.0, t4);
        for i in 0..u.grid.num_points() {
            assert!((w.u1[i] - ph * u.u1[i]).norm() < 1e-14);
            assert!((w.u2[i] - ph.conj() * u.u2[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn su2_composition_matches_quaternion_product() {
        let u = random_field(grid(), 2);
        let g1 = GroupElement::su2(Complex64::new(0.6, 0.2), Complex64::new(-0.3, 0.7127)).unwrap();
        let g2 = GroupElement::su2(Complex64::new(0.1, -0.5), Complex64::new(0.8, 0.3162)).unwrap();
        let lhs = apply_group(&g1, &apply_group(&g2, &u));
        let rhs = apply_group(&g1.compose(&g2), &u);
        assert!(lhs.sub(&rhs).norm() < 1e-12 * u.norm());
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let g = random_group(3);
        let e = g.compose(&g.inverse());
        assert!(e.tau.iter().all(|&t| t.abs() < 1e-12));
        assert!((e.a - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(e.b.norm() < 1e-12);
        // and on fields
        let u = random_field(grid(), 4);
        let v = apply_group(&g.inverse(), &apply_group(&g, &u));
        assert!(v.sub(&u).norm() < 1e-10 * u.norm());
    }

    #[test]
    fn group_element_json_roundtrip() {
        let g = random_group(5);
        let json = serde_json::to_string(&g).unwrap();
        let h: GroupElement = serde_json::from_str(&json).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn invariants_of_zero_field() {
        let nl = Nonlinearity::CubicQuintic { gamma: 0.1 };
        let inv = invariants(&SpinorField::zero(grid()), &nl);
        assert_eq!(inv.pi, [0.0; 7]);
        assert_eq!(inv.energy, 0.0);
    }

    #[test]
    fn invariants_and_energy_group_invariant() {
        let nl = Nonlinearity::CubicQuintic { gamma: 0.2 };
        let u = random_field(grid(), 6).scale(0.3);
        let inv0 = invariants(&u, &nl);
        for seed in 10..15 {
            let g = random_group(seed);
            let inv = invariants(&apply_group(&g, &u), &nl);
            for j in 0..4 {
                assert!(
                    (inv.pi[j] - inv0.pi[j]).abs() < 1e-10 * inv0.pi[3].max(1.0),
                    "Π_{} changed: {} vs {}",
                    j + 1,
                    inv.pi[j],
                    inv0.pi[j]
                );
            }
            assert!((inv.energy - inv0.energy).abs() < 1e-10 * inv0.energy.abs().max(1.0));
        }
    }

    #[test]
    fn symplectic_form_group_invariant() {
        let x = random_field(grid(), 7);
        let y = random_field(grid(), 8);
        let o0 = symplectic_form(&x, &y);
        for seed in 20..24 {
            let g = random_group(seed);
            let o = symplectic_form(&apply_group(&g, &x), &apply_group(&g, &y));
            assert!((o - o0).abs() < 1e-10 * o0.abs().max(1.0));
        }
    }

    #[test]
    fn diamonds_symmetric_for_inner_product() {
        let u = random_field(grid(), 9);
        let v = random_field(grid(), 10);
        for j in 1..=7 {
            let a = inner_product(&diamond(&u, j), &v);
            let b = inner_product(&u, &diamond(&v, j));
            assert!((a - b).abs() < 1e-10 * u.norm() * v.norm(), "◇_{j} not symmetric");
        }
    }

    #[test]
    fn directional_derivative_matches_energy_gradient() {
        let nl = Nonlinearity::CubicQuintic { gamma: 0.3 };
        let u = random_field(grid(), 11).scale(0.4);
        let h = random_field(grid(), 12).scale(0.4);
        let grad = energy_gradient(&u, &nl);
        let expected = inner_product(&grad, &h);
        let eps = 1e-4;
        let mut up = u.clone();
        up.axpy(eps, &h);
        let mut um = u.clone();
        um.axpy(-eps, &h);
        let fd = (invariants(&up, &nl).energy - invariants(&um, &nl).energy) / (2.0 * eps);
        assert!(
            (fd - expected).abs() < 1e-6 * expected.abs().max(1.0),
            "fd {fd} vs grad pairing {expected}"
        );
    }

    #[test]
    fn lambda_values() {
        let l = lambda_of_p(&SolitonParams::at_rest(1.0, 2.0));
        assert_eq!(l, [0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        let l = lambda_of_p(&SolitonParams { omega: 1.0, v: [2.0, 0.0, 0.0], mass: 2.0 });
        assert_eq!(l[3], -2.0);
        assert_eq!(&l[4..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn su2_pi_transform_identity_and_real_b() {
        let pi = [0.3, -0.4, 0.9];
        assert_eq!(su2_pi_transform(Complex64::ZERO, pi).unwrap(), pi);
        let b = 0.35;
        let out = su2_pi_transform(Complex64::new(b, 0.0), [0.0, 0.0, 1.0]).unwrap();
        let a = (1.0f64 - b * b).sqrt();
        assert!((out[0] - (-2.0 * a * b)).abs() < 1e-14);
        assert!(out[1].abs() < 1e-14);
        assert!((out[2] - (1.0 - 2.0 * b * b)).abs() < 1e-14);
        assert!(su2_pi_transform(Complex64::new(1.2, 0.0), pi).is_err());
    }

    #[test]
    fn su2_pi_transform_matches_grid_evaluation() {
        let nl = Nonlinearity::Zero;
        let psi = random_field(grid(), 13).scale(0.5);
        let inv0 = invariants(&psi, &nl);
        for (seed, b) in [
            (0, Complex64::new(0.3, -0.2)),
            (1, Complex64::new(-0.55, 0.1)),
            (2, Complex64::new(0.0, 0.72)),
        ] {
            let _ = seed;
            let g = GroupElement::su2_from_b(b).unwrap();
            let inv = invariants(&apply_group(&g, &psi), &nl);
            let closed = su2_pi_transform(b, [inv0.pi[4], inv0.pi[5], inv0.pi[6]]).unwrap();
            for k in 0..3 {
                assert!(
                    (inv.pi[4 + k] - closed[k]).abs() < 1e-10 * inv0.pi[3].max(1.0),
                    "component {k}: grid {} vs closed form {}",
                    inv.pi[4 + k],
                    closed[k]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn su2_pi_transform_is_orthogonal(
            br in -0.9f64..0.9,
            bi_frac in -1.0f64..1.0,
            p5 in -2.0f64..2.0,
            p6 in -2.0f64..2.0,
            p7 in -2.0f64..2.0,
        ) {
            let bi = bi_frac * (1.0 - br * br).sqrt() * 0.999;
            let b = Complex64::new(br, bi);
            let pi = [p5, p6, p7];
            let out = su2_pi_transform(b, pi).unwrap();
            let n0 = p5 * p5 + p6 * p6 + p7 * p7;
            let n1: f64 = out.iter().map(|x| x * x).sum();
            prop_assert!((n0 - n1).abs() < 1e-12 * n0.max(1.0));
        }

        #[test]
        fn pi567_magnitude_invariant_under_su2(seed in 0u64..50) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b = Complex64::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7));
            let g = GroupElement::su2_from_b(b).unwrap();
            let u = random_field(grid(), seed.wrapping_add(100)).scale(0.5);
            let nl = Nonlinearity::Zero;
            let i0 = invariants(&u, &nl);
            let i1 = invariants(&apply_group(&g, &u), &nl);
            let m0 = i0.pi[4].powi(2) + i0.pi[5].powi(2) + i0.pi[6].powi(2);
            let m1 = i1.pi[4].powi(2) + i1.pi[5].powi(2) + i1.pi[6].powi(2);
            prop_assert!((m0 - m1).abs() < 1e-10 * m0.max(1.0));
        }
    }
}
