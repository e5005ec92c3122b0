// scratch probe: 3d mode refinement + extraction at ω = 0.8
use num_complex::Complex64;
use vnls::fields::{zero_nyquist, Grid3, SpinorField};
use vnls::groundstate::{solve_ground_state, ShootingConfig};
use vnls::linearization::{internal_modes, SpectrumConfig};
use vnls::modulation::{energy_split, extract_modes, prepare_modes, quadratic_form};
use vnls::symmetry::{make_soliton, Nonlinearity, SolitonParams};

fn main() {
    let nl = Nonlinearity::CubicQuintic { gamma: 3.0 / 16.0 };
    let omega = 0.8;
    let gs = solve_ground_state(omega, &nl, &ShootingConfig::default_for(omega)).unwrap();
    let spec = internal_modes(&gs, &nl, &SpectrumConfig::default()).unwrap();
    println!("radial modes: {} distinct, {} total", spec.n_distinct, spec.n_total);

    let grid = Grid3::new(48, 40.0).unwrap();
    let center = [20.0; 3];
    let p = SolitonParams { omega, v: [0.0; 3], mass: 0.0 };
    let u0 = make_soliton(&p, &gs.profile, grid, center).unwrap();
    let t0 = std::time::Instant::now();
    let (psi, omega_d) = vnls::evolution::refine_soliton(&u0, omega, &nl, 1e-10, 80).unwrap();
    println!("refined omega_d = {omega_d:.8} in {:.1?}", t0.elapsed());

    let t0 = std::time::Instant::now();
    let modes = prepare_modes(&spec, &psi, omega_d, &nl, 1e-8).unwrap();
    println!("prepared {} grid modes in {:.1?}", modes.len(), t0.elapsed());
    for m in &modes {
        println!(
            "  e={:.8} (radial?) block={:?} ell={} m={} krein={:+.0} res={:.2e}",
            m.e, m.block, m.ell, m.m_index, m.krein_sign, m.residual
        );
    }

    // kernel oracle: Q(iψ) should vanish (phase direction is L₋ kernel)
    let mut iphase = psi.clone();
    for z in iphase.u1.iter_mut().chain(iphase.u2.iter_mut()) {
        *z *= Complex64::new(0.0, 1.0);
    }
    let qker = quadratic_form(&iphase, &psi, omega_d, &nl);
    let qpsi = quadratic_form(&psi, &psi, omega_d, &nl);
    println!("Q(iψ) = {qker:.3e}  (vs Q(ψ) = {qpsi:.3e})");

    // synthesis → extraction left-inverse
    let zs: Vec<Complex64> = (0..modes.len())
        .map(|l| Complex64::new(0.013 * (l as f64 + 1.0), -0.007 * (l as f64 - 3.0)))
        .collect();
    let mut r = SpinorField::zero(grid);
    for (mode, z) in modes.iter().zip(&zs) {
        mode.add_contribution(*z, &mut r);
    }
    let split = extract_modes(&r, &modes);
    let dz = split
        .z
        .iter()
        .zip(&zs)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0f64, f64::max);
    println!("left-inverse max |Δz| = {dz:.3e}, ‖f‖ = {:.3e}", split.f.norm());

    // generic smooth perturbation: eq:H2 energy split
    let mut pert = SpinorField::from_fn(grid, |x, y, z| {
        let dx = x - center[0];
        let dy = y - center[1];
        let dzc = z - center[2];
        let g = (-0.08 * (dx * dx + dy * dy + dzc * dzc)).exp();
        (
            Complex64::new(0.02 * g * dx, 0.015 * g * dy),
            Complex64::new(0.01 * g * dzc, 0.02 * g * (1.0 + 0.3 * dx)),
        )
    });
    zero_nyquist(&mut pert);
    let es = energy_split(&pert, &modes, &psi, omega_d, &nl);
    let sum: f64 = es.per_mode.iter().sum::<f64>() + es.remainder;
    println!(
        "energy split: total={:.8e} sum={:.8e} rel gap={:.3e}",
        es.total,
        sum,
        (es.total - sum).abs() / es.total.abs()
    );

    // f from extraction should have zero amplitudes on re-extraction
    let split2 = extract_modes(&split.f, &modes);
    let zmax = split2.z.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    println!("re-extraction of f: max |z| = {zmax:.3e}");
}
