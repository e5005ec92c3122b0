// scratch probe: phase-rate sensitivity of the exact traveling soliton
use num_complex::Complex64;
use vnls::evolution::exact_soliton_at;
use vnls::fields::Grid3;
use vnls::groundstate::{solve_ground_state, ShootingConfig};
use vnls::symmetry::{Nonlinearity, SolitonParams};

fn main() {
    let nl = Nonlinearity::CubicQuintic { gamma: 3.0 / 16.0 };
    let omega = 0.5;
    let gs = solve_ground_state(omega, &nl, &ShootingConfig::default_for(omega)).unwrap();
    let grid = Grid3::new(48, 32.0).unwrap();
    let center = [16.0; 3];
    let v = [0.4, 0.0, 0.0];
    let p = SolitonParams { omega, v, mass: 0.0 };
    let h = grid.spacing();
    let ic = grid.n / 2;
    let at = |m: usize| -> Complex64 {
        let t = m as f64 * h / v[0];
        let u = exact_soliton_at(t, &p, &gs.profile, grid, center).unwrap();
        u.u1[grid.index(ic + m, ic, ic)]
    };
    for m in 0..5 {
        let z = at(m);
        println!("m={m} |z|={:.12} arg={:.12}", z.norm(), z.arg());
    }
    let (z1, z2) = (at(2), at(3));
    let rate = (z2 / z1).arg() / (h / v[0]);
    println!("rate {rate:.12} expected {:.12}", p.omega + v[0] * v[0] / 4.0);
}
