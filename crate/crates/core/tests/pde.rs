use std::f64::consts::{PI, TAU};

use seplab::functions::FourierFunction;
use seplab::geometry::{CircleBundle, Potential, Torus};
use seplab::pde::{
    pde_pairing, solve_fokker_planck, solve_horizontal_heat, solve_weighted_heat, FieldState, Measure, SpectralGrid,
};
use seplab::quadrature::{integrate, Tolerance};

fn line() -> Torus {
    Torus::unit(1).unwrap()
}

fn cos_potential(t: &Torus) -> Potential {
    Potential::cosine(t, 0.5, &[1]).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gibbs_mass(s: &FieldState, u: &Potential) -> f64 {
    let one = FourierFunction::constant(&[1.0], 1.0, 1.0);
    pde_pairing(s, &one, Measure::Gibbs(u))
}

#[test]
fn base_single_mode_matches_closed_form() {
    let t = line();
    let grid = SpectralGrid::torus(&t, 16).unwrap();
    let c = 1.0 / 6.0;
    let rho0 = FieldState::from_function(&grid, &FourierFunction::parse("0.5 + 0.5*cos(1)", t.sides(), 1.0).unwrap()).unwrap();
    let times = [0.05, 0.1, 0.25];
    let out = solve_weighted_heat(&rho0, &Potential::zero(&t), 0.5, c, &times, None).unwrap();
    for (s, &tt) in out.iter().zip(&times) {
        for x in [0.0, 0.21, 0.5, 0.77] {
            let exact = 0.5 + 0.5 * (-4.0 * PI * PI * c * tt).exp() * (TAU * x).cos();
            assert!((s.value_at(&[x], 0.0) - exact).abs() < 1e-8);
        }
    }
}

#[test]
fn constants_are_stationary() {
    let t = line();
    let u = cos_potential(&t);
    let grid = SpectralGrid::torus(&t, 16).unwrap();
    let rho0 = FieldState::from_fn(&grid, |_, _| 0.3);
    for alpha in [0.0, 0.5, 1.0] {
        let out = solve_weighted_heat(&rho0, &u, alpha, 0.2, &[0.5], None).unwrap();
        assert!(max_diff(&out[0].samples(), &rho0.samples()) < 1e-12);
    }
}

#[test]
fn gibbs_mass_is_conserved() {
    let t = line();
    let u = cos_potential(&t);
    let grid = SpectralGrid::torus(&t, 16).unwrap();
    let rho0 = FieldState::from_function(&grid, &FourierFunction::parse("0.5 + 0.3*cos(1) + 0.1*sin(2)", t.sides(), 1.0).unwrap())
        .unwrap();
    let m0 = gibbs_mass(&rho0, &u);
    for alpha in [0.5, 1.0] {
        let out = solve_weighted_heat(&rho0, &u, alpha, 1.0 / 6.0, &[0.05, 0.2, 0.5], None).unwrap();
        for s in &out {
            assert!((gibbs_mass(s, &u) - m0).abs() < 1e-10, "alpha {alpha}");
        }
    }
}

#[test]
fn fokker_planck_conserves_volume_mass_and_fixes_gibbs_density() {
    let t = line();
    let u = cos_potential(&t);
    let grid = SpectralGrid::torus(&t, 16).unwrap();
    let one = FourierFunction::constant(&[1.0], 1.0, 1.0);
    let rho0 = FieldState::from_fn(&grid, |x, _| 0.5 + 0.4 * (TAU * x[0]).sin());
    let m0 = pde_pairing(&rho0, &one, Measure::Volume);
    for s in solve_fokker_planck(&rho0, &u, 0.3, &[0.1, 0.4], None).unwrap() {
        assert!((pde_pairing(&s, &one, Measure::Volume) - m0).abs() < 1e-10);
    }
    let eq = FieldState::from_fn(&grid, |x, _| (-u.value(x)).exp());
    let out = solve_fokker_planck(&eq, &u, 0.3, &[1.0], None).unwrap();
    assert!(max_diff(&out[0].samples(), &eq.samples()) < 1e-8);
}

#[test]
fn fokker_planck_without_potential_is_the_heat_flow() {
    let t = line();
    let u = Potential::zero(&t);
    let grid = SpectralGrid::torus(&t, 16).unwrap();
    let rho0 = FieldState::from_fn(&grid, |x, _| 0.5 + 0.4 * (TAU * x[0]).sin() + 0.1 * (2.0 * TAU * x[0]).cos());
    let fp = solve_fokker_planck(&rho0, &u, 0.2, &[0.3], None).unwrap();
    for alpha in [0.0, 0.5, 1.0] {
        let wh = solve_weighted_heat(&rho0, &u, alpha, 0.2, &[0.3], None).unwrap();
        assert!(max_diff(&fp[0].samples(), &wh[0].samples()) < 1e-13);
    }
}

#[test]
fn change_of_reference_measure() {
    let t = line();
    let u = cos_potential(&t);
    let grid = SpectralGrid::torus(&t, 24).unwrap();
    let c = 1.0 / 6.0;
    let profile = |x: &[f64]| 0.5 + 0.5 * (TAU * x[0]).cos();
    let mu = FieldState::from_fn(&grid, |x, _| profile(x));
    let vol = FieldState::from_fn(&grid, |x, _| profile(x) * (-u.value(x)).exp());
    let times = [0.05, 0.25];
    let a = solve_weighted_heat(&mu, &u, 0.5, c, &times, None).unwrap();
    let b = solve_fokker_planck(&vol, &u, c, &times, None).unwrap();
    for (sa, sb) in a.iter().zip(&b) {
        for x in [0.0, 0.1, 0.45, 0.8] {
            let lhs = sa.value_at(&[x], 0.0) * (-u.value(&[x])).exp();
            assert!((lhs - sb.value_at(&[x], 0.0)).abs() < 1e-8);
        }
    }
}

#[test]
fn self_convergence_under_refinement() {
    let t = line();
    let u = cos_potential(&t);
    let f = FourierFunction::parse("0.5 + 0.5*cos(1)", t.sides(), 1.0).unwrap();
    for alpha in [0.5, 1.0] {
        let coarse_grid = SpectralGrid::torus(&t, 16).unwrap();
        let fine_grid = SpectralGrid::torus(&t, 32).unwrap();
        let coarse = solve_weighted_heat(&FieldState::from_function(&coarse_grid, &f).unwrap(), &u, alpha, 1.0 / 6.0, &[0.25], None)
            .unwrap();
        let dt = seplab::pde::suggested_dt(&fine_grid, seplab::pde::DiffusionOperator::weighted(alpha, 1.0 / 6.0), &u).unwrap();
        let fine = solve_weighted_heat(
            &FieldState::from_function(&fine_grid, &f).unwrap(),
            &u,
            alpha,
            1.0 / 6.0,
            &[0.25],
            Some(dt / 2.0),
        )
        .unwrap();
        for x in [0.0, 0.3, 0.61] {
            assert!((coarse[0].value_at(&[x], 0.0) - fine[0].value_at(&[x], 0.0)).abs() < 1e-8);
        }
    }
}

#[test]
fn maximum_principle_is_respected() {
    let t = line();
    let u = cos_potential(&t);
    let grid = SpectralGrid::torus(&t, 16).unwrap();
    let rho0 = FieldState::from_function(&grid, &FourierFunction::parse("0.5 + 0.5*cos(1)", t.sides(), 1.0).unwrap()).unwrap();
    let (lo0, hi0) = rho0.range();
    for alpha in [0.5, 1.0] {
        for s in solve_weighted_heat(&rho0, &u, alpha, 1.0 / 6.0, &[0.01, 0.1, 0.3], None).unwrap() {
            let (lo, hi) = s.range();
            assert!(lo >= lo0 - 1e-6 && hi <= hi0 + 1e-6);
        }
    }
}

#[test]
fn pairing_against_adaptive_quadrature() {
    let t = line();
    let u = cos_potential(&t);
    let grid = SpectralGrid::torus(&t, 16).unwrap();
    let phi = FourierFunction::parse("cos(1)", t.sides(), 1.0).unwrap();
    let one = FieldState::from_fn(&grid, |_, _| 1.0);
    let oracle = integrate(|x| (TAU * x).cos() * (-0.5 * (TAU * x).cos()).exp(), 0.0, 1.0, Tolerance::default()).unwrap();
    assert!((pde_pairing(&one, &phi, Measure::Gibbs(&u)) - oracle).abs() < 1e-9);

    let z = Potential::zero(&t);
    let sin = FieldState::from_fn(&grid, |x, _| (TAU * x[0]).sin());
    assert!(pde_pairing(&sin, &phi, Measure::Gibbs(&z)).abs() < 1e-15);
}

fn bundle(a: f64) -> CircleBundle {
    CircleBundle::new(line(), TAU, vec![a]).unwrap()
}

#[test]
fn bundle_mode_decays_at_horizontal_symbol() {
    let b = bundle(1.0);
    let grid = SpectralGrid::bundle(&b, 8, 4).unwrap();
    let c = 1.0 / 6.0;
    let f = FourierFunction::parse("cos(1|1)", &[1.0], TAU).unwrap();
    let rho0 = FieldState::from_function(&grid, &f).unwrap();
    let u = Potential::zero(b.base());
    let out = solve_horizontal_heat(&rho0, &u, 0.5, c, &[0.2], None).unwrap();
    let rate = c * (TAU - 1.0).powi(2);
    for (x, th) in [(0.0, 0.0), (0.3, 1.0), (0.8, 4.0)] {
        let exact = (-rate * 0.2).exp() * (TAU * x + th).cos();
        assert!((out[0].value_at(&[x], th) - exact).abs() < 1e-8);
    }
}

#[test]
fn flat_connection_freezes_fibre_modes() {
    let b = bundle(0.0);
    let grid = SpectralGrid::bundle(&b, 8, 4).unwrap();
    let c = 0.2;
    let f = FourierFunction::parse("cos(0|1) + cos(1|1)", &[1.0], TAU).unwrap();
    let rho0 = FieldState::from_function(&grid, &f).unwrap();
    let out = solve_horizontal_heat(&rho0, &Potential::zero(b.base()), 0.5, c, &[0.3], None).unwrap();
    let decay = (-4.0 * PI * PI * c * 0.3).exp();
    for (x, th) in [(0.1f64, 0.2f64), (0.6, 3.0)] {
        let exact = th.cos() + decay * (TAU * x + th).cos();
        assert!((out[0].value_at(&[x], th) - exact).abs() < 1e-8);
    }
}

#[test]
fn lifted_base_data_follow_the_base_flow() {
    let b = bundle(1.0);
    let u = cos_potential(b.base());
    let f = FourierFunction::parse("0.5 + 0.5*cos(1)", &[1.0], TAU).unwrap();
    for alpha in [0.5, 1.0] {
        let base = solve_weighted_heat(
            &FieldState::from_function(&SpectralGrid::torus(b.base(), 12).unwrap(), &f).unwrap(),
            &u,
            alpha,
            0.2,
            &[0.2],
            None,
        )
        .unwrap();
        let lifted = solve_horizontal_heat(
            &FieldState::from_function(&SpectralGrid::bundle(&b, 12, 4).unwrap(), &f).unwrap(),
            &u,
            alpha,
            0.2,
            &[0.2],
            None,
        )
        .unwrap();
        for (x, th) in [(0.0, 0.0), (0.4, 2.0), (0.9, 5.5)] {
            assert!((base[0].value_at(&[x], 0.0) - lifted[0].value_at(&[x], th)).abs() < 1e-8);
        }
    }
}

#[test]
fn csv_snapshot_has_header_and_rows() {
    let t = line();
    let grid = SpectralGrid::torus(&t, 4).unwrap();
    let s = FieldState::from_fn(&grid, |x, _| x[0]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.csv");
    s.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x0,value"));
    assert_eq!(lines.count(), grid.len());
}
