use std::f64::consts::{PI, TAU};

use seplab::functions::FourierFunction;
use seplab::geometry::{CircleBundle, Potential, Torus};
use seplab::graph::NeighbourhoodGraph;
use seplab::kernels::{expected_density_oracle, kernel_moments, mixed_first_moment, odd_moments, product_kernel_moments, Kernel, ProductKernel};
use seplab::sampling::{BandwidthSchedule, Configuration};
use seplab::sep::sep_generator_apply;
use seplab::walkers::{
    horizontal_limit_operator_apply, integral_operator_oracle, lifted_integral_operator_oracle, limit_operator_apply, loglog_slope,
    richardson_h2, rw_generator_apply,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn torus_distance_in_the_corner() {
    let t = Torus::unit(2).unwrap();
    assert!(close(t.distance(&[0.0, 0.0], &[0.5, 0.5]).unwrap(), 0.5f64.sqrt(), 1e-15));
    assert!(close(t.distance(&[0.05, 0.9], &[0.95, 0.1]).unwrap(), (0.01f64 + 0.04).sqrt(), 1e-15));
}

#[test]
fn cosine_potential_value_and_gradient() {
    let t = Torus::unit(1).unwrap();
    let u = Potential::cosine(&t, 0.5, &[1]).unwrap();
    assert!(u.value(&[0.25]).abs() < 1e-15);
    assert!(close(u.gradient(&[0.25])[0], -PI, 1e-15));
}

#[test]
fn transported_fibre_distance_example() {
    let b = CircleBundle::new(Torus::unit(1).unwrap(), TAU, vec![1.0]).unwrap();
    let d = b.transported_fibre_distance(&[0.0], 0.0, &[0.25], 0.0).unwrap();
    assert!(close(d, 0.25, 1e-15));
    assert_eq!(d, b.transported_fibre_distance(&[0.25], 0.0, &[0.0], 0.0).unwrap());
}

#[test]
fn kernel_constants() {
    let one = kernel_moments(&Kernel::INDICATOR, 1).unwrap();
    assert!(close(one.c0, 2.0, 1e-12) && close(one.c2, 2.0 / 3.0, 1e-12));
    let two = kernel_moments(&Kernel::INDICATOR, 2).unwrap();
    assert!(close(two.c0, PI, 1e-12) && close(two.c2, PI / 4.0, 1e-12));
    for m in 1..=3 {
        for k in [Kernel::INDICATOR, Kernel::EPANECHNIKOV, Kernel::BUMP] {
            let (m1, m3) = odd_moments(&k, m).unwrap();
            assert!(m1.abs() < 1e-12 && m3.abs() < 1e-12);
        }
    }
    let square = ProductKernel::Separable(Kernel::INDICATOR, Kernel::INDICATOR);
    let p = product_kernel_moments(&square, 1, 1).unwrap();
    assert!(close(p.c0, 4.0, 1e-12) && close(p.c2, 4.0 / 3.0, 1e-12));
    for s in [0.0, 0.3, 0.9] {
        assert!(mixed_first_moment(&square, s, 1).unwrap().abs() < 1e-12);
    }
}

#[test]
fn schedule_at_n_equal_e() {
    let s = BandwidthSchedule::default_rule(1.0);
    assert!(close(s.evaluate(std::f64::consts::E, 1), (-1.0f64 / 5.0).exp(), 1e-15));
}

#[test]
fn expected_density_bias_is_second_order() {
    let t = Torus::unit(1).unwrap();
    let u = Potential::cosine(&t, 0.5, &[1]).unwrap();
    let target = 2.0 * (-u.value(&[0.0])).exp();
    let hs: Vec<f64> = (0..5).map(|k| 0.2 / 2f64.powi(k)).collect();
    let errs: Vec<f64> = hs
        .iter()
        .map(|&h| (expected_density_oracle(&Kernel::INDICATOR, &u, &t, h, &[0.0]).unwrap() - target).abs())
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }
    assert!((loglog_slope(&hs, &errs) - 2.0).abs() < 0.1);
}

#[test]
fn extrapolated_density_limit_is_c0_times_gibbs_factor() {
    let t = Torus::unit(1).unwrap();
    let u = Potential::cosine(&t, 0.5, &[1]).unwrap();
    let (h1, h2) = (0.025, 0.0125);
    for k in [Kernel::INDICATOR, Kernel::EPANECHNIKOV] {
        let c0 = kernel_moments(&k, 1).unwrap().c0;
        for x in [0.0, 0.17, 0.5, 0.83] {
            let v1 = expected_density_oracle(&k, &u, &t, h1, &[x]).unwrap();
            let v2 = expected_density_oracle(&k, &u, &t, h2, &[x]).unwrap();
            let limit = richardson_h2(h1, v1, h2, v2);
            let target = c0 * (-u.value(&[x])).exp();
            assert!((limit - target).abs() < 1e-5 * target, "x {x}: {limit} vs {target}");
            assert!((limit - target).abs() < 0.05 * (v2 - target).abs());
        }
    }
}

#[test]
fn limit_operator_hand_values() {
    let t = Torus::unit(1).unwrap();
    let z = Potential::zero(&t);
    let phi = FourierFunction::parse("cos(1)", &[1.0], 1.0).unwrap();
    let mo = kernel_moments(&Kernel::INDICATOR, 1).unwrap();
    assert!(close(limit_operator_apply(&phi, &z, 0.5, &mo, &[0.0]), -4.0 * PI * PI / 6.0, 1e-12));

    let u = Potential::cosine(&t, 0.5, &[1]).unwrap();
    // alpha = 1/2: (C2 / (2 C0)) (phi'' - U' phi')
    for x in [0.1, 0.37] {
        let (s, c) = (TAU * x).sin_cos();
        let up = -PI * s;
        let expected = mo.c2 / (2.0 * mo.c0) * (-TAU * TAU * c - up * (-TAU * s));
        assert!(close(limit_operator_apply(&phi, &u, 0.5, &mo, &[x]), expected, 1e-12));
    }
}

#[test]
fn horizontal_symbol_and_base_reduction() {
    let mo = kernel_moments(&Kernel::INDICATOR, 1).unwrap();
    let t = Torus::unit(1).unwrap();
    let z = Potential::zero(&t);
    let u = Potential::cosine(&t, 0.5, &[1]).unwrap();
    let twisted = FourierFunction::parse("cos(1|1)", &[1.0], TAU).unwrap();
    let flat = FourierFunction::parse("cos(1)", &[1.0], TAU).unwrap();
    for a in [0.0, 1.0, 2.5] {
        for (x, th) in [(0.0, 0.0), (0.2, 1.3)] {
            let v = horizontal_limit_operator_apply(&twisted, &z, 0.5, &mo, &[a], &[x], th);
            let expected = mo.c2 / (2.0 * mo.c0) * -(TAU - a).powi(2) * twisted.value_bundle(&[x], th);
            assert!(close(v, expected, 1e-12), "a {a}");
            for alpha in [0.5, 1.0] {
                let lifted = horizontal_limit_operator_apply(&flat, &u, alpha, &mo, &[a], &[x], th);
                assert!(close(lifted, limit_operator_apply(&flat, &u, alpha, &mo, &[x]), 1e-14));
            }
        }
    }
}

#[test]
fn flat_integral_oracle_converges_to_half_c2_laplacian() {
    let t = Torus::unit(1).unwrap();
    let z = Potential::zero(&t);
    let phi = FourierFunction::parse("cos(1)", &[1.0], 1.0).unwrap();
    let x = [0.1];
    let target = (1.0 / 3.0) * -(TAU * TAU) * (TAU * 0.1).cos();
    let hs: Vec<f64> = (0..4).map(|k| 0.1 / 2f64.powi(k)).collect();
    let errs: Vec<f64> = hs
        .iter()
        .map(|&h| (integral_operator_oracle(&phi, &z, None, &Kernel::INDICATOR, &t, h, &x).unwrap() - target).abs())
        .collect();
    assert!((loglog_slope(&hs, &errs) - 2.0).abs() < 0.1, "{errs:?}");
}

#[test]
fn lifted_oracle_reduces_to_base_for_fibre_constant_functions() {
    let t = Torus::unit(1).unwrap();
    let u = Potential::cosine(&t, 0.5, &[1]).unwrap();
    let bundle = CircleBundle::new(t.clone(), TAU, vec![1.0]).unwrap();
    let phi = FourierFunction::parse("cos(1) + 0.3*sin(2)", &[1.0], TAU).unwrap();
    let kernel = ProductKernel::Separable(Kernel::INDICATOR, Kernel::EPANECHNIKOV);
    let marginal = kernel.fibre_marginal(1).unwrap();
    let (h, hf) = (0.08, 0.05);
    for alpha in [0.5, 1.0] {
        for (x, th) in [(0.0, 0.0), (0.3, 2.0)] {
            let lifted = lifted_integral_operator_oracle(&phi, &u, alpha, &kernel, &bundle, h, hf, &[x], th).unwrap();
            let base = integral_operator_oracle(&phi, &u, Some(alpha), &marginal, &t, h, &[x]).unwrap();
            assert!(close(lifted, base, 1e-7), "alpha {alpha}: {lifted} vs {base}");
        }
    }
}

#[test]
fn two_vertex_generators() {
    let (w, h) = (0.7, 0.1);
    let g = NeighbourhoodGraph::from_edges(2, &[(0, 1, w)], h, 2).unwrap();
    let out = rw_generator_apply(&g, &[0.0, 1.0], h.powi(-2)).unwrap();
    assert!(close(out[0], w / (h * h), 1e-14) && close(out[1], -w / (h * h), 1e-14));

    let eta = Configuration::from_occupancy(vec![true, false]);
    let v = sep_generator_apply(&g, |e: &Configuration| if e.is_occupied(0) { 1.0 } else { 0.0 }, &eta).unwrap();
    assert!(close(v, -w, 1e-15));
}
