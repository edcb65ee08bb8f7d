use std::f64::consts::TAU;

use seplab::geometry::{CircleBundle, Potential, Torus};
use seplab::graph::{build_graph, build_lifted_graph, density_diagnostic, NeighbourhoodGraph, WeightScheme, WeightedGraph, Window};
use seplab::kernels::{density_estimate, Kernel, ProductKernel};
use seplab::sampling::{sample_fibres, sample_ppp, LiftedCloud, PointCloud};

/// O(N^2) reference: every pair, same weight expression as the cell-list graph.
fn brute_force(cloud: &PointCloud, kernel: Kernel, scheme: WeightScheme, h: f64) -> Vec<Vec<(usize, f64)>> {
    let t = cloud.torus();
    let n = cloud.len();
    let scale = h.powi(-(t.dim() as i32)) / cloud.level() as f64;
    let factors: Vec<f64> = match scheme {
        WeightScheme::GibbsSqrt => cloud.iter().map(|p| (0.5 * cloud.potential().value(p)).exp()).collect(),
        WeightScheme::AlphaEstimator { alpha } => cloud
            .iter()
            .map(|p| density_estimate(cloud, &kernel, h, p).unwrap().powf(-alpha))
            .collect(),
        _ => unreachable!(),
    };
    let mut lists = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = t.dist(cloud.point(i), cloud.point(j));
            if d <= h {
                let w = scale * kernel.profile(d / h) * (factors[i] * factors[j]);
                if w > 0.0 {
                    lists[i].push((j, w));
                }
            }
        }
    }
    lists
}

fn compare(cloud: &PointCloud, kernel: Kernel, scheme: WeightScheme, h: f64, rel: f64) {
    let g = build_graph(cloud, kernel, scheme, h).unwrap();
    let reference = brute_force(cloud, kernel, scheme, h);
    let mut edges = 0;
    for (v, expected) in reference.iter().enumerate() {
        let got: Vec<usize> = g.neighbours(v).iter().map(|&j| j as usize).collect();
        let want: Vec<usize> = expected.iter().map(|e| e.0).collect();
        assert_eq!(got, want, "neighbour set of {v}");
        for (w, (_, we)) in g.weights(v).iter().zip(expected) {
            if rel == 0.0 {
                assert_eq!(w, we);
            } else {
                assert!((w - we).abs() <= rel * we.abs());
            }
        }
        edges += expected.len();
    }
    assert_eq!(g.edge_count() * 2, edges);
}

#[test]
fn cell_list_graph_equals_brute_force_gibbs() {
    for (dim, level, h) in [(1, 1500, 0.03), (2, 1500, 0.06), (3, 800, 0.15)] {
        let t = Torus::unit(dim).unwrap();
        let u = Potential::from_name("cosine", &t, 0.5).unwrap();
        let cloud = sample_ppp(&t, &u, level, 3).unwrap();
        assert!(cloud.len() <= 2000);
        compare(&cloud, Kernel::INDICATOR, WeightScheme::GibbsSqrt, h, 0.0);
        compare(&cloud, Kernel::EPANECHNIKOV, WeightScheme::GibbsSqrt, h, 0.0);
    }
}

#[test]
fn cell_list_graph_equals_brute_force_estimator() {
    let t = Torus::new(vec![1.0, 0.7]).unwrap();
    let u = Potential::from_name("cosine", &t, 0.5).unwrap();
    let cloud = sample_ppp(&t, &u, 1200, 9).unwrap();
    for alpha in [0.0, 0.5, 1.0] {
        // k̄ is summed in a different order, so weights agree to rounding only
        compare(&cloud, Kernel::EPANECHNIKOV, WeightScheme::AlphaEstimator { alpha }, 0.08, 1e-12);
    }
}

#[test]
fn weights_are_symmetric_and_degrees_match() {
    let t = Torus::unit(2).unwrap();
    let u = Potential::from_name("cosine", &t, 0.5).unwrap();
    let cloud = sample_ppp(&t, &u, 2000, 4).unwrap();
    let g = build_graph(&cloud, Kernel::EPANECHNIKOV, WeightScheme::AlphaEstimator { alpha: 0.5 }, 0.07).unwrap();
    for (i, j, w) in g.edges() {
        assert_eq!(g.weight(j, i), w);
    }
    for v in 0..g.vertex_count() {
        let s: f64 = g.weights(v).iter().sum();
        assert!((g.weighted_degree(v) - s).abs() <= 1e-15 * s.max(1.0));
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let t = Torus::unit(1).unwrap();
    let u = Potential::from_name("cosine", &t, 0.5).unwrap();
    let cloud = sample_ppp(&t, &u, 500, 12).unwrap();
    let g = build_graph(&cloud, Kernel::INDICATOR, WeightScheme::AlphaEstimator { alpha: 1.0 }, 0.05).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (e, h) = (dir.path().join("edges.csv"), dir.path().join("graph.json"));
    g.write_csv(&e, &h).unwrap();
    let back = NeighbourhoodGraph::read_csv(&e, &h).unwrap();
    assert_eq!(back, g);
}

#[test]
fn lifted_single_edge_matches_hand_formula() {
    let t = Torus::unit(1).unwrap();
    let u = Potential::cosine(&t, 0.5, &[1]).unwrap();
    let bundle = CircleBundle::new(t.clone(), TAU, vec![1.0]).unwrap();
    let base = PointCloud::from_points(t, u.clone(), &[vec![0.1], vec![0.15]], 2).unwrap();
    let (h, hf) = (0.1, 0.2);
    // transport shift A*delta = 0.05, so the fibre gap is |(u - q) - shift| = 0.1
    let lifted = LiftedCloud::from_parts(base, bundle, 1, &[vec![0.0], vec![0.05]]).unwrap();
    let g = build_lifted_graph(&lifted, ProductKernel::Separable(Kernel::INDICATOR, Kernel::INDICATOR), WeightScheme::Lifted, h, hf)
        .unwrap();
    let expected = (0.5 * u.value(&[0.1])).exp() * (0.5 * u.value(&[0.15])).exp() / (h * hf * 2.0 * 1.0);
    assert_eq!(g.graph().edge_count(), 1);
    assert!((g.graph().weight(0, 1) - expected).abs() < 1e-12 * expected);

    let eps = ProductKernel::Separable(Kernel::EPANECHNIKOV, Kernel::EPANECHNIKOV);
    let g = build_lifted_graph(&lifted, eps, WeightScheme::Lifted, h, hf).unwrap();
    let k = (1.0 - 0.25) * (1.0 - 0.25);
    assert!((g.graph().weight(0, 1) - k * expected).abs() < 1e-12 * expected);
}

#[test]
fn lifted_graph_is_symmetric() {
    let t = Torus::unit(1).unwrap();
    let u = Potential::cosine(&t, 0.5, &[1]).unwrap();
    let bundle = CircleBundle::new(t.clone(), TAU, vec![1.0]).unwrap();
    let base = sample_ppp(&t, &u, 300, 5).unwrap();
    let lifted = sample_fibres(&base, &bundle, 10, 6).unwrap();
    for scheme in [WeightScheme::Lifted, WeightScheme::LiftedAlpha { alpha: 0.5 }] {
        let g = build_lifted_graph(&lifted, ProductKernel::Separable(Kernel::INDICATOR, Kernel::EPANECHNIKOV), scheme, 0.08, 0.3)
            .unwrap();
        assert!(g.graph().edge_count() > 0);
        for (i, j, w) in g.graph().edges() {
            assert!((g.graph().weight(j, i) - w).abs() <= 1e-15 * w);
        }
    }
}

#[test]
fn window_counts_track_intensity() {
    let t = Torus::unit(1).unwrap();
    let z = Potential::zero(&t);
    let n = 10_000u64;
    let reps = 20;
    let (mut full, mut half) = (0.0, 0.0);
    for s in 0..reps {
        let c = sample_ppp(&t, &z, n, 100 + s).unwrap();
        full += density_diagnostic(&c, &Window { lo: vec![0.0], hi: vec![1.0] }).unwrap();
        half += density_diagnostic(&c, &Window { lo: vec![0.25], hi: vec![0.75] }).unwrap();
    }
    let (full, half) = (full / reps as f64, half / reps as f64);
    // count/N has standard deviation sqrt(mu/N) per replica
    let sd = |mu: f64| (mu / n as f64 / reps as f64).sqrt();
    assert!((full - 1.0).abs() < 3.0 * sd(1.0), "{full}");
    assert!((half - 0.5).abs() < 3.0 * sd(0.5), "{half}");
}
