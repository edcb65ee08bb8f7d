//! Random-walk generators on neighbourhood graphs, their continuum limits,
//! consistency harnesses, quadrature oracles for the integral operators and
//! the density-estimator concentration experiment.

use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::functions::FourierFunction;
use crate::geometry::{CircleBundle, Potential, Torus};
use crate::graph::{CellIndex, WeightScheme, WeightedGraph};
use crate::kernels::{expected_density_oracle, Kernel, KernelMoments, ProductKernel};
use crate::quadrature::{ball_integral, integrate_fallible, Tolerance};
use crate::sampling::{sample_ppp, BandwidthSchedule, LiftedCloud, PointCloud};

/// `phi(X^i)` for every cloud point.
pub fn vertex_values(cloud: &PointCloud, phi: &FourierFunction) -> Vec<f64> {
    cloud.iter().map(|p| phi.value(p)).collect()
}

/// `phi(X^i, theta^a)` for every composite vertex, in composite order.
pub fn lifted_vertex_values(lifted: &LiftedCloud, phi: &FourierFunction) -> Vec<f64> {
    let base = lifted.base();
    (0..base.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let x = base.point(i);
            lifted.fibre(i).iter().map(move |u| phi.value_bundle(x, *u))
        })
        .collect()
}

/// `rescale * sum_y W(v, y) (phi(y) - phi(v))` at one vertex.
pub fn rw_generator_at<G: WeightedGraph>(graph: &G, values: &[f64], v: usize, rescale: f64) -> f64 {
    let pv = values[v];
    let mut acc = 0.0;
    graph.for_each_neighbour(v, |j, w| acc += w * (values[j] - pv));
    rescale * acc
}

/// The random-walk generator applied to vertex values, at every vertex.
pub fn rw_generator_apply<G: WeightedGraph>(graph: &G, values: &[f64], rescale: f64) -> Result<Vec<f64>> {
    if values.len() != graph.vertex_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.vertex_count(),
            got: values.len(),
        });
    }
    Ok((0..graph.vertex_count())
        .into_par_iter()
        .map(|v| rw_generator_at(graph, values, v, rescale))
        .collect())
}

/// `(C2 / (2 C0^{2 alpha})) e^{(2 alpha - 1) U} (Delta - 2(1 - alpha) grad U . grad) phi` at `x`.
pub fn limit_operator_apply(phi: &FourierFunction, u: &Potential, alpha: f64, moments: &KernelMoments, x: &[f64]) -> f64 {
    let jet = phi.jet(x, 0.0, &[]);
    weighted_laplacian(&jet, u, alpha, x) * moments.c2 / (2.0 * moments.c0.powf(2.0 * alpha))
}

/// Horizontal analogue on the bundle: `X_i = d_i - A_i d_theta` replaces `d_i`.
pub fn horizontal_limit_operator_apply(
    phi: &FourierFunction,
    u: &Potential,
    alpha: f64,
    moments: &KernelMoments,
    connection: &[f64],
    x: &[f64],
    theta: f64,
) -> f64 {
    let jet = phi.jet(x, theta, connection);
    weighted_laplacian(&jet, u, alpha, x) * moments.c2 / (2.0 * moments.c0.powf(2.0 * alpha))
}

fn weighted_laplacian(jet: &crate::functions::Jet, u: &Potential, alpha: f64, x: &[f64]) -> f64 {
    let g = u.gradient(x);
    let drift: f64 = g.iter().zip(&jet.grad).map(|(a, b)| a * b).sum();
    ((2.0 * alpha - 1.0) * u.value(x)).exp() * (jet.lap - 2.0 * (1.0 - alpha) * drift)
}

/// The continuum limit targeted by a weight scheme.
///
/// Estimator schemes give the `alpha` operator above. The Gibbs schemes carry
/// no `C0` normalisation, so their limit is `C0` times the `alpha = 1/2`
/// operator, that is `(C2/2)(Delta - grad U . grad)`.
pub fn scheme_limit(
    scheme: WeightScheme,
    phi: &FourierFunction,
    u: &Potential,
    moments: &KernelMoments,
    connection: &[f64],
    x: &[f64],
    theta: f64,
) -> f64 {
    let alpha = scheme.alpha();
    let v = horizontal_limit_operator_apply(phi, u, alpha, moments, connection, x, theta);
    match scheme {
        WeightScheme::GibbsSqrt | WeightScheme::Lifted => v * moments.c0,
        _ => v,
    }
}

/// Per-vertex consistency errors with summary statistics.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    #[serde(skip)]
    pub errors: Vec<f64>,
    pub sup_error: f64,
    pub median_error: f64,
    pub n: u64,
    pub n_fibre: Option<u64>,
    pub h: f64,
    pub h_fibre: Option<f64>,
    pub alpha: f64,
    pub scheme: String,
}

impl ConsistencyReport {
    pub fn from_errors(errors: Vec<f64>, scheme: WeightScheme, n: u64, h: f64) -> Self {
        let sup_error = errors.iter().cloned().fold(0.0, f64::max);
        let median_error = median(&errors);
        Self {
            errors,
            sup_error,
            median_error,
            n,
            n_fibre: None,
            h,
            h_fibre: None,
            alpha: scheme.alpha(),
            scheme: scheme.name(),
        }
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// `|h^{-2} L^RW phi - limit|` at every vertex of a base graph.
pub fn consistency_error<G: WeightedGraph>(
    graph: &G,
    cloud: &PointCloud,
    phi: &FourierFunction,
    scheme: WeightScheme,
    moments: &KernelMoments,
) -> Result<ConsistencyReport> {
    let values = vertex_values(cloud, phi);
    let h = graph.bandwidth();
    let gen = rw_generator_apply(graph, &values, h.powi(-2))?;
    let errors: Vec<f64> = gen
        .par_iter()
        .enumerate()
        .map(|(i, g)| (g - scheme_limit(scheme, phi, cloud.potential(), moments, &[], cloud.point(i), 0.0)).abs())
        .collect();
    Ok(ConsistencyReport::from_errors(errors, scheme, cloud.level(), h))
}

/// Consistency of a lifted graph at the given composite query vertices.
pub fn lifted_consistency_error<G: WeightedGraph>(
    graph: &G,
    lifted: &LiftedCloud,
    phi: &FourierFunction,
    scheme: WeightScheme,
    moments: &KernelMoments,
    h_fibre: f64,
    queries: &[usize],
) -> Result<ConsistencyReport> {
    let values = lifted_vertex_values(lifted, phi);
    let h = graph.bandwidth();
    let base = lifted.base();
    let a = lifted.bundle().connection();
    let errors: Vec<f64> = queries
        .par_iter()
        .map(|&v| {
            let i = lifted.base_of(v);
            let g = rw_generator_at(graph, &values, v, h.powi(-2));
            let lim = scheme_limit(scheme, phi, base.potential(), moments, a, base.point(i), lifted.angles()[v]);
            (g - lim).abs()
        })
        .collect();
    let mut r = ConsistencyReport::from_errors(errors, scheme, base.level(), h);
    r.n_fibre = Some(lifted.fibre_level());
    r.h_fibre = Some(h_fibre);
    Ok(r)
}

fn oracle_tol() -> Tolerance {
    Tolerance::new(1e-13, 1e-12)
}

/// Quadrature of the integral operators whose small-`h` limits are the
/// graph generators' targets.
///
/// With `alpha = None` this is the flat form
/// `h^{-2} int h^{-m} k(d/h) (phi(y) - phi(x)) dVol(y)`; with `Some(alpha)`
/// the measure is `e^{-U} dVol` and the integrand is divided by
/// `(E k̄(x) E k̄(y))^alpha`, with `E k̄` itself computed by quadrature.
pub fn integral_operator_oracle(
    phi: &FourierFunction,
    u: &Potential,
    alpha: Option<f64>,
    kernel: &Kernel,
    torus: &Torus,
    h: f64,
    x: &[f64],
) -> Result<f64> {
    torus.check(x)?;
    if !(h > 0.0 && h < 0.5 * torus.min_side()) {
        return Err(invalid("h", "bandwidth must lie in (0, min side / 2)"));
    }
    let m = torus.dim();
    let px = phi.value(x);
    let kx = match alpha {
        Some(a) => expected_density_oracle(kernel, u, torus, h, x)?.powf(-a),
        None => 1.0,
    };
    let mut y = vec![0.0; m];
    let v = ball_integral(
        m,
        |v| {
            let r = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            let kv = kernel.profile(r);
            if kv == 0.0 {
                return Ok(0.0);
            }
            for i in 0..m {
                y[i] = x[i] + h * v[i];
            }
            let diff = phi.value(&y) - px;
            Ok(match alpha {
                None => kv * diff,
                Some(a) => {
                    let ky = expected_density_oracle(kernel, u, torus, h, &y)?.powf(-a);
                    kv * diff * ky * (-u.value(&y)).exp()
                }
            })
        },
        oracle_tol(),
    )?;
    Ok(v * kx * h.powi(-2))
}

/// Lifted expected density
/// `int int h^{-m} h'^{-1} k̃(d/h, d_fibre(P u, q)/h') e^{-U(y)} dq dVol(y)`.
///
/// The fibre is a circle, so after transporting `u` the fibre integral
/// covers `[-1, 1]` in units of `h'`.
pub fn lifted_expected_density_oracle(
    kernel: &ProductKernel,
    u: &Potential,
    bundle: &CircleBundle,
    h: f64,
    h_fibre: f64,
    x: &[f64],
) -> Result<f64> {
    let torus = bundle.base();
    torus.check(x)?;
    check_lifted_bandwidths(bundle, h, h_fibre)?;
    let m = torus.dim();
    let mut y = vec![0.0; m];
    ball_integral(
        m,
        |v| {
            let s = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            let k1 = fibre_mass(kernel, s)?;
            if k1 == 0.0 {
                return Ok(0.0);
            }
            for i in 0..m {
                y[i] = x[i] + h * v[i];
            }
            Ok(k1 * (-u.value(&y)).exp())
        },
        oracle_tol(),
    )
}

fn check_lifted_bandwidths(bundle: &CircleBundle, h: f64, h_fibre: f64) -> Result<()> {
    if !(h > 0.0 && h < 0.5 * bundle.base().min_side()) {
        return Err(invalid("h", "bandwidth must lie in (0, min side / 2)"));
    }
    if !(h_fibre > 0.0 && h_fibre < 0.5 * bundle.circumference()) {
        return Err(invalid("h'", "fibre bandwidth must lie in (0, circumference / 2)"));
    }
    Ok(())
}

/// `int_{-1}^{1} k̃(s, |w|) dw`.
fn fibre_mass(kernel: &ProductKernel, s: f64) -> Result<f64> {
    let ext = kernel.fibre_extent(s);
    if ext <= 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * crate::quadrature::integrate(|w| kernel.profile2(s, w), 0.0, ext, oracle_tol())?)
}

/// Lifted integral operator with estimator denominators:
/// `h^{-2} int int h^{-m} h'^{-1} k̃ (phi(y, q) - phi(x, u)) / (E k̄(x,u) E k̄(y,q))^alpha e^{-U(y)} dq dVol(y)`.
#[allow(clippy::too_many_arguments)]
pub fn lifted_integral_operator_oracle(
    phi: &FourierFunction,
    u: &Potential,
    alpha: f64,
    kernel: &ProductKernel,
    bundle: &CircleBundle,
    h: f64,
    h_fibre: f64,
    x: &[f64],
    theta: f64,
) -> Result<f64> {
    let torus = bundle.base();
    torus.check(x)?;
    check_lifted_bandwidths(bundle, h, h_fibre)?;
    let m = torus.dim();
    let a = bundle.connection();
    let pxu = phi.value_bundle(x, theta);
    let kx = lifted_expected_density_oracle(kernel, u, bundle, h, h_fibre, x)?.powf(-alpha);
    let mut y = vec![0.0; m];
    let tol = oracle_tol();
    let total = ball_integral(
        m,
        |v| {
            let s = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            let ext = kernel.fibre_extent(s);
            if ext <= 0.0 {
                return Ok(0.0);
            }
            let mut shift = 0.0;
            for i in 0..m {
                y[i] = x[i] + h * v[i];
                shift += a[i] * h * v[i];
            }
            let ky = lifted_expected_density_oracle(kernel, u, bundle, h, h_fibre, &y)?.powf(-alpha);
            let weight = ky * (-u.value(&y)).exp();
            let centre = theta - shift;
            let inner = integrate_fallible(
                |w| {
                    let k = kernel.profile2(s, w);
                    let plus = phi.value_bundle(&y, centre + h_fibre * w);
                    let minus = phi.value_bundle(&y, centre - h_fibre * w);
                    Ok(k * (plus + minus - 2.0 * pxu))
                },
                0.0,
                ext,
                tol,
            )?;
            Ok(inner * weight)
        },
        tol,
    )?;
    Ok(total * kx * h.powi(-2))
}

/// Richardson extrapolation to `h = 0` assuming an `O(h^2)` leading error.
pub fn richardson_h2(h1: f64, v1: f64, h2: f64, v2: f64) -> f64 {
    v2 + (v2 - v1) * h2 * h2 / (h1 * h1 - h2 * h2)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Regular grid of query points, `per_axis` per axis, cell-centred.
pub fn query_grid(torus: &Torus, per_axis: usize) -> Vec<Vec<f64>> {
    let m = torus.dim();
    let total = per_axis.pow(m as u32);
    (0..total)
        .map(|idx| {
            let mut r = idx;
            (0..m)
                .map(|i| {
                    let c = r % per_axis;
                    r /= per_axis;
                    (c as f64 + 0.5) / per_axis as f64 * torus.sides()[i]
                })
                .collect()
        })
        .collect()
}

/// `k̄` at arbitrary query points.
pub fn density_estimates_at(cloud: &PointCloud, kernel: &Kernel, h: f64, queries: &[Vec<f64>]) -> Vec<f64> {
    let torus = cloud.torus();
    let index = CellIndex::new(torus, cloud.coords(), h);
    let scale = h.powi(-(torus.dim() as i32)) / cloud.level() as f64;
    queries
        .par_iter()
        .map(|x| {
            let mut acc = 0.0;
            let _ = index.try_for_each_candidate(x, |j| {
                let d = torus.dist(x, cloud.point(j));
                if d <= h {
                    acc += kernel.profile(d / h);
                }
                ControlFlow::Continue(())
            });
            acc * scale
        })
        .collect()
}

/// One row of a concentration decay table.
#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub n: u64,
    pub h: f64,
    pub delta: f64,
    pub freq: f64,
    /// `sup_x |k̄(x) - E k̄(x)|` per seed.
    #[serde(skip)]
    pub deviations: Vec<f64>,
}

/// Empirical frequency of `sup_x |k̄(x) - E k̄(x)| > delta` across seeds.
///
/// The sup runs over a regular query grid; `E k̄` comes from
/// [`expected_density_oracle`]. With `delta = None` the threshold is the
/// `delta_quantile` quantile of the smallest-`N` deviations.
#[allow(clippy::too_many_arguments)]
pub fn concentration_experiment(
    torus: &Torus,
    u: &Potential,
    kernel: &Kernel,
    schedule: &BandwidthSchedule,
    levels: &[u64],
    seeds: &[u64],
    grid_per_axis: usize,
    delta: Option<f64>,
    delta_quantile: f64,
) -> Result<Vec<DecayRow>> {
    if seeds.len() < 2 || levels.is_empty() {
        return Err(invalid("seeds", "need at least two seeds and one level"));
    }
    let grid = query_grid(torus, grid_per_axis);
    let top = *levels.iter().max().unwrap();
    let mut rows = Vec::new();
    let mut sups_per_level: Vec<(u64, f64, Vec<f64>)> = levels
        .iter()
        .map(|&n| -> Result<_> {
            let h = schedule.bandwidth(n, torus.dim())?.h;
            Ok((n, h, Vec::with_capacity(seeds.len())))
        })
        .collect::<Result<_>>()?;
    let expected: Vec<Vec<f64>> = sups_per_level
        .iter()
        .map(|(_, h, _)| {
            grid.par_iter()
                .map(|x| expected_density_oracle(kernel, u, torus, *h, x))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    for &seed in seeds {
        let full = sample_ppp(torus, u, top, seed)?;
        for (k, (n, h, sups)) in sups_per_level.iter_mut().enumerate() {
            let cloud = full.prefix(*n)?;
            let est = density_estimates_at(&cloud, kernel, *h, &grid);
            let sup = est
                .iter()
                .zip(&expected[k])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            sups.push(sup);
        }
    }
    let smallest = sups_per_level
        .iter()
        .min_by_key(|r| r.0)
        .map(|r| r.2.clone())
        .unwrap();
    let delta = delta.unwrap_or_else(|| quantile(&smallest, delta_quantile));
    for (n, h, sups) in sups_per_level {
        let freq = sups.iter().filter(|s| **s > delta).count() as f64 / sups.len() as f64;
        rows.push(DecayRow {
            n,
            h,
            delta,
            freq,
            deviations: sups,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NeighbourhoodGraph;
    use approx::assert_abs_diff_eq;

    #[test]
    fn generator_kills_constants() {
        let g = NeighbourhoodGraph::from_edges(3, &[(0, 1, 0.3), (1, 2, 1.7)], 0.1, 3).unwrap();
        let out = rw_generator_apply(&g, &[2.5, 2.5, 2.5], 100.0).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
        let out = rw_generator_apply(&g, &[1.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(out, vec![-0.3, 0.3, 0.0]);
    }

    #[test]
    fn alpha_one_has_no_drift() {
        let t = Torus::unit(1).unwrap();
        let u = Potential::from_name("cosine", &t, 0.5).unwrap();
        let phi = FourierFunction::parse("cos(1)", &[1.0], 1.0).unwrap();
        let mo = KernelMoments { c0: 2.0, c2: 2.0 / 3.0, dim: 1 };
        let x = [0.3];
        let v = limit_operator_apply(&phi, &u, 1.0, &mo, &x);
        let lap = -(2.0 * std::f64::consts::PI).powi(2) * phi.value(&x);
        assert_abs_diff_eq!(v, (2.0 / 3.0) / 8.0 * u.value(&x).exp() * lap, epsilon = 1e-12);
    }

    #[test]
    fn median_and_quantile() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_abs_diff_eq!(quantile(&[0.0, 1.0, 2.0, 3.0, 4.0], 0.8), 3.2);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [0.1, 0.05, 0.025];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        assert_abs_diff_eq!(loglog_slope(&xs, &ys), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(richardson_h2(0.1, 1.0 + 0.01, 0.05, 1.0 + 0.0025), 1.0, epsilon = 1e-14);
    }
}
