//! Symmetric exclusion process: exact generator on small graphs, duality
//! check, event-driven simulation and Dynkin-martingale diagnostics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::graph::{NeighbourhoodGraph, WeightedGraph};
use crate::sampling::{keyed_rng, Configuration};
use crate::walkers::rw_generator_apply;

const TAG_SEP: u64 = 0x7365_7073;

/// Default ceiling on simulated jump attempts.
pub const DEFAULT_EVENT_BUDGET: f64 = 2.0e9;

/// `eta^{x,y}`: occupations of `x` and `y` exchanged.
pub fn exchange(eta: &Configuration, x: usize, y: usize) -> Result<Configuration> {
    if x == y || x >= eta.len() || y >= eta.len() {
        return Err(Error::InvalidExchange { x, y });
    }
    let mut out = eta.clone();
    out.swap_sites(x, y);
    Ok(out)
}

/// `sum_{edges} W(x,y) (f(eta^{x,y}) - f(eta))`, each unordered edge once.
pub fn sep_generator_apply<F>(graph: &NeighbourhoodGraph, f: F, eta: &Configuration) -> Result<f64>
where
    F: Fn(&Configuration) -> f64,
{
    let n = graph.vertex_count();
    if n > 20 {
        return Err(invalid("graph", format!("explicit generator limited to 20 vertices, got {n}")));
    }
    if eta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: eta.len(),
        });
    }
    let base = f(eta);
    let mut acc = 0.0;
    for (x, y, w) in graph.edges() {
        acc += w * (f(&exchange(eta, x, y)?) - base);
    }
    Ok(acc)
}

/// Max over all `2^V` configurations of
/// `|L^SEP <phi, eta> - <L^RW phi, eta>|` (unnormalised pairings).
pub fn duality_check(graph: &NeighbourhoodGraph, phi: &[f64]) -> Result<f64> {
    let n = graph.vertex_count();
    if n > 12 {
        return Err(Error::TooManyVertices(n));
    }
    if phi.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: phi.len(),
        });
    }
    let lphi = rw_generator_apply(graph, phi, 1.0)?;
    let pairing = |values: &[f64], eta: &Configuration| -> f64 { eta.occupied_sites().map(|v| values[v]).sum() };
    let mut worst: f64 = 0.0;
    for mask in 0..(1u64 << n) {
        let eta = Configuration::from_mask(mask, n);
        let lhs = sep_generator_apply(graph, |e| pairing(phi, e), &eta)?;
        let rhs = pairing(&lphi, &eta);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Vertex values whose empirical pairing is recorded on the time grid.
#[derive(Debug, Clone)]
pub struct Observer {
    pub id: String,
    pub values: Vec<f64>,
}

/// Pairings `<phi, pi_t> = (1/N) sum_x eta_t(x) phi(x)` on a time grid.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub ids: Vec<String>,
    /// `pairings[k][t]` for observer `k`.
    pub pairings: Vec<Vec<f64>>,
    pub particle_counts: Vec<usize>,
    pub normalization: f64,
    pub events: u64,
    pub accepted: u64,
}

impl Trajectory {
    pub fn pairing(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|i| i == id).map(|k| self.pairings[k].as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    particle: u32,
}

impl Eq for Event {}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap and we want the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.particle.cmp(&self.particle))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Simulation controls.
#[derive(Debug, Clone)]
pub struct SimulationOptions {
    /// Time multiplier of the generator, `h^{-2}` for the diffusive scaling.
    pub rate_scale: f64,
    /// Increasing grid of observation times; the last one is `t_end`.
    pub time_grid: Vec<f64>,
    pub seed: u64,
    pub event_budget: f64,
}

/// Per-vertex total jump rates `sum_y W(x, y)`.
pub fn weighted_degrees<G: WeightedGraph>(graph: &G) -> Vec<f64> {
    (0..graph.vertex_count())
        .into_par_iter()
        .map(|v| graph.weighted_degree(v))
        .collect()
}

/// Kinetic Monte Carlo of the exclusion process with generator
/// `rate_scale * L^SEP`.
///
/// Each particle carries an exponential clock of rate
/// `rate_scale * D(x)` at its site `x`; at a ring it picks a neighbour `y`
/// with probability `W(x,y)/D(x)` and jumps if `y` is empty. Clock rates
/// depend only on the particle's own site, so no other clock needs
/// rescheduling after a jump.
pub fn simulate<G: WeightedGraph>(
    graph: &G,
    eta0: &Configuration,
    observers: &[Observer],
    options: &SimulationOptions,
) -> Result<Trajectory> {
    let degrees = weighted_degrees(graph);
    simulate_with_degrees(graph, &degrees, eta0, observers, options)
}

/// As [`simulate`], reusing precomputed weighted degrees across replicas.
pub fn simulate_with_degrees<G: WeightedGraph>(
    graph: &G,
    degrees: &[f64],
    eta0: &Configuration,
    observers: &[Observer],
    options: &SimulationOptions,
) -> Result<Trajectory> {
    let n = graph.vertex_count();
    if eta0.len() != n || degrees.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: eta0.len(),
        });
    }
    for o in observers {
        if o.values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: o.values.len(),
            });
        }
    }
    let grid = &options.time_grid;
    if grid.is_empty() || grid[0] < 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("time_grid", "must be nonempty, nonnegative and strictly increasing"));
    }
    let t_end = *grid.last().unwrap();
    if !(t_end > 0.0) {
        return Err(invalid("t_end", "must be positive"));
    }
    let scale = options.rate_scale;
    let total_rate: f64 = eta0.occupied_sites().map(|v| scale * degrees[v]).sum();
    let estimated = total_rate * t_end;
    if estimated > options.event_budget {
        return Err(Error::RateOverflow {
            estimated,
            budget: options.event_budget,
        });
    }

    let mut rng = keyed_rng(options.seed, TAG_SEP, 0, 0);
    let mut occ: Vec<bool> = eta0.occupancy().to_vec();
    let mut pos: Vec<usize> = eta0.occupied_sites().collect();
    let mut heap = BinaryHeap::with_capacity(pos.len());
    for (p, &x) in pos.iter().enumerate() {
        let r = scale * degrees[x];
        if r > 0.0 {
            let e: f64 = rng.sample(Exp1);
            heap.push(Event {
                time: e / r,
                particle: p as u32,
            });
        }
    }

    let norm = graph.normalization();
    let mut traj = Trajectory {
        times: Vec::with_capacity(grid.len()),
        ids: observers.iter().map(|o| o.id.clone()).collect(),
        pairings: vec![Vec::with_capacity(grid.len()); observers.len()],
        particle_counts: Vec::with_capacity(grid.len()),
        normalization: norm,
        events: 0,
        accepted: 0,
    };
    let mut next_grid = 0usize;
    loop {
        let next_time = heap.peek().map_or(f64::INFINITY, |e| e.time);
        while next_grid < grid.len() && grid[next_grid] <= next_time.min(t_end) {
            record(&mut traj, observers, grid[next_grid], &pos);
            next_grid += 1;
        }
        if next_time > t_end {
            break;
        }
        let ev = heap.pop().expect("peeked");
        traj.events += 1;
        let p = ev.particle as usize;
        let x = pos[p];
        let target = rng.random::<f64>() * degrees[x];
        let mut cum = 0.0;
        let mut chosen = None;
        let mut last_positive = None;
        graph.try_for_each_neighbour(x, |y, w| {
            cum += w;
            if w > 0.0 {
                last_positive = Some(y);
            }
            if cum > target {
                chosen = Some(y);
                std::ops::ControlFlow::Break(())
            } else {
                std::ops::ControlFlow::Continue(())
            }
        });
        // rounding can leave the scan just short of `target`
        if let Some(y) = chosen.or(last_positive) {
            if !occ[y] {
                occ[x] = false;
                occ[y] = true;
                pos[p] = y;
                traj.accepted += 1;
            }
        }
        let r = scale * degrees[pos[p]];
        if r > 0.0 {
            let e: f64 = rng.sample(Exp1);
            heap.push(Event {
                time: ev.time + e / r,
                particle: ev.particle,
            });
        }
    }
    Ok(traj)
}

fn record(traj: &mut Trajectory, observers: &[Observer], t: f64, pos: &[usize]) {
    traj.times.push(t);
    traj.particle_counts.push(pos.len());
    for (k, o) in observers.iter().enumerate() {
        let s: f64 = pos.iter().map(|&x| o.values[x]).sum();
        traj.pairings[k].push(s / traj.normalization);
    }
}

/// Observer pair for a Dynkin check: `phi` itself and `rate_scale * L^RW phi`
/// (id prefixed with `L:`).
pub fn dynkin_observers<G: WeightedGraph>(graph: &G, id: &str, phi: &[f64], rate_scale: f64) -> Result<Vec<Observer>> {
    let lphi = rw_generator_apply(graph, phi, rate_scale)?;
    Ok(vec![
        Observer {
            id: id.to_string(),
            values: phi.to_vec(),
        },
        Observer {
            id: format!("L:{id}"),
            values: lphi,
        },
    ])
}

/// `(1/N^2) sum_y |phi(y) (rate_scale L^RW phi)(y)|`.
pub fn qv_bound<G: WeightedGraph>(graph: &G, phi: &[f64], rate_scale: f64) -> Result<f64> {
    let lphi = rw_generator_apply(graph, phi, rate_scale)?;
    let n = graph.normalization();
    Ok(phi.iter().zip(&lphi).map(|(a, b)| (a * b).abs()).sum::<f64>() / (n * n))
}

/// Grid on `[0, t_end]` with step at most `0.1 / max_rate`, where
/// `max_rate = rate_scale * max_x D(x)`.
pub fn dynkin_time_grid(degrees: &[f64], rate_scale: f64, t_end: f64) -> Vec<f64> {
    let max_rate = rate_scale * degrees.iter().cloned().fold(0.0, f64::max);
    let step = if max_rate > 0.0 { 0.1 / max_rate } else { t_end };
    let steps = ((t_end / step).ceil() as usize).max(1);
    (0..=steps).map(|k| t_end * k as f64 / steps as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleDiagnostics {
    pub times: Vec<f64>,
    /// `M_t = <phi, pi_t> - <phi, pi_0> - int_0^t <L phi, pi_s> ds`.
    pub residual: Vec<f64>,
    pub qv_bound: f64,
}

/// Dynkin residual path from a trajectory carrying the observers produced
/// by [`dynkin_observers`]; the time integral uses the trapezoid rule.
pub fn dynkin_diagnostics(traj: &Trajectory, id: &str, qv_bound: f64) -> Result<MartingaleDiagnostics> {
    let missing = |what: String| invalid("trajectory", format!("no observer `{what}`"));
    let phi = traj.pairing(id).ok_or_else(|| missing(id.to_string()))?;
    let lid = format!("L:{id}");
    let lphi = traj.pairing(&lid).ok_or_else(|| missing(lid.clone()))?;
    let mut residual = Vec::with_capacity(phi.len());
    let mut integral = 0.0;
    for k in 0..phi.len() {
        if k > 0 {
            integral += 0.5 * (lphi[k] + lphi[k - 1]) * (traj.times[k] - traj.times[k - 1]);
        }
        residual.push(phi[k] - phi[0] - integral);
    }
    Ok(MartingaleDiagnostics {
        times: traj.times.clone(),
        residual,
        qv_bound,
    })
}

/// `(e^{t rate_scale L^RW} phi)(x0)` at each time, by symmetric
/// eigendecomposition of the generator matrix.
pub fn rw_semigroup_oracle(graph: &NeighbourhoodGraph, rate_scale: f64, phi: &[f64], x0: usize, times: &[f64]) -> Result<Vec<f64>> {
    let n = graph.vertex_count();
    if n > 2000 {
        return Err(invalid("graph", "dense eigendecomposition limited to 2000 vertices"));
    }
    if phi.len() != n || x0 >= n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: phi.len(),
        });
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        let mut d = 0.0;
        for (y, w) in graph.neighbours(x).iter().zip(graph.weights(x)) {
            l[(x, *y as usize)] = rate_scale * w;
            d += w;
        }
        l[(x, x)] = -rate_scale * d;
    }
    let eig = SymmetricEigen::new(l);
    let coef = eig.eigenvectors.transpose() * DVector::from_column_slice(phi);
    Ok(times
        .iter()
        .map(|t| {
            (0..n)
                .map(|k| (t * eig.eigenvalues[k]).exp() * eig.eigenvectors[(x0, k)] * coef[k])
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn edge() -> NeighbourhoodGraph {
        NeighbourhoodGraph::from_edges(2, &[(0, 1, 0.7)], 0.1, 2).unwrap()
    }

    #[test]
    fn exchange_cases() {
        let eta = Configuration::from_occupancy(vec![true, false, true]);
        let s = exchange(&eta, 0, 1).unwrap();
        assert_eq!(s.occupancy(), &[false, true, true]);
        assert_eq!(exchange(&eta, 0, 2).unwrap(), eta);
        assert_eq!(exchange(&s, 0, 1).unwrap(), eta);
        assert!(exchange(&eta, 1, 1).is_err());
    }

    #[test]
    fn generator_hand_values() {
        let g = edge();
        let eta = Configuration::from_occupancy(vec![true, false]);
        let v = sep_generator_apply(&g, |e| if e.is_occupied(0) { 1.0 } else { 0.0 }, &eta).unwrap();
        assert_abs_diff_eq!(v, -0.7);
        let prod = |e: &Configuration| (e.is_occupied(0) && e.is_occupied(1)) as u8 as f64;
        assert_eq!(sep_generator_apply(&g, prod, &eta).unwrap(), 0.0);
        assert_eq!(sep_generator_apply(&g, |_| 3.0, &eta).unwrap(), 0.0);
    }

    #[test]
    fn duality_on_a_triangle() {
        let g = NeighbourhoodGraph::from_edges(3, &[(0, 1, 0.2), (1, 2, 1.3), (0, 2, 0.05)], 0.1, 3).unwrap();
        assert!(duality_check(&g, &[0.3, -1.0, 2.0]).unwrap() < 1e-14);
    }

    #[test]
    fn full_configuration_is_frozen() {
        let g = NeighbourhoodGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)], 0.1, 3).unwrap();
        let eta = Configuration::from_occupancy(vec![true; 3]);
        let obs = [Observer {
            id: "phi".into(),
            values: vec![1.0, 2.0, 3.0],
        }];
        let opts = SimulationOptions {
            rate_scale: 10.0,
            time_grid: vec![0.0, 0.5, 1.0],
            seed: 1,
            event_budget: DEFAULT_EVENT_BUDGET,
        };
        let t = simulate(&g, &eta, &obs, &opts).unwrap();
        assert_eq!(t.accepted, 0);
        assert!(t.pairings[0].iter().all(|v| *v == 2.0));
    }

    #[test]
    fn event_budget_is_enforced() {
        let g = edge();
        let eta = Configuration::from_occupancy(vec![true, false]);
        let opts = SimulationOptions {
            rate_scale: 1e12,
            time_grid: vec![1.0],
            seed: 1,
            event_budget: 1e6,
        };
        assert!(matches!(simulate(&g, &eta, &[], &opts), Err(Error::RateOverflow { .. })));
    }

    #[test]
    fn two_state_semigroup() {
        // two sites, rate w: e^{tL} phi(0) = m + (phi0 - m) e^{-2wt}
        let g = edge();
        let v = rw_semigroup_oracle(&g, 1.0, &[1.0, 0.0], 0, &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v[1], 0.5 + 0.5 * (-1.4f64).exp(), epsilon = 1e-14);
    }
}
