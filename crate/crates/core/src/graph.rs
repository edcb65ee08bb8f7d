//! Random neighbourhood graphs over point clouds.
//!
//! Two representations share one weight computation:
//!
//! * [`ImplicitGraph`] keeps the cloud, a cell list and one normalising
//!   factor per vertex, and enumerates neighbours on demand. Memory is
//!   `O(N)`, which is what makes `N = 32000` graphs with thousands of
//!   neighbours per vertex usable on a small machine.
//! * [`NeighbourhoodGraph`] is the materialised CSR form, used for small
//!   graphs, exact comparisons and CSV export.
//!
//! The lifted analogues over composite vertices `(i, a)` follow the same
//! split. Every weight is `scale * k(d/h) * (f_i * f_j)` with a symmetric
//! distance, hence bitwise symmetric.

use std::ops::ControlFlow;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{min_image, wrap_periodic, CircleBundle, Torus};
use crate::kernels::{Kernel, ProductKernel};
use crate::sampling::{LiftedCloud, PointCloud};

/// Edge weight normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum WeightScheme {
    /// `(1/N) h^{-m} k(d/h) e^{U(x)/2} e^{U(y)/2}`.
    GibbsSqrt,
    /// `(1/N) h^{-m} k(d/h) / (k̄(x) k̄(y))^alpha`.
    AlphaEstimator { alpha: f64 },
    /// Lifted Gibbs weights over composite vertices.
    Lifted,
    /// Lifted weights normalised by the lifted estimator.
    LiftedAlpha { alpha: f64 },
}

impl WeightScheme {
    pub fn name(&self) -> String {
        match self {
            WeightScheme::GibbsSqrt => "gibbs_sqrt".into(),
            WeightScheme::AlphaEstimator { alpha } => format!("alpha_estimator({alpha})"),
            WeightScheme::Lifted => "lifted".into(),
            WeightScheme::LiftedAlpha { alpha } => format!("lifted_alpha({alpha})"),
        }
    }

    /// Exponent of the weight normalisation that fixes the limit operator:
    /// `alpha` for estimator schemes, `1/2` for the Gibbs schemes.
    pub fn alpha(&self) -> f64 {
        match self {
            WeightScheme::GibbsSqrt | WeightScheme::Lifted => 0.5,
            WeightScheme::AlphaEstimator { alpha } | WeightScheme::LiftedAlpha { alpha } => *alpha,
        }
    }

    pub fn is_lifted(&self) -> bool {
        matches!(self, WeightScheme::Lifted | WeightScheme::LiftedAlpha { .. })
    }
}

/// Read access shared by the materialised and implicit graphs.
pub trait WeightedGraph: Sync {
    fn vertex_count(&self) -> usize;

    /// Visit `(neighbour, weight)` pairs of `v` until `f` breaks.
    fn try_for_each_neighbour<F>(&self, v: usize, f: F)
    where
        F: FnMut(usize, f64) -> ControlFlow<()>;

    /// Base bandwidth `h` (the generator is rescaled by `h^{-2}`).
    fn bandwidth(&self) -> f64;

    /// `N` for base graphs, `N N'` for lifted graphs: the divisor of
    /// empirical pairings.
    fn normalization(&self) -> f64;

    fn for_each_neighbour<F: FnMut(usize, f64)>(&self, v: usize, mut f: F) {
        self.try_for_each_neighbour(v, |j, w| {
            f(j, w);
            ControlFlow::Continue(())
        });
    }

    /// `sum_y W(v, y)`.
    fn weighted_degree(&self, v: usize) -> f64 {
        let mut acc = 0.0;
        self.for_each_neighbour(v, |_, w| acc += w);
        acc
    }
}

/// Uniform cell list on a torus with cell edge at least `radius`.
#[derive(Debug, Clone)]
pub struct CellIndex {
    sides: Vec<f64>,
    cells: Vec<usize>,
    starts: Vec<usize>,
    items: Vec<u32>,
    /// Distinct neighbouring cell offsets per axis, by cell coordinate.
    axis_neighbours: Vec<Vec<Vec<usize>>>,
}

impl CellIndex {
    pub fn new(torus: &Torus, coords: &[f64], radius: f64) -> Self {
        let m = torus.dim();
        let sides = torus.sides().to_vec();
        let cells: Vec<usize> = sides
            .iter()
            .map(|l| ((l / (radius * (1.0 + 1e-9))).floor() as usize).max(1))
            .collect();
        let total: usize = cells.iter().product();
        let n = coords.len() / m;
        let mut cell_of = Vec::with_capacity(n);
        let mut counts = vec![0usize; total + 1];
        for p in coords.chunks_exact(m) {
            let c = Self::linear_cell(&sides, &cells, p);
            cell_of.push(c);
            counts[c + 1] += 1;
        }
        for c in 0..total {
            counts[c + 1] += counts[c];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; n];
        for (i, c) in cell_of.into_iter().enumerate() {
            items[fill[c]] = i as u32;
            fill[c] += 1;
        }
        let axis_neighbours = cells
            .iter()
            .map(|&nc| {
                (0..nc)
                    .map(|c| {
                        if nc >= 3 {
                            vec![(c + nc - 1) % nc, c, (c + 1) % nc]
                        } else {
                            (0..nc).collect()
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            sides,
            cells,
            starts,
            items,
            axis_neighbours,
        }
    }

    fn axis_cell(side: f64, n: usize, x: f64) -> usize {
        let c = (wrap_periodic(x, side) / side * n as f64).floor() as usize;
        c.min(n - 1)
    }

    fn linear_cell(sides: &[f64], cells: &[usize], p: &[f64]) -> usize {
        let mut idx = 0;
        for i in (0..sides.len()).rev() {
            idx = idx * cells[i] + Self::axis_cell(sides[i], cells[i], p[i]);
        }
        idx
    }

    /// Candidate point indices near `p` (a superset of the radius ball).
    pub fn try_for_each_candidate<F: FnMut(usize) -> ControlFlow<()>>(&self, p: &[f64], mut f: F) -> ControlFlow<()> {
        let m = self.sides.len();
        let home: Vec<usize> = (0..m)
            .map(|i| Self::axis_cell(self.sides[i], self.cells[i], p[i]))
            .collect();
        let lists: Vec<&Vec<usize>> = (0..m).map(|i| &self.axis_neighbours[i][home[i]]).collect();
        let mut counter = vec![0usize; m];
        loop {
            let mut idx = 0;
            for i in (0..m).rev() {
                idx = idx * self.cells[i] + lists[i][counter[i]];
            }
            for &j in &self.items[self.starts[idx]..self.starts[idx + 1]] {
                f(j as usize)?;
            }
            // odometer over the neighbouring cells
            let mut axis = 0;
            loop {
                if axis == m {
                    return ControlFlow::Continue(());
                }
                counter[axis] += 1;
                if counter[axis] < lists[axis].len() {
                    break;
                }
                counter[axis] = 0;
                axis += 1;
            }
        }
    }
}

fn check_bandwidth(torus: &Torus, h: f64) -> Result<()> {
    if !(h > 0.0 && h < 0.5 * torus.min_side()) {
        return Err(invalid("h", format!("bandwidth {h} must lie in (0, min side / 2)")));
    }
    Ok(())
}

/// `k̄` at every cloud point via the cell list, in parallel.
pub fn density_estimates(cloud: &PointCloud, index: &CellIndex, kernel: &Kernel, h: f64) -> Vec<f64> {
    let torus = cloud.torus();
    let scale = h.powi(-(torus.dim() as i32)) / cloud.level() as f64;
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let p = cloud.point(i);
            let mut acc = 0.0;
            let _ = index.try_for_each_candidate(p, |j| {
                let d = torus.dist(p, cloud.point(j));
                if d <= h {
                    acc += kernel.profile(d / h);
                }
                ControlFlow::Continue(())
            });
            acc * scale
        })
        .collect()
}

/// Matrix-free neighbourhood graph over a base cloud.
#[derive(Debug, Clone)]
pub struct ImplicitGraph<'a> {
    cloud: &'a PointCloud,
    index: CellIndex,
    kernel: Kernel,
    scheme: WeightScheme,
    h: f64,
    scale: f64,
    factors: Vec<f64>,
}

impl<'a> ImplicitGraph<'a> {
    pub fn new(cloud: &'a PointCloud, kernel: Kernel, scheme: WeightScheme, h: f64) -> Result<Self> {
        let torus = cloud.torus();
        check_bandwidth(torus, h)?;
        let index = CellIndex::new(torus, cloud.coords(), h);
        let factors = match scheme {
            WeightScheme::GibbsSqrt => cloud
                .iter()
                .map(|p| (0.5 * cloud.potential().value(p)).exp())
                .collect(),
            WeightScheme::AlphaEstimator { alpha } => {
                let kbar = density_estimates(cloud, &index, &kernel, h);
                if let Some(v) = kbar.iter().position(|k| *k <= 0.0) {
                    return Err(Error::ZeroDensityEstimate { vertex: v });
                }
                kbar.iter().map(|k| k.powf(-alpha)).collect()
            }
            _ => return Err(invalid("scheme", "lifted schemes need a lifted cloud")),
        };
        Ok(Self {
            cloud,
            index,
            kernel,
            scheme,
            h,
            scale: h.powi(-(torus.dim() as i32)) / cloud.level() as f64,
            factors,
        })
    }

    pub fn cloud(&self) -> &PointCloud {
        self.cloud
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// Per-vertex normalising factors (`e^{U/2}` or `k̄^{-alpha}`).
    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn materialize(&self) -> NeighbourhoodGraph {
        let lists: Vec<Vec<(u32, f64)>> = (0..self.vertex_count())
            .into_par_iter()
            .map(|v| {
                let mut l = Vec::new();
                self.for_each_neighbour(v, |j, w| l.push((j as u32, w)));
                l.sort_by_key(|e| e.0);
                l
            })
            .collect();
        NeighbourhoodGraph::from_sorted_lists(
            lists,
            GraphHeader {
                vertex_count: self.vertex_count(),
                level: self.cloud.level(),
                fibre_level: None,
                h: self.h,
                h_fibre: None,
                scheme: self.scheme.name(),
                kernel: self.kernel.name().to_string(),
                seed: self.cloud.seed(),
            },
        )
    }
}

impl WeightedGraph for ImplicitGraph<'_> {
    fn vertex_count(&self) -> usize {
        self.cloud.len()
    }

    fn try_for_each_neighbour<F>(&self, v: usize, mut f: F)
    where
        F: FnMut(usize, f64) -> ControlFlow<()>,
    {
        let torus = self.cloud.torus();
        let p = self.cloud.point(v);
        let fv = self.factors[v];
        let _ = self.index.try_for_each_candidate(p, |j| {
            if j == v {
                return ControlFlow::Continue(());
            }
            let d = torus.dist(p, self.cloud.point(j));
            if d <= self.h {
                let w = self.scale * self.kernel.profile(d / self.h) * (fv * self.factors[j]);
                if w > 0.0 {
                    return f(j, w);
                }
            }
            ControlFlow::Continue(())
        });
    }

    fn bandwidth(&self) -> f64 {
        self.h
    }

    fn normalization(&self) -> f64 {
        self.cloud.level() as f64
    }
}

/// Metadata carried with a materialised graph and its CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphHeader {
    pub vertex_count: usize,
    pub level: u64,
    pub fibre_level: Option<u64>,
    pub h: f64,
    pub h_fibre: Option<f64>,
    pub scheme: String,
    pub kernel: String,
    pub seed: u64,
}

/// CSR weighted graph with neighbour lists sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighbourhoodGraph {
    header: GraphHeader,
    offsets: Vec<usize>,
    neighbours: Vec<u32>,
    weights: Vec<f64>,
}

impl NeighbourhoodGraph {
    fn from_sorted_lists(lists: Vec<Vec<(u32, f64)>>, header: GraphHeader) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let total: usize = lists.iter().map(|l| l.len()).sum();
        let mut neighbours = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for l in lists {
            for (j, w) in l {
                neighbours.push(j);
                weights.push(w);
            }
            offsets.push(neighbours.len());
        }
        Self {
            header,
            offsets,
            neighbours,
            weights,
        }
    }

    /// Arbitrary weighted graph from an undirected edge list (each edge once).
    pub fn from_edges(vertex_count: usize, edges: &[(usize, usize, f64)], h: f64, level: u64) -> Result<Self> {
        let mut lists = vec![Vec::new(); vertex_count];
        for &(i, j, w) in edges {
            if i == j || i >= vertex_count || j >= vertex_count {
                return Err(invalid("edges", format!("bad edge ({i}, {j})")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(invalid("edges", format!("bad weight {w}")));
            }
            lists[i].push((j as u32, w));
            lists[j].push((i as u32, w));
        }
        for l in &mut lists {
            l.sort_by_key(|e| e.0);
            if l.windows(2).any(|p| p[0].0 == p[1].0) {
                return Err(invalid("edges", "duplicate edge"));
            }
        }
        Ok(Self::from_sorted_lists(
            lists,
            GraphHeader {
                vertex_count,
                level,
                fibre_level: None,
                h,
                h_fibre: None,
                scheme: "explicit".into(),
                kernel: "explicit".into(),
                seed: 0,
            },
        ))
    }

    pub fn header(&self) -> &GraphHeader {
        &self.header
    }

    pub fn level(&self) -> u64 {
        self.header.level
    }

    pub fn edge_count(&self) -> usize {
        self.neighbours.len() / 2
    }

    pub fn neighbours(&self, v: usize) -> &[u32] {
        &self.neighbours[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn weights(&self, v: usize) -> &[f64] {
        &self.weights[self.offsets[v]..self.offsets[v + 1]]
    }

    /// `W(x, y)`, zero when not adjacent.
    pub fn weight(&self, x: usize, y: usize) -> f64 {
        let nb = self.neighbours(x);
        match nb.binary_search(&(y as u32)) {
            Ok(k) => self.weights(x)[k],
            Err(_) => 0.0,
        }
    }

    /// Undirected edges `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.header.vertex_count).flat_map(move |i| {
            self.neighbours(i)
                .iter()
                .zip(self.weights(i))
                .filter(move |(j, _)| (**j as usize) > i)
                .map(move |(j, w)| (i, *j as usize, *w))
        })
    }

    /// Edge list CSV (`i, j, weight`, `i < j`) plus a JSON header file.
    pub fn write_csv(&self, edges: &Path, header: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(edges)?;
        w.write_record(["i", "j", "weight"])?;
        for (i, j, wt) in self.edges() {
            w.write_record(&[i.to_string(), j.to_string(), wt.to_string()])?;
        }
        w.flush()?;
        std::fs::write(header, serde_json::to_string_pretty(&self.header)?)?;
        Ok(())
    }

    pub fn read_csv(edges: &Path, header: &Path) -> Result<Self> {
        let header: GraphHeader = serde_json::from_str(&std::fs::read_to_string(header)?)?;
        let mut lists = vec![Vec::new(); header.vertex_count];
        let mut r = csv::Reader::from_path(edges)?;
        for rec in r.records() {
            let rec = rec?;
            let parse_err = |what: &str| Error::Parse(format!("bad {what} in edge record {rec:?}"));
            let i: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("i"))?;
            let j: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("j"))?;
            let w: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("weight"))?;
            if i >= header.vertex_count || j >= header.vertex_count {
                return Err(parse_err("vertex"));
            }
            lists[i].push((j as u32, w));
            lists[j].push((i as u32, w));
        }
        for l in &mut lists {
            l.sort_by_key(|e| e.0);
        }
        Ok(Self::from_sorted_lists(lists, header))
    }
}

impl WeightedGraph for NeighbourhoodGraph {
    fn vertex_count(&self) -> usize {
        self.header.vertex_count
    }

    fn try_for_each_neighbour<F>(&self, v: usize, mut f: F)
    where
        F: FnMut(usize, f64) -> ControlFlow<()>,
    {
        for (j, w) in self.neighbours(v).iter().zip(self.weights(v)) {
            if f(*j as usize, *w).is_break() {
                return;
            }
        }
    }

    fn bandwidth(&self) -> f64 {
        self.header.h
    }

    fn normalization(&self) -> f64 {
        let np = self.header.fibre_level.unwrap_or(1);
        self.header.level as f64 * np as f64
    }
}

/// Materialised graph over a base cloud.
pub fn build_graph(cloud: &PointCloud, kernel: Kernel, scheme: WeightScheme, h: f64) -> Result<NeighbourhoodGraph> {
    Ok(ImplicitGraph::new(cloud, kernel, scheme, h)?.materialize())
}

/// Matrix-free lifted graph over composite vertices `(i, a)`.
#[derive(Debug, Clone)]
pub struct ImplicitLiftedGraph<'a> {
    lifted: &'a LiftedCloud,
    index: CellIndex,
    kernel: ProductKernel,
    scheme: WeightScheme,
    h: f64,
    h_fibre: f64,
    scale: f64,
    /// Fibre angles sorted per base point, with their composite indices.
    sorted_angles: Vec<f64>,
    sorted_vertex: Vec<u32>,
    base_of: Vec<u32>,
    factors: Vec<f64>,
}

impl<'a> ImplicitLiftedGraph<'a> {
    pub fn new(lifted: &'a LiftedCloud, kernel: ProductKernel, scheme: WeightScheme, h: f64, h_fibre: f64) -> Result<Self> {
        let base = lifted.base();
        let torus = base.torus();
        check_bandwidth(torus, h)?;
        let circ = lifted.bundle().circumference();
        if !(h_fibre > 0.0 && h_fibre < 0.5 * circ) {
            return Err(invalid("h'", "fibre bandwidth must lie in (0, circumference / 2)"));
        }
        let index = CellIndex::new(torus, base.coords(), h);
        let offsets = lifted.offsets();
        let mut sorted_angles = Vec::with_capacity(lifted.vertex_count());
        let mut sorted_vertex = Vec::with_capacity(lifted.vertex_count());
        let mut base_of = Vec::with_capacity(lifted.vertex_count());
        for i in 0..base.len() {
            let mut pairs: Vec<(f64, u32)> = lifted
                .fibre(i)
                .iter()
                .enumerate()
                .map(|(a, u)| (*u, (offsets[i] + a) as u32))
                .collect();
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
            for (u, v) in pairs {
                sorted_angles.push(u);
                sorted_vertex.push(v);
                base_of.push(i as u32);
            }
        }
        // base_of is indexed by composite vertex; sorting permuted only within fibres
        let m = torus.dim() as i32;
        let mut g = Self {
            lifted,
            index,
            kernel,
            scheme,
            h,
            h_fibre,
            scale: h.powi(-m) / h_fibre / (base.level() as f64 * lifted.fibre_level() as f64),
            sorted_angles,
            sorted_vertex,
            base_of,
            factors: Vec::new(),
        };
        g.factors = match scheme {
            WeightScheme::Lifted => (0..lifted.vertex_count())
                .map(|v| (0.5 * base.potential().value(base.point(g.base_of[v] as usize))).exp())
                .collect(),
            WeightScheme::LiftedAlpha { alpha } => {
                let kbar = g.lifted_density_estimates();
                if let Some(v) = kbar.iter().position(|k| *k <= 0.0) {
                    return Err(Error::ZeroDensityEstimate { vertex: v });
                }
                kbar.iter().map(|k| k.powf(-alpha)).collect()
            }
            _ => return Err(invalid("scheme", "base schemes need a base cloud")),
        };
        Ok(g)
    }

    pub fn lifted(&self) -> &LiftedCloud {
        self.lifted
    }

    pub fn fibre_bandwidth(&self) -> f64 {
        self.h_fibre
    }

    pub fn base_of(&self, v: usize) -> usize {
        self.base_of[v] as usize
    }

    /// Angle of a composite vertex.
    pub fn angle(&self, v: usize) -> f64 {
        self.lifted.angles()[v]
    }

    /// Visit every composite vertex within the double threshold of `v`,
    /// the self pair included, with its raw kernel value.
    fn scan<F>(&self, v: usize, mut f: F)
    where
        F: FnMut(usize, f64) -> ControlFlow<()>,
    {
        let base = self.lifted.base();
        let torus = base.torus();
        let bundle: &CircleBundle = self.lifted.bundle();
        let circ = bundle.circumference();
        let offsets = self.lifted.offsets();
        let i = self.base_of[v] as usize;
        let x = base.point(i);
        let u = self.lifted.angles()[v];
        let a = bundle.connection();
        let slack = self.h_fibre * (1.0 + 1e-9) + 1e-12;
        let _ = self.index.try_for_each_candidate(x, |j| {
            let y = base.point(j);
            let d = torus.dist(x, y);
            if d > self.h {
                return ControlFlow::Continue(());
            }
            let mut shift = 0.0;
            for k in 0..a.len() {
                shift += a[k] * min_image(y[k] - x[k], torus.sides()[k]);
            }
            let angles = &self.sorted_angles[offsets[j]..offsets[j + 1]];
            let verts = &self.sorted_vertex[offsets[j]..offsets[j + 1]];
            let centre = wrap_periodic(u - shift, circ);
            let mut visit = |lo: f64, hi: f64| -> ControlFlow<()> {
                let s = angles.partition_point(|q| *q < lo);
                let e = angles.partition_point(|q| *q <= hi);
                for k in s..e {
                    let gap = bundle.fibre_gap(u, angles[k], shift);
                    if gap <= self.h_fibre {
                        let kv = self.kernel.profile2(d / self.h, gap / self.h_fibre);
                        if kv > 0.0 {
                            f(verts[k] as usize, kv)?;
                        }
                    }
                }
                ControlFlow::Continue(())
            };
            let (lo, hi) = (centre - slack, centre + slack);
            if lo < 0.0 {
                visit(lo + circ, circ)?;
                visit(0.0, hi)
            } else if hi >= circ {
                visit(lo, circ)?;
                visit(0.0, hi - circ)
            } else {
                visit(lo, hi)
            }
        });
    }

    fn lifted_density_estimates(&self) -> Vec<f64> {
        let scale = self.scale;
        (0..self.lifted.vertex_count())
            .into_par_iter()
            .map(|v| {
                let mut acc = 0.0;
                self.scan(v, |_, kv| {
                    acc += kv;
                    ControlFlow::Continue(())
                });
                acc * scale
            })
            .collect()
    }

    pub fn materialize(&self) -> LiftedGraph {
        let lists: Vec<Vec<(u32, f64)>> = (0..self.vertex_count())
            .into_par_iter()
            .map(|v| {
                let mut l = Vec::new();
                self.for_each_neighbour(v, |j, w| l.push((j as u32, w)));
                l.sort_by_key(|e| e.0);
                l
            })
            .collect();
        let base = self.lifted.base();
        let graph = NeighbourhoodGraph::from_sorted_lists(
            lists,
            GraphHeader {
                vertex_count: self.vertex_count(),
                level: base.level(),
                fibre_level: Some(self.lifted.fibre_level()),
                h: self.h,
                h_fibre: Some(self.h_fibre),
                scheme: self.scheme.name(),
                kernel: self.kernel.name(),
                seed: base.seed(),
            },
        );
        LiftedGraph {
            graph,
            base_of: self.base_of.clone(),
        }
    }
}

impl WeightedGraph for ImplicitLiftedGraph<'_> {
    fn vertex_count(&self) -> usize {
        self.lifted.vertex_count()
    }

    fn try_for_each_neighbour<F>(&self, v: usize, mut f: F)
    where
        F: FnMut(usize, f64) -> ControlFlow<()>,
    {
        let fv = self.factors[v];
        self.scan(v, |w, kv| {
            if w == v {
                return ControlFlow::Continue(());
            }
            f(w, self.scale * kv * (fv * self.factors[w]))
        });
    }

    fn bandwidth(&self) -> f64 {
        self.h
    }

    fn normalization(&self) -> f64 {
        self.lifted.base().level() as f64 * self.lifted.fibre_level() as f64
    }
}

/// Materialised lifted graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedGraph {
    graph: NeighbourhoodGraph,
    base_of: Vec<u32>,
}

impl LiftedGraph {
    pub fn graph(&self) -> &NeighbourhoodGraph {
        &self.graph
    }

    pub fn base_of(&self, v: usize) -> usize {
        self.base_of[v] as usize
    }

    pub fn fibre_bandwidth(&self) -> f64 {
        self.graph.header.h_fibre.unwrap_or(0.0)
    }
}

impl WeightedGraph for LiftedGraph {
    fn vertex_count(&self) -> usize {
        self.graph.vertex_count()
    }

    fn try_for_each_neighbour<F>(&self, v: usize, f: F)
    where
        F: FnMut(usize, f64) -> ControlFlow<()>,
    {
        self.graph.try_for_each_neighbour(v, f)
    }

    fn bandwidth(&self) -> f64 {
        self.graph.bandwidth()
    }

    fn normalization(&self) -> f64 {
        self.graph.normalization()
    }
}

pub fn build_lifted_graph(
    lifted: &LiftedCloud,
    kernel: ProductKernel,
    scheme: WeightScheme,
    h: f64,
    h_fibre: f64,
) -> Result<LiftedGraph> {
    Ok(ImplicitLiftedGraph::new(lifted, kernel, scheme, h, h_fibre)?.materialize())
}

/// Axis-aligned box `[lo_i, hi_i)` in fundamental-domain coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// `#{vertices in window} / N`.
pub fn density_diagnostic(cloud: &PointCloud, window: &Window) -> Result<f64> {
    cloud.torus().check(&window.lo)?;
    cloud.torus().check(&window.hi)?;
    let count = cloud
        .iter()
        .filter(|p| p.iter().enumerate().all(|(i, x)| *x >= window.lo[i] && *x < window.hi[i]))
        .count();
    Ok(count as f64 / cloud.level() as f64)
}
