//! Pseudo-spectral reference solvers on the periodic torus and on the
//! trivial circle bundle over it.
//!
//! Fields are stored as truncated Fourier coefficients `c_k` with
//! `f(x) = sum_k c_k exp(i kappa_k . x)`, `|k_i| <= K_i`. Products with the
//! potential are taken on a grid of at least `3K + 1` points per axis so
//! that quadratic aliasing never lands on a kept mode.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::functions::FourierFunction;
use crate::geometry::{CircleBundle, Potential, Torus};

pub const DEFAULT_MODES: usize = 64;
pub const DEFAULT_FIBRE_MODES: usize = 32;
/// Largest admissible `dt * lambda_max` for the explicit stepper.
pub const STABILITY_LIMIT: f64 = 0.5;

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

fn signed_index(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Collocation grid and mode bookkeeping. Cheap to clone.
#[derive(Clone)]
pub struct SpectralGrid {
    inner: Arc<GridInner>,
}

struct GridInner {
    sides: Vec<f64>,
    base_dim: usize,
    circumference: Option<f64>,
    connection: Vec<f64>,
    modes: Vec<usize>,
    points: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
    kept: Vec<bool>,
    // sum_i (kappa_i - A_i kappa_theta)^2 per flat index
    symbol: Vec<f64>,
    // kappa_i - A_i kappa_theta per base axis
    horizontal: Vec<Vec<f64>>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("sides", &self.inner.sides)
            .field("modes", &self.inner.modes)
            .field("points", &self.inner.points)
            .finish()
    }
}

impl SpectralGrid {
    /// Grid on a flat torus keeping `|k_i| <= modes` on every axis.
    pub fn torus(torus: &Torus, modes: usize) -> Result<Self> {
        Self::build(torus.sides().to_vec(), torus.dim(), None, Vec::new(), vec![modes; torus.dim()])
    }

    /// Grid on `T^m x S^1`; the last axis is the fibre with its own cutoff.
    pub fn bundle(bundle: &CircleBundle, modes: usize, fibre_modes: usize) -> Result<Self> {
        let base = bundle.base();
        let mut sides = base.sides().to_vec();
        sides.push(bundle.circumference());
        let mut cut = vec![modes; base.dim()];
        cut.push(fibre_modes);
        Self::build(
            sides,
            base.dim(),
            Some(bundle.circumference()),
            bundle.connection().to_vec(),
            cut,
        )
    }

    fn build(sides: Vec<f64>, base_dim: usize, circumference: Option<f64>, connection: Vec<f64>, modes: Vec<usize>) -> Result<Self> {
        if modes.contains(&0) {
            return Err(invalid("modes", "cutoff must be positive"));
        }
        let d = sides.len();
        if d > 4 {
            return Err(invalid("grid", format!("at most 4 axes supported, got {d}")));
        }
        let points: Vec<usize> = modes.iter().map(|&k| smooth_size(3 * k + 1)).collect();
        let mut strides = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * points[a + 1];
        }
        let len: usize = points.iter().product();
        let mut planner = FftPlanner::new();
        let fwd = points.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv = points.iter().map(|&n| planner.plan_fft_inverse(n)).collect();

        let tau = std::f64::consts::TAU;
        let mut kept = vec![true; len];
        let mut symbol = vec![0.0; len];
        let mut horizontal = vec![vec![0.0; len]; base_dim];
        for flat in 0..len {
            let mut kappa = [0.0f64; 4];
            for a in 0..d {
                let j = (flat / strides[a]) % points[a];
                let k = signed_index(j, points[a]);
                if k.unsigned_abs() as usize > modes[a] {
                    kept[flat] = false;
                }
                kappa[a] = tau * k as f64 / sides[a];
            }
            let kt = if circumference.is_some() { kappa[base_dim] } else { 0.0 };
            let mut s = 0.0;
            for i in 0..base_dim {
                let w = kappa[i] - connection.get(i).copied().unwrap_or(0.0) * kt;
                horizontal[i][flat] = w;
                s += w * w;
            }
            symbol[flat] = s;
        }
        Ok(Self {
            inner: Arc::new(GridInner {
                sides,
                base_dim,
                circumference,
                connection,
                modes,
                points,
                strides,
                len,
                kept,
                symbol,
                horizontal,
                fwd,
                inv,
            }),
        })
    }

    pub fn base_dim(&self) -> usize {
        self.inner.base_dim
    }

    pub fn has_fibre(&self) -> bool {
        self.inner.circumference.is_some()
    }

    pub fn connection(&self) -> &[f64] {
        &self.inner.connection
    }

    pub fn modes(&self) -> &[usize] {
        &self.inner.modes
    }

    pub fn points(&self) -> &[usize] {
        &self.inner.points
    }

    pub fn len(&self) -> usize {
        self.inner.len
    }

    pub fn is_empty(&self) -> bool {
        self.inner.len == 0
    }

    /// Base point and fibre angle (0 without a fibre) of grid node `flat`.
    pub fn node(&self, flat: usize) -> (Vec<f64>, f64) {
        let g = &self.inner;
        let coord = |a: usize| {
            let j = (flat / g.strides[a]) % g.points[a];
            g.sides[a] * j as f64 / g.points[a] as f64
        };
        let x = (0..g.base_dim).map(coord).collect();
        let theta = if self.has_fibre() { coord(g.base_dim) } else { 0.0 };
        (x, theta)
    }

    /// Largest horizontal symbol `sum_i (kappa_i - A_i kappa_theta)^2` over
    /// kept modes.
    pub fn max_symbol(&self) -> f64 {
        let g = &self.inner;
        g.symbol
            .iter()
            .zip(&g.kept)
            .filter(|(_, k)| **k)
            .map(|(s, _)| *s)
            .fold(0.0, f64::max)
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let g = &self.inner;
        let plans = if inverse { &g.inv } else { &g.fwd };
        let mut line = Vec::new();
        for (a, plan) in plans.iter().enumerate() {
            let n = g.points[a];
            let s = g.strides[a];
            if s == 1 {
                plan.process(buf);
                continue;
            }
            line.resize(n, Complex64::new(0.0, 0.0));
            let block = n * s;
            for start in (0..g.len).step_by(block) {
                for off in 0..s {
                    let base = start + off;
                    for j in 0..n {
                        line[j] = buf[base + j * s];
                    }
                    plan.process(&mut line);
                    for j in 0..n {
                        buf[base + j * s] = line[j];
                    }
                }
            }
        }
    }

    /// Samples to truncated, normalised coefficients.
    fn analyse(&self, samples: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.analyse_in_place(&mut buf);
        buf
    }

    fn analyse_in_place(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
        let scale = 1.0 / self.inner.len as f64;
        for (c, &k) in buf.iter_mut().zip(&self.inner.kept) {
            *c = if k { *c * scale } else { Complex64::new(0.0, 0.0) };
        }
    }

    fn synthesise(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.transform(&mut buf, true);
        buf.into_iter().map(|c| c.re).collect()
    }

    fn sample<F: FnMut(&[f64], f64) -> f64>(&self, mut f: F) -> Vec<f64> {
        (0..self.len())
            .map(|flat| {
                let (x, theta) = self.node(flat);
                f(&x, theta)
            })
            .collect()
    }

    fn check_function(&self, f: &FourierFunction) -> Result<()> {
        let g = &self.inner;
        if f.dim() != g.base_dim {
            return Err(Error::DimensionMismatch {
                expected: g.base_dim,
                got: f.dim(),
            });
        }
        let base_k = g.modes[..g.base_dim].iter().copied().min().unwrap_or(0);
        if f.max_wave() as usize > base_k {
            return Err(invalid("rho0", format!("wave number {} exceeds cutoff {base_k}", f.max_wave())));
        }
        let fibre_k = if self.has_fibre() { g.modes[g.base_dim] } else { 0 };
        if f.max_fibre_wave() as usize > fibre_k {
            return Err(invalid(
                "rho0",
                format!("fibre wave number {} exceeds cutoff {fibre_k}", f.max_fibre_wave()),
            ));
        }
        Ok(())
    }
}

/// A real field at one time, held as truncated Fourier coefficients.
#[derive(Debug, Clone)]
pub struct FieldState {
    grid: SpectralGrid,
    time: f64,
    coeffs: Vec<Complex64>,
}

impl FieldState {
    /// Band-limited initial data from a Fourier test function.
    pub fn from_function(grid: &SpectralGrid, f: &FourierFunction) -> Result<Self> {
        grid.check_function(f)?;
        Ok(Self::from_fn(grid, |x, theta| f.value_bundle(x, theta)))
    }

    /// Projects samples of `f` onto the kept modes.
    pub fn from_fn<F: FnMut(&[f64], f64) -> f64>(grid: &SpectralGrid, f: F) -> Self {
        let samples = grid.sample(f);
        Self {
            grid: grid.clone(),
            time: 0.0,
            coeffs: grid.analyse(&samples),
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    /// Coefficient of `exp(i kappa_k . x)` for signed wave numbers `k`
    /// (fibre last on a bundle grid); zero outside the cutoff.
    pub fn coefficient(&self, k: &[i64]) -> Complex64 {
        let g = &self.grid.inner;
        if k.len() != g.points.len() {
            return Complex64::new(0.0, 0.0);
        }
        let mut flat = 0;
        for (a, &ka) in k.iter().enumerate() {
            if ka.unsigned_abs() as usize > g.modes[a] {
                return Complex64::new(0.0, 0.0);
            }
            flat += ka.rem_euclid(g.points[a] as i64) as usize * g.strides[a];
        }
        self.coeffs[flat]
    }

    /// Physical samples on the grid nodes.
    pub fn samples(&self) -> Vec<f64> {
        self.grid.synthesise(&self.coeffs)
    }

    /// Evaluates the Fourier series at an arbitrary point.
    pub fn value_at(&self, x: &[f64], theta: f64) -> f64 {
        let g = &self.grid.inner;
        let tau = std::f64::consts::TAU;
        let mut acc = 0.0;
        for (flat, c) in self.coeffs.iter().enumerate() {
            if !g.kept[flat] || (c.re == 0.0 && c.im == 0.0) {
                continue;
            }
            let mut phase = 0.0;
            for a in 0..g.points.len() {
                let k = signed_index((flat / g.strides[a]) % g.points[a], g.points[a]) as f64;
                let coord = if a < g.base_dim { x[a] } else { theta };
                phase += tau * k * coord / g.sides[a];
            }
            let (s, co) = phase.sin_cos();
            acc += c.re * co - c.im * s;
        }
        acc
    }

    /// `(min, max)` of the grid samples.
    pub fn range(&self) -> (f64, f64) {
        self.samples()
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// Grid snapshot with header `x0,..,[theta,]value`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.grid.base_dim()).map(|i| format!("x{i}")).collect();
        if self.grid.has_fibre() {
            header.push("theta".into());
        }
        header.push("value".into());
        w.write_record(&header)?;
        for (flat, v) in self.samples().into_iter().enumerate() {
            let (x, theta) = self.grid.node(flat);
            let mut rec: Vec<String> = x.iter().map(|c| format!("{c:.17e}")).collect();
            if self.grid.has_fibre() {
                rec.push(format!("{theta:.17e}"));
            }
            rec.push(format!("{v:.17e}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reference measure for [`pde_pairing`].
#[derive(Debug, Clone, Copy)]
pub enum Measure<'a> {
    Volume,
    Gibbs(&'a Potential),
}

/// `int phi rho dnu` by the periodic trapezoid rule on the grid nodes,
/// with `dnu = e^{-U} dVol` or `dVol` (on a bundle grid `dVol = dx dtheta`).
pub fn pde_pairing(field: &FieldState, phi: &FourierFunction, measure: Measure<'_>) -> f64 {
    let grid = &field.grid;
    let samples = field.samples();
    let mut acc = 0.0;
    for (flat, rho) in samples.iter().enumerate() {
        let (x, theta) = grid.node(flat);
        let w = match measure {
            Measure::Volume => 1.0,
            Measure::Gibbs(u) => (-u.value(&x)).exp(),
        };
        acc += phi.value_bundle(&x, theta) * rho * w;
    }
    let g = &grid.inner;
    let volume: f64 = g.sides.iter().product();
    acc * volume / g.len as f64
}

/// `C e^{gamma U} (Delta_H - beta grad U . grad_H)` or, in divergence form,
/// `C div(grad rho + rho grad U)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffusionOperator {
    pub c: f64,
    pub beta: f64,
    pub gamma: f64,
    pub divergence_form: bool,
}

impl DiffusionOperator {
    /// The limit of the `alpha` family: drift `2(1-alpha)`, prefactor
    /// `e^{(2 alpha - 1) U}`. Reversible for `e^{-U} dVol` for every alpha.
    pub fn weighted(alpha: f64, c: f64) -> Self {
        Self {
            c,
            beta: 2.0 * (1.0 - alpha),
            gamma: 2.0 * alpha - 1.0,
            divergence_form: false,
        }
    }

    pub fn fokker_planck(c: f64) -> Self {
        Self {
            c,
            beta: 1.0,
            gamma: 0.0,
            divergence_form: true,
        }
    }
}

struct Rhs<'a> {
    grid: &'a SpectralGrid,
    op: DiffusionOperator,
    pre: Option<Vec<f64>>,
    grad_u: Vec<Vec<f64>>,
    lambda_max: f64,
}

impl<'a> Rhs<'a> {
    fn new(grid: &'a SpectralGrid, op: DiffusionOperator, u: &Potential) -> Result<Self> {
        if u.dim() != grid.base_dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.base_dim(),
                got: u.dim(),
            });
        }
        if op.divergence_form && grid.has_fibre() {
            return Err(invalid("operator", "divergence form is only implemented on the base torus"));
        }
        if !(op.c > 0.0) {
            return Err(invalid("C", "must be positive"));
        }
        let m = grid.base_dim();
        let zero = u.is_zero();
        let pre = if zero || op.gamma == 0.0 {
            None
        } else {
            Some(grid.sample(|x, _| (op.gamma * u.value(x)).exp()))
        };
        let grad_u = if zero {
            Vec::new()
        } else {
            let mut out = vec![vec![0.0; grid.len()]; m];
            let mut buf = vec![0.0; m];
            for flat in 0..grid.len() {
                let (x, _) = grid.node(flat);
                u.gradient_into(&x, &mut buf);
                for i in 0..m {
                    out[i][flat] = buf[i];
                }
            }
            out
        };
        let smax = grid.max_symbol();
        let pre_sup = pre.as_ref().map_or(1.0, |p| p.iter().cloned().fold(0.0, f64::max));
        let gsup = (0..grid.len())
            .map(|f| grad_u.iter().map(|g| g[f] * g[f]).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let lambda_max = op.c * pre_sup * (smax + op.beta.abs() * gsup * smax.sqrt() + if op.divergence_form { gsup * gsup } else { 0.0 });
        Ok(Self {
            grid,
            op,
            pre,
            grad_u,
            lambda_max,
        })
    }

    fn apply(&self, c: &[Complex64], out: &mut [Complex64]) {
        let g = &self.grid.inner;
        let i = Complex64::new(0.0, 1.0);
        let zero = Complex64::new(0.0, 0.0);
        if self.op.divergence_form {
            // C(-|kappa|^2 c + sum_i i kappa_i FFT(rho d_i U))
            for (o, (v, s)) in out.iter_mut().zip(c.iter().zip(&g.symbol)) {
                *o = -*v * *s;
            }
            if !self.grad_u.is_empty() {
                let rho = self.grid.synthesise(c);
                for (axis, du) in self.grad_u.iter().enumerate() {
                    let mut flux: Vec<Complex64> = rho.iter().zip(du).map(|(r, d)| Complex64::new(r * d, 0.0)).collect();
                    self.grid.analyse_in_place(&mut flux);
                    for ((o, f), k) in out.iter_mut().zip(&flux).zip(&g.horizontal[axis]) {
                        *o += i * *k * *f;
                    }
                }
            }
            for (o, &kept) in out.iter_mut().zip(&g.kept) {
                *o = if kept { *o * self.op.c } else { zero };
            }
            return;
        }
        let plain = self.pre.is_none() && (self.grad_u.is_empty() || self.op.beta == 0.0);
        if plain {
            for ((o, v), s) in out.iter_mut().zip(c).zip(&g.symbol) {
                *o = -*v * (*s * self.op.c);
            }
            return;
        }
        let lap: Vec<Complex64> = c.iter().zip(&g.symbol).map(|(v, s)| -*v * *s).collect();
        let mut phys = self.grid.synthesise(&lap);
        if self.op.beta != 0.0 {
            for (axis, du) in self.grad_u.iter().enumerate() {
                let d: Vec<Complex64> = c.iter().zip(&g.horizontal[axis]).map(|(v, k)| i * *k * *v).collect();
                let d = self.grid.synthesise(&d);
                for ((p, dv), u) in phys.iter_mut().zip(&d).zip(du) {
                    *p -= self.op.beta * u * dv;
                }
            }
        }
        if let Some(pre) = &self.pre {
            for (p, e) in phys.iter_mut().zip(pre) {
                *p *= e;
            }
        }
        let mut buf: Vec<Complex64> = phys.into_iter().map(|v| Complex64::new(v * self.op.c, 0.0)).collect();
        self.grid.analyse_in_place(&mut buf);
        out.copy_from_slice(&buf);
    }
}

/// Largest stable step for `op` on `grid`.
pub fn suggested_dt(grid: &SpectralGrid, op: DiffusionOperator, u: &Potential) -> Result<f64> {
    let rhs = Rhs::new(grid, op, u)?;
    Ok(STABILITY_LIMIT / rhs.lambda_max.max(f64::MIN_POSITIVE))
}

/// Classical RK4 for `d rho / dt = op rho`, reporting the state at every
/// time in `t_grid` (each `>= rho0.time()`, nondecreasing). Without `dt`
/// the step is the stability limit; a larger user step is refused.
pub fn solve(
    rho0: &FieldState,
    u: &Potential,
    op: DiffusionOperator,
    t_grid: &[f64],
    dt: Option<f64>,
) -> Result<Vec<FieldState>> {
    let grid = rho0.grid.clone();
    let rhs = Rhs::new(&grid, op, u)?;
    let suggested = STABILITY_LIMIT / rhs.lambda_max.max(f64::MIN_POSITIVE);
    let dt_max = match dt {
        Some(d) if !(d > 0.0) => return Err(invalid("dt", "must be positive")),
        Some(d) if d > suggested * (1.0 + 1e-12) => return Err(Error::UnstableTimeStep { dt: d, suggested }),
        Some(d) => d,
        None => suggested,
    };
    let mut t = rho0.time;
    if t_grid.iter().any(|s| !s.is_finite() || *s < t) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("t_grid", "times must be nondecreasing and not before the initial time"));
    }
    let n = grid.len();
    let mut c = rho0.coeffs.clone();
    let zero = Complex64::new(0.0, 0.0);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
    let mut tmp = vec![zero; n];
    let mut out = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        let span = target - t;
        if span > 0.0 {
            let steps = (span / dt_max).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for _ in 0..steps {
                rhs.apply(&c, &mut k1);
                for j in 0..n {
                    tmp[j] = c[j] + k1[j] * (0.5 * h);
                }
                rhs.apply(&tmp, &mut k2);
                for j in 0..n {
                    tmp[j] = c[j] + k2[j] * (0.5 * h);
                }
                rhs.apply(&tmp, &mut k3);
                for j in 0..n {
                    tmp[j] = c[j] + k3[j] * h;
                }
                rhs.apply(&tmp, &mut k4);
                for j in 0..n {
                    c[j] += (k1[j] + (k2[j] + k3[j]) * 2.0 + k4[j]) * (h / 6.0);
                }
            }
            t = target;
        }
        out.push(FieldState {
            grid: grid.clone(),
            time: target,
            coeffs: c.clone(),
        });
    }
    Ok(out)
}

/// `d rho/dt = C e^{(2a-1)U} (Delta - 2(1-a) grad U . grad) rho` on the base
/// torus.
pub fn solve_weighted_heat(
    rho0: &FieldState,
    u: &Potential,
    alpha: f64,
    c: f64,
    t_grid: &[f64],
    dt: Option<f64>,
) -> Result<Vec<FieldState>> {
    if rho0.grid.has_fibre() {
        return Err(invalid("grid", "use solve_horizontal_heat on a bundle grid"));
    }
    solve(rho0, u, DiffusionOperator::weighted(alpha, c), t_grid, dt)
}

/// `d rho/dt = C div(grad rho + rho grad U)`.
pub fn solve_fokker_planck(rho0: &FieldState, u: &Potential, c: f64, t_grid: &[f64], dt: Option<f64>) -> Result<Vec<FieldState>> {
    solve(rho0, u, DiffusionOperator::fokker_planck(c), t_grid, dt)
}

/// Horizontal analogue of [`solve_weighted_heat`] on `T^m x S^1`, with
/// `X_i = d_i - A_i d_theta` in place of `d_i` and `U` lifted from the base.
pub fn solve_horizontal_heat(
    rho0: &FieldState,
    u: &Potential,
    alpha: f64,
    c: f64,
    t_grid: &[f64],
    dt: Option<f64>,
) -> Result<Vec<FieldState>> {
    if !rho0.grid.has_fibre() {
        return Err(invalid("grid", "horizontal heat needs a bundle grid"));
    }
    solve(rho0, u, DiffusionOperator::weighted(alpha, c), t_grid, dt)
}

/// Pairing time series as CSV rows `time,phi,value`.
pub fn write_pairings_csv(path: impl AsRef<Path>, rows: &[(f64, String, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time", "phi", "value"])?;
    for (t, id, v) in rows {
        w.write_record([format!("{t:.17e}"), id.clone(), format!("{v:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line() -> Torus {
        Torus::unit(1).unwrap()
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(49), 50);
        assert_eq!(smooth_size(193), 200);
        assert_eq!(smooth_size(7), 8);
    }

    #[test]
    fn single_mode_decay() {
        let t = line();
        let grid = SpectralGrid::torus(&t, 8).unwrap();
        let f = FourierFunction::parse("0.5 + 0.5*cos(1)", t.sides(), 1.0).unwrap();
        let rho0 = FieldState::from_function(&grid, &f).unwrap();
        let c = 1.0 / 6.0;
        let out = solve_weighted_heat(&rho0, &Potential::zero(&t), 0.5, c, &[0.1], None).unwrap();
        let decay = (-4.0 * PI * PI * c * 0.1).exp();
        for x in [0.0, 0.13, 0.7] {
            let exact = 0.5 + 0.5 * decay * (2.0 * PI * x).cos();
            assert!((out[0].value_at(&[x], 0.0) - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn oversized_step_is_refused() {
        let t = line();
        let grid = SpectralGrid::torus(&t, 8).unwrap();
        let rho0 = FieldState::from_fn(&grid, |_, _| 1.0);
        let u = Potential::zero(&t);
        let err = solve_weighted_heat(&rho0, &u, 0.5, 1.0, &[1.0], Some(1.0)).unwrap_err();
        match err {
            Error::UnstableTimeStep { suggested, .. } => {
                assert!((suggested * (2.0 * PI * 8.0).powi(2) - 0.5).abs() < 1e-12)
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn coefficient_lookup() {
        let t = line();
        let grid = SpectralGrid::torus(&t, 4).unwrap();
        let f = FourierFunction::parse("1 + sin(2)", t.sides(), 1.0).unwrap();
        let s = FieldState::from_function(&grid, &f).unwrap();
        assert!((s.coefficient(&[0]).re - 1.0).abs() < 1e-14);
        // sin = (e^{i} - e^{-i}) / 2i
        assert!((s.coefficient(&[2]).im + 0.5).abs() < 1e-14);
        assert!((s.coefficient(&[-2]).im - 0.5).abs() < 1e-14);
        assert_eq!(s.coefficient(&[9]), Complex64::new(0.0, 0.0));
    }
}
