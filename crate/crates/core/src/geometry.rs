//! Flat tori, Gibbs potentials on them, and trivial circle bundles with a
//! constant connection.
//!
//! Points are plain `&[f64]` slices in `[0, L_i)` coordinates. Every routine
//! that measures a displacement uses the minimum-image convention axis by
//! axis, which on a rectangular flat torus is exactly the geodesic
//! displacement.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};

/// Flat torus `R^m / (L_1 Z x ... x L_m Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Torus {
    sides: Vec<f64>,
}

impl Torus {
    pub fn new(sides: Vec<f64>) -> Result<Self> {
        if sides.is_empty() {
            return Err(invalid("sides", "torus needs at least one axis"));
        }
        if let Some(s) = sides.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(invalid("sides", format!("side length {s} is not positive")));
        }
        Ok(Self { sides })
    }

    /// The unit torus of dimension `dim`.
    pub fn unit(dim: usize) -> Result<Self> {
        Self::new(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[f64] {
        &self.sides
    }

    pub fn volume(&self) -> f64 {
        self.sides.iter().product()
    }

    pub fn min_side(&self) -> f64 {
        self.sides.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && p.iter().zip(&self.sides).all(|(x, s)| *x >= 0.0 && x < s)
    }

    /// Reduce coordinates into the fundamental domain.
    pub fn wrap(&self, p: &mut [f64]) {
        for (x, s) in p.iter_mut().zip(&self.sides) {
            *x = wrap_periodic(*x, *s);
        }
    }

    /// Minimal displacement `to - from`, written into `out`.
    ///
    /// Each component lies in `[-L_i/2, L_i/2]`. The result is exactly
    /// antisymmetric in the two arguments.
    pub fn displacement_into(&self, from: &[f64], to: &[f64], out: &mut [f64]) {
        for i in 0..self.sides.len() {
            out[i] = min_image(to[i] - from[i], self.sides[i]);
        }
    }

    pub fn displacement(&self, from: &[f64], to: &[f64]) -> Result<Vec<f64>> {
        self.check(from)?;
        self.check(to)?;
        let mut out = vec![0.0; self.dim()];
        self.displacement_into(from, to, &mut out);
        Ok(out)
    }

    /// Geodesic distance; checks dimensions.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.dist(a, b))
    }

    /// Geodesic distance without dimension checks (hot loops).
    #[inline]
    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        self.dist_sq(a, b).sqrt()
    }

    #[inline]
    pub fn dist_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.sides.len() {
            let d = min_image(a[i] - b[i], self.sides[i]);
            acc += d * d;
        }
        acc
    }

    pub(crate) fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: p.len(),
            });
        }
        Ok(())
    }
}

/// Minimum-image representative of a coordinate difference.
///
/// `|min_image(d, L)|` is invariant under `d -> -d` bit for bit, since
/// `round` is symmetric about zero.
#[inline]
pub fn min_image(d: f64, side: f64) -> f64 {
    d - side * (d / side).round()
}

#[inline]
pub fn wrap_periodic(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    // rem_euclid can return `period` itself for tiny negative inputs
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Distance on a circle of the given circumference.
#[inline]
pub fn circle_dist(a: f64, b: f64, circumference: f64) -> f64 {
    min_image(a - b, circumference).abs()
}

#[derive(Debug, Clone, PartialEq)]
struct CosineMode {
    amplitude: f64,
    /// Physical wave vector `2 pi k_i / L_i`.
    omega: Vec<f64>,
    phase: f64,
}

/// A smooth periodic potential `U` given as a finite cosine series, with an
/// exact gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    name: String,
    dim: usize,
    modes: Vec<CosineMode>,
}

impl Potential {
    pub fn zero(torus: &Torus) -> Self {
        Self {
            name: "zero".into(),
            dim: torus.dim(),
            modes: Vec::new(),
        }
    }

    /// `U(x) = amplitude * cos(2 pi k.x / L)` with integer wave numbers `k`.
    pub fn cosine(torus: &Torus, amplitude: f64, wave: &[i32]) -> Result<Self> {
        let mut p = Self::zero(torus);
        p.name = "cosine".into();
        p.push_mode(torus, amplitude, wave, 0.0)?;
        Ok(p)
    }

    /// `U(x) = a cos(2 pi x_1/L_1) + (a/2) sin(4 pi x_m/L_m)`.
    pub fn two_mode(torus: &Torus, amplitude: f64) -> Result<Self> {
        let m = torus.dim();
        let mut first = vec![0; m];
        first[0] = 1;
        let mut second = vec![0; m];
        second[m - 1] = 2;
        let mut p = Self::zero(torus);
        p.name = "two-mode".into();
        p.push_mode(torus, amplitude, &first, 0.0)?;
        // sin(t) = cos(t - pi/2)
        p.push_mode(torus, 0.5 * amplitude, &second, -0.5 * PI)?;
        Ok(p)
    }

    /// Registry lookup: `zero`, `cosine` (first axis, k = 1) or `two-mode`.
    pub fn from_name(name: &str, torus: &Torus, amplitude: f64) -> Result<Self> {
        match name {
            "zero" => Ok(Self::zero(torus)),
            "cosine" => {
                let mut k = vec![0; torus.dim()];
                k[0] = 1;
                Self::cosine(torus, amplitude, &k)
            }
            "two-mode" => Self::two_mode(torus, amplitude),
            other => Err(Error::UnknownName {
                kind: "potential",
                name: other.to_string(),
            }),
        }
    }

    fn push_mode(&mut self, torus: &Torus, amplitude: f64, wave: &[i32], phase: f64) -> Result<()> {
        torus.check_wave(wave)?;
        if !amplitude.is_finite() {
            return Err(invalid("amplitude", "must be finite"));
        }
        let omega = wave
            .iter()
            .zip(torus.sides())
            .map(|(k, l)| 2.0 * PI * *k as f64 / l)
            .collect();
        self.modes.push(CosineMode {
            amplitude,
            omega,
            phase,
        });
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.modes.iter().all(|m| m.amplitude == 0.0)
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|m| m.amplitude * (dot(&m.omega, x) + m.phase).cos())
            .sum()
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for m in &self.modes {
            let s = -m.amplitude * (dot(&m.omega, x) + m.phase).sin();
            for (g, w) in out.iter_mut().zip(&m.omega) {
                *g += s * w;
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.gradient_into(x, &mut g);
        g
    }

    /// Upper bound on `|U|`.
    pub fn max_abs(&self) -> f64 {
        self.modes.iter().map(|m| m.amplitude.abs()).sum()
    }

    /// Upper bound on `exp(-U)`, used for thinning.
    pub fn sup_exp_neg(&self) -> f64 {
        self.max_abs().exp()
    }

    /// `mu(T) = int exp(-U) dVol` by the periodic trapezoid rule with
    /// `points` nodes per axis (spectrally accurate for trigonometric `U`).
    pub fn gibbs_mass(&self, torus: &Torus, points: usize) -> f64 {
        let m = torus.dim();
        let cell: f64 = torus.sides().iter().map(|l| l / points as f64).product();
        let total = points.pow(m as u32);
        let mut x = vec![0.0; m];
        let mut acc = 0.0;
        for idx in 0..total {
            let mut r = idx;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = (r % points) as f64 * torus.sides()[i] / points as f64;
                r /= points;
            }
            acc += (-self.value(&x)).exp();
        }
        acc * cell
    }
}

impl Torus {
    fn check_wave(&self, wave: &[i32]) -> Result<()> {
        if wave.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: wave.len(),
            });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trivial principal circle bundle `T^m x S^1` with the constant connection
/// form `d theta + sum_i A_i dx_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleBundle {
    base: Torus,
    circumference: f64,
    connection: Vec<f64>,
}

impl CircleBundle {
    pub fn new(base: Torus, circumference: f64, connection: Vec<f64>) -> Result<Self> {
        if !(circumference.is_finite() && circumference > 0.0) {
            return Err(invalid("circumference", "must be positive"));
        }
        if connection.len() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: connection.len(),
            });
        }
        Ok(Self {
            base,
            circumference,
            connection,
        })
    }

    pub fn base(&self) -> &Torus {
        &self.base
    }

    pub fn circumference(&self) -> f64 {
        self.circumference
    }

    pub fn connection(&self) -> &[f64] {
        &self.connection
    }

    pub fn volume(&self) -> f64 {
        self.base.volume() * self.circumference
    }

    /// Fibre distance between two angles on the same fibre.
    pub fn fibre_distance(&self, u: f64, q: f64) -> f64 {
        circle_dist(u, q, self.circumference)
    }

    /// Parallel transport of the angle `u` at `x` to the fibre over `y` along
    /// the minimal geodesic. Errors when that geodesic is not unique.
    pub fn transport(&self, x: &[f64], u: f64, y: &[f64]) -> Result<f64> {
        let shift = self.transport_shift(x, y)?;
        Ok(wrap_periodic(u - shift, self.circumference))
    }

    /// `A . delta(x, y)`: the angle lost by horizontal transport from `x` to `y`.
    pub fn transport_shift(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.base.check(x)?;
        self.base.check(y)?;
        let mut shift = 0.0;
        for (i, (a, l)) in self.connection.iter().zip(self.base.sides()).enumerate() {
            let d = min_image(y[i] - x[i], *l);
            if d.abs() == 0.5 * l {
                return Err(Error::AmbiguousGeodesic { axis: i });
            }
            shift += a * d;
        }
        Ok(shift)
    }

    /// Distance on the fibre over `y` between `q` and the transport of `u`.
    ///
    /// Symmetric in `(x, u) <-> (y, q)`: transporting back negates the shift.
    pub fn transported_fibre_distance(&self, x: &[f64], u: f64, y: &[f64], q: f64) -> Result<f64> {
        let shift = self.transport_shift(x, y)?;
        Ok(self.fibre_gap(u, q, shift))
    }

    /// Hot-loop variant without geodesic or dimension checks; `shift` from
    /// [`CircleBundle::transport_shift`].
    ///
    /// Evaluated as `(u - q) - shift`, so swapping the endpoints (which
    /// negates both differences) gives a bitwise identical distance.
    #[inline]
    pub fn fibre_gap(&self, u: f64, q: f64, shift: f64) -> f64 {
        min_image((u - q) - shift, self.circumference).abs()
    }

    /// Projection to the base.
    pub fn project<'a>(&self, x: &'a [f64], _theta: f64) -> &'a [f64] {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn distance_examples() {
        let t = Torus::unit(1).unwrap();
        assert_abs_diff_eq!(t.distance(&[0.1], &[0.9]).unwrap(), 0.2, epsilon = 1e-15);
        let t2 = Torus::unit(2).unwrap();
        assert_abs_diff_eq!(
            t2.distance(&[0.0, 0.0], &[0.5, 0.5]).unwrap(),
            0.5f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(t2.distance(&[0.0], &[0.0, 0.1]).is_err());
    }

    #[test]
    fn invalid_torus() {
        assert!(Torus::new(vec![]).is_err());
        assert!(Torus::new(vec![1.0, -2.0]).is_err());
    }

    #[test]
    fn potential_registry() {
        let t = Torus::unit(1).unwrap();
        let u = Potential::from_name("cosine", &t, 0.5).unwrap();
        assert_abs_diff_eq!(u.value(&[0.0]), 0.5);
        assert_abs_diff_eq!(u.value(&[0.5]), -0.5, epsilon = 1e-15);
        assert!(Potential::from_name("nope", &t, 1.0).is_err());
        assert!(Potential::from_name("zero", &t, 1.0).unwrap().is_zero());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let t = Torus::new(vec![1.0, 2.0]).unwrap();
        let u = Potential::two_mode(&t, 0.7).unwrap();
        let x = [0.31, 1.27];
        let g = u.gradient(&x);
        for i in 0..2 {
            let e = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[i] += e;
            xm[i] -= e;
            let fd = (u.value(&xp) - u.value(&xm)) / (2.0 * e);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn gibbs_mass_matches_bessel() {
        // int_0^1 exp(-b cos 2 pi x) dx = I_0(b); I_0(0.5) = 1.0634833707413236
        let t = Torus::unit(1).unwrap();
        let u = Potential::from_name("cosine", &t, 0.5).unwrap();
        assert_abs_diff_eq!(u.gibbs_mass(&t, 64), 1.063_483_370_741_323_6, epsilon = 1e-14);
    }

    #[test]
    fn bundle_fibre_distance_examples() {
        let b = CircleBundle::new(Torus::unit(1).unwrap(), 1.0, vec![0.0]).unwrap();
        assert_abs_diff_eq!(b.fibre_distance(0.1, 0.9), 0.2, epsilon = 1e-15);
        let b = CircleBundle::new(Torus::unit(1).unwrap(), 2.0 * PI, vec![1.0]).unwrap();
        let d = b.transported_fibre_distance(&[0.0], 0.0, &[0.1], 0.0).unwrap();
        assert_abs_diff_eq!(d, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn antipodal_transport_is_an_error() {
        let b = CircleBundle::new(Torus::unit(1).unwrap(), 1.0, vec![1.0]).unwrap();
        assert!(matches!(
            b.transport_shift(&[0.0], &[0.5]),
            Err(Error::AmbiguousGeodesic { axis: 0 })
        ));
    }
}
