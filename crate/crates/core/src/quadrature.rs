//! Adaptive Gauss-Kronrod (7/15) quadrature and polar-coordinate integrals
//! over unit balls.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights attached to XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-13,
            rel: 1e-12,
            max_intervals: 2000,
        }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self {
            abs,
            rel,
            ..Self::default()
        }
    }
}

/// Number of nodes used by the composite fallback rule.
pub const FALLBACK_NODES: usize = 1_000_000;

fn kronrod<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let fc = f(c)?;
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let dx = hl * XGK[j];
        let s = f(c - dx)? + f(c + dx)?;
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    Ok((rk * hl, ((rk - rg) * hl).abs()))
}

/// Adaptive G7K15 integration of a fallible integrand on `[a, b]`.
///
/// When the interval budget runs out, a composite Simpson rule with
/// [`FALLBACK_NODES`] nodes is evaluated; its value is accepted only if it
/// agrees with the adaptive estimate to `sqrt(abs)`-level accuracy,
/// otherwise a [`Error::Quadrature`] is returned.
pub fn integrate_fallible<F>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = kronrod(&mut f, a, b)?;
    let mut pieces = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    loop {
        if !total.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
        }
        if err <= tol.abs.max(tol.rel * total.abs()) {
            return Ok(total);
        }
        if pieces.len() >= tol.max_intervals {
            break;
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, pv, pe) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod(&mut f, lo, mid)?;
        let (v2, e2) = kronrod(&mut f, mid, hi)?;
        total += v1 + v2 - pv;
        err += e1 + e2 - pe;
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
    // re-sum to shed accumulated cancellation before comparing
    let adaptive: f64 = pieces.iter().map(|p| p.2).sum();
    let fallback = simpson(&mut f, a, b, FALLBACK_NODES)?;
    let agree = 1e-6 * adaptive.abs().max(1.0);
    if (fallback - adaptive).abs() <= agree {
        Ok(fallback)
    } else {
        Err(Error::Quadrature(format!(
            "adaptive estimate {adaptive:e} and composite rule {fallback:e} disagree on [{a}, {b}]"
        )))
    }
}

/// Infallible-integrand convenience wrapper over [`integrate_fallible`].
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
    integrate_fallible(|x| Ok(f(x)), a, b, tol)
}

fn simpson<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64, nodes: usize) -> Result<f64> {
    let n = if nodes % 2 == 0 { nodes } else { nodes + 1 };
    let step = (b - a) / n as f64;
    let mut acc = f(a)? + f(b)?;
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * step)?;
    }
    Ok(acc * step / 3.0)
}

/// Surface area of the unit sphere `S^{d-1}` in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    // 2 pi^{d/2} / Gamma(d/2), via the recursion S_{d+1} = 2 pi S_{d-1} / (d-1)
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * sphere_area(d - 2) / (d as f64 - 2.0),
    }
}

/// Integral of `f(r * omega)` over the unit sphere `omega in S^{m-1}`,
/// for `m` in 1..=3. `point` is scratch space of length `m`.
pub fn sphere_integral<F>(m: usize, r: f64, f: &mut F, tol: Tolerance) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    match m {
        1 => Ok(f(&[r])? + f(&[-r])?),
        2 => integrate_fallible(|t| f(&[r * t.cos(), r * t.sin()]), 0.0, 2.0 * PI, tol),
        3 => integrate_fallible(
            |p| {
                let (sp, cp) = p.sin_cos();
                let inner = integrate_fallible(
                    |t| f(&[r * sp * t.cos(), r * sp * t.sin(), r * cp]),
                    0.0,
                    2.0 * PI,
                    tol,
                )?;
                Ok(sp * inner)
            },
            0.0,
            PI,
            tol,
        ),
        _ => Err(crate::error::invalid(
            "dimension",
            format!("ball quadrature supports m in 1..=3, got {m}"),
        )),
    }
}

/// `int_{B_m(0, 1)} f(v) dv` in polar coordinates, radius outermost.
///
/// Radial kernel profiles may be discontinuous at `r = 1` (the indicator);
/// that point is an endpoint of the radial integral so Kronrod nodes never
/// straddle the jump.
pub fn ball_integral<F>(m: usize, mut f: F, tol: Tolerance) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    integrate_fallible(
        |r| Ok(r.powi(m as i32 - 1) * sphere_integral(m, r, &mut f, tol)?),
        0.0,
        1.0,
        tol,
    )
}
