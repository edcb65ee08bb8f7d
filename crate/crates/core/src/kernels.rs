//! Kernel profiles, their moments, and the density estimator `k̄`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Potential, Torus};
use crate::quadrature::{ball_integral, integrate, integrate_fallible, sphere_area, Tolerance};
use crate::sampling::PointCloud;

/// Shapes available in the kernel registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelShape {
    /// `1_{[0,1]}(r)`, including the endpoint.
    Indicator,
    /// `(1 - r^2)_+`.
    Epanechnikov,
    /// `exp(-1 / (1 - r^2))` on `[0, 1)`.
    Bump,
}

/// A radial kernel profile supported in `[0, 1]`, optionally scaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    shape: KernelShape,
    scale: f64,
}

impl Kernel {
    pub const INDICATOR: Kernel = Kernel {
        shape: KernelShape::Indicator,
        scale: 1.0,
    };
    pub const EPANECHNIKOV: Kernel = Kernel {
        shape: KernelShape::Epanechnikov,
        scale: 1.0,
    };
    pub const BUMP: Kernel = Kernel {
        shape: KernelShape::Bump,
        scale: 1.0,
    };

    pub fn new(shape: KernelShape) -> Self {
        Self { shape, scale: 1.0 }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "indicator" => Ok(Self::INDICATOR),
            "epanechnikov" => Ok(Self::EPANECHNIKOV),
            "bump" => Ok(Self::BUMP),
            other => Err(Error::UnknownName {
                kind: "kernel",
                name: other.to_string(),
            }),
        }
    }

    /// The same profile multiplied by `factor > 0`.
    pub fn scaled(self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(invalid("factor", "kernel scale must be positive"));
        }
        Ok(Self {
            shape: self.shape,
            scale: self.scale * factor,
        })
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn name(&self) -> &'static str {
        match self.shape {
            KernelShape::Indicator => "indicator",
            KernelShape::Epanechnikov => "epanechnikov",
            KernelShape::Bump => "bump",
        }
    }

    #[inline]
    pub fn profile(&self, r: f64) -> f64 {
        let v = match self.shape {
            KernelShape::Indicator => {
                if r <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            KernelShape::Epanechnikov => {
                if r <= 1.0 {
                    1.0 - r * r
                } else {
                    0.0
                }
            }
            KernelShape::Bump => {
                if r < 1.0 {
                    (-1.0 / (1.0 - r * r)).exp()
                } else {
                    0.0
                }
            }
        };
        self.scale * v
    }

    /// `||k||_inf`.
    pub fn sup_bound(&self) -> f64 {
        match self.shape {
            KernelShape::Bump => self.scale * (-1.0f64).exp(),
            _ => self.scale,
        }
    }
}

/// Kernel on pairs (base distance ratio, fibre distance ratio).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProductKernel {
    /// `k(r) k'(r')`.
    Separable(Kernel, Kernel),
    /// `k(sqrt(r^2 + r'^2))`.
    Radial(Kernel),
}

impl ProductKernel {
    #[inline]
    pub fn profile2(&self, r: f64, rf: f64) -> f64 {
        match self {
            ProductKernel::Separable(a, b) => {
                let ka = a.profile(r);
                if ka == 0.0 {
                    0.0
                } else {
                    ka * b.profile(rf)
                }
            }
            ProductKernel::Radial(k) => k.profile((r * r + rf * rf).sqrt()),
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            ProductKernel::Separable(a, b) => a.sup_bound() * b.sup_bound(),
            ProductKernel::Radial(k) => k.sup_bound(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            ProductKernel::Separable(a, b) => format!("{}x{}", a.name(), b.name()),
            ProductKernel::Radial(k) => format!("radial-{}", k.name()),
        }
    }

    /// Largest fibre ratio with possibly nonzero profile at base ratio `r`.
    /// Quadrature splits there so the inner integrand is smooth inside.
    pub(crate) fn fibre_extent(&self, r: f64) -> f64 {
        match self {
            ProductKernel::Separable(..) => 1.0,
            ProductKernel::Radial(_) => (1.0 - r * r).max(0.0).sqrt(),
        }
    }

    /// For a separable kernel, the base kernel whose profile is
    /// `k(r) * int_{B_{m'}} k'(|w|) dw`, i.e. the fibre marginal.
    pub fn fibre_marginal(&self, fibre_dim: usize) -> Result<Kernel> {
        match self {
            ProductKernel::Separable(a, b) => {
                let c = kernel_moments(b, fibre_dim)?.c0;
                a.scaled(c)
            }
            ProductKernel::Radial(_) => Err(invalid(
                "product kernel",
                "fibre marginal is only a registry kernel for separable products",
            )),
        }
    }
}

/// Zeroth and second moment constants of a kernel in dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelMoments {
    pub c0: f64,
    pub c2: f64,
    pub dim: usize,
}

/// Moments of a product kernel; `c2_fibre` is the second moment in the
/// fibre directions, which controls the vertical bias of lifted graphs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProductKernelMoments {
    pub c0: f64,
    pub c2: f64,
    pub c2_fibre: f64,
    pub base_dim: usize,
    pub fibre_dim: usize,
}

impl ProductKernelMoments {
    /// Base-direction constants in the single-kernel form used by the
    /// limit operators.
    pub fn horizontal(&self) -> KernelMoments {
        KernelMoments {
            c0: self.c0,
            c2: self.c2,
            dim: self.base_dim,
        }
    }
}

fn moment_tol() -> Tolerance {
    Tolerance::new(1e-14, 1e-13)
}

/// Moments of an arbitrary radial profile on `[0, 1]`.
pub fn moments_of_profile<F: Fn(f64) -> f64>(profile: F, m: usize) -> Result<KernelMoments> {
    if m == 0 {
        return Err(invalid("m", "dimension must be at least 1"));
    }
    let s = sphere_area(m);
    let tol = moment_tol();
    let i0 = integrate(|r| profile(r) * r.powi(m as i32 - 1), 0.0, 1.0, tol)?;
    let i2 = integrate(|r| profile(r) * r.powi(m as i32 + 1), 0.0, 1.0, tol)?;
    Ok(KernelMoments {
        c0: s * i0,
        c2: s / m as f64 * i2,
        dim: m,
    })
}

pub fn kernel_moments(k: &Kernel, m: usize) -> Result<KernelMoments> {
    moments_of_profile(|r| k.profile(r), m)
}

/// Largest absolute first and third moments of `k(|v|)` over `B_m`:
/// `max_i |int k v_i|` and `max_{ijl} |int k v_i v_j v_l|`.
pub fn odd_moments(k: &Kernel, m: usize) -> Result<(f64, f64)> {
    let tol = moment_tol();
    let mut first: f64 = 0.0;
    let mut third: f64 = 0.0;
    for i in 0..m {
        let v = ball_integral(m, |v| Ok(k.profile(norm(v)) * v[i]), tol)?;
        first = first.max(v.abs());
        for j in 0..m {
            for l in 0..m {
                let v = ball_integral(m, |v| Ok(k.profile(norm(v)) * v[i] * v[j] * v[l]), tol)?;
                third = third.max(v.abs());
            }
        }
    }
    Ok((first, third))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn product_kernel_moments(k: &ProductKernel, m: usize, mf: usize) -> Result<ProductKernelMoments> {
    if m == 0 || mf == 0 {
        return Err(invalid("m", "dimensions must be at least 1"));
    }
    let tol = moment_tol();
    let (sm, sf) = (sphere_area(m), sphere_area(mf));
    let double = |pb: i32, pf: i32| -> Result<f64> {
        integrate_fallible(
            |r| {
                let ext = k.fibre_extent(r);
                let inner = integrate(|q| k.profile2(r, q) * q.powi(pf), 0.0, ext, tol)?;
                Ok(inner * r.powi(pb))
            },
            0.0,
            1.0,
            tol,
        )
    };
    let (m_i, f_i) = (m as i32, mf as i32);
    Ok(ProductKernelMoments {
        c0: sm * sf * double(m_i - 1, f_i - 1)?,
        c2: sm / m as f64 * sf * double(m_i + 1, f_i - 1)?,
        c2_fibre: sm * sf / mf as f64 * double(m_i - 1, f_i + 1)?,
        base_dim: m,
        fibre_dim: mf,
    })
}

/// Mixed first moment `int_{B_{m'}} k̃(s, |w|) w_1 dw` at base ratio `s`.
pub fn mixed_first_moment(k: &ProductKernel, s: f64, mf: usize) -> Result<f64> {
    ball_integral(mf, |w| Ok(k.profile2(s, norm(w)) * w[0]), moment_tol())
}

/// `k̄(x) = (1/N) sum_j h^{-m} k(d(x, X^j)/h)`, by direct summation.
///
/// `N` is the cloud level (the intensity multiplier), not the realised
/// point count. When `x` is itself a cloud point the self term is included.
pub fn density_estimate(cloud: &PointCloud, k: &Kernel, h: f64, x: &[f64]) -> Result<f64> {
    if !(h > 0.0) {
        return Err(invalid("h", "bandwidth must be positive"));
    }
    let torus = cloud.torus();
    torus.check(x)?;
    let m = torus.dim() as i32;
    let mut acc = 0.0;
    for p in cloud.iter() {
        let d = torus.dist(x, p);
        if d <= h {
            acc += k.profile(d / h);
        }
    }
    Ok(acc * h.powi(-m) / cloud.level() as f64)
}

/// `E[k̄(x)] = int h^{-m} k(d(x,y)/h) e^{-U(y)} dVol(y)` by quadrature over
/// the ball of radius `h` around `x`.
pub fn expected_density_oracle(k: &Kernel, u: &Potential, torus: &Torus, h: f64, x: &[f64]) -> Result<f64> {
    torus.check(x)?;
    if !(h > 0.0 && h < 0.5 * torus.min_side()) {
        return Err(invalid("h", "bandwidth must lie in (0, min side / 2)"));
    }
    let m = torus.dim();
    let mut y = vec![0.0; m];
    ball_integral(
        m,
        |v| {
            for i in 0..m {
                y[i] = x[i] + h * v[i];
            }
            Ok(k.profile(norm(v)) * (-u.value(&y)).exp())
        },
        Tolerance::new(1e-13, 1e-12),
    )
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn registry_and_bounds() {
        for name in ["indicator", "epanechnikov", "bump"] {
            let k = Kernel::from_name(name).unwrap();
            assert_eq!(k.name(), name);
            for i in 0..=200 {
                let r = i as f64 / 100.0;
                let v = k.profile(r);
                assert!(v >= 0.0 && v <= k.sup_bound() + 1e-15);
                if r > 1.0 {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!(Kernel::from_name("gaussian").is_err());
        assert_eq!(Kernel::INDICATOR.profile(1.0), 1.0);
    }

    #[test]
    fn analytic_moments() {
        let c = kernel_moments(&Kernel::INDICATOR, 1).unwrap();
        assert_abs_diff_eq!(c.c0, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.c2, 2.0 / 3.0, epsilon = 1e-12);
        let c = kernel_moments(&Kernel::INDICATOR, 2).unwrap();
        assert_abs_diff_eq!(c.c0, PI, epsilon = 1e-12);
        assert_abs_diff_eq!(c.c2, PI / 4.0, epsilon = 1e-12);
        let c = kernel_moments(&Kernel::EPANECHNIKOV, 2).unwrap();
        assert_abs_diff_eq!(c.c0, PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.c2, PI / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn odd_moments_vanish() {
        for m in 1..=3 {
            let (a, b) = odd_moments(&Kernel::EPANECHNIKOV, m).unwrap();
            assert!(a < 1e-12 && b < 1e-12, "m={m}: {a} {b}");
        }
    }

    #[test]
    fn product_moments() {
        let k = ProductKernel::Separable(Kernel::INDICATOR, Kernel::INDICATOR);
        let c = product_kernel_moments(&k, 1, 1).unwrap();
        assert_abs_diff_eq!(c.c0, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.c2, 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.c2_fibre, 4.0 / 3.0, epsilon = 1e-12);
        // radial indicator on B_1 x B_1 is the unit disc: area pi, int r^2 = pi/4
        let c = product_kernel_moments(&ProductKernel::Radial(Kernel::INDICATOR), 1, 1).unwrap();
        assert_abs_diff_eq!(c.c0, PI, epsilon = 1e-9);
        assert_abs_diff_eq!(c.c2, PI / 4.0, epsilon = 1e-9);
        for s in [0.0, 0.3, 0.9] {
            assert!(mixed_first_moment(&k, s, 1).unwrap().abs() < 1e-14);
            assert!(mixed_first_moment(&k, s, 2).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn fibre_marginal_scales_by_fibre_mass() {
        let k = ProductKernel::Separable(Kernel::EPANECHNIKOV, Kernel::INDICATOR);
        let b = k.fibre_marginal(1).unwrap();
        assert_abs_diff_eq!(b.profile(0.5), 2.0 * 0.75);
    }

    #[test]
    fn flat_expected_density_is_c0() {
        let t = Torus::unit(2).unwrap();
        let u = Potential::zero(&t);
        for x in [[0.1, 0.2], [0.7, 0.95]] {
            let v = expected_density_oracle(&Kernel::EPANECHNIKOV, &u, &t, 0.2, &x).unwrap();
            assert_abs_diff_eq!(v, PI / 2.0, epsilon = 1e-11);
        }
        assert!(expected_density_oracle(&Kernel::EPANECHNIKOV, &u, &t, 0.6, &[0.0, 0.0]).is_err());
    }
}
