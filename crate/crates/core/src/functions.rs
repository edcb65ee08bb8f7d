//! Trigonometric test functions and initial profiles.
//!
//! A [`FourierFunction`] is `c + sum_j a_j trig(2 pi k_j.x/L + 2 pi l_j theta/C)`
//! with `trig` either cosine or sine. Fibre-independent functions (`l = 0`)
//! double as functions on the base torus. All derivatives are exact.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::geometry::dot;

#[derive(Debug, Clone, PartialEq)]
struct Mode {
    amplitude: f64,
    sine: bool,
    wave: Vec<i32>,
    fibre_wave: i32,
    omega: Vec<f64>,
    fibre_omega: f64,
}

/// First and second horizontal derivatives of a function at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    /// `X_i f = d_i f - A_i d_theta f` (plain gradient when `A = 0`).
    pub grad: Vec<f64>,
    /// `sum_i X_i^2 f`.
    pub lap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierFunction {
    sides: Vec<f64>,
    circumference: f64,
    constant: f64,
    modes: Vec<Mode>,
    label: String,
}

impl FourierFunction {
    /// The constant function `c` on a torus with the given sides; the fibre
    /// circumference only matters once fibre modes are added.
    pub fn constant(sides: &[f64], circumference: f64, c: f64) -> Self {
        Self {
            sides: sides.to_vec(),
            circumference,
            constant: c,
            modes: Vec::new(),
            label: format!("{c}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn add_cos(self, amplitude: f64, wave: &[i32], fibre_wave: i32) -> Result<Self> {
        self.add(amplitude, false, wave, fibre_wave)
    }

    pub fn add_sin(self, amplitude: f64, wave: &[i32], fibre_wave: i32) -> Result<Self> {
        self.add(amplitude, true, wave, fibre_wave)
    }

    fn add(mut self, amplitude: f64, sine: bool, wave: &[i32], fibre_wave: i32) -> Result<Self> {
        if wave.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: wave.len(),
            });
        }
        let omega = wave
            .iter()
            .zip(&self.sides)
            .map(|(k, l)| 2.0 * PI * *k as f64 / l)
            .collect();
        let trig = if sine { "sin" } else { "cos" };
        let waves: Vec<String> = wave.iter().map(|k| k.to_string()).collect();
        let fibre = if fibre_wave != 0 {
            format!("|{fibre_wave}")
        } else {
            String::new()
        };
        self.label = format!("{} + {amplitude}*{trig}({}{fibre})", self.label, waves.join(","));
        self.modes.push(Mode {
            amplitude,
            sine,
            wave: wave.to_vec(),
            fibre_wave,
            omega,
            fibre_omega: 2.0 * PI * fibre_wave as f64 / self.circumference,
        });
        Ok(self)
    }

    /// Whether the function is constant along fibres.
    pub fn is_basic(&self) -> bool {
        self.modes.iter().all(|m| m.fibre_wave == 0)
    }

    /// `sup |f|` bound from the coefficients.
    pub fn abs_bound(&self) -> f64 {
        self.constant.abs() + self.modes.iter().map(|m| m.amplitude.abs()).sum::<f64>()
    }

    /// Largest integer wave number on any base axis (used to size spectral grids).
    pub fn max_wave(&self) -> i32 {
        self.modes
            .iter()
            .flat_map(|m| m.wave.iter().map(|k| k.abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn max_fibre_wave(&self) -> i32 {
        self.modes.iter().map(|m| m.fibre_wave.abs()).max().unwrap_or(0)
    }

    #[inline]
    fn phase(&self, m: &Mode, x: &[f64], theta: f64) -> f64 {
        dot(&m.omega, x) + m.fibre_omega * theta
    }

    /// Value on the base (fibre angle 0).
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_bundle(x, 0.0)
    }

    #[inline]
    pub fn value_bundle(&self, x: &[f64], theta: f64) -> f64 {
        let mut acc = self.constant;
        for m in &self.modes {
            let p = self.phase(m, x, theta);
            acc += m.amplitude * if m.sine { p.sin() } else { p.cos() };
        }
        acc
    }

    /// Value, horizontal gradient and horizontal Laplacian for the constant
    /// connection `a` (pass zeros, or an empty slice, for the base operators).
    pub fn jet(&self, x: &[f64], theta: f64, a: &[f64]) -> Jet {
        let dim = self.dim();
        let mut grad = vec![0.0; dim];
        let mut lap = 0.0;
        let mut value = self.constant;
        for m in &self.modes {
            let p = self.phase(m, x, theta);
            let (s, c) = p.sin_cos();
            let (f, df) = if m.sine { (s, c) } else { (c, -s) };
            value += m.amplitude * f;
            let mut sq = 0.0;
            for i in 0..dim {
                let ai = a.get(i).copied().unwrap_or(0.0);
                let w = m.omega[i] - ai * m.fibre_omega;
                grad[i] += m.amplitude * w * df;
                sq += w * w;
            }
            lap -= m.amplitude * sq * f;
        }
        Jet { value, grad, lap }
    }

    /// Spectral coefficients as `(wave, fibre_wave, cos_coef, sin_coef)`;
    /// the constant appears with a zero wave.
    pub fn terms(&self) -> Vec<(Vec<i32>, i32, f64, f64)> {
        let mut out = vec![(vec![0; self.dim()], 0, self.constant, 0.0)];
        for m in &self.modes {
            let (c, s) = if m.sine {
                (0.0, m.amplitude)
            } else {
                (m.amplitude, 0.0)
            };
            out.push((m.wave.clone(), m.fibre_wave, c, s));
        }
        out
    }

    /// Parse expressions such as `0.5 + 0.5*cos(1)`, `sin(1,2)`, `cos(1|1)`
    /// or `one`. Integer lists are base wave numbers; the value after `|`
    /// is the fibre wave number.
    pub fn parse(expr: &str, sides: &[f64], circumference: f64) -> Result<Self> {
        let mut f = Self::constant(sides, circumference, 0.0);
        let src: String = expr.chars().filter(|c| !c.is_whitespace()).collect();
        if src.is_empty() {
            return Err(Error::Parse("empty function expression".into()));
        }
        for (sign, term) in split_terms(&src)? {
            let (coef, atom) = match term.split_once('*') {
                Some((c, a)) => (parse_num(c)?, a),
                None => (1.0, term),
            };
            let coef = sign * coef;
            if atom == "one" {
                f.constant += coef;
            } else if let Some(args) = atom.strip_prefix("cos(").and_then(|r| r.strip_suffix(')')) {
                let (w, l) = parse_waves(args, sides.len())?;
                f = f.add_cos(coef, &w, l)?;
            } else if let Some(args) = atom.strip_prefix("sin(").and_then(|r| r.strip_suffix(')')) {
                let (w, l) = parse_waves(args, sides.len())?;
                f = f.add_sin(coef, &w, l)?;
            } else if term.contains('*') {
                return Err(Error::Parse(format!("unknown atom `{atom}`")));
            } else {
                f.constant += sign * parse_num(atom)?;
            }
        }
        Ok(f.with_label(expr.trim()))
    }
}

impl fmt::Display for FourierFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

fn split_terms(src: &str) -> Result<Vec<(f64, &str)>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0usize;
    let mut sign = 1.0;
    let bytes = src.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'(' => depth += 1,
            b')' => depth -= 1,
            b'+' | b'-' if depth == 0 => {
                // a sign right after an exponent marker belongs to the number
                let exp = i > 0 && matches!(bytes[i - 1], b'e' | b'E') && i > 1 && bytes[i - 2].is_ascii_digit();
                if exp {
                    continue;
                }
                if i > start {
                    out.push((sign, &src[start..i]));
                } else if i > 0 {
                    return Err(Error::Parse(format!("dangling operator in `{src}`")));
                }
                sign = if b == b'-' { -1.0 } else { 1.0 };
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(Error::Parse(format!("unbalanced parentheses in `{src}`")));
    }
    if start >= src.len() {
        return Err(Error::Parse(format!("trailing operator in `{src}`")));
    }
    out.push((sign, &src[start..]));
    Ok(out)
}

fn parse_num(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("expected a number, got `{s}`")))
}

fn parse_waves(args: &str, dim: usize) -> Result<(Vec<i32>, i32)> {
    let (base, fibre) = match args.split_once('|') {
        Some((b, l)) => (
            b,
            l.parse::<i32>()
                .map_err(|_| Error::Parse(format!("bad fibre wave `{l}`")))?,
        ),
        None => (args, 0),
    };
    let mut w: Vec<i32> = base
        .split(',')
        .map(|k| k.parse::<i32>().map_err(|_| Error::Parse(format!("bad wave number `{k}`"))))
        .collect::<Result<_>>()?;
    if w.len() == 1 && dim > 1 {
        w.resize(dim, 0);
    }
    if w.len() != dim {
        return Err(invalid("wave", format!("expected {dim} wave numbers, got {}", w.len())));
    }
    Ok((w, fibre))
}
