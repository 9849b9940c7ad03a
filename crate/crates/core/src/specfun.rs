//! Real-valued special functions used by the detection and rate closed forms.
//!
//! Gamma-family arithmetic is carried out in log space so that Pochhammer
//! products of large shape parameters (hundreds of samples per block) do not
//! overflow. The Tricomi function is evaluated from its `a > 0` integral
//! representation, which stays well defined when `b` is a non-positive
//! integer.

use std::f64::consts::PI;

use thiserror::Error;

use crate::quad::{self, QuadSettings};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_606_512_090_082_402_4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecialError {
    #[error("{function}: argument outside domain ({detail})")]
    Domain {
        function: &'static str,
        detail: String,
    },
    #[error("{function}: no convergence after {terms} terms (partial sum {partial})")]
    Convergence {
        function: &'static str,
        partial: f64,
        terms: usize,
    },
}

fn domain(function: &'static str, detail: impl Into<String>) -> SpecialError {
    SpecialError::Domain {
        function,
        detail: detail.into(),
    }
}

/// Truncation control for infinite sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesControl {
    pub rel_tol: f64,
    pub max_terms: usize,
}

impl SeriesControl {
    pub fn new(rel_tol: f64, max_terms: usize) -> Result<Self, SpecialError> {
        if !(rel_tol > 0.0) || !rel_tol.is_finite() {
            return Err(domain("SeriesControl", format!("rel_tol = {rel_tol}")));
        }
        if max_terms == 0 {
            return Err(domain("SeriesControl", "max_terms = 0"));
        }
        Ok(Self { rel_tol, max_terms })
    }
}

impl Default for SeriesControl {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_terms: 10_000,
        }
    }
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma_lanczos(x: f64) -> f64 {
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_gamma_stirling(x: f64) -> f64 {
    // Bernoulli terms B_{2n} / (2n (2n-1) x^{2n-1}).
    const C: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
    ];
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut p = inv;
    for c in C {
        series += c * p;
        p *= inv2;
    }
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + series
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64, SpecialError> {
    if !(x > 0.0) {
        return Err(domain("ln_gamma", format!("x = {x}")));
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x == 1.0 || x == 2.0 {
        0.0
    } else if x < 0.5 {
        // Reflection keeps the Lanczos sum away from its pole at zero.
        (PI / (PI * x).sin()).ln() - ln_gamma_lanczos(1.0 - x)
    } else if x < 10.0 {
        ln_gamma_lanczos(x)
    } else {
        ln_gamma_stirling(x)
    }
}

/// `ln (a)ₙ = ln Γ(a+n) − ln Γ(a)`.
pub fn log_pochhammer(a: f64, n: u64) -> Result<f64, SpecialError> {
    if !(a > 0.0) {
        return Err(domain("log_pochhammer", format!("a = {a}")));
    }
    if n == 0 {
        return Ok(0.0);
    }
    if n <= 64 {
        return Ok((0..n).map(|j| (a + j as f64).ln()).sum());
    }
    Ok(ln_gamma_unchecked(a + n as f64) - ln_gamma_unchecked(a))
}

const GAMMA_INC_MAX_ITER: usize = 100_000;

/// Regularized incomplete gamma pair `(P(s,x), Q(s,x))`.
///
/// Series for `x < s + 1`, modified Lentz continued fraction otherwise.
pub fn reg_gamma_pair(s: f64, x: f64) -> Result<(f64, f64), SpecialError> {
    if !(s > 0.0) || s.is_infinite() {
        return Err(domain("reg_gamma", format!("s = {s}")));
    }
    if !(x >= 0.0) {
        return Err(domain("reg_gamma", format!("x = {x}")));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    if x.is_infinite() {
        return Ok((1.0, 0.0));
    }
    let log_prefactor = s * x.ln() - x - ln_gamma_unchecked(s);
    if x < s + 1.0 {
        let mut ap = s;
        let mut term = 1.0 / s;
        let mut sum = term;
        for _ in 0..GAMMA_INC_MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                let p = (sum.ln() + log_prefactor).exp().min(1.0);
                return Ok((p, 1.0 - p));
            }
        }
        Err(SpecialError::Convergence {
            function: "reg_gamma (series)",
            partial: sum,
            terms: GAMMA_INC_MAX_ITER,
        })
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=GAMMA_INC_MAX_ITER {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                let q = (h.ln() + log_prefactor).exp().min(1.0);
                return Ok((1.0 - q, q));
            }
        }
        Err(SpecialError::Convergence {
            function: "reg_gamma (continued fraction)",
            partial: h,
            terms: GAMMA_INC_MAX_ITER,
        })
    }
}

/// Upper regularized incomplete gamma `Q(s, x)`.
pub fn reg_gamma_upper(s: f64, x: f64) -> Result<f64, SpecialError> {
    reg_gamma_pair(s, x).map(|(_, q)| q)
}

/// Lower regularized incomplete gamma `P(s, x)`.
pub fn reg_gamma_lower(s: f64, x: f64) -> Result<f64, SpecialError> {
    reg_gamma_pair(s, x).map(|(p, _)| p)
}

/// Running sum of signed terms given by their logarithms, kept relative to
/// the largest magnitude seen so that nothing overflows.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSum {
    scale: f64,
    sum: f64,
}

impl LogSum {
    pub(crate) fn new() -> Self {
        Self {
            scale: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    pub(crate) fn add(&mut self, log_mag: f64, sign: f64) {
        if log_mag == f64::NEG_INFINITY {
            return;
        }
        if log_mag > self.scale {
            self.sum *= (self.scale - log_mag).exp();
            self.scale = log_mag;
        }
        self.sum += sign * (log_mag - self.scale).exp();
    }

    /// `ln |sum|`, or `-inf` for an empty or zero sum.
    pub(crate) fn ln_abs(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.scale + self.sum.abs().ln()
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.sum == 0.0 {
            0.0
        } else {
            self.sum * self.scale.exp()
        }
    }
}

fn is_nonpositive_integer(v: f64) -> bool {
    v <= 0.0 && v.fract() == 0.0
}

/// Kummer's confluent hypergeometric function `₁F₁(a; b; z)` by its ascending
/// series, accumulated in log space.
pub fn kummer_1f1(a: f64, b: f64, z: f64, ctl: SeriesControl) -> Result<f64, SpecialError> {
    if is_nonpositive_integer(b) {
        return Err(domain(
            "kummer_1f1",
            format!("b = {b} is a non-positive integer"),
        ));
    }
    if !(a.is_finite() && b.is_finite() && z.is_finite()) {
        return Err(domain("kummer_1f1", "non-finite argument"));
    }
    if z == 0.0 || a == 0.0 {
        return Ok(1.0);
    }
    let mut acc = LogSum::new();
    let mut log_term = 0.0;
    let mut sign = 1.0;
    acc.add(0.0, 1.0);
    for n in 0..ctl.max_terms {
        let nf = n as f64;
        let an = a + nf;
        if an == 0.0 {
            // Terminating polynomial.
            return Ok(acc.value());
        }
        let bn = b + nf;
        let ratio = an / bn * z / (nf + 1.0);
        log_term += ratio.abs().ln();
        if ratio < 0.0 {
            sign = -sign;
        }
        acc.add(log_term, sign);
        let rel = (log_term - acc.ln_abs()).exp();
        let next_ratio = ((a + nf + 1.0) / (b + nf + 1.0) * z / (nf + 2.0)).abs();
        if next_ratio < 1.0 {
            let tail = rel * next_ratio / (1.0 - next_ratio);
            if tail <= ctl.rel_tol {
                return Ok(acc.value());
            }
        }
    }
    Err(SpecialError::Convergence {
        function: "kummer_1f1",
        partial: acc.value(),
        terms: ctl.max_terms,
    })
}

/// `ln U(a, b, z)` from the integral representation
/// `U = 1/Γ(a) ∫₀^∞ e^{-zt} t^{a-1} (1+t)^{b-a-1} dt`, valid for `a > 0`, `z > 0`.
///
/// `ctl.rel_tol` sets the quadrature relative tolerance (floored at 1e-14)
/// and `ctl.max_terms` bounds the number of subintervals.
pub fn ln_tricomi_u(a: f64, b: f64, z: f64, ctl: SeriesControl) -> Result<f64, SpecialError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(domain("tricomi_u", format!("a = {a}")));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(domain("tricomi_u", format!("z = {z}")));
    }
    if !b.is_finite() {
        return Err(domain("tricomi_u", format!("b = {b}")));
    }
    // In u = z t the integrand is e^{-u} u^{a-1} (1 + u/z)^{c}, c = b - a - 1.
    let c = b - a - 1.0;
    let log_f = |u: f64| -> f64 { -u + (a - 1.0) * u.ln() + c * (u / z).ln_1p() };

    // Mode of the integrand: root of u² + (z - b + 2) u - (a - 1) z = 0.
    let lin = z - b + 2.0;
    let disc = lin * lin + 4.0 * (a - 1.0) * z;
    let mode = if disc > 0.0 {
        let r = 0.5 * (-lin + disc.sqrt());
        if r > 0.0 {
            r
        } else {
            0.0
        }
    } else {
        0.0
    };
    let curvature = if mode > 0.0 {
        (a - 1.0) / (mode * mode) + c / ((z + mode) * (z + mode))
    } else {
        0.0
    };
    let width = if curvature > 0.0 {
        1.0 / curvature.sqrt()
    } else {
        1.0 + a.abs().sqrt()
    };

    let settings = QuadSettings {
        abs_tol: 0.0,
        rel_tol: ctl.rel_tol.max(1e-14),
        max_subdivisions: ctl.max_terms.max(16),
    };
    let failure = |partial: f64, terms: usize| SpecialError::Convergence {
        function: "tricomi_u",
        partial,
        terms,
    };

    let (log_scale, integral) = if a < 1.0 {
        // u = v^{1/a} absorbs the u^{a-1} singularity: du u^{a-1} = dv / a.
        let inv_a = 1.0 / a;
        let g = |v: f64| -> f64 {
            let u = v.powf(inv_a);
            -u + c * (u / z).ln_1p()
        };
        let v_peak = mode.max(1e-300).powf(a);
        let scale = if mode > 0.0 { g(v_peak) } else { g(0.0) };
        let split = (mode + 40.0 * width + 40.0).powf(a);
        let left = quad::integrate(|v| (g(v) - scale).exp(), 0.0, split, settings)
            .map_err(|e| failure(e.partial, e.subdivisions))?;
        let right = quad::integrate_to_infinity(|v| (g(v) - scale).exp(), split, settings)
            .map_err(|e| failure(e.partial, e.subdivisions))?;
        (scale - a.ln(), left.value + right.value)
    } else {
        // a > 1 always has an interior mode; a == 1 without one peaks at u = 0.
        let scale = if mode > 0.0 { log_f(mode) } else { 0.0 };
        let f = |u: f64| -> f64 {
            if u <= 0.0 {
                if a == 1.0 {
                    (-scale).exp()
                } else {
                    0.0
                }
            } else {
                (log_f(u) - scale).exp()
            }
        };
        let lo = (mode - 40.0 * width).max(0.0);
        let hi = mode + 40.0 * width + 40.0;
        let mut total = 0.0;
        let mut pieces = vec![(0.0, lo), (lo, mode), (mode, hi)];
        pieces.retain(|(x, y)| y > x);
        for (x, y) in pieces {
            total += quad::integrate(f, x, y, settings)
                .map_err(|e| failure(e.partial, e.subdivisions))?
                .value;
        }
        total += quad::integrate_to_infinity(f, hi, settings)
            .map_err(|e| failure(e.partial, e.subdivisions))?
            .value;
        (scale, total)
    };
    if !(integral > 0.0) {
        return Err(failure(integral, 0));
    }
    Ok(-a * z.ln() - ln_gamma_unchecked(a) + log_scale + integral.ln())
}

/// Tricomi's confluent hypergeometric function `U(a, b, z)` for `a > 0`, `z > 0`.
pub fn tricomi_u(a: f64, b: f64, z: f64, ctl: SeriesControl) -> Result<f64, SpecialError> {
    ln_tricomi_u(a, b, z, ctl).map(f64::exp)
}

/// `eˣ E₁(x)`, finite for every `x > 0`.
pub fn scaled_exp_integral_e1(x: f64) -> Result<f64, SpecialError> {
    if !(x > 0.0) {
        return Err(domain("exp_integral_e1", format!("x = {x}")));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    if x <= 1.0 {
        return Ok(e1_series(x) * x.exp());
    }
    Ok(e1_scaled_fraction(x))
}

/// Exponential integral `E₁(x) = ∫ₓ^∞ e^{-t}/t dt` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> Result<f64, SpecialError> {
    if !(x > 0.0) {
        return Err(domain("exp_integral_e1", format!("x = {x}")));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    if x <= 1.0 {
        Ok(e1_series(x))
    } else {
        Ok(e1_scaled_fraction(x) * (-x).exp())
    }
}

fn e1_series(x: f64) -> f64 {
    // E₁(x) = -γ - ln x - Σ_{n≥1} (-x)ⁿ / (n · n!)
    let mut sum = 0.0;
    let mut power = 1.0;
    for n in 1..200 {
        let nf = n as f64;
        power *= -x / nf;
        let term = power / nf;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    -EULER_GAMMA - x.ln() - sum
}

fn e1_scaled_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}
