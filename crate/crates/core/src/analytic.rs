//! Closed-form covertness and reliability metrics.
//!
//! The warden sums received energy over all `q` frequency slots and `L`
//! samples and compares it with a threshold. Under `H₀` the statistic is
//! `Gamma(qL, σ₀²)`; under `H₁`, conditionally on the warden's channel gain
//! `g`, `k` slots carry signal and the statistic becomes a negative-binomial
//! mixture of `Gamma(qL + n, σ₀²)` laws. Averaging over the exponential law of
//! `g` gives the miss-detection probability.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::{self, QuadSettings};
use crate::specfun::{self, SeriesControl, SpecialError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error("quadrature over {what} did not converge (partial {partial:e}, error {abs_error:e})")]
    Quadrature {
        what: &'static str,
        partial: f64,
        abs_error: f64,
    },
}

/// How the warden threshold `gamma_e` is mapped onto the energy statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Compare the statistic with `gamma_e` directly.
    Raw,
    /// Compare with `gamma_e · q · L · σ₀²`, i.e. `gamma_e` is a level relative
    /// to the expected noise-only energy.
    #[default]
    PerSampleNormalized,
}

/// Scalar parameters of the multi-cell, multi-user model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Base stations.
    pub m: u32,
    /// Active legitimate users (occupied frequency slots under `H₁`).
    pub k: u32,
    /// Frequency slots.
    pub q: u32,
    /// Samples (consecutive time slots) per data block.
    pub samples_per_block: u32,
    /// Transmit power per base station, watts.
    pub p_b: f64,
    pub sigma0_sq: f64,
    /// Mean of the warden's exponential channel power gain.
    pub omega_e: f64,
    /// Mean of the legitimate users' exponential channel power gain.
    pub omega_u: f64,
    pub gamma_e: f64,
    pub gamma_u: f64,
    pub eps_e: f64,
    pub eps_u: f64,
    pub threshold_mode: ThresholdMode,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            m: 4,
            k: 4,
            q: 64,
            samples_per_block: 8,
            p_b: 1.0,
            sigma0_sq: 1.0,
            omega_e: 1.0,
            omega_u: 2.0,
            gamma_e: 2.0,
            gamma_u: 2.0,
            eps_e: 0.1,
            eps_u: 0.1,
            threshold_mode: ThresholdMode::PerSampleNormalized,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), AnalyticError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(AnalyticError::InvalidParams(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<(), AnalyticError> {
        let bad = |msg: String| Err(AnalyticError::InvalidParams(msg));
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.samples_per_block == 0 {
            return bad("samples_per_block must be at least 1".into());
        }
        if self.k == 0 || self.k > self.q {
            return bad(format!(
                "need 1 <= k <= q, got k = {}, q = {}",
                self.k, self.q
            ));
        }
        // p_b = 0 is the signal-absent limit and is allowed.
        if !(self.p_b >= 0.0) || !self.p_b.is_finite() {
            return bad(format!(
                "p_b must be nonnegative and finite, got {}",
                self.p_b
            ));
        }
        positive("sigma0_sq", self.sigma0_sq)?;
        positive("omega_e", self.omega_e)?;
        positive("omega_u", self.omega_u)?;
        if !(self.gamma_e >= 0.0) {
            return bad(format!("gamma_e must be nonnegative, got {}", self.gamma_e));
        }
        if !(self.gamma_u >= 0.0) || !self.gamma_u.is_finite() {
            return bad(format!(
                "gamma_u must be nonnegative and finite, got {}",
                self.gamma_u
            ));
        }
        for (name, eps) in [("eps_e", self.eps_e), ("eps_u", self.eps_u)] {
            if !(eps > 0.0 && eps <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {eps}"));
            }
        }
        Ok(())
    }

    pub fn with_power(mut self, p_b: f64) -> Self {
        self.p_b = p_b;
        self
    }

    pub fn with_users(mut self, k: u32) -> Self {
        self.k = k;
        self
    }

    /// `qL`, the shape of the noise-only energy statistic.
    pub fn total_samples(&self) -> f64 {
        f64::from(self.q) * f64::from(self.samples_per_block)
    }

    /// `kL`, the number of signal-bearing samples under `H₁`.
    pub fn signal_samples(&self) -> f64 {
        f64::from(self.k) * f64::from(self.samples_per_block)
    }

    /// Per-sample signal power scale `ρ = m·p_b / (q·k·L)`.
    pub fn rho(&self) -> f64 {
        f64::from(self.m) * self.p_b / (f64::from(self.q) * self.signal_samples())
    }

    pub fn effective_threshold(&self) -> f64 {
        match self.threshold_mode {
            ThresholdMode::Raw => self.gamma_e,
            ThresholdMode::PerSampleNormalized => {
                self.gamma_e * self.total_samples() * self.sigma0_sq
            }
        }
    }

    /// Threshold in noise units, the second argument of the incomplete gammas.
    pub fn normalized_threshold(&self) -> f64 {
        self.effective_threshold() / self.sigma0_sq
    }
}

/// Transmit power for a given SNR in dB, `p_b = σ₀² · 10^{snr/10}`.
pub fn snr_db_to_power(snr_db: f64, sigma0_sq: f64) -> f64 {
    sigma0_sq * 10f64.powf(snr_db / 10.0)
}

pub fn power_to_snr_db(p_b: f64, sigma0_sq: f64) -> f64 {
    10.0 * (p_b / sigma0_sq).log10()
}

/// Lazily filled table of `(P, Q)(qL + n, x)` for a fixed threshold `x`.
pub(crate) struct GammaTable {
    base: f64,
    x: f64,
    values: Vec<(f64, f64)>,
}

impl GammaTable {
    pub(crate) fn new(base: f64, x: f64) -> Self {
        Self {
            base,
            x,
            values: Vec::new(),
        }
    }

    pub(crate) fn get(&mut self, n: usize) -> Result<(f64, f64), SpecialError> {
        while self.values.len() <= n {
            let shape = self.base + self.values.len() as f64;
            // P(s, x) decreases in s; once it underflows it stays at zero.
            let v = match self.values.last() {
                Some(&(p, _)) if p == 0.0 => (0.0, 1.0),
                _ => specfun::reg_gamma_pair(shape, self.x)?,
            };
            self.values.push(v);
        }
        Ok(self.values[n])
    }

    pub(crate) fn lower(&mut self, n: usize) -> Result<f64, SpecialError> {
        self.get(n).map(|(p, _)| p)
    }
}

/// `P_FA = Q(qL, γ_eff/σ₀²)`.
pub fn false_alarm_prob(params: &SystemParams) -> Result<f64, AnalyticError> {
    params.validate()?;
    Ok(specfun::reg_gamma_upper(
        params.total_samples(),
        params.normalized_threshold(),
    )?)
}

/// Miss-detection probability for a fixed warden channel gain `g`.
pub fn miss_detection_conditional(params: &SystemParams, g: f64) -> Result<f64, AnalyticError> {
    params.validate()?;
    if !(g >= 0.0) || !g.is_finite() {
        return Err(AnalyticError::InvalidParams(format!(
            "g must be nonnegative and finite, got {g}"
        )));
    }
    let mut table = GammaTable::new(params.total_samples(), params.normalized_threshold());
    let split = conditional_split(params, g, &mut table, SeriesControl::default())?;
    Ok(split.miss_probability())
}

/// Conditional miss and detection probabilities, each summed directly so
/// that whichever is small keeps its relative accuracy.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Split {
    pub(crate) miss: f64,
    pub(crate) detect: f64,
}

impl Split {
    pub(crate) fn miss_probability(&self) -> f64 {
        if self.detect < 0.5 {
            1.0 - self.detect
        } else {
            self.miss
        }
    }
}

/// Absolute floor for the detection sum: it is only used through `1 - detect`.
const DETECT_ABS_TOL: f64 = 1e-18;

pub(crate) fn conditional_split(
    params: &SystemParams,
    g: f64,
    table: &mut GammaTable,
    ctl: SeriesControl,
) -> Result<Split, AnalyticError> {
    let x = params.normalized_threshold();
    if x == 0.0 {
        return Ok(Split {
            miss: 0.0,
            detect: 1.0,
        });
    }
    if x.is_infinite() {
        return Ok(Split {
            miss: 1.0,
            detect: 0.0,
        });
    }
    let signal = params.rho() * g;
    if signal == 0.0 {
        let (p, q) = table.get(0)?;
        return Ok(Split { miss: p, detect: q });
    }
    let s2 = params.sigma0_sq;
    let shape = params.signal_samples();
    // Mixture weights w_n = (1-r)^{kL} (kL)_n / n! · rⁿ, r = ρg / (ρg + σ₀²).
    let ln_r = signal.ln() - (signal + s2).ln();
    let mut ln_w = shape * (s2.ln() - (signal + s2).ln());
    let ratio_at = |n: f64| (shape + n) / (n + 1.0) * ln_r.exp();

    let mut miss = 0.0;
    let mut detect = 0.0;
    let mut weight_seen = 0.0;
    for n in 0..ctl.max_terms {
        let w = ln_w.exp();
        let (p_n, q_n) = table.get(n)?;
        miss += w * p_n;
        detect += w * q_n;
        weight_seen += w;

        let p_next = table.lower(n + 1)?;
        let nf = n as f64;
        let ratio_now = ratio_at(nf);
        let ratio_next = ratio_at(nf + 1.0);
        // Remaining weight: geometric bound once ratios drop below one, and
        // the exact complement 1 - Σw (with rounding slack) at all times.
        let complement = (1.0 - weight_seen).max(0.0) + 4.0 * f64::EPSILON * (nf + 1.0);
        let remaining = if ratio_next < 1.0 {
            (w * ratio_now / (1.0 - ratio_next)).min(complement)
        } else {
            complement
        };
        // P(qL+n, x) decreases and Q(qL+n, x) increases with n.
        let miss_done = p_next * remaining <= ctl.rel_tol * miss;
        let detect_done = remaining <= (ctl.rel_tol * detect).max(DETECT_ABS_TOL);
        if miss_done && detect_done {
            return Ok(Split {
                miss: miss.min(1.0),
                detect: detect.min(1.0),
            });
        }
        if miss_done && miss <= 0.5 {
            // Detection is then far from zero and 1 - miss is accurate enough.
            return Ok(Split {
                miss,
                detect: 1.0 - miss,
            });
        }
        ln_w += (shape + nf).ln() - (nf + 1.0).ln() + ln_r;
    }
    Err(SpecialError::Convergence {
        function: "miss_detection_conditional",
        partial: miss,
        terms: ctl.max_terms,
    }
    .into())
}

/// Evaluation route for the averaged miss-detection probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MdMethod {
    /// Average the conditional probability over the gain density numerically.
    #[default]
    Quadrature,
    /// Sum the Tricomi-weighted series term by term.
    Series,
}

/// `ln(1/1e-16)`: the gain integral is cut at `ω_e` times this.
const GAIN_CUTOFF_FACTOR: f64 = 36.841_361_487_904_734;

pub fn miss_detection_prob(params: &SystemParams, method: MdMethod) -> Result<f64, AnalyticError> {
    miss_detection_prob_with(params, method, SeriesControl::default())
}

pub fn miss_detection_prob_with(
    params: &SystemParams,
    method: MdMethod,
    ctl: SeriesControl,
) -> Result<f64, AnalyticError> {
    params.validate()?;
    let x = params.normalized_threshold();
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let mut table = GammaTable::new(params.total_samples(), x);
    if params.p_b == 0.0 {
        return Ok(table.lower(0)?);
    }
    match method {
        MdMethod::Quadrature => md_quadrature(params, &mut table, ctl),
        MdMethod::Series => md_series(params, &mut table, ctl),
    }
}

fn md_quadrature(
    params: &SystemParams,
    table: &mut GammaTable,
    ctl: SeriesControl,
) -> Result<f64, AnalyticError> {
    let omega = params.omega_e;
    let g_max = omega * GAIN_CUTOFF_FACTOR;
    let cutoff_mass = (-GAIN_CUTOFF_FACTOR).exp();
    let breaks = [0.0, 0.25 * omega, omega, 4.0 * omega, 12.0 * omega, g_max];
    let mut failure: Option<AnalyticError> = None;

    // Both the miss and the detection mixture are averaged; P_MD is then
    // taken from whichever is further from one.
    let mut averaged = [0.0f64; 2];
    for (slot, total) in averaged.iter_mut().enumerate() {
        let mut integrand = |g: f64| -> f64 {
            if failure.is_some() {
                return 0.0;
            }
            match conditional_split(params, g, table, ctl) {
                Ok(s) => {
                    let v = if slot == 0 { s.miss } else { s.detect };
                    v * (-g / omega).exp() / omega
                }
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        };
        let settings = QuadSettings {
            abs_tol: if slot == 0 { 1e-300 } else { DETECT_ABS_TOL },
            rel_tol: 1e-11,
            max_subdivisions: 4000,
        };
        for pair in breaks.windows(2) {
            let r = quad::integrate(&mut integrand, pair[0], pair[1], settings).map_err(|e| {
                AnalyticError::Quadrature {
                    what: "warden gain",
                    partial: e.partial,
                    abs_error: e.abs_error,
                }
            })?;
            *total += r.value;
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    // Beyond g_max the conditional miss probability is at most its value at
    // g_max and the detection probability at least its value there; the
    // remaining gain mass is e^{-g_max/ω}. Take midpoints of both ranges.
    let edge = conditional_split(params, g_max, table, ctl)?;
    let [miss, detect] = averaged;
    let md = if detect < 0.5 {
        1.0 - detect - 0.5 * (1.0 + edge.detect) * cutoff_mass
    } else {
        miss + 0.5 * edge.miss * cutoff_mass
    };
    Ok(md.clamp(0.0, 1.0))
}

fn md_series(
    params: &SystemParams,
    table: &mut GammaTable,
    ctl: SeriesControl,
) -> Result<f64, AnalyticError> {
    let shape = params.signal_samples();
    let c = params.sigma0_sq / (params.rho() * params.omega_e);
    let b = 2.0 - shape;
    let u_ctl = SeriesControl {
        rel_tol: 1e-13,
        max_terms: 4000,
    };
    let mut sum = 0.0;
    let mut weight_seen = 0.0;
    let mut prev_w = 0.0;
    let mut ln_poch = 0.0;
    for n in 0..ctl.max_terms {
        let nf = n as f64;
        let ln_u = specfun::ln_tricomi_u(nf + 1.0, b, c, u_ctl)?;
        let w = (c.ln() + ln_poch + ln_u).exp();
        let p_n = table.lower(n)?;
        let term = w * p_n;
        sum += term;
        weight_seen += w;
        let p_next = table.lower(n + 1)?;
        let past_mode = n > 0 && w < prev_w;
        let remaining = (1.0 - weight_seen).max(0.0);
        if past_mode && term <= 0.1 * ctl.rel_tol * sum && p_next * remaining <= ctl.rel_tol * sum {
            return Ok(sum.clamp(0.0, 1.0));
        }
        if p_next == 0.0 && past_mode {
            return Ok(sum.clamp(0.0, 1.0));
        }
        prev_w = w;
        ln_poch += (shape + nf).ln();
    }
    Err(SpecialError::Convergence {
        function: "miss_detection_prob (series)",
        partial: sum,
        terms: ctl.max_terms,
    }
    .into())
}

/// Detection error probability `P_FA + P_MD` (quadrature route for `P_MD`).
pub fn dep(params: &SystemParams) -> Result<f64, AnalyticError> {
    Ok(false_alarm_prob(params)? + miss_detection_prob(params, MdMethod::Quadrature)?)
}

/// Components of the detection error probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionErrors {
    pub false_alarm: f64,
    pub miss_detection: f64,
}

impl DetectionErrors {
    pub fn dep(&self) -> f64 {
        self.false_alarm + self.miss_detection
    }
}

pub fn detection_errors(params: &SystemParams) -> Result<DetectionErrors, AnalyticError> {
    Ok(DetectionErrors {
        false_alarm: false_alarm_prob(params)?,
        miss_detection: miss_detection_prob(params, MdMethod::Quadrature)?,
    })
}

/// Reliable transmission probability `exp(-γ_u k σ₀² / (m p_b ω_u))`.
pub fn rtp(params: &SystemParams) -> Result<f64, AnalyticError> {
    params.validate()?;
    if params.gamma_u == 0.0 {
        return Ok(1.0);
    }
    if params.p_b == 0.0 {
        return Ok(0.0);
    }
    let exponent = params.gamma_u * f64::from(params.k) * params.sigma0_sq
        / (f64::from(params.m) * params.p_b * params.omega_u);
    Ok((-exponent).exp())
}

/// `c = k σ₀² / (m ω_u p)`, the only combination the covert rate depends on.
fn rate_argument(params: &SystemParams, p: f64) -> f64 {
    f64::from(params.k) * params.sigma0_sq / (f64::from(params.m) * params.omega_u * p)
}

/// Average achievable rate `E_h[log₂(1 + m p h / (k σ₀²))]` in closed form,
/// `e^c E₁(c) / ln 2`.
pub fn covert_rate(params: &SystemParams, p: f64) -> Result<f64, AnalyticError> {
    params.validate()?;
    if !(p > 0.0) {
        return Err(AnalyticError::InvalidParams(format!(
            "power must be positive, got {p}"
        )));
    }
    let c = rate_argument(params, p);
    Ok(specfun::scaled_exp_integral_e1(c)? / LN_2)
}

/// The same expectation integrated numerically against the exponential
/// density of `h`; an independent route to [`covert_rate`].
pub fn covert_rate_by_quadrature(params: &SystemParams, p: f64) -> Result<f64, AnalyticError> {
    params.validate()?;
    if !(p > 0.0) {
        return Err(AnalyticError::InvalidParams(format!(
            "power must be positive, got {p}"
        )));
    }
    // h = ω_u u, so the density becomes e^{-u}.
    let gain = 1.0 / rate_argument(params, p);
    let f = |u: f64| (gain * u).ln_1p() / LN_2 * (-u).exp();
    let settings = QuadSettings {
        abs_tol: 0.0,
        rel_tol: 1e-13,
        max_subdivisions: 2000,
    };
    let to_err = |e: quad::QuadFailure| AnalyticError::Quadrature {
        what: "legitimate gain",
        partial: e.partial,
        abs_error: e.abs_error,
    };
    let mut total = 0.0;
    let knee = (1.0 / gain).min(1.0);
    for (a, b) in [(0.0, knee), (knee, 1.0), (1.0, 40.0)] {
        if b > a {
            total += quad::integrate(f, a, b, settings).map_err(to_err)?.value;
        }
    }
    total += quad::integrate_to_infinity(f, 40.0, settings)
        .map_err(to_err)?
        .value;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn small_raw() -> SystemParams {
        SystemParams {
            m: 2,
            k: 2,
            q: 4,
            samples_per_block: 2,
            p_b: 4.0,
            sigma0_sq: 1.0,
            omega_e: 1.0,
            gamma_e: 8.0,
            threshold_mode: ThresholdMode::Raw,
            ..SystemParams::default()
        }
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let base = SystemParams::default();
        assert!(base.validate().is_ok());
        assert!(base.with_users(0).validate().is_err());
        assert!(base.with_users(65).validate().is_err());
        assert!(base.with_users(64).validate().is_ok());
        assert!(SystemParams {
            sigma0_sq: 0.0,
            ..base
        }
        .validate()
        .is_err());
        assert!(SystemParams { eps_u: 0.0, ..base }.validate().is_err());
        assert!(SystemParams {
            samples_per_block: 0,
            ..base
        }
        .validate()
        .is_err());
        assert!(base.with_power(-1.0).validate().is_err());
    }

    #[test]
    fn derived_quantities() {
        let p = SystemParams::default();
        assert_eq!(p.total_samples(), 512.0);
        assert_eq!(p.signal_samples(), 32.0);
        assert!((p.rho() - 4.0 / 2048.0).abs() < 1e-18);
        assert_eq!(p.effective_threshold(), 1024.0);
        let raw = SystemParams {
            threshold_mode: ThresholdMode::Raw,
            ..p
        };
        assert_eq!(raw.effective_threshold(), 2.0);
        assert!((snr_db_to_power(10.0, 2.0) - 20.0).abs() < 1e-12);
        assert!((power_to_snr_db(20.0, 2.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn false_alarm_limits() {
        let p = small_raw();
        assert_eq!(
            false_alarm_prob(&SystemParams { gamma_e: 0.0, ..p }).unwrap(),
            1.0
        );
        assert_eq!(
            false_alarm_prob(&SystemParams {
                gamma_e: f64::INFINITY,
                ..p
            })
            .unwrap(),
            0.0
        );
        let v = false_alarm_prob(&p).unwrap();
        assert!(rel(v, 0.452_960_809_486_994_5) < 1e-12);
    }

    #[test]
    fn conditional_md_examples() {
        let p = small_raw();
        let noise_only = specfun::reg_gamma_lower(8.0, 8.0).unwrap();
        assert!(rel(miss_detection_conditional(&p, 0.0).unwrap(), noise_only) < 1e-14);
        let inf = SystemParams {
            gamma_e: f64::INFINITY,
            ..p
        };
        assert_eq!(miss_detection_conditional(&inf, 1.3).unwrap(), 1.0);
        // Convolution of Gamma(4, 1.5) and Gamma(4, 1) evaluated at 8 by
        // high-precision quadrature.
        let v = miss_detection_conditional(&p, 1.0).unwrap();
        assert!(rel(v, 0.317_977_275_963_185_04) < 1e-11, "{v}");
        assert!(miss_detection_conditional(&p, -1.0).is_err());
    }

    #[test]
    fn conditional_md_large_signal() {
        // r close to one: weights start deep in underflow territory.
        let p = SystemParams {
            p_b: 1000.0,
            k: 1,
            q: 8,
            ..small_raw()
        };
        let v = miss_detection_conditional(&p, 36.0).unwrap();
        assert!((0.0..1e-6).contains(&v), "{v}");
    }

    #[test]
    fn averaged_md_matches_reference() {
        let p = small_raw();
        let expected = 0.355_965_261_680_405_28;
        let quad = miss_detection_prob(&p, MdMethod::Quadrature).unwrap();
        assert!(rel(quad, expected) < 1e-9, "{quad}");
        let series = miss_detection_prob(&p, MdMethod::Series).unwrap();
        assert!(rel(series, expected) < 1e-7, "{series}");
    }

    #[test]
    fn md_limits() {
        let p = small_raw();
        assert_eq!(
            miss_detection_prob(&SystemParams { gamma_e: 0.0, ..p }, MdMethod::Quadrature).unwrap(),
            0.0
        );
        let noise_only = specfun::reg_gamma_lower(8.0, 8.0).unwrap();
        assert_eq!(
            miss_detection_prob(&p.with_power(0.0), MdMethod::Quadrature).unwrap(),
            noise_only
        );
        let tiny = miss_detection_prob(&p.with_power(1e-9), MdMethod::Quadrature).unwrap();
        assert!((tiny - noise_only).abs() < 1e-8);
    }

    #[test]
    fn dep_limits_are_exactly_one() {
        for base in [small_raw(), SystemParams::default()] {
            assert_eq!(
                dep(&SystemParams {
                    gamma_e: 0.0,
                    ..base
                })
                .unwrap(),
                1.0
            );
            assert_eq!(
                dep(&SystemParams {
                    gamma_e: f64::INFINITY,
                    ..base
                })
                .unwrap(),
                1.0
            );
        }
    }

    #[test]
    fn dep_nonincreasing_in_power() {
        for base in [small_raw(), SystemParams::default()] {
            let mut prev = f64::INFINITY;
            for i in 0..15 {
                let p_b = 10f64.powf(-2.0 + 0.35 * i as f64);
                let d = dep(&base.with_power(p_b)).unwrap();
                assert!(d <= prev + 1e-12, "p_b = {p_b}: {d} > {prev}");
                assert!((0.0..=2.0).contains(&d));
                prev = d;
            }
        }
    }

    #[test]
    fn rtp_examples() {
        let p = SystemParams {
            gamma_u: 2.0,
            k: 4,
            sigma0_sq: 1.0,
            m: 4,
            p_b: 1.0,
            omega_u: 2.0,
            ..SystemParams::default()
        };
        assert!(rel(rtp(&p).unwrap(), (-1.0f64).exp()) < 1e-15);
        assert_eq!(rtp(&SystemParams { gamma_u: 0.0, ..p }).unwrap(), 1.0);
        assert!(rtp(&p.with_power(1e12)).unwrap() > 1.0 - 1e-11);
    }

    #[test]
    fn rtp_trends() {
        let base = SystemParams::default();
        let mut prev = 0.0;
        for i in 0..21 {
            let v = rtp(&base.with_power(snr_db_to_power(-10.0 + i as f64, 1.0))).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!(rtp(&base.with_users(8)).unwrap() <= rtp(&base.with_users(4)).unwrap());
    }

    #[test]
    fn covert_rate_examples() {
        let p = SystemParams {
            k: 4,
            sigma0_sq: 1.0,
            m: 4,
            omega_u: 2.0,
            ..SystemParams::default()
        };
        let expected = 1.331_478_592_667_974_6;
        assert!(rel(covert_rate(&p, 1.0).unwrap(), expected) < 1e-12);
        assert!(rel(covert_rate_by_quadrature(&p, 1.0).unwrap(), expected) < 1e-10);
        assert!(covert_rate(&p, 1e-300).unwrap() < 1e-290);
        assert!(covert_rate(&p, 0.0).is_err());
        // Only c = kσ₀²/(mω_u p) matters.
        let scaled = SystemParams {
            m: 8,
            omega_u: 1.0,
            ..p
        };
        assert!(rel(covert_rate(&scaled, 1.0).unwrap(), expected) < 1e-14);
    }

    #[test]
    fn covert_rate_closed_form_vs_quadrature_grid() {
        let base = SystemParams::default();
        for &p in &[0.01, 0.3, 1.0, 10.0, 1000.0] {
            for &k in &[1, 4, 8, 16, 64] {
                let params = base.with_users(k);
                let a = covert_rate(&params, p).unwrap();
                let b = covert_rate_by_quadrature(&params, p).unwrap();
                assert!(rel(a, b) < 1e-8, "p={p} k={k}: {a} vs {b}");
            }
        }
    }
}
