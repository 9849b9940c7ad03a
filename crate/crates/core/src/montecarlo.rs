//! Monte Carlo oracles for the detector and the legitimate link.
//!
//! Trials are grouped into fixed-size blocks. Block `b` draws from a ChaCha8
//! generator keyed by the run seed, on the run's stream, positioned `b · 2⁴⁰`
//! words into the keystream, so any partition of blocks across workers yields
//! exactly the same draws as a serial run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{AnalyticError, SystemParams};

pub const MIN_TRIALS: u64 = 100;
const BLOCK_TRIALS: u64 = 4096;
const BLOCK_STRIDE_WORDS: u128 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonteCarloError {
    #[error("at least {MIN_TRIALS} trials are required, got {0}")]
    TooFewTrials(u64),
    #[error("power must be positive, got {0}")]
    NonPositivePower(f64),
    #[error(transparent)]
    Params(#[from] AnalyticError),
}

/// Identifies a reproducible random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Same seed, different stream.
    pub fn substream(&self, stream: u64) -> Self {
        Self {
            seed: self.seed,
            stream,
        }
    }

    /// Generator for trial block `block` of this substream.
    pub fn block_rng(&self, block: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(u128::from(block) * BLOCK_STRIDE_WORDS);
        rng
    }

    pub fn rng(&self) -> ChaCha8Rng {
        self.block_rng(0)
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub mean: f64,
    pub std_error: f64,
    pub trials: u64,
}

impl EstimateWithError {
    /// Empirical frequency of `hits` in `trials` Bernoulli draws.
    pub fn from_bernoulli(hits: u64, trials: u64) -> Self {
        let n = trials as f64;
        let p = hits as f64 / n;
        Self {
            mean: p,
            std_error: (p * (1.0 - p) / n).sqrt(),
            trials,
        }
    }

    pub fn from_moments(sum: f64, sum_sq: f64, trials: u64) -> Self {
        let n = trials as f64;
        let mean = sum / n;
        let var = if trials > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n).sqrt(),
            trials,
        }
    }

    /// `|mean - expected|` in units of the empirical standard error.
    pub fn z_score(&self, expected: f64) -> f64 {
        let d = (self.mean - expected).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }

    /// Standard error of a binomial proportion with true value `p` at this
    /// trial count.
    pub fn null_std_error(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

fn check_trials(trials: u64) -> Result<(), MonteCarloError> {
    if trials < MIN_TRIALS {
        Err(MonteCarloError::TooFewTrials(trials))
    } else {
        Ok(())
    }
}

fn blocks(trials: u64) -> impl IndexedParallelIterator<Item = (u64, u64)> {
    let count = trials.div_ceil(BLOCK_TRIALS) as usize;
    (0..count).into_par_iter().map(move |b| {
        let b = b as u64;
        let start = b * BLOCK_TRIALS;
        (b, (trials - start).min(BLOCK_TRIALS))
    })
}

/// Energy of `n` circularly-symmetric complex Gaussian samples of variance `var`.
fn complex_gaussian_energy<R: Rng>(rng: &mut R, n: u64, var: f64) -> f64 {
    let half = 0.5 * var;
    let mut e = 0.0;
    for _ in 0..n {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        e += re * re + im * im;
    }
    e * half
}

fn exponential<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e * mean
}

/// Noise-only statistic `T_e` (one trial).
fn null_statistic<R: Rng>(rng: &mut R, params: &SystemParams) -> f64 {
    let samples = u64::from(params.q) * u64::from(params.samples_per_block);
    complex_gaussian_energy(rng, samples, params.sigma0_sq)
}

/// Signal-present statistic `T_e` with warden gain `g` (one trial).
fn signal_statistic<R: Rng>(rng: &mut R, params: &SystemParams, g: f64) -> f64 {
    let l = u64::from(params.samples_per_block);
    let busy = u64::from(params.k) * l;
    let idle = u64::from(params.q - params.k) * l;
    complex_gaussian_energy(rng, busy, params.rho() * g + params.sigma0_sq)
        + complex_gaussian_energy(rng, idle, params.sigma0_sq)
}

/// False-alarm and miss-detection estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorEstimate {
    pub p_fa: EstimateWithError,
    pub p_md: EstimateWithError,
}

impl DetectorEstimate {
    /// Sum of the two error rates; the two come from independent draws so
    /// their variances add.
    pub fn dep(&self) -> EstimateWithError {
        EstimateWithError {
            mean: self.p_fa.mean + self.p_md.mean,
            std_error: self.p_fa.std_error.hypot(self.p_md.std_error),
            trials: self.p_fa.trials,
        }
    }
}

/// Simulates the wideband joint energy detector under both hypotheses.
pub fn simulate_detector(
    params: &SystemParams,
    trials: u64,
    rng: RngSpec,
) -> Result<DetectorEstimate, MonteCarloError> {
    check_trials(trials)?;
    params.validate()?;
    let threshold = params.effective_threshold();
    let (fa, md) = blocks(trials)
        .map(|(b, n)| {
            let mut r = rng.block_rng(b);
            let mut fa = 0u64;
            let mut md = 0u64;
            for _ in 0..n {
                if null_statistic(&mut r, params) > threshold {
                    fa += 1;
                }
                let g = exponential(&mut r, params.omega_e);
                if signal_statistic(&mut r, params, g) < threshold {
                    md += 1;
                }
            }
            (fa, md)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(DetectorEstimate {
        p_fa: EstimateWithError::from_bernoulli(fa, trials),
        p_md: EstimateWithError::from_bernoulli(md, trials),
    })
}

/// Miss-detection rate with the warden gain held at `g`.
pub fn simulate_miss_given_gain(
    params: &SystemParams,
    g: f64,
    trials: u64,
    rng: RngSpec,
) -> Result<EstimateWithError, MonteCarloError> {
    check_trials(trials)?;
    params.validate()?;
    let threshold = params.effective_threshold();
    let md: u64 = blocks(trials)
        .map(|(b, n)| {
            let mut r = rng.block_rng(b);
            (0..n)
                .filter(|_| signal_statistic(&mut r, params, g) < threshold)
                .count() as u64
        })
        .sum();
    Ok(EstimateWithError::from_bernoulli(md, trials))
}

/// Draws of the noise-only statistic `T_e`, in trial order.
pub fn sample_null_statistic(
    params: &SystemParams,
    trials: u64,
    rng: RngSpec,
) -> Result<Vec<f64>, MonteCarloError> {
    check_trials(trials)?;
    params.validate()?;
    let chunks: Vec<Vec<f64>> = blocks(trials)
        .map(|(b, n)| {
            let mut r = rng.block_rng(b);
            (0..n).map(|_| null_statistic(&mut r, params)).collect()
        })
        .collect();
    Ok(chunks.concat())
}

fn legit_snr_gain(params: &SystemParams, p: f64) -> f64 {
    f64::from(params.m) * p / (f64::from(params.k) * params.sigma0_sq)
}

/// Fraction of blocks whose SINR `m p_b h / (k σ₀²)` reaches `γ_u`.
pub fn simulate_rtp(
    params: &SystemParams,
    trials: u64,
    rng: RngSpec,
) -> Result<EstimateWithError, MonteCarloError> {
    check_trials(trials)?;
    params.validate()?;
    let gain = legit_snr_gain(params, params.p_b);
    let hits: u64 = blocks(trials)
        .map(|(b, n)| {
            let mut r = rng.block_rng(b);
            (0..n)
                .filter(|_| gain * exponential(&mut r, params.omega_u) >= params.gamma_u)
                .count() as u64
        })
        .sum();
    Ok(EstimateWithError::from_bernoulli(hits, trials))
}

/// Sample mean of `log₂(1 + m p h / (k σ₀²))`.
pub fn simulate_rate(
    params: &SystemParams,
    p: f64,
    trials: u64,
    rng: RngSpec,
) -> Result<EstimateWithError, MonteCarloError> {
    check_trials(trials)?;
    params.validate()?;
    if !(p > 0.0) {
        return Err(MonteCarloError::NonPositivePower(p));
    }
    let gain = legit_snr_gain(params, p);
    let parts: Vec<(f64, f64)> = blocks(trials)
        .map(|(b, n)| {
            let mut r = rng.block_rng(b);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..n {
                let v =
                    (gain * exponential(&mut r, params.omega_u)).ln_1p() / std::f64::consts::LN_2;
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    // Fixed block order keeps the floating-point sum independent of threads.
    let (sum, sum_sq) = parts
        .iter()
        .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    Ok(EstimateWithError::from_moments(sum, sum_sq, trials))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{self, ThresholdMode};
    use crate::specfun;

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
    fn block_streams_are_distinct_and_reproducible() {
        let spec = RngSpec::new(7, 3);
        let a: u64 = spec.block_rng(0).random();
        let b: u64 = spec.block_rng(1).random();
        let c: u64 = spec.substream(4).block_rng(0).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, spec.block_rng(0).random::<u64>());
    }

    #[test]
    fn trial_count_precondition() {
        let p = small_raw();
        assert_eq!(
            simulate_detector(&p, 99, RngSpec::new(1, 0)).unwrap_err(),
            MonteCarloError::TooFewTrials(99)
        );
        assert!(simulate_rtp(&p, 10, RngSpec::new(1, 0)).is_err());
        assert!(simulate_rate(&p, 0.0, 1000, RngSpec::new(1, 0)).is_err());
    }

    #[test]
    fn detector_is_deterministic() {
        let p = small_raw();
        let a = simulate_detector(&p, 10_000, RngSpec::new(42, 1)).unwrap();
        let b = simulate_detector(&p, 10_000, RngSpec::new(42, 1)).unwrap();
        assert_eq!(a, b);
        let c = simulate_detector(&p, 10_000, RngSpec::new(42, 2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_power_miss_rate_is_noise_only() {
        let p = small_raw().with_power(0.0);
        let est = simulate_detector(&p, 100_000, RngSpec::new(5, 0)).unwrap();
        let expected = specfun::reg_gamma_lower(8.0, 8.0).unwrap();
        assert!(est.p_md.z_score(expected) <= 3.0, "{est:?}");
        assert!(est.p_fa.z_score(1.0 - expected) <= 3.0, "{est:?}");
    }

    #[test]
    fn detector_agrees_with_closed_forms_small_instance() {
        let p = small_raw();
        let est = simulate_detector(&p, 200_000, RngSpec::new(11, 0)).unwrap();
        let fa = analytic::false_alarm_prob(&p).unwrap();
        let md = analytic::miss_detection_prob(&p, analytic::MdMethod::Quadrature).unwrap();
        assert!(est.p_fa.z_score(fa) <= 3.0, "fa {fa} vs {:?}", est.p_fa);
        assert!(est.p_md.z_score(md) <= 3.0, "md {md} vs {:?}", est.p_md);
        assert!(est.dep().z_score(fa + md) <= 3.0);
    }

    #[test]
    fn conditional_miss_rate_matches_closed_form() {
        let p = small_raw();
        let est = simulate_miss_given_gain(&p, 1.0, 1_000_000, RngSpec::new(3, 9)).unwrap();
        let exact = analytic::miss_detection_conditional(&p, 1.0).unwrap();
        assert!(est.z_score(exact) <= 3.0, "{exact} vs {est:?}");
    }

    #[test]
    fn null_statistic_is_gamma_distributed() {
        // Kolmogorov–Smirnov against Gamma(qL, 1) at the 1% level.
        let p = SystemParams::default();
        let mut t = sample_null_statistic(&p, 10_000, RngSpec::new(2024, 0)).unwrap();
        t.iter_mut().for_each(|v| *v /= p.sigma0_sq);
        t.sort_by(f64::total_cmp);
        let n = t.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &v) in t.iter().enumerate() {
            let cdf = specfun::reg_gamma_lower(p.total_samples(), v).unwrap();
            d = d.max(cdf - i as f64 / n).max((i + 1) as f64 / n - cdf);
        }
        assert!(d < 1.628 / n.sqrt(), "D = {d}");
    }

    #[test]
    fn rtp_estimates() {
        let p = SystemParams::default();
        let zero = simulate_rtp(
            &SystemParams { gamma_u: 0.0, ..p },
            1000,
            RngSpec::new(1, 0),
        )
        .unwrap();
        assert_eq!(zero.mean, 1.0);
        let est = simulate_rtp(&p, 1_000_000, RngSpec::new(8, 0)).unwrap();
        assert!(est.z_score((-1.0f64).exp()) <= 3.0, "{est:?}");
        assert_eq!(
            est,
            simulate_rtp(&p, 1_000_000, RngSpec::new(8, 0)).unwrap()
        );
    }

    #[test]
    fn rate_estimates() {
        let p = SystemParams::default();
        let tiny = simulate_rate(&p, 1e-12, 1000, RngSpec::new(1, 0)).unwrap();
        assert!(tiny.mean < 1e-10);
        let est = simulate_rate(&p, 1.0, 1_000_000, RngSpec::new(9, 0)).unwrap();
        let exact = analytic::covert_rate(&p, 1.0).unwrap();
        assert!(est.z_score(exact) <= 3.0, "{exact} vs {est:?}");
        assert_eq!(
            est,
            simulate_rate(&p, 1.0, 1_000_000, RngSpec::new(9, 0)).unwrap()
        );
    }

    #[test]
    fn moment_estimate() {
        let e = EstimateWithError::from_moments(6.0, 14.0, 3); // samples 1, 2, 3
        assert_eq!(e.mean, 2.0);
        assert!((e.std_error - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
