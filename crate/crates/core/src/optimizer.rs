//! Optimal transmit power and admission capacity.
//!
//! The reliability constraint `RTP ≥ 1 − ε_u` gives a closed-form lower bound
//! on power. The covertness constraint `DEP ≥ 1 − ε_e` gives an upper bound,
//! found by bisection because DEP is only available numerically. The covert
//! rate increases with power, so the optimum sits at the upper bound.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analytic::{self, AnalyticError, SystemParams};

pub const DEFAULT_P_MIN: f64 = 1e-6;
pub const DEFAULT_P_MAX: f64 = 1e3;
pub const DEFAULT_BISECTION_TOL: f64 = 1e-6;
/// Powers above this are treated as unattainable.
pub const DEFAULT_ABSOLUTE_POWER_CAP: f64 = 1e12;
const PRE_GRID_POINTS: usize = 16;
/// Slack on the monotonicity pre-check, above the DEP evaluation noise.
const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("invalid power range [{p_min}, {p_max}]")]
    InvalidRange { p_min: f64, p_max: f64 },
    #[error("power lower bound {p_low} exceeds the absolute cap {cap}")]
    LowerBoundAboveCap { p_low: f64, cap: f64 },
    #[error("covertness constraint fails already at p_min = {p_min} (DEP = {dep}, need {target})")]
    CovertnessInfeasible { p_min: f64, dep: f64, target: f64 },
    #[error("DEP increases from {dep_lo} at p = {p_lo} to {dep_hi} at p = {p_hi}")]
    NotMonotone {
        p_lo: f64,
        p_hi: f64,
        dep_lo: f64,
        dep_hi: f64,
    },
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
}

/// Feasible power interval for one user count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerBounds {
    pub p_low: f64,
    /// NaN when the covertness constraint fails on the whole power range.
    pub p_up: f64,
    pub feasible: bool,
    /// `p_up` equals `p_max` because the covertness constraint never binds.
    pub upper_clipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalPowerResult {
    pub p_star: Option<f64>,
    pub rate_star: Option<f64>,
    pub bounds: PowerBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityResult {
    /// Largest feasible user count, 0 when none is feasible.
    pub k_star: u32,
    pub per_k: Vec<(u32, PowerBounds)>,
}

/// Smallest power meeting the reliability constraint,
/// `−γ_u k σ₀² / (m ω_u ln(1 − ε_u))`.
pub fn power_lower_bound(params: &SystemParams) -> Result<f64, OptimizerError> {
    power_lower_bound_capped(params, DEFAULT_ABSOLUTE_POWER_CAP)
}

pub fn power_lower_bound_capped(params: &SystemParams, cap: f64) -> Result<f64, OptimizerError> {
    params.validate()?;
    let p_low = lower_bound_value(params);
    if p_low > cap {
        return Err(OptimizerError::LowerBoundAboveCap { p_low, cap });
    }
    Ok(p_low)
}

fn lower_bound_value(params: &SystemParams) -> f64 {
    if params.gamma_u == 0.0 {
        return 0.0;
    }
    let log_rel = (-params.eps_u).ln_1p();
    -params.gamma_u * f64::from(params.k) * params.sigma0_sq
        / (f64::from(params.m) * params.omega_u * log_rel)
}

fn dep_at(params: &SystemParams, p: f64) -> Result<f64, OptimizerError> {
    Ok(analytic::dep(&params.with_power(p))?)
}

fn check_range(p_min: f64, p_max: f64) -> Result<(), OptimizerError> {
    if p_min > 0.0 && p_max > p_min && p_max.is_finite() {
        Ok(())
    } else {
        Err(OptimizerError::InvalidRange { p_min, p_max })
    }
}

/// Largest power in `[p_min, p_max]` meeting the covertness constraint.
///
/// The returned value always satisfies the constraint; it lies within
/// relative distance `tol` of the exact supremum.
pub fn power_upper_bound(
    params: &SystemParams,
    p_min: f64,
    p_max: f64,
    tol: f64,
) -> Result<f64, OptimizerError> {
    params.validate()?;
    check_range(p_min, p_max)?;
    let target = 1.0 - params.eps_e;

    let ratio = (p_max / p_min).powf(1.0 / (PRE_GRID_POINTS - 1) as f64);
    let grid: Vec<f64> = (0..PRE_GRID_POINTS)
        .map(|i| {
            if i + 1 == PRE_GRID_POINTS {
                p_max
            } else {
                p_min * ratio.powi(i as i32)
            }
        })
        .collect();
    let deps = grid
        .iter()
        .map(|&p| dep_at(params, p))
        .collect::<Result<Vec<_>, _>>()?;
    for i in 1..grid.len() {
        if deps[i] > deps[i - 1] + MONOTONE_SLACK {
            return Err(OptimizerError::NotMonotone {
                p_lo: grid[i - 1],
                p_hi: grid[i],
                dep_lo: deps[i - 1],
                dep_hi: deps[i],
            });
        }
    }
    if deps[deps.len() - 1] >= target {
        return Ok(p_max);
    }
    if deps[0] < target {
        return Err(OptimizerError::CovertnessInfeasible {
            p_min,
            dep: deps[0],
            target,
        });
    }
    let idx = deps
        .iter()
        .position(|&d| d < target)
        .expect("checked above");
    let (mut lo, mut hi) = (grid[idx - 1], grid[idx]);
    while hi - lo > tol * hi {
        // Geometric midpoints while the bracket spans decades.
        let mid = if hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if dep_at(params, mid)? >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Both power bounds and whether they leave a nonempty interval.
pub fn power_bounds(
    params: &SystemParams,
    p_min: f64,
    p_max: f64,
    tol: f64,
) -> Result<PowerBounds, OptimizerError> {
    params.validate()?;
    check_range(p_min, p_max)?;
    let p_low = lower_bound_value(params);
    let p_up = match power_upper_bound(params, p_min, p_max, tol) {
        Ok(p) => p,
        Err(OptimizerError::CovertnessInfeasible { .. }) => f64::NAN,
        Err(e) => return Err(e),
    };
    let feasible =
        p_up.is_finite() && p_low <= p_max && p_up >= p_low && p_low <= DEFAULT_ABSOLUTE_POWER_CAP;
    Ok(PowerBounds {
        p_low,
        p_up,
        feasible,
        upper_clipped: p_up == p_max,
    })
}

/// Power maximizing the covert rate subject to both constraints.
pub fn optimal_power(
    params: &SystemParams,
    p_min: f64,
    p_max: f64,
) -> Result<OptimalPowerResult, OptimizerError> {
    optimal_power_with_tol(params, p_min, p_max, DEFAULT_BISECTION_TOL)
}

pub fn optimal_power_with_tol(
    params: &SystemParams,
    p_min: f64,
    p_max: f64,
    tol: f64,
) -> Result<OptimalPowerResult, OptimizerError> {
    let bounds = power_bounds(params, p_min, p_max, tol)?;
    if !bounds.feasible {
        return Ok(OptimalPowerResult {
            p_star: None,
            rate_star: None,
            bounds,
        });
    }
    let p_star = bounds.p_up;
    Ok(OptimalPowerResult {
        p_star: Some(p_star),
        rate_star: Some(analytic::covert_rate(params, p_star)?),
        bounds,
    })
}

/// Largest user count with a nonempty feasible power interval. Every
/// `k = 1..=q` is evaluated; feasibility need not be monotone in `k`.
pub fn max_users(
    template: &SystemParams,
    p_min: f64,
    p_max: f64,
) -> Result<CapacityResult, OptimizerError> {
    check_range(p_min, p_max)?;
    let per_k = (1..=template.q)
        .into_par_iter()
        .map(|k| {
            power_bounds(&template.with_users(k), p_min, p_max, DEFAULT_BISECTION_TOL)
                .map(|b| (k, b))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let k_star = per_k
        .iter()
        .filter(|(_, b)| b.feasible)
        .map(|&(k, _)| k)
        .max()
        .unwrap_or(0);
    Ok(CapacityResult { k_star, per_k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::ThresholdMode;

    /// Small instance where the covertness constraint actually binds.
    fn binding() -> SystemParams {
        SystemParams {
            m: 2,
            k: 2,
            q: 8,
            samples_per_block: 2,
            gamma_e: 1.5,
            eps_e: 0.1,
            eps_u: 0.1,
            threshold_mode: ThresholdMode::PerSampleNormalized,
            ..SystemParams::default()
        }
    }

    #[test]
    fn lower_bound_examples() {
        let p = SystemParams {
            gamma_u: 2.0,
            k: 4,
            sigma0_sq: 1.0,
            m: 4,
            omega_u: 2.0,
            eps_u: 1.0 - (-1.0f64).exp(),
            ..SystemParams::default()
        };
        assert!((power_lower_bound(&p).unwrap() - 1.0).abs() < 1e-14);
        let p10 = SystemParams { eps_u: 0.1, ..p };
        let v = power_lower_bound(&p10).unwrap();
        assert!((v - 9.491_221_581_029_903).abs() < 1e-10);
        // Inverting RTP numerically lands on the same power.
        assert!((analytic::rtp(&p10.with_power(v)).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(
            power_lower_bound(&SystemParams { gamma_u: 0.0, ..p }).unwrap(),
            0.0
        );
    }

    #[test]
    fn lower_bound_cap() {
        let p = SystemParams {
            eps_u: 1e-15,
            ..SystemParams::default()
        };
        assert!(matches!(
            power_lower_bound(&p),
            Err(OptimizerError::LowerBoundAboveCap { .. })
        ));
    }

    #[test]
    fn upper_bound_vacuous_constraint() {
        let p = SystemParams {
            eps_e: 1.0,
            ..binding()
        };
        assert_eq!(power_upper_bound(&p, 1e-3, 1e3, 1e-6).unwrap(), 1e3);
    }

    #[test]
    fn upper_bound_infeasible_at_p_min() {
        let p = SystemParams {
            eps_e: 0.1,
            ..binding()
        };
        let err = power_upper_bound(&p, 500.0, 1000.0, 1e-6).unwrap_err();
        assert!(
            matches!(err, OptimizerError::CovertnessInfeasible { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn upper_bound_invalid_range() {
        let p = binding();
        assert!(matches!(
            power_upper_bound(&p, 0.0, 1.0, 1e-6),
            Err(OptimizerError::InvalidRange { .. })
        ));
        assert!(matches!(
            power_upper_bound(&p, 2.0, 1.0, 1e-6),
            Err(OptimizerError::InvalidRange { .. })
        ));
    }

    #[test]
    fn upper_bound_hits_target_against_grid_scan() {
        let p = binding();
        let target = 1.0 - p.eps_e;
        let p_up =
            power_upper_bound(&p, DEFAULT_P_MIN, DEFAULT_P_MAX, DEFAULT_BISECTION_TOL).unwrap();
        assert!(p_up < DEFAULT_P_MAX);
        let d = analytic::dep(&p.with_power(p_up)).unwrap();
        assert!((d - target).abs() <= 1e-4, "dep(p_up) = {d}");
        assert!(d >= target);
        // Dense log-grid scan: last grid power meeting the constraint.
        let scan = (0..=4000)
            .map(|i| 10f64.powf(-6.0 + 9.0 * i as f64 / 4000.0))
            .take_while(|&q| analytic::dep(&p.with_power(q)).unwrap() >= target)
            .last()
            .unwrap();
        let step = 10f64.powf(9.0 / 4000.0);
        assert!(p_up >= scan && p_up <= scan * step, "{p_up} vs scan {scan}");
    }

    #[test]
    fn optimal_power_feasible_and_infeasible() {
        let p = binding();
        let r = optimal_power(&p, DEFAULT_P_MIN, DEFAULT_P_MAX).unwrap();
        assert!(r.bounds.feasible);
        let p_star = r.p_star.unwrap();
        assert_eq!(p_star, r.bounds.p_up);
        assert_eq!(
            r.rate_star.unwrap(),
            analytic::covert_rate(&p, p_star).unwrap()
        );
        assert!(analytic::dep(&p.with_power(p_star)).unwrap() >= 1.0 - p.eps_e);
        assert!(analytic::rtp(&p.with_power(p_star)).unwrap() >= 1.0 - p.eps_u);

        // A strict reliability target pushes p_low above p_up.
        let strict = SystemParams { eps_u: 1e-4, ..p };
        let r = optimal_power(&strict, DEFAULT_P_MIN, DEFAULT_P_MAX).unwrap();
        assert!(!r.bounds.feasible);
        assert!(r.bounds.p_up < r.bounds.p_low);
        assert!(r.p_star.is_none() && r.rate_star.is_none());
    }

    #[test]
    fn rate_star_monotone_in_p_max_and_eps_e() {
        let p = binding();
        let mut prev = 0.0;
        for p_max in [5.0, 10.0, 20.0, 50.0, 100.0, 1000.0] {
            let r = optimal_power(&p, DEFAULT_P_MIN, p_max).unwrap();
            let rate = r.rate_star.unwrap_or(0.0);
            // Each bracket stops somewhere within the bisection tolerance.
            assert!(rate >= prev * (1.0 - DEFAULT_BISECTION_TOL));
            prev = rate;
        }
        let mut prev = 0.0;
        for eps_e in [0.02, 0.05, 0.1, 0.2, 0.4] {
            let r =
                optimal_power(&SystemParams { eps_e, ..p }, DEFAULT_P_MIN, DEFAULT_P_MAX).unwrap();
            let rate = r.rate_star.unwrap_or(0.0);
            assert!(
                rate >= prev * (1.0 - DEFAULT_BISECTION_TOL),
                "eps_e = {eps_e}"
            );
            prev = rate;
        }
    }

    #[test]
    fn max_users_extremes() {
        let eased = SystemParams {
            q: 8,
            samples_per_block: 2,
            m: 2,
            eps_e: 1.0,
            // Keeps p_low far below p_max for every k.
            eps_u: 1.0 - (-30.0f64).exp(),
            ..SystemParams::default()
        };
        let r = max_users(&eased, DEFAULT_P_MIN, DEFAULT_P_MAX).unwrap();
        assert_eq!(r.k_star, 8);
        assert_eq!(r.per_k.len(), 8);

        let hopeless = SystemParams {
            eps_e: 0.1,
            ..binding()
        };
        let r = max_users(&hopeless, 500.0, 1000.0).unwrap();
        assert_eq!(r.k_star, 0);
        assert!(r.per_k.iter().all(|(_, b)| !b.feasible && b.p_up.is_nan()));
    }

    #[test]
    fn feasible_midpoints_satisfy_both_constraints() {
        let p = binding();
        let r = max_users(&p, DEFAULT_P_MIN, DEFAULT_P_MAX).unwrap();
        assert!(r.k_star > 0);
        for (k, b) in r.per_k.iter().filter(|(_, b)| b.feasible) {
            let mid = 0.5 * (b.p_low.max(DEFAULT_P_MIN) + b.p_up);
            let at = p.with_users(*k).with_power(mid);
            assert!(analytic::dep(&at).unwrap() >= 1.0 - p.eps_e, "k = {k}");
            assert!(analytic::rtp(&at).unwrap() >= 1.0 - p.eps_u, "k = {k}");
        }
    }
}
