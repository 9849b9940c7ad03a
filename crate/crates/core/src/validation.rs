//! Self-check suite: special-function identities, the two miss-detection
//! routes against each other, and closed forms against Monte Carlo.

use serde::Serialize;

use crate::analytic::{self, MdMethod, SystemParams, ThresholdMode};
use crate::montecarlo::{self, EstimateWithError, RngSpec};
use crate::specfun::{self, SeriesControl};

/// Monte Carlo checks pass at this many standard errors. Looser than the
/// 3-SE acceptance bound so arbitrary seeds rarely trip a correct build.
pub const MC_Z_LIMIT: f64 = 4.0;
pub const MD_ROUTE_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub group: &'static str,
    pub name: String,
    pub pass: bool,
    /// Points evaluated (grid size, or trials for Monte Carlo checks).
    pub points: u64,
    /// Worst observed error, in the unit of `tolerance`.
    pub worst: Option<f64>,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub seed: u64,
    pub trials: u64,
    pub passed: usize,
    pub failed: usize,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

fn rel_err(value: f64, reference: f64) -> f64 {
    if value == reference {
        0.0
    } else {
        ((value - reference) / reference).abs()
    }
}

/// Folds grid-point errors into one check. Evaluation failures count as
/// infinite error.
fn grid_check<I>(group: &'static str, name: &str, tolerance: f64, errors: I) -> Check
where
    I: IntoIterator<Item = Result<f64, String>>,
{
    let mut worst: f64 = 0.0;
    let mut points = 0;
    let mut failures = Vec::new();
    for e in errors {
        points += 1;
        match e {
            Ok(v) if v.is_finite() => worst = worst.max(v),
            Ok(v) => {
                worst = f64::INFINITY;
                failures.push(format!("non-finite error {v}"));
            }
            Err(msg) => {
                worst = f64::INFINITY;
                failures.push(msg);
            }
        }
    }
    Check {
        group,
        name: name.to_string(),
        pass: worst <= tolerance,
        points,
        worst: worst.is_finite().then_some(worst),
        tolerance,
        detail: failures.first().cloned().unwrap_or_default(),
    }
}

pub fn identity_checks(ctl: SeriesControl) -> Vec<Check> {
    let mut out = Vec::new();

    let s_grid = [0.5, 1.0, 2.5, 8.0, 32.0, 128.0, 512.0];
    out.push(grid_check(
        "identity",
        "gamma_p_plus_q",
        1e-12,
        s_grid.iter().flat_map(|&s| {
            [0.1, 1.0, 0.5 * s, s, 2.0 * s].map(move |x| {
                specfun::reg_gamma_pair(s, x)
                    .map(|(p, q)| (p + q - 1.0).abs())
                    .map_err(|e| e.to_string())
            })
        }),
    ));

    out.push(grid_check(
        "identity",
        "kummer_1f1_equal_parameters",
        1e-10,
        [0.5, 1.0, 3.0, 10.0, 40.0].iter().flat_map(|&a| {
            [0.0, 0.5, 5.0, 20.0, 50.0].map(move |z| {
                specfun::kummer_1f1(a, a, z, ctl)
                    .map(|v| rel_err(v, z.exp()))
                    .map_err(|e| e.to_string())
            })
        }),
    ));

    out.push(grid_check(
        "identity",
        "tricomi_u_power",
        1e-9,
        [0.3, 1.0, 2.5, 7.0, 20.0].iter().flat_map(|&a| {
            [0.2, 1.0, 5.0, 20.0, 100.0].map(move |z| {
                specfun::ln_tricomi_u(a, a + 1.0, z, ctl)
                    .map(|ln_u| rel_err(ln_u.exp(), z.powf(-a)))
                    .map_err(|e| e.to_string())
            })
        }),
    ));

    // U(a, b, z) = z^{1-b} U(1 + a - b, 2 - b, z)
    let mut kummer = Vec::new();
    for a in [0.5, 2.0, 12.0] {
        for b in [-3.0, 0.5, 1.4] {
            for z in [0.3, 3.0, 40.0] {
                kummer.push((a, b, z));
            }
        }
    }
    out.push(grid_check(
        "identity",
        "tricomi_u_kummer_transformation",
        1e-8,
        kummer.into_iter().map(|(a, b, z)| {
            let lhs = specfun::ln_tricomi_u(a, b, z, ctl).map_err(|e| e.to_string())?;
            let rhs =
                specfun::ln_tricomi_u(1.0 + a - b, 2.0 - b, z, ctl).map_err(|e| e.to_string())?;
            Ok((lhs - ((1.0 - b) * z.ln() + rhs)).exp_m1().abs())
        }),
    ));
    out
}

/// Grid on which the series route is compared with the quadrature route.
pub fn md_route_grid(base: &SystemParams) -> Vec<SystemParams> {
    let mut grid = Vec::new();
    for k in [4, 8, 16] {
        for snr_db in [30.0, 38.0, 45.0] {
            let p = base.with_users(k);
            grid.push(p.with_power(analytic::snr_db_to_power(snr_db, p.sigma0_sq)));
        }
    }
    grid.push(small_instance());
    grid
}

/// Outcome of comparing the two miss-detection routes at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RouteComparison {
    Agree(f64),
    SeriesDiverged,
    Failed,
}

pub fn compare_md_routes(params: &SystemParams, ctl: SeriesControl) -> RouteComparison {
    let series = match analytic::miss_detection_prob_with(params, MdMethod::Series, ctl) {
        Ok(v) => v,
        Err(analytic::AnalyticError::Special(specfun::SpecialError::Convergence { .. })) => {
            return RouteComparison::SeriesDiverged;
        }
        Err(_) => return RouteComparison::Failed,
    };
    match analytic::miss_detection_prob_with(params, MdMethod::Quadrature, ctl) {
        Ok(quad) => RouteComparison::Agree(rel_err(series, quad)),
        Err(_) => RouteComparison::Failed,
    }
}

pub fn md_route_check(base: &SystemParams, ctl: SeriesControl) -> Check {
    let grid = md_route_grid(base);
    let mut worst: f64 = 0.0;
    let mut converged = 0;
    let mut failed = 0;
    for p in &grid {
        match compare_md_routes(p, ctl) {
            RouteComparison::Agree(e) => {
                converged += 1;
                worst = worst.max(e);
            }
            RouteComparison::SeriesDiverged => {}
            RouteComparison::Failed => failed += 1,
        }
    }
    Check {
        group: "md_routes",
        name: "series_vs_quadrature".into(),
        pass: failed == 0 && converged >= 9 && worst <= MD_ROUTE_REL_TOL,
        points: converged,
        worst: Some(worst),
        tolerance: MD_ROUTE_REL_TOL,
        detail: format!(
            "{converged} of {} points converged, {failed} failed",
            grid.len()
        ),
    }
}

/// Non-degenerate instance: every detector probability is well inside (0, 1).
pub fn small_instance() -> SystemParams {
    SystemParams {
        m: 2,
        k: 2,
        q: 4,
        samples_per_block: 2,
        p_b: 4.0,
        gamma_e: 8.0,
        threshold_mode: ThresholdMode::Raw,
        ..SystemParams::default()
    }
}

fn mc_check(name: String, estimate: &EstimateWithError, expected: f64, proportion: bool) -> Check {
    let se = if proportion {
        estimate.null_std_error(expected)
    } else {
        estimate.std_error
    };
    let diff = (estimate.mean - expected).abs();
    let z = if diff == 0.0 { 0.0 } else { diff / se };
    Check {
        group: "monte_carlo",
        name,
        pass: z <= MC_Z_LIMIT,
        points: estimate.trials,
        worst: z.is_finite().then_some(z),
        tolerance: MC_Z_LIMIT,
        detail: format!(
            "analytic {expected:.10e}, simulated {:.10e} ± {se:.3e}",
            estimate.mean
        ),
    }
}

fn failed_check(name: String, err: impl std::fmt::Display) -> Check {
    Check {
        group: "monte_carlo",
        name,
        pass: false,
        points: 0,
        worst: None,
        tolerance: MC_Z_LIMIT,
        detail: err.to_string(),
    }
}

pub fn monte_carlo_checks(base: &SystemParams, trials: u64, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut stream = 0u64;
    let mut next_rng = || {
        stream += 1;
        RngSpec::new(seed, stream)
    };

    let mut cases = vec![("small".to_string(), small_instance())];
    for snr_db in [30.0, 40.0] {
        cases.push((
            format!("config@{snr_db}dB"),
            base.with_power(analytic::snr_db_to_power(snr_db, base.sigma0_sq)),
        ));
    }
    for (label, p) in &cases {
        let rng = next_rng();
        match (
            analytic::detection_errors(p),
            montecarlo::simulate_detector(p, trials, rng),
        ) {
            (Ok(exact), Ok(sim)) => {
                out.push(mc_check(
                    format!("p_fa[{label}]"),
                    &sim.p_fa,
                    exact.false_alarm,
                    true,
                ));
                out.push(mc_check(
                    format!("p_md[{label}]"),
                    &sim.p_md,
                    exact.miss_detection,
                    true,
                ));
                let dep = sim.dep();
                let se = sim
                    .p_fa
                    .null_std_error(exact.false_alarm)
                    .hypot(sim.p_md.null_std_error(exact.miss_detection));
                let diff = (dep.mean - exact.dep()).abs();
                let z = if diff == 0.0 { 0.0 } else { diff / se };
                out.push(Check {
                    group: "monte_carlo",
                    name: format!("dep[{label}]"),
                    pass: z <= MC_Z_LIMIT,
                    points: trials,
                    worst: z.is_finite().then_some(z),
                    tolerance: MC_Z_LIMIT,
                    detail: format!(
                        "analytic {:.10e}, simulated {:.10e} ± {se:.3e}",
                        exact.dep(),
                        dep.mean
                    ),
                });
            }
            (Err(e), _) => out.push(failed_check(format!("detector[{label}]"), e)),
            (_, Err(e)) => out.push(failed_check(format!("detector[{label}]"), e)),
        }
    }

    // Reliability on the configured instance at the power where RTP = 1/e.
    let p_rtp = base.with_power(
        base.gamma_u * f64::from(base.k) * base.sigma0_sq / (f64::from(base.m) * base.omega_u),
    );
    let rng = next_rng();
    match (
        analytic::rtp(&p_rtp),
        montecarlo::simulate_rtp(&p_rtp, trials, rng),
    ) {
        (Ok(exact), Ok(sim)) => out.push(mc_check("rtp".into(), &sim, exact, true)),
        (Err(e), _) => out.push(failed_check("rtp".into(), e)),
        (_, Err(e)) => out.push(failed_check("rtp".into(), e)),
    }
    let rng = next_rng();
    let p_rate = base.p_b.max(f64::MIN_POSITIVE);
    match (
        analytic::covert_rate(base, p_rate),
        montecarlo::simulate_rate(base, p_rate, trials, rng),
    ) {
        (Ok(exact), Ok(sim)) => out.push(mc_check("covert_rate".into(), &sim, exact, false)),
        (Err(e), _) => out.push(failed_check("covert_rate".into(), e)),
        (_, Err(e)) => out.push(failed_check("covert_rate".into(), e)),
    }
    out
}

/// Runs every check group. Deterministic for a fixed seed.
pub fn run(base: &SystemParams, ctl: SeriesControl, trials: u64, seed: u64) -> Report {
    let mut checks = identity_checks(ctl);
    checks.push(md_route_check(base, ctl));
    checks.extend(monte_carlo_checks(base, trials, seed));
    let passed = checks.iter().filter(|c| c.pass).count();
    Report {
        seed,
        trials,
        passed,
        failed: checks.len() - passed,
        checks,
    }
}
