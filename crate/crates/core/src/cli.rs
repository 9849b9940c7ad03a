//! Command-line front end: parameter sweeps as CSV/JSON, the self-check
//! suite, and scheduler episodes.
//!
//! Configuration is a flat `key = value` file; `--set key=value` overrides
//! it. Exit codes: 0 success, 1 validation failure, 2 usage or domain error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{self, SystemParams, ThresholdMode};
use crate::montecarlo::{self, RngSpec};
use crate::optimizer::{self, DEFAULT_BISECTION_TOL, DEFAULT_P_MAX, DEFAULT_P_MIN};
use crate::scheduler::{self, GridConfig, PolicyKind, TieBreak};
use crate::specfun::SeriesControl;
use crate::validation;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Ten significant digits, positional for moderate magnitudes and
/// scientific otherwise; independent of locale.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.9e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{m}e{exp}")
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every setting a command may read.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: SystemParams,
    pub grid: GridConfig,
    pub p_min: f64,
    pub p_max: f64,
    pub bisection_tol: f64,
    pub series: SeriesControl,
    users_per_bs_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            system: SystemParams::default(),
            grid: GridConfig::default(),
            p_min: DEFAULT_P_MIN,
            p_max: DEFAULT_P_MAX,
            bisection_tol: DEFAULT_BISECTION_TOL,
            series: SeriesControl::default(),
            users_per_bs_set: false,
        };
        cfg.sync_grid();
        cfg
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "m",
        "k",
        "q",
        "samples_per_block",
        "p_b",
        "sigma0_sq",
        "omega_e",
        "omega_u",
        "gamma_e",
        "gamma_u",
        "eps_e",
        "eps_u",
        "threshold_mode",
        "p",
        "block_len",
        "users_per_bs",
        "jammed_slots",
        "external_occupancy_prob",
        "sense_miss_prob",
        "sense_fa_prob",
        "persistence",
        "belief_prior",
        "distinct_within_block",
        "shared_control_matrix",
        "tie_break",
        "p_min",
        "p_max",
        "bisection_tol",
        "series_rel_tol",
        "series_max_terms",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let s = &mut self.system;
        let g = &mut self.grid;
        match key.trim() {
            "m" => s.m = parse_value(key, v)?,
            "k" => s.k = parse_value(key, v)?,
            "q" => {
                s.q = parse_value(key, v)?;
                g.q = s.q as usize;
            }
            "samples_per_block" => s.samples_per_block = parse_value(key, v)?,
            "p_b" => s.p_b = parse_value(key, v)?,
            "sigma0_sq" => s.sigma0_sq = parse_value(key, v)?,
            "omega_e" => s.omega_e = parse_value(key, v)?,
            "omega_u" => s.omega_u = parse_value(key, v)?,
            "gamma_e" => s.gamma_e = parse_value(key, v)?,
            "gamma_u" => s.gamma_u = parse_value(key, v)?,
            "eps_e" => s.eps_e = parse_value(key, v)?,
            "eps_u" => s.eps_u = parse_value(key, v)?,
            "threshold_mode" => {
                s.threshold_mode = match v {
                    "raw" => ThresholdMode::Raw,
                    "per_sample_normalized" => ThresholdMode::PerSampleNormalized,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: v.into(),
                            reason: "expected raw or per_sample_normalized".into(),
                        })
                    }
                }
            }
            "p" => g.p = parse_value(key, v)?,
            "block_len" => g.block_len = parse_value(key, v)?,
            "users_per_bs" => {
                g.users_per_bs = parse_list(key, v)?;
                self.users_per_bs_set = true;
            }
            "jammed_slots" => {
                g.jammed_slots = parse_list(key, v)?.into_iter().collect::<BTreeSet<usize>>()
            }
            "external_occupancy_prob" => g.external_occupancy_prob = parse_value(key, v)?,
            "sense_miss_prob" => g.sense_miss_prob = parse_value(key, v)?,
            "sense_fa_prob" => g.sense_fa_prob = parse_value(key, v)?,
            "persistence" => g.persistence = parse_value(key, v)?,
            "belief_prior" => g.belief_prior = parse_value(key, v)?,
            "distinct_within_block" => g.distinct_within_block = parse_value(key, v)?,
            "shared_control_matrix" => g.shared_control_matrix = parse_value(key, v)?,
            "tie_break" => {
                g.tie_break = match v {
                    "random" => TieBreak::Random,
                    "lowest_index" => TieBreak::LowestIndex,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: v.into(),
                            reason: "expected random or lowest_index".into(),
                        })
                    }
                }
            }
            "p_min" => self.p_min = parse_value(key, v)?,
            "p_max" => self.p_max = parse_value(key, v)?,
            "bisection_tol" => self.bisection_tol = parse_value(key, v)?,
            "series_rel_tol" => self.series.rel_tol = parse_value(key, v)?,
            "series_max_terms" => self.series.max_terms = parse_value(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        self.sync_grid();
        Ok(())
    }

    /// Unless given explicitly, users are spread over the `m` base stations
    /// as evenly as possible.
    fn sync_grid(&mut self) {
        if !self.users_per_bs_set {
            let m = self.system.m.max(1) as usize;
            let k = self.system.k as usize;
            self.grid.users_per_bs = (0..m).map(|b| k / m + usize::from(b < k % m)).collect();
        }
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        SeriesControl::new(self.series.rel_tol, self.series.max_terms)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.p_min > 0.0 && self.p_max > self.p_min && self.p_max.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "power range [{}, {}]",
                self.p_min, self.p_max
            )));
        }
        if !(self.bisection_tol > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "bisection_tol = {}",
                self.bisection_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    GreedyBelief,
    RandomHop,
    BlindHop,
}

#[derive(Debug, Parser)]
#[command(
    name = "covert-isc",
    version,
    about = "Covert multi-user transmission: detection error, power and capacity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Monte Carlo trials per estimate; 0 skips simulation where optional.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Output file (standard output when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// DEP versus SNR: closed form and Monte Carlo.
    Dep {
        /// SNR values in dB: a comma list or start:stop:step.
        #[arg(long, default_value = "-10:10:1", allow_hyphen_values = true)]
        snr_db: String,
        #[arg(long, default_value = "4,8,16")]
        k: String,
    },
    /// RTP versus SNR: closed form and Monte Carlo.
    Rtp {
        #[arg(long, default_value = "-10:10:1", allow_hyphen_values = true)]
        snr_db: String,
        #[arg(long, default_value = "4,8,16")]
        k: String,
    },
    /// Feasible power interval, optimal power and covert rate per user count.
    PowerBounds {
        #[arg(long, default_value = "2:16:1")]
        k: String,
    },
    /// Maximum admissible users with p_max set by the SNR.
    Capacity {
        #[arg(long, default_value = "10:30:2", allow_hyphen_values = true)]
        snr_db: String,
        #[arg(long, default_value = "0.05,0.1")]
        eps_u: String,
    },
    /// Identity, cross-route and Monte Carlo self-checks as a JSON report.
    Validate,
    /// Run scheduler episodes and report per-episode statistics.
    Schedule {
        #[arg(long, value_enum, default_value = "greedy-belief")]
        policy: PolicyArg,
        #[arg(long, default_value_t = 10)]
        episodes: u64,
        /// Also write the first episode's occupancy grid as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bad grid `{0}`: {1}")]
    Grid(String, String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Domain(String),
}

/// Parses `a,b,c` or `start:stop:step` (inclusive).
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let err = |m: &str| CliError::Grid(spec.into(), m.into());
    if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|s| s.trim().parse::<f64>().map_err(|e| err(&e.to_string())))
            .collect::<Result<_, _>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(err("expected start:stop:step"));
        };
        if !(step > 0.0) || stop < start || !start.is_finite() || !stop.is_finite() {
            return Err(err("need step > 0 and stop ≥ start"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        if n > 1_000_000 {
            return Err(err("too many points"));
        }
        // Index-based to avoid accumulating rounding in the step.
        Ok((0..=n).map(|i| start + i as f64 * step).collect())
    } else {
        let v: Vec<f64> = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| err(&e.to_string())))
            .collect::<Result<_, _>>()?;
        if v.is_empty() {
            return Err(err("empty"));
        }
        Ok(v)
    }
}

fn parse_k_grid(spec: &str, q: u32) -> Result<Vec<u32>, CliError> {
    parse_grid(spec)?
        .into_iter()
        .map(|x| {
            if x >= 1.0 && x.fract() == 0.0 && x <= f64::from(q) {
                Ok(x as u32)
            } else {
                Err(CliError::Grid(
                    spec.into(),
                    format!("k = {x} must be an integer in 1..={q}"),
                ))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    U(u64),
    B(bool),
    S(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::U(n) => n.to_string(),
            Cell::B(b) => b.to_string(),
            Cell::S(s) => s.clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            // Same rounding as CSV; NaN and infinities become null.
            Cell::F(x) => fmt_f64(*x)
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map_or(serde_json::Value::Null, serde_json::Value::Number),
            Cell::U(n) => (*n).into(),
            Cell::B(b) => (*b).into(),
            Cell::S(s) => s.clone().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut s = self.columns.join(",");
                s.push('\n');
                for row in &self.rows {
                    s.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
                    s.push('\n');
                }
                s
            }
            Format::Json => {
                let rows: Vec<serde_json::Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let map = self
                            .columns
                            .iter()
                            .zip(row)
                            .map(|(c, v)| (c.to_string(), v.json()))
                            .collect();
                        serde_json::Value::Object(map)
                    })
                    .collect();
                let mut s = serde_json::to_string_pretty(&rows).expect("serializable");
                s.push('\n');
                s
            }
        }
    }
}

/// Rendered output and the exit code it implies.
pub struct Outcome {
    pub text: String,
    pub code: i32,
    pub diagnostics: Vec<String>,
}

fn trials_or(cli: &Cli, default: u64) -> u64 {
    cli.trials.unwrap_or(default)
}

fn mc_columns(
    result: Result<montecarlo::EstimateWithError, montecarlo::MonteCarloError>,
) -> (Cell, Cell, Option<String>) {
    match result {
        Ok(e) => (Cell::F(e.mean), Cell::F(e.std_error), None),
        Err(e) => (Cell::F(f64::NAN), Cell::F(f64::NAN), Some(e.to_string())),
    }
}

enum Sweep {
    Dep,
    Rtp,
}

fn cmd_sweep(
    cfg: &RunConfig,
    cli: &Cli,
    snr: &str,
    k: &str,
    which: Sweep,
) -> Result<Outcome, CliError> {
    let snr = parse_grid(snr)?;
    let ks = parse_k_grid(k, cfg.system.q)?;
    let trials = trials_or(cli, 10_000);
    let points: Vec<(usize, f64, u32)> = ks
        .iter()
        .flat_map(|&k| snr.iter().map(move |&s| (s, k)))
        .enumerate()
        .map(|(i, (s, k))| (i, s, k))
        .collect();
    let rows: Vec<(Vec<Cell>, Vec<String>)> = points
        .par_iter()
        .map(|&(i, snr_db, k)| {
            let p = cfg.system.with_users(k);
            let p = p.with_power(analytic::snr_db_to_power(snr_db, p.sigma0_sq));
            let rng = RngSpec::new(cli.seed, i as u64);
            let mut notes = Vec::new();
            let exact = match which {
                Sweep::Dep => analytic::dep(&p),
                Sweep::Rtp => analytic::rtp(&p),
            };
            let exact = exact.unwrap_or_else(|e| {
                notes.push(format!("snr_db={snr_db} k={k}: {e}"));
                f64::NAN
            });
            let (mean, se) = if trials == 0 {
                (Cell::F(f64::NAN), Cell::F(f64::NAN))
            } else {
                let sim = match which {
                    Sweep::Dep => montecarlo::simulate_detector(&p, trials, rng).map(|d| d.dep()),
                    Sweep::Rtp => montecarlo::simulate_rtp(&p, trials, rng),
                };
                let (m, s, err) = mc_columns(sim);
                notes.extend(err.map(|e| format!("snr_db={snr_db} k={k}: {e}")));
                (m, s)
            };
            (
                vec![
                    Cell::F(snr_db),
                    Cell::U(u64::from(k)),
                    Cell::F(exact),
                    mean,
                    se,
                ],
                notes,
            )
        })
        .collect();
    let columns = match which {
        Sweep::Dep => vec!["snr_db", "k", "dep_analytic", "dep_mc_mean", "dep_mc_se"],
        Sweep::Rtp => vec!["snr_db", "k", "rtp_analytic", "rtp_mc_mean", "rtp_mc_se"],
    };
    finish_table(
        Table {
            columns,
            rows: Vec::new(),
        },
        rows,
        cli.format.unwrap_or(Format::Csv),
    )
}

fn finish_table(
    mut table: Table,
    rows: Vec<(Vec<Cell>, Vec<String>)>,
    format: Format,
) -> Result<Outcome, CliError> {
    let mut diagnostics = Vec::new();
    for (row, notes) in rows {
        table.rows.push(row);
        diagnostics.extend(notes);
    }
    Ok(Outcome {
        text: table.render(format),
        code: if diagnostics.is_empty() {
            EXIT_OK
        } else {
            EXIT_USAGE
        },
        diagnostics,
    })
}

fn cmd_power_bounds(cfg: &RunConfig, cli: &Cli, k: &str) -> Result<Outcome, CliError> {
    let ks = parse_k_grid(k, cfg.system.q)?;
    let trials = trials_or(cli, 10_000);
    let rows: Vec<(Vec<Cell>, Vec<String>)> =
        ks.par_iter()
            .enumerate()
            .map(|(i, &k)| {
                let p = cfg.system.with_users(k);
                let mut notes = Vec::new();
                let nan = f64::NAN;
                let (p_low, p_up, feasible, p_star, rate_star) =
                    match optimizer::optimal_power_with_tol(
                        &p,
                        cfg.p_min,
                        cfg.p_max,
                        cfg.bisection_tol,
                    ) {
                        Ok(r) => (
                            r.bounds.p_low,
                            r.bounds.p_up,
                            r.bounds.feasible,
                            r.p_star.unwrap_or(nan),
                            r.rate_star.unwrap_or(nan),
                        ),
                        Err(e) => {
                            notes.push(format!("k={k}: {e}"));
                            (nan, nan, false, nan, nan)
                        }
                    };
                let (mean, se) = if trials == 0 || !p_star.is_finite() {
                    (Cell::F(nan), Cell::F(nan))
                } else {
                    let (m, s, err) = mc_columns(montecarlo::simulate_rate(
                        &p,
                        p_star,
                        trials,
                        RngSpec::new(cli.seed, i as u64),
                    ));
                    notes.extend(err.map(|e| format!("k={k}: {e}")));
                    (m, s)
                };
                let row = vec![
                    Cell::U(u64::from(k)),
                    Cell::F(p_low),
                    Cell::F(p_up),
                    Cell::B(feasible),
                    Cell::F(p_star),
                    Cell::F(rate_star),
                    mean,
                    se,
                ];
                (row, notes)
            })
            .collect();
    let columns = vec![
        "k",
        "p_low",
        "p_up",
        "feasible",
        "p_star",
        "rate_star",
        "rate_mc_mean",
        "rate_mc_se",
    ];
    finish_table(
        Table {
            columns,
            rows: Vec::new(),
        },
        rows,
        cli.format.unwrap_or(Format::Csv),
    )
}

fn cmd_capacity(cfg: &RunConfig, cli: &Cli, snr: &str, eps_u: &str) -> Result<Outcome, CliError> {
    let snr = parse_grid(snr)?;
    let eps = parse_grid(eps_u)?;
    let mut rows = Vec::new();
    for &e in &eps {
        for &s in &snr {
            let template = SystemParams {
                eps_u: e,
                ..cfg.system
            };
            let p_max = analytic::snr_db_to_power(s, template.sigma0_sq);
            let result = template
                .validate()
                .map_err(|err| err.to_string())
                .and_then(|_| {
                    optimizer::max_users(&template, cfg.p_min.min(0.5 * p_max), p_max)
                        .map_err(|err| err.to_string())
                });
            let (k_star, notes) = match result {
                Ok(r) => (Cell::U(u64::from(r.k_star)), vec![]),
                Err(err) => (
                    Cell::F(f64::NAN),
                    vec![format!("snr_db={s} eps_u={e}: {err}")],
                ),
            };
            rows.push((vec![Cell::F(s), Cell::F(e), k_star], notes));
        }
    }
    finish_table(
        Table {
            columns: vec!["snr_db", "eps_u", "k_star"],
            rows: Vec::new(),
        },
        rows,
        cli.format.unwrap_or(Format::Csv),
    )
}

fn cmd_validate(cfg: &RunConfig, cli: &Cli) -> Result<Outcome, CliError> {
    let trials = trials_or(cli, 20_000);
    let report = validation::run(&cfg.system, cfg.series, trials, cli.seed);
    let code = if report.all_passed() {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    };
    let text = match cli.format.unwrap_or(Format::Json) {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Domain(e.to_string()))?;
            s.push('\n');
            s
        }
        Format::Csv => {
            let rows = report
                .checks
                .iter()
                .map(|c| {
                    vec![
                        Cell::S(c.group.into()),
                        Cell::S(c.name.clone()),
                        Cell::B(c.pass),
                        Cell::U(c.points),
                        Cell::F(c.worst.unwrap_or(f64::NAN)),
                        Cell::F(c.tolerance),
                    ]
                })
                .collect();
            Table {
                columns: vec!["group", "name", "pass", "points", "worst", "tolerance"],
                rows,
            }
            .render(Format::Csv)
        }
    };
    let diagnostics = report
        .checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("check failed: {}/{} {}", c.group, c.name, c.detail))
        .collect();
    Ok(Outcome {
        text,
        code,
        diagnostics,
    })
}

fn cmd_schedule(
    cfg: &RunConfig,
    cli: &Cli,
    policy: PolicyArg,
    episodes: u64,
    trace: Option<&Path>,
) -> Result<Outcome, CliError> {
    let grid = &cfg.grid;
    grid.validate()
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let policy = match policy {
        PolicyArg::GreedyBelief => PolicyKind::GreedyBelief(grid.tie_break),
        PolicyArg::RandomHop => PolicyKind::RandomHop,
        PolicyArg::BlindHop => PolicyKind::BlindHop,
    };
    let results: Vec<_> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let spec = RngSpec::new(cli.seed, e);
            if e == 0 && trace.is_some() {
                scheduler::run_episode_traced(grid, &policy, spec).map(|(s, g)| (s, Some(g)))
            } else {
                scheduler::run_episode(grid, &policy, spec).map(|s| (s, None))
            }
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Domain(e.to_string()))?;
    if let (Some(path), Some((_, Some(g)))) = (trace, results.first()) {
        let file = fs::File::create(path)?;
        g.write_csv(io::BufWriter::new(file))?;
    }
    let text = match cli.format.unwrap_or(Format::Csv) {
        Format::Json => {
            let records: Vec<serde_json::Value> = results
                .iter()
                .enumerate()
                .map(|(e, (s, _))| {
                    let mut v = serde_json::to_value(s).expect("serializable");
                    v["episode"] = e.into();
                    v["policy"] = policy.name().into();
                    v["pattern_entropy"] = Cell::F(s.pattern_entropy).json();
                    v
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&records).expect("serializable");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut columns = vec!["episode", "policy"];
            let mut rows = Vec::new();
            for (e, (s, _)) in results.iter().enumerate() {
                let record = s.record();
                if e == 0 {
                    columns.extend(record.iter().map(|(k, _)| *k));
                }
                let mut row = vec![Cell::U(e as u64), Cell::S(policy.name().into())];
                row.extend(record.into_iter().map(|(_, v)| Cell::S(v)));
                rows.push(row);
            }
            Table { columns, rows }.render(Format::Csv)
        }
    };
    Ok(Outcome {
        text,
        code: EXIT_OK,
        diagnostics: Vec::new(),
    })
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for item in &cli.set {
        let (k, v) = item.split_once('=').ok_or_else(|| ConfigError::BadValue {
            key: item.clone(),
            value: String::new(),
            reason: "expected KEY=VALUE".into(),
        })?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Dep { snr_db, k } => cmd_sweep(&cfg, cli, snr_db, k, Sweep::Dep),
        Command::Rtp { snr_db, k } => cmd_sweep(&cfg, cli, snr_db, k, Sweep::Rtp),
        Command::PowerBounds { k } => cmd_power_bounds(&cfg, cli, k),
        Command::Capacity { snr_db, eps_u } => cmd_capacity(&cfg, cli, snr_db, eps_u),
        Command::Validate => cmd_validate(&cfg, cli),
        Command::Schedule {
            policy,
            episodes,
            trace,
        } => cmd_schedule(&cfg, cli, *policy, *episodes, trace.as_deref()),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match execute(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    for d in &outcome.diagnostics {
        eprintln!("{d}");
    }
    let written = match &cli.out {
        Some(path) => fs::write(path, &outcome.text),
        None => io::stdout().lock().write_all(outcome.text.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("error: cannot write output: {e}");
        return EXIT_USAGE;
    }
    outcome.code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1.0 / 3.0), "0.3333333333");
        assert_eq!(fmt_f64(9.491221581029903), "9.491221581");
        assert_eq!(fmt_f64(1e-60), "1e-60");
        assert_eq!(fmt_f64(-2.5e12), "-2.5e12");
        assert_eq!(fmt_f64(123456.0), "123456");
        assert_eq!(fmt_f64(9.9999999999e9), "1e10");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        assert_eq!(fmt_f64(0.0), "0");
    }

    #[test]
    fn config_keys_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\nq = 8\nk=3\nm = 2\nthreshold_mode = raw\njammed_slots = 1, 4\n")
            .unwrap();
        assert_eq!(cfg.system.q, 8);
        assert_eq!(cfg.grid.q, 8);
        assert_eq!(cfg.system.threshold_mode, ThresholdMode::Raw);
        assert_eq!(cfg.grid.users_per_bs, vec![2, 1]);
        assert_eq!(cfg.grid.jammed_slots, BTreeSet::from([1, 4]));
        assert!(matches!(
            cfg.set("colour", "blue"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            cfg.set("k", "four"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            cfg.apply_text("no equals sign"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        for key in RunConfig::KEYS {
            assert!(
                !matches!(cfg.clone().set(key, "x"), Err(ConfigError::UnknownKey(_))),
                "{key}"
            );
        }
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(
            parse_grid("-10:10:5").unwrap(),
            vec![-10.0, -5.0, 0.0, 5.0, 10.0]
        );
        assert_eq!(parse_grid("1,2.5").unwrap(), vec![1.0, 2.5]);
        assert_eq!(parse_grid("0:1:0.1").unwrap().len(), 11);
        assert!(parse_grid("1:0:1").is_err());
        assert!(parse_grid("a").is_err());
        assert!(parse_k_grid("0,1", 8).is_err());
        assert!(parse_k_grid("9", 8).is_err());
    }
}
