//! Time–frequency occupation simulator.
//!
//! Each time slot has a sensing phase (every base station observes the q
//! frequency slots through a noisy detector) and a decision phase (every base
//! station assigns one slot to each of its users). Base stations keep separate
//! beliefs and, unless the shared control matrix is enabled, do not see each
//! other's assignments.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::montecarlo::RngSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
}

/// Too few candidate slots for every user of a base station. Users that
/// could not be placed are `None` in `partial`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{unserved} of {} users left without a frequency slot", partial.len())]
pub struct Overload {
    pub partial: Vec<Option<usize>>,
    pub unserved: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Uniform among slots sharing the lowest belief.
    #[default]
    Random,
    LowestIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub q: usize,
    /// Time slots simulated per episode.
    pub p: usize,
    pub block_len: usize,
    pub users_per_bs: Vec<usize>,
    pub jammed_slots: BTreeSet<usize>,
    pub external_occupancy_prob: f64,
    pub sense_miss_prob: f64,
    pub sense_fa_prob: f64,
    /// Probability a slot keeps its occupancy state between time slots, as
    /// assumed by the belief model.
    pub persistence: f64,
    pub belief_prior: f64,
    /// Forbid reusing any frequency within the current data block, not just
    /// the one used in the previous time slot.
    pub distinct_within_block: bool,
    /// Base stations decide in index order and see earlier assignments.
    pub shared_control_matrix: bool,
    pub tie_break: TieBreak,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            q: 64,
            p: 1000,
            block_len: 8,
            users_per_bs: vec![1; 4],
            jammed_slots: BTreeSet::from([0]),
            external_occupancy_prob: 0.0,
            sense_miss_prob: 0.0,
            sense_fa_prob: 0.0,
            persistence: 0.8,
            belief_prior: 0.5,
            distinct_within_block: false,
            shared_control_matrix: false,
            tie_break: TieBreak::Random,
        }
    }
}

impl GridConfig {
    pub fn base_stations(&self) -> usize {
        self.users_per_bs.len()
    }

    pub fn total_users(&self) -> usize {
        self.users_per_bs.iter().sum()
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        let bad = |msg: String| Err(SchedulerError::InvalidConfig(msg));
        if self.q == 0 || self.p == 0 || self.block_len == 0 {
            return bad("q, p and block_len must be positive".into());
        }
        if self.block_len > self.p {
            return bad(format!("block_len {} exceeds p {}", self.block_len, self.p));
        }
        if self.users_per_bs.is_empty() || self.base_stations() > 1 << 15 {
            return bad("between 1 and 32768 base stations are required".into());
        }
        if self.total_users() > self.q {
            return bad(format!(
                "{} users exceed q = {}",
                self.total_users(),
                self.q
            ));
        }
        if let Some(&s) = self.jammed_slots.iter().find(|&&s| s >= self.q) {
            return bad(format!("jammed slot {s} outside 0..{}", self.q));
        }
        for (name, v) in [
            ("external_occupancy_prob", self.external_occupancy_prob),
            ("sense_miss_prob", self.sense_miss_prob),
            ("sense_fa_prob", self.sense_fa_prob),
            ("persistence", self.persistence),
            ("belief_prior", self.belief_prior),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Occupant {
    Free,
    Jammer,
    External,
    User(usize),
    /// A user transmitting on a jammed or externally occupied cell.
    Hit(usize),
    /// Two or more users on the same cell.
    Collision,
}

impl Occupant {
    pub fn is_occupied(self) -> bool {
        !matches!(self, Occupant::Free)
    }

    pub fn tag(self) -> String {
        match self {
            Occupant::Free => "free".into(),
            Occupant::Jammer => "jammer".into(),
            Occupant::External => "external".into(),
            Occupant::User(u) => format!("user:{u}"),
            Occupant::Hit(u) => format!("hit:{u}"),
            Occupant::Collision => "collision".into(),
        }
    }
}

/// Ground truth, one row of `q` tags per time slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OccupancyGrid {
    pub rows: Vec<Vec<Occupant>>,
}

impl OccupancyGrid {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time_slot,freq_slot,occupant_tag")?;
        for (t, row) in self.rows.iter().enumerate() {
            for (f, cell) in row.iter().enumerate() {
                writeln!(out, "{t},{f},{}", cell.tag())?;
            }
        }
        Ok(())
    }
}

/// Posterior probability that each slot is held by a non-legitimate source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefState {
    pub occupied: Vec<f64>,
}

impl BeliefState {
    pub fn uniform(q: usize, prior: f64) -> Self {
        Self {
            occupied: vec![prior; q],
        }
    }

    /// Two-state Markov prediction with symmetric persistence.
    pub fn predict(&self, persistence: f64) -> Self {
        let occupied = self
            .occupied
            .iter()
            .map(|&b| persistence * b + (1.0 - persistence) * (1.0 - b))
            .collect();
        Self { occupied }
    }

    /// Bayes correction with the detector's miss and false-alarm rates.
    pub fn correct(&self, obs: &[bool], miss: f64, fa: f64) -> Self {
        let occupied = self
            .occupied
            .iter()
            .zip(obs)
            .map(|(&b, &seen)| {
                let (l_occ, l_free) = if seen {
                    (1.0 - miss, fa)
                } else {
                    (miss, 1.0 - fa)
                };
                let num = b * l_occ;
                let den = num + (1.0 - b) * l_free;
                // An observation impossible under both states carries no information.
                if den > 0.0 {
                    num / den
                } else {
                    b
                }
            })
            .collect();
        Self { occupied }
    }
}

pub fn update_beliefs(beliefs: &BeliefState, obs: &[bool], cfg: &GridConfig) -> BeliefState {
    beliefs
        .predict(cfg.persistence)
        .correct(obs, cfg.sense_miss_prob, cfg.sense_fa_prob)
}

/// Noisy per-slot occupancy observation of one ground-truth row.
pub fn sense(truth: &[Occupant], cfg: &GridConfig, rng: &mut ChaCha8Rng) -> Vec<bool> {
    truth
        .iter()
        .map(|cell| {
            if cell.is_occupied() {
                rng.random_bool(1.0 - cfg.sense_miss_prob)
            } else {
                rng.random_bool(cfg.sense_fa_prob)
            }
        })
        .collect()
}

/// What a base station knows when assigning its users for one time slot.
#[derive(Debug, Clone)]
pub struct DecisionContext<'a> {
    pub beliefs: &'a BeliefState,
    /// Per user, frequencies it may not use now (hopping constraint).
    pub forbidden: &'a [Vec<usize>],
    /// Slots already taken by other base stations (shared control matrix).
    pub blocked: &'a [bool],
}

/// A per-base-station decision rule; a learned agent can implement this.
pub trait Policy {
    fn decide(
        &self,
        ctx: &DecisionContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>, Overload>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Lowest occupied-belief slot first.
    GreedyBelief(TieBreak),
    /// Uniform over slots believed free (belief < 1/2).
    RandomHop,
    /// Uniform over all slots, ignoring beliefs; the reference baseline.
    BlindHop,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::GreedyBelief(_) => "greedy_belief",
            PolicyKind::RandomHop => "random_hop",
            PolicyKind::BlindHop => "blind_hop",
        }
    }
}

impl Policy for PolicyKind {
    fn decide(
        &self,
        ctx: &DecisionContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>, Overload> {
        decide(ctx, *self, rng)
    }
}

pub fn decide(
    ctx: &DecisionContext<'_>,
    policy: PolicyKind,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, Overload> {
    let beliefs = &ctx.beliefs.occupied;
    let mut taken = ctx.blocked.to_vec();
    let mut partial = Vec::with_capacity(ctx.forbidden.len());
    let mut candidates = Vec::with_capacity(beliefs.len());
    for forbidden in ctx.forbidden {
        candidates.clear();
        candidates.extend((0..beliefs.len()).filter(|&s| {
            !taken[s]
                && !forbidden.contains(&s)
                && (policy != PolicyKind::RandomHop || beliefs[s] < 0.5)
        }));
        let choice = match policy {
            _ if candidates.is_empty() => None,
            PolicyKind::GreedyBelief(tie) => {
                let best = candidates
                    .iter()
                    .map(|&s| beliefs[s])
                    .fold(f64::INFINITY, f64::min);
                candidates.retain(|&s| beliefs[s] == best);
                match tie {
                    TieBreak::LowestIndex => Some(candidates[0]),
                    TieBreak::Random => Some(candidates[rng.random_range(0..candidates.len())]),
                }
            }
            PolicyKind::RandomHop | PolicyKind::BlindHop => {
                Some(candidates[rng.random_range(0..candidates.len())])
            }
        };
        if let Some(s) = choice {
            taken[s] = true;
        }
        partial.push(choice);
    }
    let unserved = partial.iter().filter(|c| c.is_none()).count();
    if unserved > 0 {
        Err(Overload { partial, unserved })
    } else {
        Ok(partial
            .into_iter()
            .map(|c| c.expect("all served"))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EpisodeStats {
    pub time_slots: u64,
    pub users: u64,
    pub transmissions: u64,
    pub collisions: u64,
    pub jammer_hits: u64,
    pub hop_violations: u64,
    pub blocks_delivered: u64,
    /// User-slots left unserved by overloaded decisions.
    pub unserved: u64,
    pub pattern_entropy: f64,
}

impl EpisodeStats {
    pub fn jammer_hit_rate(&self) -> f64 {
        if self.transmissions == 0 {
            0.0
        } else {
            self.jammer_hits as f64 / self.transmissions as f64
        }
    }

    pub fn collision_rate(&self) -> f64 {
        self.collisions as f64 / self.time_slots.max(1) as f64
    }

    /// Flat key–value view.
    pub fn record(&self) -> Vec<(&'static str, String)> {
        vec![
            ("time_slots", self.time_slots.to_string()),
            ("users", self.users.to_string()),
            ("transmissions", self.transmissions.to_string()),
            ("collisions", self.collisions.to_string()),
            ("jammer_hits", self.jammer_hits.to_string()),
            ("hop_violations", self.hop_violations.to_string()),
            ("blocks_delivered", self.blocks_delivered.to_string()),
            ("unserved", self.unserved.to_string()),
            ("pattern_entropy", crate::cli::fmt_f64(self.pattern_entropy)),
        ]
    }
}

fn entropy_bits(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let f = c as f64 / n;
            -f * f.log2()
        })
        .sum()
}

pub fn run_episode<P: Policy + ?Sized>(
    cfg: &GridConfig,
    policy: &P,
    rng: RngSpec,
) -> Result<EpisodeStats, SchedulerError> {
    simulate(cfg, policy, rng, false).map(|(stats, _)| stats)
}

/// As [`run_episode`], also returning the realized occupancy grid.
pub fn run_episode_traced<P: Policy + ?Sized>(
    cfg: &GridConfig,
    policy: &P,
    rng: RngSpec,
) -> Result<(EpisodeStats, OccupancyGrid), SchedulerError> {
    simulate(cfg, policy, rng, true)
}

struct UserTrack {
    previous: Option<usize>,
    block_used: Vec<usize>,
    block_clean: bool,
    usage: Vec<u64>,
}

fn simulate<P: Policy + ?Sized>(
    cfg: &GridConfig,
    policy: &P,
    spec: RngSpec,
    keep_trace: bool,
) -> Result<(EpisodeStats, OccupancyGrid), SchedulerError> {
    cfg.validate()?;
    let q = cfg.q;
    let n_bs = cfg.base_stations();
    // The episode's stream is widened into one substream for the environment
    // and two per base station, so sensing and decisions draw independently.
    let base = spec.stream << 16;
    let mut env_rng = spec.substream(base).rng();
    let mut sense_rngs: Vec<_> = (0..n_bs as u64)
        .map(|b| spec.substream(base + 1 + 2 * b).rng())
        .collect();
    let mut decide_rngs: Vec<_> = (0..n_bs as u64)
        .map(|b| spec.substream(base + 2 + 2 * b).rng())
        .collect();

    let mut beliefs = vec![BeliefState::uniform(q, cfg.belief_prior); n_bs];
    let mut users: Vec<UserTrack> = (0..cfg.total_users())
        .map(|_| UserTrack {
            previous: None,
            block_used: Vec::new(),
            block_clean: true,
            usage: vec![0; q],
        })
        .collect();
    let first_user: Vec<usize> = cfg
        .users_per_bs
        .iter()
        .scan(0, |acc, &n| {
            let start = *acc;
            *acc += n;
            Some(start)
        })
        .collect();

    let mut stats = EpisodeStats {
        time_slots: cfg.p as u64,
        users: users.len() as u64,
        ..EpisodeStats::default()
    };
    let mut grid = OccupancyGrid::default();
    let mut assigned: Vec<Option<usize>> = vec![None; users.len()];

    for t in 0..cfg.p {
        if t % cfg.block_len == 0 {
            for u in &mut users {
                u.block_used.clear();
                u.block_clean = true;
            }
        }
        let truth: Vec<Occupant> = (0..q)
            .map(|s| {
                if cfg.jammed_slots.contains(&s) {
                    Occupant::Jammer
                } else if env_rng.random_bool(cfg.external_occupancy_prob) {
                    Occupant::External
                } else {
                    Occupant::Free
                }
            })
            .collect();

        let mut blocked = vec![false; q];
        for b in 0..n_bs {
            let obs = sense(&truth, cfg, &mut sense_rngs[b]);
            beliefs[b] = update_beliefs(&beliefs[b], &obs, cfg);
            let ids = first_user[b]..first_user[b] + cfg.users_per_bs[b];
            let forbidden: Vec<Vec<usize>> = users[ids.clone()]
                .iter()
                .map(|u| {
                    if cfg.distinct_within_block {
                        u.block_used.clone()
                    } else {
                        u.previous.into_iter().collect()
                    }
                })
                .collect();
            let no_block = vec![false; q];
            let ctx = DecisionContext {
                beliefs: &beliefs[b],
                forbidden: &forbidden,
                blocked: if cfg.shared_control_matrix {
                    &blocked
                } else {
                    &no_block
                },
            };
            let choice = match policy.decide(&ctx, &mut decide_rngs[b]) {
                Ok(c) => c.into_iter().map(Some).collect(),
                Err(o) => o.partial,
            };
            for (id, c) in ids.zip(choice) {
                assigned[id] = c;
                if let Some(s) = c {
                    blocked[s] = true;
                }
            }
        }

        let mut load = vec![0u32; q];
        for s in assigned.iter().flatten() {
            load[*s] += 1;
        }
        stats.collisions += load.iter().filter(|&&n| n >= 2).count() as u64;
        let mut row = truth.clone();
        for (id, u) in users.iter_mut().enumerate() {
            let Some(s) = assigned[id] else {
                stats.unserved += 1;
                u.block_clean = false;
                u.previous = None;
                continue;
            };
            stats.transmissions += 1;
            u.usage[s] += 1;
            if u.previous == Some(s) {
                stats.hop_violations += 1;
            }
            let hit = truth[s].is_occupied();
            if hit {
                stats.jammer_hits += 1;
            }
            if hit || load[s] >= 2 {
                u.block_clean = false;
            }
            u.previous = Some(s);
            u.block_used.push(s);
            row[s] = if load[s] >= 2 {
                Occupant::Collision
            } else if hit {
                Occupant::Hit(id)
            } else {
                Occupant::User(id)
            };
        }
        if (t + 1) % cfg.block_len == 0 {
            stats.blocks_delivered += users.iter().filter(|u| u.block_clean).count() as u64;
        }
        if keep_trace {
            grid.rows.push(row);
        }
    }

    let active: Vec<f64> = users
        .iter()
        .filter(|u| u.usage.iter().any(|&c| c > 0))
        .map(|u| entropy_bits(&u.usage))
        .collect();
    stats.pattern_entropy = if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    };
    Ok((stats, grid))
}
