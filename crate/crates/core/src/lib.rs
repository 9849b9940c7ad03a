//! Multi-user covert communication over a shared band of frequency slots.
//!
//! The crate evaluates the warden's detection error probability (DEP) for a
//! wideband joint energy detector, the legitimate users' reliable
//! transmission probability (RTP) and covert rate, cross-checks each closed
//! form against Monte Carlo simulation, solves for the optimal transmit power
//! and the maximum admissible number of users, and simulates a sensing and
//! decision loop that hops users across frequency slots while avoiding
//! jammers and collisions.

pub mod analytic;
pub mod cli;
pub mod montecarlo;
pub mod optimizer;
pub mod quad;
pub mod scheduler;
pub mod specfun;
pub mod validation;

pub use analytic::{SystemParams, ThresholdMode};
pub use montecarlo::{EstimateWithError, RngSpec};
pub use specfun::{SeriesControl, SpecialError};
