//! Queue-based single-intersection simulator.
//!
//! The model is a point queue per signalized movement: vehicles arrive from a
//! seeded Poisson stream, wait in FIFO order, and depart at the saturation
//! rate whenever their movement has green. Signal control is phase-based with
//! a fixed cyclic phase order; the agent (or a baseline controller) decides
//! every `action_interval_s` seconds whether to keep the current phase or
//! advance to the next one, and every change inserts an all-red yellow period.
//!
//! Time advances in 1 s sub-steps inside each action interval. All arithmetic
//! on vehicle counts is integer, so conservation (arrivals = departures +
//! queued) holds exactly at every step.

mod config;
mod demand;
mod env;

pub use config::{IntersectionConfig, Movement, Phase};
pub use demand::DemandSchedule;
pub use env::{Action, Environment, StepOutcome, Vehicle};

use thiserror::Error;

/// Sub-step resolution of the simulator, in seconds.
pub const SUBSTEP_S: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("number of roads must be 3 or 4, got {0}")]
    InvalidRoads(u8),
    #[error("phase list is empty")]
    NoPhases,
    #[error("phase {phase} gives green to absent movement {movement}")]
    PhaseUsesAbsentMovement { phase: usize, movement: Movement },
    #[error("3-way layout must leave exactly the movements of one missing arm absent; got active set {active:?}")]
    InvalidThreeWayTopology { active: Vec<Movement> },
    #[error("4-way layout requires at least one lane per movement; movement {0} has none")]
    FourWayMissingMovement(Movement),
    #[error("yellow ({yellow_s} s) must be shorter than the action interval ({interval_s} s)")]
    YellowTooLong { yellow_s: u32, interval_s: u32 },
    #[error("action interval must be a positive whole number of seconds")]
    InvalidActionInterval,
    #[error("{what} must be positive and finite")]
    NonPositiveParameter { what: &'static str },
    #[error("demand horizon must be positive")]
    EmptyHorizon,
    #[error("demand assigns traffic to absent movement {0}")]
    DemandOnAbsentMovement(Movement),
    #[error("active movement {0} has no demand profile")]
    DemandMissing(Movement),
    #[error("demand rate for movement {movement} at {at_s} s is invalid: {rate}")]
    InvalidDemandRate { movement: Movement, at_s: u32, rate: f64 },
    #[error("episode is over; reset the environment before stepping again")]
    EpisodeOver,
    #[error("no completed action interval to report yet")]
    NoIntervalYet,
}
