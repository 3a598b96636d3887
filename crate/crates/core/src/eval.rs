//! Evaluation episodes shared by reports, comparisons and tests.
//!
//! A single stepping loop serves both trained policies and the classic
//! controllers, so matched-seed comparisons differ only in the decision
//! maker.

use crate::baselines::Controller;
use crate::nn::Policy;
use crate::sim::{Action, Environment, IntersectionConfig, SimError, StepOutcome};
use crate::state::{encode_junction, raw_reward, TrafficState};

/// Totals of one evaluation episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStats {
    pub seed: u64,
    pub steps: u64,
    pub raw_return: f64,
    pub avg_wait_s: Option<f64>,
    pub arrivals: u64,
    pub departures: u64,
    pub changes: u64,
}

/// Aggregate over a batch of evaluation episodes. The waiting-time mean
/// skips episodes that never saw a vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_wait_s: Option<f64>,
    /// Half-width of the 95% normal confidence interval on the waiting
    /// time, when at least two episodes contributed.
    pub wait_ci95_s: Option<f64>,
    pub mean_raw_return: f64,
    pub mean_steps: f64,
}

/// Drives a policy by greedy action choice, rebuilding the observation
/// stack from the sensor stream exactly as the trainer does.
pub struct GreedyPolicy<'p> {
    policy: &'p Policy,
    config: IntersectionConfig,
    state: TrafficState,
}

impl<'p> GreedyPolicy<'p> {
    pub fn new(policy: &'p Policy, config: IntersectionConfig) -> GreedyPolicy<'p> {
        GreedyPolicy {
            policy,
            config,
            state: TrafficState::zeroed(),
        }
    }

    pub fn state(&self) -> &TrafficState {
        &self.state
    }
}

impl Controller for GreedyPolicy<'_> {
    fn decide(&mut self, outcome: Option<&StepOutcome>) -> Action {
        if let Some(out) = outcome {
            self.state.push_frame(encode_junction(out, &self.config));
        }
        if self.policy.greedy_action(&self.state) == 0 {
            Action::Keep
        } else {
            Action::Change
        }
    }

    fn reset(&mut self) {
        self.state = TrafficState::zeroed();
    }
}

/// Runs one full episode under `controller` and reports its totals.
pub fn run_episode(
    env: &mut Environment,
    seed: u64,
    controller: &mut dyn Controller,
) -> Result<EpisodeStats, SimError> {
    env.reset(seed);
    controller.reset();
    let mut steps = 0u64;
    let mut raw_return = 0.0;
    let mut changes = 0u64;
    let mut last: Option<StepOutcome> = None;
    loop {
        let action = controller.decide(last.as_ref());
        let out = env.step(action)?;
        steps += 1;
        raw_return += raw_reward(&out.queue_len);
        changes += u64::from(out.changed);
        let done = out.done;
        last = Some(out);
        if done {
            break;
        }
    }
    Ok(EpisodeStats {
        seed,
        steps,
        raw_return,
        avg_wait_s: env.avg_waiting_time(),
        arrivals: env.arrivals_total().iter().sum(),
        departures: env.departures_total().iter().sum(),
        changes,
    })
}

/// Runs one episode per seed, resetting the controller in between.
pub fn run_episodes(
    env: &mut Environment,
    seeds: &[u64],
    controller: &mut dyn Controller,
) -> Result<Vec<EpisodeStats>, SimError> {
    seeds
        .iter()
        .map(|&seed| run_episode(env, seed, controller))
        .collect()
}

pub fn summarize(stats: &[EpisodeStats]) -> EvalSummary {
    let n = stats.len();
    let waits: Vec<f64> = stats.iter().filter_map(|s| s.avg_wait_s).collect();
    let mean_wait_s = (!waits.is_empty()).then(|| waits.iter().sum::<f64>() / waits.len() as f64);
    let wait_ci95_s = match (mean_wait_s, waits.len()) {
        (Some(mean), m) if m >= 2 => {
            let var = waits.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            Some(1.96 * (var / m as f64).sqrt())
        }
        _ => None,
    };
    let mean_raw_return = if n == 0 {
        0.0
    } else {
        stats.iter().map(|s| s.raw_return).sum::<f64>() / n as f64
    };
    let mean_steps = if n == 0 {
        0.0
    } else {
        stats.iter().map(|s| s.steps as f64).sum::<f64>() / n as f64
    };
    EvalSummary {
        episodes: n,
        mean_wait_s,
        wait_ci95_s,
        mean_raw_return,
        mean_steps,
    }
}
