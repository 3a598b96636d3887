//! Proximal policy optimisation over queue-based signal environments.
//!
//! Rollouts interleave transitions from several environments round-robin
//! into one buffer, rewards pass through the freezing normalizer, and each
//! update runs clipped-surrogate ascent with a one-step temporal-difference
//! advantage. Optional state augmentation rewrites the stored observations
//! once per update, re-evaluating the behaviour log-probability on the
//! rewritten state before any parameter moves.

mod curve;
mod trainer;

pub use curve::{read_curve, write_curve};
pub use trainer::Trainer;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::sim::SimError;
use crate::state::TrafficState;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("training needs at least one environment")]
    NoEnvironments,
    #[error("simulation failed during rollout: {0}")]
    Sim(#[from] SimError),
    #[error("augmentation failed during update: {0}")]
    Augment(#[from] AugmentError),
    #[error("non-finite loss or gradient in update {update}")]
    NonFinite { update: usize },
    #[error("curve io failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("curve line {line} is malformed: {reason}")]
    BadCurve { line: usize, reason: String },
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub lr: f64,
    /// Transitions gathered before each update.
    pub buffer_size: usize,
    /// Surrogate ratio clip half-width.
    pub clip: f64,
    pub gamma: f64,
    /// Weight of the value loss in the combined objective.
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Weight of the entropy bonus; zero disables the term.
    pub entropy_coef: f64,
    /// Rescales gradients whose global norm exceeds the bound.
    pub max_grad_norm: Option<f64>,
    /// Rewrite observations with sampled augmentations at update time.
    pub augment: bool,
    /// Which transforms may be sampled while `augment` is on, in shuffle,
    /// lane change, flow scale, noise, mask order.
    pub aug_transforms: [bool; 5],
    /// Rewards pooled before the normalizer freezes its statistics.
    pub warmup_rewards: usize,
    /// Plain gradient steps instead of Adam.
    pub sgd: bool,
}

impl Default for PpoConfig {
    fn default() -> PpoConfig {
        PpoConfig {
            lr: 1e-4,
            buffer_size: 3000,
            clip: 0.2,
            gamma: 0.99,
            value_coef: 0.9,
            epochs: 10,
            minibatch: 256,
            entropy_coef: 0.0,
            max_grad_norm: None,
            augment: false,
            aug_transforms: [true; 5],
            warmup_rewards: 1000,
            sgd: false,
        }
    }
}

/// One stored environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub env_id: usize,
    pub state: TrafficState,
    /// 0 keeps the phase, 1 requests a change.
    pub action: usize,
    /// Behaviour log-probability of `action` at collection time.
    pub log_prob: f64,
    pub reward_raw: f64,
    /// Normalized reward used by returns and advantages.
    pub reward: f64,
    /// Critic value of `state` at collection time.
    pub value: f64,
    /// Critic value of the successor state; episode ends bootstrap here.
    pub next_value: f64,
    /// Episode boundary after this step.
    pub done: bool,
}

/// Raw-return bookkeeping for one finished episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub env_id: usize,
    pub seed: u64,
    /// Global transition count when the episode closed.
    pub end_step: usize,
    pub len: usize,
    pub raw_return: f64,
    pub avg_wait_s: Option<f64>,
}

/// Diagnostics of one optimisation pass over a buffer.
#[derive(Clone, Debug)]
pub struct UpdateReport {
    pub index: usize,
    pub steps_done: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Largest |ratio - 1| in the first minibatch, before any step.
    pub first_batch_max_ratio_dev: f64,
    pub first_batch_clip_fraction: f64,
}

/// Discounted reward-to-go per buffer entry. Chains run per environment in
/// buffer order; the newest entry of each chain and every episode boundary
/// bootstrap from the stored successor value.
pub fn returns_to_go(buffer: &[Transition], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; buffer.len()];
    let max_env = buffer.iter().map(|t| t.env_id).max().map_or(0, |m| m + 1);
    for env in 0..max_env {
        let mut carry = 0.0;
        let mut have_carry = false;
        for (i, t) in buffer.iter().enumerate().rev() {
            if t.env_id != env {
                continue;
            }
            let base = if !have_carry || t.done { t.next_value } else { carry };
            carry = t.reward + gamma * base;
            have_carry = true;
            out[i] = carry;
        }
    }
    out
}

/// One-step temporal-difference advantage per buffer entry.
pub fn advantages(buffer: &[Transition], gamma: f64) -> Vec<f64> {
    buffer
        .iter()
        .map(|t| t.reward + gamma * t.next_value - t.value)
        .collect()
}
