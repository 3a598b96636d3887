//! Traffic-state augmentation.
//!
//! Five structure-aware transforms applied to observations at training time,
//! teaching one agent to cope with intersections it never drove: row
//! permutation (movement relabeling), lane-count rescaling, demand rescaling,
//! Gaussian sensor noise, and frame masking (sensor dropout). Transforms are
//! pure functions of the observation; actions, rewards and stored policy
//! outputs attached to a transition are never touched.
//!
//! All five preserve the padded-row pattern: a row that is zero in every
//! frame stays exactly zero, so an augmented state still looks like a legal
//! encoding of the same topology.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::state::{field, TrafficState, K_FRAMES};

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("row permutation {0:?} is not a bijection on 0..8")]
    InvalidPermutation([usize; 8]),
    #[error("lane target set for padded movement row {0}")]
    TargetsPaddedMovement(usize),
    #[error("flow scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("mask window start {start} len {len} must stay within the {limit} oldest frames")]
    InvalidMaskWindow { start: usize, len: usize, limit: usize },
}

/// Sampled parameters for one augmentation pass. Each transform is either
/// absent or carries its parameters; `augment` applies the present ones in
/// the fixed order shuffle, lane change, flow scale, noise, mask.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan {
    /// Output row `i` takes input row `permutation[i]`, same in every frame.
    pub shuffle: Option<[usize; 8]>,
    /// Target lane count per row; 0 leaves the row unchanged.
    pub lane_targets: Option<[u32; 8]>,
    /// Multiplier on the flow-derived entries of every row.
    pub flow_scale: Option<f64>,
    /// Seed for per-frame standard-normal sensor noise on active rows.
    pub noise_seed: Option<u64>,
    /// `(start, len)` window of frames to zero; the newest frame is off
    /// limits.
    pub mask: Option<(usize, usize)>,
}

impl AugmentPlan {
    pub fn identity() -> AugmentPlan {
        AugmentPlan {
            shuffle: None,
            lane_targets: None,
            flow_scale: None,
            noise_seed: None,
            mask: None,
        }
    }
}

/// Sampling ranges for [`sample_plan`].
#[derive(Clone, Debug)]
pub struct PlanBounds {
    /// Independent probability that each transform is included.
    pub p_apply: f64,
    /// Half-open range for the flow scale multiplier.
    pub alpha_range: (f64, f64),
    /// Inclusive range for sampled lane targets.
    pub lane_range: (u32, u32),
    /// Inclusive range for the mask window length.
    pub mask_len_range: (usize, usize),
    /// Which rows are real movements; padded rows never get lane targets.
    pub active: [bool; 8],
    /// Per-transform switches in shuffle, lane change, flow scale, noise,
    /// mask order; a disabled transform is never drawn.
    pub enabled: [bool; 5],
}

impl PlanBounds {
    pub fn for_active(active: [bool; 8]) -> PlanBounds {
        PlanBounds {
            p_apply: 0.5,
            alpha_range: (0.5, 1.5),
            lane_range: (1, 5),
            mask_len_range: (1, 2),
            active,
            enabled: [true; 5],
        }
    }
}

/// Permutes movement rows, applying the same permutation to every frame.
pub fn movement_shuffle(s: &TrafficState, permutation: &[usize; 8]) -> Result<TrafficState, AugmentError> {
    let mut seen = [false; 8];
    for &p in permutation {
        if p >= 8 || seen[p] {
            return Err(AugmentError::InvalidPermutation(*permutation));
        }
        seen[p] = true;
    }
    let mut out = *s;
    for (k, frame) in s.frames.iter().enumerate() {
        for i in 0..8 {
            out.frames[k].rows[i] = frame.rows[permutation[i]];
        }
    }
    Ok(out)
}

/// Rescales rows to new lane counts: the flow, occupancy and lane entries of
/// a targeted row are multiplied by `target / current_lanes`, read per frame.
/// Flag and geometry entries keep their values; zero frames stay zero.
pub fn change_lane_numbers(s: &TrafficState, lane_targets: &[u32; 8]) -> Result<TrafficState, AugmentError> {
    // A padded row in a window that has observations belongs to an absent
    // movement: active rows always carry their lane count once a frame
    // lands. A fully zeroed window has no observations to rescale, so any
    // target is a harmless no-op there.
    let padded = s.padded_rows();
    if padded.iter().any(|p| !p) {
        for i in 0..8 {
            if lane_targets[i] > 0 && padded[i] {
                return Err(AugmentError::TargetsPaddedMovement(i));
            }
        }
    }
    let mut out = *s;
    for frame in &mut out.frames {
        for i in 0..8 {
            let target = lane_targets[i];
            if target == 0 {
                continue;
            }
            let lanes = frame.rows[i][field::LANES];
            if lanes == 0.0 {
                // an all-zero history frame of an active row
                continue;
            }
            let rho = f64::from(target) / lanes;
            for j in [field::FLOW, field::OCC_MAX, field::OCC_MEAN, field::LANES] {
                frame.rows[i][j] *= rho;
            }
        }
    }
    Ok(out)
}

/// Scales the flow-derived entries (flow and both occupancies) of every row
/// by `alpha`, emulating globally lighter or heavier demand.
pub fn traffic_flow_scale(s: &TrafficState, alpha: f64) -> Result<TrafficState, AugmentError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(AugmentError::InvalidScale(alpha));
    }
    let mut out = *s;
    for frame in &mut out.frames {
        for row in &mut frame.rows {
            for j in [field::FLOW, field::OCC_MAX, field::OCC_MEAN] {
                row[j] *= alpha;
            }
        }
    }
    Ok(out)
}

/// Adds independent standard-normal noise to every entry of every active row
/// in every frame. Padded rows are left exactly zero.
pub fn add_gaussian_noise(s: &TrafficState, seed: u64) -> TrafficState {
    let padded = s.padded_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = *s;
    for frame in &mut out.frames {
        for i in 0..8 {
            if padded[i] {
                continue;
            }
            for j in 0..8 {
                let eps: f64 = rng.sample(StandardNormal);
                frame.rows[i][j] += eps;
            }
        }
    }
    out
}

/// Zeroes `len` whole frames starting at `start`. The newest frame carries
/// the current signal flags and may never be masked; a zero-length window is
/// a no-op.
pub fn mask_frames(s: &TrafficState, start: usize, len: usize) -> Result<TrafficState, AugmentError> {
    let limit = K_FRAMES - 1;
    if start.saturating_add(len) > limit {
        return Err(AugmentError::InvalidMaskWindow { start, len, limit });
    }
    let mut out = *s;
    for k in start..start + len {
        out.frames[k] = crate::state::JunctionMatrix::zeroed();
    }
    Ok(out)
}

/// Applies a plan's transforms in the fixed pipeline order.
pub fn augment(s: &TrafficState, plan: &AugmentPlan) -> Result<TrafficState, AugmentError> {
    let mut out = *s;
    if let Some(p) = &plan.shuffle {
        out = movement_shuffle(&out, p)?;
    }
    if let Some(t) = &plan.lane_targets {
        out = change_lane_numbers(&out, t)?;
    }
    if let Some(alpha) = plan.flow_scale {
        out = traffic_flow_scale(&out, alpha)?;
    }
    if let Some(seed) = plan.noise_seed {
        out = add_gaussian_noise(&out, seed);
    }
    if let Some((start, len)) = plan.mask {
        out = mask_frames(&out, start, len)?;
    }
    Ok(out)
}

/// Draws a random plan: each transform joins independently with probability
/// `p_apply`, with parameters from the configured ranges. The permutation is
/// uniform over all row orderings; lane targets are only assigned to active
/// rows; the mask window always spares the newest frame.
pub fn sample_plan(rng_seed: u64, bounds: &PlanBounds) -> AugmentPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut plan = AugmentPlan::identity();

    if bounds.enabled[0] && rng.gen::<f64>() < bounds.p_apply {
        let mut perm: [usize; 8] = std::array::from_fn(|i| i);
        for i in (1..8).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        plan.shuffle = Some(perm);
    }
    if bounds.enabled[1] && rng.gen::<f64>() < bounds.p_apply {
        // lane targets address rows as the lane-change stage sees them,
        // i.e. after any shuffle has moved the padded rows around
        let row_active = |i: usize| match plan.shuffle {
            Some(perm) => bounds.active[perm[i]],
            None => bounds.active[i],
        };
        let (lo, hi) = bounds.lane_range;
        let mut targets = [0u32; 8];
        for i in 0..8 {
            if row_active(i) {
                targets[i] = rng.gen_range(lo..=hi);
            }
        }
        plan.lane_targets = Some(targets);
    }
    if bounds.enabled[2] && rng.gen::<f64>() < bounds.p_apply {
        let (lo, hi) = bounds.alpha_range;
        plan.flow_scale = Some(rng.gen_range(lo..hi));
    }
    if bounds.enabled[3] && rng.gen::<f64>() < bounds.p_apply {
        plan.noise_seed = Some(rng.gen::<u64>());
    }
    if bounds.enabled[4] && rng.gen::<f64>() < bounds.p_apply {
        let (lo, hi) = bounds.mask_len_range;
        let len = rng.gen_range(lo..=hi);
        let start = rng.gen_range(0..=(K_FRAMES - 1 - len));
        plan.mask = Some((start, len));
    }
    plan
}
