//! Junction-matrix state encoding.
//!
//! Each completed action interval is summarized as an 8x8 matrix: one row per
//! movement in canonical order, eight features per row. Absent movements keep
//! all-zero rows, which is how one network input shape covers intersections
//! of different topologies. The observation fed to an agent is the stack of
//! the `K_FRAMES` most recent matrices, oldest first; until enough intervals
//! have elapsed the older slots stay zero.

use crate::sim::{IntersectionConfig, Movement, StepOutcome};

/// Number of stacked junction matrices in an observation.
pub const K_FRAMES: usize = 8;

/// Feature indices within a movement row.
pub mod field {
    /// Departures per lane over the interval.
    pub const FLOW: usize = 0;
    /// Peak detector occupancy over the interval.
    pub const OCC_MAX: usize = 1;
    /// Mean detector occupancy over the interval.
    pub const OCC_MEAN: usize = 2;
    /// 1 for straight movements, 0 for turns.
    pub const IS_STRAIGHT: usize = 3;
    /// Lane count.
    pub const LANES: usize = 4;
    /// Movement currently has green.
    pub const CURRENT_GREEN: usize = 5;
    /// Movement has green in the next phase of the cycle.
    pub const NEXT_GREEN: usize = 6;
    /// Green has been held for at least the minimum duration.
    pub const MIN_GREEN_REACHED: usize = 7;
}

/// One movement's feature row.
pub type MovementVector = [f64; 8];

/// One interval's sensor summary: rows in canonical movement order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JunctionMatrix {
    pub rows: [MovementVector; 8],
}

impl JunctionMatrix {
    pub fn zeroed() -> JunctionMatrix {
        JunctionMatrix { rows: [[0.0; 8]; 8] }
    }

    pub fn row(&self, m: Movement) -> &MovementVector {
        &self.rows[m.index()]
    }
}

/// Feature row for one movement of a completed interval. Absent movements
/// encode as all zeros.
pub fn encode_movement(out: &StepOutcome, config: &IntersectionConfig, m: Movement) -> MovementVector {
    let i = m.index();
    if !config.is_active(m) {
        return [0.0; 8];
    }
    let mut v = [0.0; 8];
    v[field::FLOW] = out.flow[i];
    v[field::OCC_MAX] = out.occ_max[i];
    v[field::OCC_MEAN] = out.occ_mean[i];
    v[field::IS_STRAIGHT] = if config.is_straight[i] { 1.0 } else { 0.0 };
    v[field::LANES] = f64::from(config.lanes[i]);
    v[field::CURRENT_GREEN] = if out.i_cg[i] { 1.0 } else { 0.0 };
    v[field::NEXT_GREEN] = if out.i_ng[i] { 1.0 } else { 0.0 };
    v[field::MIN_GREEN_REACHED] = if out.i_mg[i] { 1.0 } else { 0.0 };
    v
}

/// Full junction matrix for one completed interval.
pub fn encode_junction(out: &StepOutcome, config: &IntersectionConfig) -> JunctionMatrix {
    let mut j = JunctionMatrix::zeroed();
    for m in Movement::ALL {
        j.rows[m.index()] = encode_movement(out, config, m);
    }
    j
}

/// Sliding stack of the latest `K_FRAMES` junction matrices, oldest at
/// index 0 and newest at `K_FRAMES - 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficState {
    pub frames: [JunctionMatrix; K_FRAMES],
}

impl TrafficState {
    pub fn zeroed() -> TrafficState {
        TrafficState {
            frames: [JunctionMatrix::zeroed(); K_FRAMES],
        }
    }

    pub fn from_frames(frames: [JunctionMatrix; K_FRAMES]) -> TrafficState {
        TrafficState { frames }
    }

    /// Drops the oldest frame and appends `j` as the newest.
    pub fn push_frame(&mut self, j: JunctionMatrix) {
        self.frames.rotate_left(1);
        self.frames[K_FRAMES - 1] = j;
    }

    pub fn newest(&self) -> &JunctionMatrix {
        &self.frames[K_FRAMES - 1]
    }

    /// Rows that are zero in every frame. For a state built from real
    /// intervals this is exactly the set of absent movements: active rows
    /// always carry a nonzero lane count in observed frames.
    pub fn padded_rows(&self) -> [bool; 8] {
        std::array::from_fn(|i| {
            self.frames
                .iter()
                .all(|f| f.rows[i].iter().all(|&x| x == 0.0))
        })
    }

    /// Iterates over every entry as `(frame, row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.frames.iter().enumerate().flat_map(|(k, f)| {
            f.rows
                .iter()
                .enumerate()
                .flat_map(move |(i, row)| row.iter().enumerate().map(move |(j, &x)| (k, i, j, x)))
        })
    }
}

/// Step reward before normalization: the negated total queue length.
pub fn raw_reward(queue_len: &[u32; 8]) -> f64 {
    -f64::from(queue_len.iter().sum::<u32>())
}

/// Online reward normalizer.
///
/// The first `warmup_len` rewards are normalized with running statistics and
/// also recorded; once the warm-up window is full its mean and population
/// standard deviation are frozen and used for every later reward. A constant
/// reward stream therefore normalizes to zero instead of dividing by zero.
#[derive(Clone, Debug)]
pub struct RewardNormalizer {
    warmup_len: usize,
    epsilon: f64,
    samples: Vec<f64>,
    frozen: Option<(f64, f64)>,
}

impl RewardNormalizer {
    pub const DEFAULT_WARMUP: usize = 1000;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(warmup_len: usize, epsilon: f64) -> RewardNormalizer {
        assert!(warmup_len >= 1, "warm-up needs at least one sample");
        RewardNormalizer {
            warmup_len,
            epsilon,
            samples: Vec::with_capacity(warmup_len),
            frozen: None,
        }
    }

    /// Mean and population standard deviation once the warm-up is complete.
    pub fn frozen_stats(&self) -> Option<(f64, f64)> {
        self.frozen
    }

    fn mean_std(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Feeds one raw reward and returns its normalized value.
    pub fn observe(&mut self, raw: f64) -> f64 {
        let (mean, std) = match self.frozen {
            Some(stats) => stats,
            None => {
                self.samples.push(raw);
                let stats = Self::mean_std(&self.samples);
                if self.samples.len() == self.warmup_len {
                    self.frozen = Some(stats);
                    self.samples = Vec::new();
                }
                stats
            }
        };
        (raw - mean) / (std + self.epsilon)
    }

    /// Normalizes with the frozen statistics without recording anything.
    /// Falls back to running statistics semantics only after freezing.
    pub fn normalize(&self, raw: f64) -> Option<f64> {
        self.frozen.map(|(mean, std)| (raw - mean) / (std + self.epsilon))
    }
}
