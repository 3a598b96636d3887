use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{IntersectionConfig, Movement};
use super::SimError;

/// Piecewise-constant arrival rates per movement over a fixed horizon.
///
/// Rates are vehicles per second. A movement's profile is a list of
/// `(start_s, rate)` segments; the rate at time `t` is the one from the last
/// segment starting at or before `t`. Absent movements must carry no profile.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandSchedule {
    pub horizon_s: u32,
    profiles: [Vec<(u32, f64)>; 8],
}

impl DemandSchedule {
    pub fn new(horizon_s: u32) -> DemandSchedule {
        DemandSchedule {
            horizon_s,
            profiles: Default::default(),
        }
    }

    /// Sets a single constant rate from time zero.
    pub fn set_rate(&mut self, m: Movement, rate_vps: f64) -> &mut Self {
        self.profiles[m.index()] = vec![(0, rate_vps)];
        self
    }

    /// Sets a full piecewise profile. Segments are sorted by start time.
    pub fn set_profile(&mut self, m: Movement, mut segments: Vec<(u32, f64)>) -> &mut Self {
        segments.sort_by_key(|s| s.0);
        self.profiles[m.index()] = segments;
        self
    }

    pub fn profile(&self, m: Movement) -> &[(u32, f64)] {
        &self.profiles[m.index()]
    }

    pub fn rate(&self, m: Movement, t_s: u32) -> f64 {
        let mut rate = 0.0;
        for &(start, r) in &self.profiles[m.index()] {
            if start <= t_s {
                rate = r;
            } else {
                break;
            }
        }
        rate
    }

    pub fn validate(&self, config: &IntersectionConfig) -> Result<(), SimError> {
        if self.horizon_s == 0 {
            return Err(SimError::EmptyHorizon);
        }
        for m in Movement::ALL {
            let profile = &self.profiles[m.index()];
            if config.is_active(m) {
                if profile.is_empty() {
                    return Err(SimError::DemandMissing(m));
                }
            } else if !profile.is_empty() {
                return Err(SimError::DemandOnAbsentMovement(m));
            }
            for &(start, rate) in profile {
                if !(rate.is_finite() && rate >= 0.0) {
                    return Err(SimError::InvalidDemandRate { movement: m, at_s: start, rate });
                }
            }
        }
        Ok(())
    }
}

/// Seeded Poisson arrival generator for one movement.
///
/// Counts are drawn by inverting the Poisson CDF with a single uniform per
/// sub-step, so the stream position never depends on the rate. Two runs with
/// the same seed but pointwise-larger rates therefore see a superset of
/// arrivals at every sub-step, which is what makes the congestion dominance
/// property hold exactly.
pub struct ArrivalStream {
    count_rng: ChaCha8Rng,
    offset_rng: ChaCha8Rng,
}

impl ArrivalStream {
    pub fn new(seed: u64, movement: Movement) -> ArrivalStream {
        let mut count_rng = ChaCha8Rng::seed_from_u64(seed);
        count_rng.set_stream(movement.index() as u64 * 2);
        let mut offset_rng = ChaCha8Rng::seed_from_u64(seed);
        offset_rng.set_stream(movement.index() as u64 * 2 + 1);
        ArrivalStream { count_rng, offset_rng }
    }

    /// Number of arrivals in one sub-step at mean `lambda`, plus an arrival
    /// instant inside the sub-step for each. Exactly one draw is consumed
    /// from the count stream regardless of `lambda`.
    pub fn draw(&mut self, lambda: f64, substep_start_s: f64, substep_len_s: f64) -> Vec<f64> {
        let u: f64 = self.count_rng.gen();
        let n = poisson_quantile(lambda, u);
        let mut times: Vec<f64> = (0..n)
            .map(|_| substep_start_s + self.offset_rng.gen::<f64>() * substep_len_s)
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times
    }
}

/// Smallest k with `P[Poisson(lambda) <= k] >= u`, by walking the pmf.
///
/// Monotone in `lambda` for fixed `u`, which the arrival coupling relies on.
pub fn poisson_quantile(lambda: f64, u: f64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    // Beyond this point the remaining tail mass is far below anything a
    // uniform in [0, 1) can reach.
    let k_max = (lambda + 12.0 * lambda.sqrt() + 24.0).ceil() as u32;
    let mut k = 0u32;
    let mut pmf = (-lambda).exp();
    let mut cdf = pmf;
    while cdf < u && k < k_max {
        k += 1;
        pmf *= lambda / f64::from(k);
        cdf += pmf;
    }
    k
}
