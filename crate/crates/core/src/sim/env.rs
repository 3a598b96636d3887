use std::collections::VecDeque;

use super::config::{IntersectionConfig, Movement, Phase};
use super::demand::{ArrivalStream, DemandSchedule};
use super::{SimError, SUBSTEP_S};

/// Control decision taken once per action interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    /// Hold the current phase.
    Keep,
    /// Advance to the next phase in the cycle, after a yellow period.
    Change,
}

/// One waiting vehicle. In this point-queue model a vehicle joins the queue
/// the instant it arrives, so `enqueue_s` equals `arrival_s`; the fields stay
/// separate because waiting is charged from `enqueue_s` while `arrival_s`
/// records the demand event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vehicle {
    pub arrival_s: f64,
    pub enqueue_s: f64,
}

/// Everything the intersection's detectors report for one completed action
/// interval. Per-movement arrays follow the canonical movement order; entries
/// for absent movements are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Simulation clock after the interval, seconds.
    pub clock_s: u64,
    /// Active phase after the interval.
    pub phase_index: usize,
    /// Whether a requested change was honored this step.
    pub changed: bool,
    /// Whether the signal is mid-yellow after the interval (only possible
    /// with a yellow longer than the interval, which validation forbids).
    pub in_yellow: bool,
    /// Departures over the interval divided by the movement's lane count.
    pub flow: [f64; 8],
    /// Peak detector occupancy across the interval's sub-steps, in [0, 1].
    pub occ_max: [f64; 8],
    /// Mean detector occupancy across the interval's sub-steps.
    pub occ_mean: [f64; 8],
    /// Queued vehicles at the end of the interval.
    pub queue_len: [u32; 8],
    /// Mean queued vehicles across the interval's sub-steps.
    pub queue_mean: [f64; 8],
    /// Movement currently has green.
    pub i_cg: [bool; 8],
    /// Movement has green in the next phase of the cycle.
    pub i_ng: [bool; 8],
    /// Movement has green and the phase has held it for at least the
    /// minimum green time, i.e. a change request would now be honored.
    pub i_mg: [bool; 8],
    /// Departures per movement for each sub-step of the interval.
    pub substep_departures: Vec<[u32; 8]>,
    /// Demand horizon reached; further steps are an error.
    pub done: bool,
}

/// Deterministic single-intersection environment.
pub struct Environment {
    config: IntersectionConfig,
    demand: DemandSchedule,
    clock_s: u64,
    phase_index: usize,
    phase_green_s: u32,
    in_yellow: bool,
    yellow_elapsed_s: u32,
    queues: [VecDeque<Vehicle>; 8],
    streams: [ArrivalStream; 8],
    cum_green_s: [u64; 8],
    service_taken: [u64; 8],
    arrivals_total: [u64; 8],
    departures_total: [u64; 8],
    wait_departed_s: f64,
    last: Option<StepOutcome>,
}

impl Environment {
    pub fn new(config: IntersectionConfig, demand: DemandSchedule, seed: u64) -> Result<Environment, SimError> {
        config.validate()?;
        demand.validate(&config)?;
        Ok(Environment {
            streams: std::array::from_fn(|i| ArrivalStream::new(seed, Movement::from_index(i).unwrap())),
            config,
            demand,
            clock_s: 0,
            phase_index: 0,
            phase_green_s: 0,
            in_yellow: false,
            yellow_elapsed_s: 0,
            queues: Default::default(),
            cum_green_s: [0; 8],
            service_taken: [0; 8],
            arrivals_total: [0; 8],
            departures_total: [0; 8],
            wait_departed_s: 0.0,
            last: None,
        })
    }

    /// Restarts the episode with fresh arrival streams drawn from `seed`.
    pub fn reset(&mut self, seed: u64) {
        self.streams = std::array::from_fn(|i| ArrivalStream::new(seed, Movement::from_index(i).unwrap()));
        self.clock_s = 0;
        self.phase_index = 0;
        self.phase_green_s = 0;
        self.in_yellow = false;
        self.yellow_elapsed_s = 0;
        self.queues = Default::default();
        self.cum_green_s = [0; 8];
        self.service_taken = [0; 8];
        self.arrivals_total = [0; 8];
        self.departures_total = [0; 8];
        self.wait_departed_s = 0.0;
        self.last = None;
    }

    pub fn config(&self) -> &IntersectionConfig {
        &self.config
    }

    pub fn demand(&self) -> &DemandSchedule {
        &self.demand
    }

    pub fn clock_s(&self) -> u64 {
        self.clock_s
    }

    pub fn phase_index(&self) -> usize {
        self.phase_index
    }

    pub fn done(&self) -> bool {
        self.clock_s >= u64::from(self.demand.horizon_s)
    }

    /// Sensor readings of the last completed interval.
    pub fn sense(&self) -> Result<&StepOutcome, SimError> {
        self.last.as_ref().ok_or(SimError::NoIntervalYet)
    }

    pub fn arrivals_total(&self) -> [u64; 8] {
        self.arrivals_total
    }

    pub fn departures_total(&self) -> [u64; 8] {
        self.departures_total
    }

    pub fn queue_lens(&self) -> [usize; 8] {
        std::array::from_fn(|i| self.queues[i].len())
    }

    /// Places a vehicle directly into a movement's queue. Test and demo hook;
    /// the vehicle is counted as a normal arrival.
    pub fn preload(&mut self, m: Movement, arrival_s: f64) {
        assert!(self.config.is_active(m), "preload on absent movement {m}");
        self.queues[m.index()].push_back(Vehicle {
            arrival_s,
            enqueue_s: arrival_s,
        });
        self.arrivals_total[m.index()] += 1;
    }

    /// Mean waiting time per vehicle, in seconds: departed vehicles
    /// contribute their full queue dwell, vehicles still queued contribute
    /// the waiting accrued so far. `None` until any vehicle has entered.
    pub fn avg_waiting_time(&self) -> Option<f64> {
        let mut total_s = self.wait_departed_s;
        let mut count = self.departures_total.iter().sum::<u64>();
        let now = self.clock_s as f64;
        for q in &self.queues {
            for v in q {
                total_s += now - v.enqueue_s;
                count += 1;
            }
        }
        (count > 0).then(|| total_s / count as f64)
    }

    /// Runs one action interval of sub-steps and reports the interval's
    /// sensor readings.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome, SimError> {
        if self.done() {
            return Err(SimError::EpisodeOver);
        }
        let n_phases = self.config.phases.len();
        let mut changed = false;
        if action == Action::Change && !self.in_yellow && self.phase_green_s >= self.config.min_green_s {
            self.in_yellow = true;
            self.yellow_elapsed_s = 0;
            changed = true;
        }

        let n_sub = self.config.action_interval_s / SUBSTEP_S;
        let mut interval_departures = [0u64; 8];
        let mut substep_departures = Vec::with_capacity(n_sub as usize);
        let mut occ_max = [0.0f64; 8];
        let mut occ_sum = [0.0f64; 8];
        let mut queue_sum = [0.0f64; 8];

        for _ in 0..n_sub {
            if self.in_yellow && self.yellow_elapsed_s >= self.config.yellow_s {
                self.in_yellow = false;
                self.phase_index = (self.phase_index + 1) % n_phases;
                self.phase_green_s = 0;
            }
            let green = if self.in_yellow {
                Phase::new(&[])
            } else {
                self.config.phases[self.phase_index]
            };

            let t0 = self.clock_s as f64;
            for m in Movement::ALL {
                let i = m.index();
                if !self.config.is_active(m) {
                    continue;
                }
                let lambda = self.demand.rate(m, self.clock_s as u32) * f64::from(SUBSTEP_S);
                for arrival_s in self.streams[i].draw(lambda, t0, f64::from(SUBSTEP_S)) {
                    self.queues[i].push_back(Vehicle {
                        arrival_s,
                        enqueue_s: arrival_s,
                    });
                    self.arrivals_total[i] += 1;
                }
            }

            let depart_s = (self.clock_s + u64::from(SUBSTEP_S)) as f64;
            let mut row = [0u32; 8];
            for m in Movement::ALL {
                let i = m.index();
                if !green.contains(m) {
                    continue;
                }
                self.cum_green_s[i] += u64::from(SUBSTEP_S);
                let target = (self.config.saturation_flow_vps
                    * f64::from(self.config.lanes[i])
                    * self.cum_green_s[i] as f64)
                    .floor() as u64;
                let slots = target.saturating_sub(self.service_taken[i]);
                let n = slots.min(self.queues[i].len() as u64);
                for _ in 0..n {
                    let v = self.queues[i].pop_front().unwrap();
                    self.wait_departed_s += depart_s - v.enqueue_s;
                }
                // unused slots lapse; service never accumulates while idle
                self.service_taken[i] = target;
                self.departures_total[i] += n;
                interval_departures[i] += n;
                row[i] = n as u32;
            }
            substep_departures.push(row);

            for m in Movement::ALL {
                let i = m.index();
                if !self.config.is_active(m) {
                    continue;
                }
                let len = self.queues[i].len() as f64;
                let occ = (len * self.config.vehicle_length_m
                    / (self.config.detection_range_m * f64::from(self.config.lanes[i])))
                .min(1.0);
                occ_max[i] = occ_max[i].max(occ);
                occ_sum[i] += occ;
                queue_sum[i] += len;
            }

            if self.in_yellow {
                self.yellow_elapsed_s += SUBSTEP_S;
            } else {
                self.phase_green_s += SUBSTEP_S;
            }
            self.clock_s += u64::from(SUBSTEP_S);
        }

        let subs = f64::from(n_sub);
        let mut flow = [0.0f64; 8];
        let mut occ_mean = [0.0f64; 8];
        let mut queue_mean = [0.0f64; 8];
        let mut queue_len = [0u32; 8];
        let mut i_cg = [false; 8];
        let mut i_ng = [false; 8];
        let mut i_mg = [false; 8];
        let current = self.config.phases[self.phase_index];
        let next = self.config.phases[(self.phase_index + 1) % n_phases];
        for m in Movement::ALL {
            let i = m.index();
            if !self.config.is_active(m) {
                continue;
            }
            flow[i] = interval_departures[i] as f64 / f64::from(self.config.lanes[i]);
            occ_mean[i] = occ_sum[i] / subs;
            queue_mean[i] = queue_sum[i] / subs;
            queue_len[i] = self.queues[i].len() as u32;
            i_cg[i] = !self.in_yellow && current.contains(m);
            i_ng[i] = next.contains(m);
            i_mg[i] = i_cg[i] && self.phase_green_s >= self.config.min_green_s;
        }

        let outcome = StepOutcome {
            clock_s: self.clock_s,
            phase_index: self.phase_index,
            changed,
            in_yellow: self.in_yellow,
            flow,
            occ_max,
            occ_mean,
            queue_len,
            queue_mean,
            i_cg,
            i_ng,
            i_mg,
            substep_departures,
            done: self.done(),
        };
        self.last = Some(outcome.clone());
        Ok(outcome)
    }
}
