//! Classic signal controllers used as comparison baselines.
//!
//! Each controller is a state machine fed the previous interval's sensor
//! readings and nothing else, so a baseline run is reproducible from the
//! environment seed alone.

use thiserror::Error;

use crate::sim::{Action, IntersectionConfig, StepOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("fixed phase duration {duration_s} s is not a multiple of the {interval_s} s action interval")]
    IndivisibleDuration { duration_s: u32, interval_s: u32 },
    #[error("{what} must be positive")]
    NonPositive { what: &'static str },
}

/// Chooses the next action from the latest sensor readings. `None` marks
/// the first decision of an episode, before any interval has run.
pub trait Controller {
    fn decide(&mut self, outcome: Option<&StepOutcome>) -> Action;
    fn reset(&mut self);
}

/// Cycles phases on a fixed schedule: one change every
/// `duration / interval` decisions, traffic ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct FixTime {
    decisions_per_phase: u32,
    since_change: u32,
}

impl FixTime {
    pub fn new(duration_s: u32, interval_s: u32) -> Result<FixTime, BaselineError> {
        if duration_s == 0 || interval_s == 0 {
            return Err(BaselineError::NonPositive { what: "phase duration" });
        }
        if duration_s % interval_s != 0 {
            return Err(BaselineError::IndivisibleDuration { duration_s, interval_s });
        }
        Ok(FixTime {
            decisions_per_phase: duration_s / interval_s,
            since_change: 0,
        })
    }
}

impl Controller for FixTime {
    fn decide(&mut self, _outcome: Option<&StepOutcome>) -> Action {
        self.since_change += 1;
        if self.since_change >= self.decisions_per_phase {
            self.since_change = 0;
            Action::Change
        } else {
            Action::Keep
        }
    }

    fn reset(&mut self) {
        self.since_change = 0;
    }
}

/// Cycle length and per-phase green times from phase flow ratios:
/// `C = (1.5 L + 5) / (1 - Y)` with `Y` the summed ratios (capped below
/// 0.95) and `g_p = (y_p / Y)(C - L)`. Zero demand falls back to minimum
/// green everywhere.
pub fn webster_plan(flow_ratios: &[f64], lost_time_s: f64, min_green_s: f64) -> (f64, Vec<f64>) {
    const Y_CAP: f64 = 0.95;
    let y_total: f64 = flow_ratios.iter().sum();
    if y_total <= 0.0 {
        return (
            min_green_s * flow_ratios.len() as f64,
            vec![min_green_s; flow_ratios.len()],
        );
    }
    let y_capped = y_total.min(Y_CAP);
    let cycle = (1.5 * lost_time_s + 5.0) / (1.0 - y_capped);
    let greens = flow_ratios
        .iter()
        .map(|y| (y / y_total) * (cycle - lost_time_s))
        .collect();
    (cycle, greens)
}

/// Adaptive fixed-time control: measures per-movement departure rates,
/// rebuilds the green plan every `window_s` seconds, then tracks each
/// phase's planned green rounded up to whole decisions.
pub struct Webster {
    config: IntersectionConfig,
    lost_time_s: f64,
    window_s: u32,
    elapsed_s: u32,
    window_departures: [u64; 8],
    phase_slot: usize,
    decisions_in_phase: u32,
    plan_decisions: Vec<u32>,
}

impl Webster {
    pub const DEFAULT_WINDOW_S: u32 = 300;

    pub fn new(config: IntersectionConfig, lost_time_s: f64, window_s: u32) -> Result<Webster, BaselineError> {
        if window_s == 0 {
            return Err(BaselineError::NonPositive { what: "recompute window" });
        }
        if !(lost_time_s.is_finite() && lost_time_s >= 0.0) {
            return Err(BaselineError::NonPositive { what: "lost time" });
        }
        let fallback = Self::min_decisions(&config);
        let phases = config.phases.len();
        Ok(Webster {
            config,
            lost_time_s,
            window_s,
            elapsed_s: 0,
            window_departures: [0; 8],
            phase_slot: 0,
            decisions_in_phase: 0,
            plan_decisions: vec![fallback; phases],
        })
    }

    /// Lost time of one yellow per phase and the standard recompute window.
    pub fn with_defaults(config: IntersectionConfig) -> Webster {
        let lost = f64::from(config.yellow_s) * config.phases.len() as f64;
        Webster::new(config, lost, Self::DEFAULT_WINDOW_S).unwrap()
    }

    fn min_decisions(config: &IntersectionConfig) -> u32 {
        config.min_green_s.div_ceil(config.action_interval_s).max(1)
    }

    fn replan(&mut self) {
        let window = f64::from(self.elapsed_s.max(1));
        let ratios: Vec<f64> = self
            .config
            .phases
            .iter()
            .map(|phase| {
                phase
                    .movements()
                    .map(|m| {
                        let i = m.index();
                        let lanes = f64::from(self.config.lanes[i]);
                        if lanes == 0.0 {
                            return 0.0;
                        }
                        let rate_vps = self.window_departures[i] as f64 / (lanes * window);
                        rate_vps / self.config.saturation_flow_vps
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let (_, greens) = webster_plan(&ratios, self.lost_time_s, f64::from(self.config.min_green_s));
        let floor = Self::min_decisions(&self.config);
        self.plan_decisions = greens
            .iter()
            .map(|&g| ((g / f64::from(self.config.action_interval_s)).ceil() as u32).max(floor))
            .collect();
        self.elapsed_s = 0;
        self.window_departures = [0; 8];
    }
}

impl Controller for Webster {
    fn decide(&mut self, outcome: Option<&StepOutcome>) -> Action {
        if let Some(out) = outcome {
            for departures in &out.substep_departures {
                for i in 0..8 {
                    self.window_departures[i] += u64::from(departures[i]);
                }
            }
            self.elapsed_s += out.substep_departures.len() as u32;
            if out.phase_index != self.phase_slot {
                self.phase_slot = out.phase_index;
                self.decisions_in_phase = 0;
            }
        }
        if self.elapsed_s >= self.window_s {
            self.replan();
        }
        self.decisions_in_phase += 1;
        if self.decisions_in_phase >= self.plan_decisions[self.phase_slot] {
            self.decisions_in_phase = 0;
            Action::Change
        } else {
            Action::Keep
        }
    }

    fn reset(&mut self) {
        self.elapsed_s = 0;
        self.window_departures = [0; 8];
        self.phase_slot = 0;
        self.decisions_in_phase = 0;
        self.plan_decisions = vec![Self::min_decisions(&self.config); self.config.phases.len()];
    }
}

/// Self-organising control: queues on red movements build pressure every
/// second; once pressure passes the threshold and the phase has held its
/// minimum green, the signal changes and pressure resets.
pub struct Sotl {
    config: IntersectionConfig,
    theta: f64,
    min_green_s: u32,
    pressure: f64,
    decisions_in_phase: u32,
}

impl Sotl {
    pub const DEFAULT_THETA: f64 = 50.0;

    pub fn new(config: IntersectionConfig, theta: f64, min_green_s: u32) -> Result<Sotl, BaselineError> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(BaselineError::NonPositive { what: "pressure threshold" });
        }
        Ok(Sotl {
            config,
            theta,
            min_green_s,
            pressure: 0.0,
            decisions_in_phase: 0,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

impl Controller for Sotl {
    fn decide(&mut self, outcome: Option<&StepOutcome>) -> Action {
        if let Some(out) = outcome {
            let phase = self.config.phases[out.phase_index];
            let substeps = out.substep_departures.len() as f64;
            for m in self.config.active_movements() {
                if !phase.contains(m) {
                    // mean queue times the sub-step count recovers the
                    // per-sub-step queue sum exactly
                    self.pressure += out.queue_mean[m.index()] * substeps;
                }
            }
        }
        self.decisions_in_phase += 1;
        let min_green_held = self.decisions_in_phase * self.config.action_interval_s >= self.min_green_s;
        if outcome.is_some() && min_green_held && self.pressure > self.theta {
            self.pressure = 0.0;
            self.decisions_in_phase = 0;
            Action::Change
        } else {
            Action::Keep
        }
    }

    fn reset(&mut self) {
        self.pressure = 0.0;
        self.decisions_in_phase = 0;
    }
}
