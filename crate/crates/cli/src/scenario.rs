//! Scenario files: TOML documents that resolve to a runnable intersection
//! with seeded demand, an optional controller choice and evaluation settings.
//!
//! The `[intersection]` table names a preset or lays the junction out inline;
//! timing fields override the defaults either way. `[demand]` always carries
//! a seed: per-movement arrival rates are drawn from `rate_range` per lane,
//! so wider approaches attract more traffic, and explicit `rates` entries
//! replace the drawn values. `[run]` sets the evaluation episode count and
//! seed base.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use greenlight::baselines::{Controller, FixTime, Sotl, Webster};
use greenlight::sim::{DemandSchedule, IntersectionConfig, Movement, Phase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::{presets, HarnessError};

pub const DEFAULT_HORIZON_S: u32 = 3000;
pub const DEFAULT_RATE_RANGE: (f64, f64) = (0.02, 0.08);
pub const DEFAULT_EPISODES: usize = 20;
pub const DEFAULT_EVAL_SEED_BASE: u64 = 10_000;
pub const DEFAULT_FIXTIME_S: u32 = 30;

/// One fully resolved scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub config: IntersectionConfig,
    pub demand: DemandSchedule,
    pub controller: Option<ControllerSpec>,
    pub episodes: usize,
    pub eval_seed_base: u64,
}

/// A classic controller choice with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum ControllerSpec {
    FixTime {
        duration_s: u32,
    },
    Webster {
        lost_time_s: Option<f64>,
        window_s: Option<u32>,
    },
    Sotl {
        theta: f64,
        min_green_s: Option<u32>,
    },
}

impl ControllerSpec {
    /// Parses command line forms: `fixtime`, `fixtime-30`, `webster`,
    /// `sotl`, `sotl-75`.
    pub fn parse(s: &str) -> Result<ControllerSpec, HarnessError> {
        let lower = s.to_ascii_lowercase();
        if lower == "fixtime" {
            return Ok(ControllerSpec::FixTime {
                duration_s: DEFAULT_FIXTIME_S,
            });
        }
        if let Some(rest) = lower.strip_prefix("fixtime-") {
            if let Ok(duration_s) = rest.parse::<u32>() {
                return Ok(ControllerSpec::FixTime { duration_s });
            }
        }
        if lower == "webster" {
            return Ok(ControllerSpec::Webster {
                lost_time_s: None,
                window_s: None,
            });
        }
        if lower == "sotl" {
            return Ok(ControllerSpec::Sotl {
                theta: Sotl::DEFAULT_THETA,
                min_green_s: None,
            });
        }
        if let Some(rest) = lower.strip_prefix("sotl-") {
            if let Ok(theta) = rest.parse::<f64>() {
                return Ok(ControllerSpec::Sotl {
                    theta,
                    min_green_s: None,
                });
            }
        }
        Err(HarnessError::UnknownController(s.to_string()))
    }

    /// Display name used as the method column in reports.
    pub fn label(&self) -> String {
        match self {
            ControllerSpec::FixTime { duration_s } => format!("FixTime-{duration_s}"),
            ControllerSpec::Webster { .. } => "Webster".to_string(),
            ControllerSpec::Sotl { theta, .. } => {
                if theta.fract() == 0.0 {
                    format!("SOTL-{}", *theta as i64)
                } else {
                    format!("SOTL-{theta}")
                }
            }
        }
    }

    pub fn build(
        &self,
        config: &IntersectionConfig,
    ) -> Result<Box<dyn Controller>, HarnessError> {
        match *self {
            ControllerSpec::FixTime { duration_s } => Ok(Box::new(FixTime::new(
                duration_s,
                config.action_interval_s,
            )?)),
            ControllerSpec::Webster {
                lost_time_s,
                window_s,
            } => {
                let lost = lost_time_s
                    .unwrap_or(config.yellow_s as f64 * config.phases.len() as f64);
                let window = window_s.unwrap_or(Webster::DEFAULT_WINDOW_S);
                Ok(Box::new(Webster::new(config.clone(), lost, window)?))
            }
            ControllerSpec::Sotl { theta, min_green_s } => Ok(Box::new(Sotl::new(
                config.clone(),
                theta,
                min_green_s.unwrap_or(config.min_green_s),
            )?)),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    intersection: IntersectionSection,
    demand: DemandSection,
    controller: Option<ControllerSection>,
    run: Option<RunSection>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IntersectionSection {
    preset: Option<String>,
    roads: Option<u8>,
    lanes: Option<BTreeMap<String, u32>>,
    phases: Option<Vec<Vec<String>>>,
    min_green_s: Option<u32>,
    yellow_s: Option<u32>,
    action_interval_s: Option<u32>,
    detection_range_m: Option<f64>,
    saturation_flow_vps: Option<f64>,
    vehicle_length_m: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandSection {
    seed: u64,
    horizon_s: Option<u32>,
    rate_range: Option<(f64, f64)>,
    rates: Option<BTreeMap<String, f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerSection {
    kind: String,
    duration_s: Option<u32>,
    lost_time_s: Option<f64>,
    window_s: Option<u32>,
    theta: Option<f64>,
    min_green_s: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    episodes: Option<usize>,
    eval_seed_base: Option<u64>,
}

impl Scenario {
    /// Resolves a command line argument: an existing file path loads as a
    /// scenario file, anything else must name a preset.
    pub fn resolve(arg: &str) -> Result<Scenario, HarnessError> {
        if Path::new(arg).is_file() {
            Scenario::load(Path::new(arg))
        } else {
            Scenario::from_preset(arg)
        }
    }

    /// Builds a preset scenario with default demand and run settings. The
    /// demand seed is derived from the preset name, so every preset gets its
    /// own stable traffic pattern.
    pub fn from_preset(name: &str) -> Result<Scenario, HarnessError> {
        let config =
            presets::build(name).ok_or_else(|| HarnessError::UnknownPreset(name.to_string()))?;
        let seed = stable_seed(&config.name);
        let demand = synth_demand(
            &config,
            DEFAULT_HORIZON_S,
            seed,
            DEFAULT_RATE_RANGE,
            &BTreeMap::new(),
        );
        Ok(Scenario {
            name: config.name.clone(),
            config,
            demand,
            controller: None,
            episodes: DEFAULT_EPISODES,
            eval_seed_base: DEFAULT_EVAL_SEED_BASE,
        })
    }

    pub fn load(path: &Path) -> Result<Scenario, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let file: ScenarioFile = toml::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;

        let name = file
            .name
            .clone()
            .or_else(|| file.intersection.preset.clone())
            .or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
            })
            .unwrap_or_else(|| "scenario".to_string());
        let fail = |message: String| HarnessError::Scenario {
            name: name.clone(),
            message,
        };

        let config = resolve_intersection(&file.intersection, &name)?;
        config.validate()?;

        let horizon_s = file.demand.horizon_s.unwrap_or(DEFAULT_HORIZON_S);
        let rate_range = file.demand.rate_range.unwrap_or(DEFAULT_RATE_RANGE);
        let (lo, hi) = rate_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
            return Err(fail(format!(
                "demand.rate_range must satisfy 0 <= lo < hi, got [{lo}, {hi}]"
            )));
        }
        let mut overrides = BTreeMap::new();
        if let Some(rates) = &file.demand.rates {
            for (key, &rate) in rates {
                let m = Movement::from_str(key)
                    .map_err(|_| fail(format!("demand.rates has unknown movement '{key}'")))?;
                if !config.is_active(m) {
                    return Err(fail(format!(
                        "demand.rates targets absent movement '{key}'"
                    )));
                }
                if !(rate.is_finite() && rate >= 0.0) {
                    return Err(fail(format!(
                        "demand.rates['{key}'] must be a finite non-negative rate, got {rate}"
                    )));
                }
                overrides.insert(m, rate);
            }
        }
        let demand = synth_demand(&config, horizon_s, file.demand.seed, rate_range, &overrides);

        let controller = match &file.controller {
            None => None,
            Some(section) => Some(resolve_controller(section, &name)?),
        };

        let run = file.run.as_ref();
        let episodes = run.and_then(|r| r.episodes).unwrap_or(DEFAULT_EPISODES);
        if episodes == 0 {
            return Err(fail("run.episodes must be at least 1".to_string()));
        }
        let eval_seed_base = run
            .and_then(|r| r.eval_seed_base)
            .unwrap_or(DEFAULT_EVAL_SEED_BASE);

        Ok(Scenario {
            name,
            config,
            demand,
            controller,
            episodes,
            eval_seed_base,
        })
    }

    /// Evaluation seeds in order: one per episode starting at the seed base.
    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.episodes as u64)
            .map(|i| self.eval_seed_base + i)
            .collect()
    }

    /// Hex digest over the resolved intersection and demand. Two scenarios
    /// with the same fingerprint run identical environments.
    pub fn fingerprint(&self) -> String {
        let mut text = String::new();
        let c = &self.config;
        text.push_str(&format!("roads={}\n", c.roads));
        text.push_str(&format!("lanes={:?}\n", c.lanes));
        text.push_str(&format!("straight={:?}\n", c.is_straight));
        for phase in &c.phases {
            let labels: Vec<&str> = phase.movements().map(|m| m.label()).collect();
            text.push_str(&format!("phase={}\n", labels.join("+")));
        }
        text.push_str(&format!("min_green_s={}\n", c.min_green_s));
        text.push_str(&format!("yellow_s={}\n", c.yellow_s));
        text.push_str(&format!("action_interval_s={}\n", c.action_interval_s));
        text.push_str(&format!("detection_range_m={:?}\n", c.detection_range_m));
        text.push_str(&format!("saturation_flow_vps={:?}\n", c.saturation_flow_vps));
        text.push_str(&format!("vehicle_length_m={:?}\n", c.vehicle_length_m));
        text.push_str(&format!("horizon_s={}\n", self.demand.horizon_s));
        for m in Movement::ALL {
            text.push_str(&format!("profile[{}]={:?}\n", m.label(), self.demand.profile(m)));
        }
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hex::encode(hasher.finalize())
    }
}

fn resolve_intersection(
    section: &IntersectionSection,
    name: &str,
) -> Result<IntersectionConfig, HarnessError> {
    let fail = |message: String| HarnessError::Scenario {
        name: name.to_string(),
        message,
    };
    let mut config = match &section.preset {
        Some(preset) => {
            if section.roads.is_some() || section.lanes.is_some() || section.phases.is_some() {
                return Err(fail(
                    "intersection.preset excludes inline roads/lanes/phases".to_string(),
                ));
            }
            presets::build(preset)
                .ok_or_else(|| HarnessError::UnknownPreset(preset.clone()))?
        }
        None => {
            let roads = section
                .roads
                .ok_or_else(|| fail("intersection.roads is required without a preset".into()))?;
            let lane_map = section
                .lanes
                .as_ref()
                .ok_or_else(|| fail("intersection.lanes is required without a preset".into()))?;
            let phase_lists = section
                .phases
                .as_ref()
                .ok_or_else(|| fail("intersection.phases is required without a preset".into()))?;
            let mut lanes = [0u32; 8];
            for (key, &count) in lane_map {
                let m = Movement::from_str(key)
                    .map_err(|_| fail(format!("intersection.lanes has unknown movement '{key}'")))?;
                lanes[m.index()] = count;
            }
            let mut phases = Vec::new();
            for (i, list) in phase_lists.iter().enumerate() {
                let mut movements = Vec::new();
                for label in list {
                    let m = Movement::from_str(label).map_err(|_| {
                        fail(format!(
                            "intersection.phases[{i}] has unknown movement '{label}'"
                        ))
                    })?;
                    movements.push(m);
                }
                phases.push(Phase::new(&movements));
            }
            IntersectionConfig::new(name, roads, lanes, phases)
        }
    };
    if let Some(v) = section.min_green_s {
        config.min_green_s = v;
    }
    if let Some(v) = section.yellow_s {
        config.yellow_s = v;
    }
    if let Some(v) = section.action_interval_s {
        config.action_interval_s = v;
    }
    if let Some(v) = section.detection_range_m {
        config.detection_range_m = v;
    }
    if let Some(v) = section.saturation_flow_vps {
        config.saturation_flow_vps = v;
    }
    if let Some(v) = section.vehicle_length_m {
        config.vehicle_length_m = v;
    }
    Ok(config)
}

fn resolve_controller(
    section: &ControllerSection,
    name: &str,
) -> Result<ControllerSpec, HarnessError> {
    match section.kind.to_ascii_lowercase().as_str() {
        "fixtime" => Ok(ControllerSpec::FixTime {
            duration_s: section.duration_s.unwrap_or(DEFAULT_FIXTIME_S),
        }),
        "webster" => Ok(ControllerSpec::Webster {
            lost_time_s: section.lost_time_s,
            window_s: section.window_s,
        }),
        "sotl" => Ok(ControllerSpec::Sotl {
            theta: section.theta.unwrap_or(Sotl::DEFAULT_THETA),
            min_green_s: section.min_green_s,
        }),
        other => Err(HarnessError::Scenario {
            name: name.to_string(),
            message: format!("controller.kind '{other}' is not fixtime, webster or sotl"),
        }),
    }
}

/// Draws one constant arrival rate per active movement: a per-lane rate from
/// `range`, multiplied by the movement's lane count. Draws happen in
/// canonical movement order so the schedule depends only on (config, seed).
pub fn synth_demand(
    config: &IntersectionConfig,
    horizon_s: u32,
    seed: u64,
    range: (f64, f64),
    overrides: &BTreeMap<Movement, f64>,
) -> DemandSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut demand = DemandSchedule::new(horizon_s);
    for m in Movement::ALL {
        if !config.is_active(m) {
            continue;
        }
        let per_lane = rng.gen_range(range.0..range.1);
        demand.set_rate(m, per_lane * config.lanes[m.index()] as f64);
    }
    for (&m, &rate) in overrides {
        demand.set_rate(m, rate);
    }
    demand
}

/// First eight bytes of the name's digest, so preset demand stays put across
/// releases.
fn stable_seed(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}
