use std::fmt;
use std::str::FromStr;

use super::SimError;

/// One signalized movement at the intersection, in the canonical row order
/// used everywhere in this crate (straight and left turn per compass
/// direction; right turns are unsignalized and not modeled).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Movement {
    North = 0,
    NorthLeft = 1,
    East = 2,
    EastLeft = 3,
    West = 4,
    WestLeft = 5,
    South = 6,
    SouthLeft = 7,
}

impl Movement {
    pub const COUNT: usize = 8;

    pub const ALL: [Movement; 8] = [
        Movement::North,
        Movement::NorthLeft,
        Movement::East,
        Movement::EastLeft,
        Movement::West,
        Movement::WestLeft,
        Movement::South,
        Movement::SouthLeft,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Movement> {
        Movement::ALL.get(i).copied()
    }

    /// Straight movements sit at even canonical indices, left turns at odd.
    pub fn is_straight(self) -> bool {
        self.index() % 2 == 0
    }

    pub fn label(self) -> &'static str {
        match self {
            Movement::North => "N",
            Movement::NorthLeft => "NL",
            Movement::East => "E",
            Movement::EastLeft => "EL",
            Movement::West => "W",
            Movement::WestLeft => "WL",
            Movement::South => "S",
            Movement::SouthLeft => "SL",
        }
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Movement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Movement::ALL
            .iter()
            .copied()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown movement label {s:?} (expected one of N, NL, E, EL, W, WL, S, SL)"))
    }
}

/// A signal phase: the set of movements that show green together.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Phase {
    mask: u8,
}

impl Phase {
    pub fn new(movements: &[Movement]) -> Phase {
        let mut mask = 0u8;
        for m in movements {
            mask |= 1 << m.index();
        }
        Phase { mask }
    }

    pub fn contains(self, m: Movement) -> bool {
        self.mask & (1 << m.index()) != 0
    }

    pub fn movements(self) -> impl Iterator<Item = Movement> {
        Movement::ALL.into_iter().filter(move |m| self.contains(*m))
    }

    pub fn is_empty(self) -> bool {
        self.mask == 0
    }
}

impl fmt::Debug for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Phase[")?;
        let mut first = true;
        for m in self.movements() {
            if !first {
                write!(f, " ")?;
            }
            write!(f, "{m}")?;
            first = false;
        }
        write!(f, "]")
    }
}

/// Static description of one intersection: geometry, signal plan and sensor
/// parameters. Validated up front so the simulator core can assume a
/// consistent layout.
#[derive(Clone, Debug)]
pub struct IntersectionConfig {
    pub name: String,
    /// Number of approach roads, 3 (T junction) or 4.
    pub roads: u8,
    /// Lane count per movement in canonical order; 0 marks an absent movement.
    pub lanes: [u32; 8],
    /// Straight/left flag per movement, canonical by default.
    pub is_straight: [bool; 8],
    /// Cyclic phase sequence; a change request advances to the next entry.
    pub phases: Vec<Phase>,
    /// A change request is ignored until the current phase has held green
    /// this long.
    pub min_green_s: u32,
    /// All-red clearance inserted before every phase change.
    pub yellow_s: u32,
    /// Seconds between control decisions.
    pub action_interval_s: u32,
    /// Length of road covered by the queue detector, per movement.
    pub detection_range_m: f64,
    /// Departure rate per lane while green, vehicles per second.
    pub saturation_flow_vps: f64,
    /// Footprint of one queued vehicle, used by the occupancy sensor.
    pub vehicle_length_m: f64,
}

impl IntersectionConfig {
    /// Builds a config with the standard sensor and timing defaults.
    pub fn new(name: impl Into<String>, roads: u8, lanes: [u32; 8], phases: Vec<Phase>) -> IntersectionConfig {
        let mut is_straight = [false; 8];
        for m in Movement::ALL {
            is_straight[m.index()] = m.is_straight();
        }
        IntersectionConfig {
            name: name.into(),
            roads,
            lanes,
            is_straight,
            phases,
            min_green_s: 5,
            yellow_s: 3,
            action_interval_s: 5,
            detection_range_m: 150.0,
            saturation_flow_vps: 0.5,
            vehicle_length_m: 5.0,
        }
    }

    pub fn is_active(&self, m: Movement) -> bool {
        self.lanes[m.index()] > 0
    }

    pub fn active_movements(&self) -> impl Iterator<Item = Movement> + '_ {
        Movement::ALL.into_iter().filter(|m| self.is_active(*m))
    }

    pub fn active_mask(&self) -> [bool; 8] {
        let mut mask = [false; 8];
        for m in self.active_movements() {
            mask[m.index()] = true;
        }
        mask
    }

    /// The four possible absence patterns for a T junction, one per missing
    /// arm. A movement is infeasible exactly when its entry or exit arm is
    /// the missing one.
    fn three_way_patterns() -> [[bool; 8]; 4] {
        use Movement::*;
        let absent = |movs: [Movement; 4]| {
            let mut mask = [false; 8];
            for m in movs {
                mask[m.index()] = true;
            }
            mask
        };
        [
            // missing north arm
            absent([North, EastLeft, South, SouthLeft]),
            // missing east arm
            absent([East, West, WestLeft, SouthLeft]),
            // missing south arm
            absent([North, NorthLeft, WestLeft, South]),
            // missing west arm
            absent([NorthLeft, East, EastLeft, West]),
        ]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.roads != 3 && self.roads != 4 {
            return Err(SimError::InvalidRoads(self.roads));
        }
        if self.phases.is_empty() {
            return Err(SimError::NoPhases);
        }
        for (p, phase) in self.phases.iter().enumerate() {
            for m in phase.movements() {
                if !self.is_active(m) {
                    return Err(SimError::PhaseUsesAbsentMovement { phase: p, movement: m });
                }
            }
        }
        if self.roads == 4 {
            for m in Movement::ALL {
                if !self.is_active(m) {
                    return Err(SimError::FourWayMissingMovement(m));
                }
            }
        } else {
            let absent: [bool; 8] = std::array::from_fn(|i| self.lanes[i] == 0);
            if !Self::three_way_patterns().contains(&absent) {
                return Err(SimError::InvalidThreeWayTopology {
                    active: self.active_movements().collect(),
                });
            }
        }
        if self.action_interval_s == 0 {
            return Err(SimError::InvalidActionInterval);
        }
        if self.yellow_s >= self.action_interval_s {
            return Err(SimError::YellowTooLong {
                yellow_s: self.yellow_s,
                interval_s: self.action_interval_s,
            });
        }
        for (what, v) in [
            ("detection_range_m", self.detection_range_m),
            ("saturation_flow_vps", self.saturation_flow_vps),
            ("vehicle_length_m", self.vehicle_length_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::NonPositiveParameter { what });
            }
        }
        Ok(())
    }
}
