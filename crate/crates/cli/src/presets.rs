//! Built-in single intersections INT-1 through INT-11.
//!
//! Lane counts are stated per road. Each road reserves one lane for its left
//! turn and gives the rest to the straight movement. 3-way layouts follow the
//! missing-south pattern: the cross street supplies E, EL and W, and the stem
//! road's surviving movement is the left turn SL with all but one of its
//! lanes. Phase plans cycle in the listed order.

use greenlight::sim::{IntersectionConfig, Movement, Phase};

use Movement::{East, EastLeft, North, NorthLeft, South, SouthLeft, West, WestLeft};

pub const NAMES: [&str; 11] = [
    "INT-1", "INT-2", "INT-3", "INT-4", "INT-5", "INT-6", "INT-7", "INT-8", "INT-9", "INT-10",
    "INT-11",
];

fn phase_cycle(lists: &[&[Movement]]) -> Vec<Phase> {
    lists.iter().map(|movements| Phase::new(movements)).collect()
}

/// 4-way layout from per-road lane counts in N, E, S, W order.
fn cross(name: &str, [n, e, s, w]: [u32; 4], lists: &[&[Movement]]) -> IntersectionConfig {
    let lanes = [n - 1, 1, e - 1, 1, w - 1, 1, s - 1, 1];
    IntersectionConfig::new(name, 4, lanes, phase_cycle(lists))
}

/// 3-way layout from per-road lane counts in N, E, W order, with the north
/// road as the stem.
fn tee(name: &str, [n, e, w]: [u32; 3], lists: &[&[Movement]]) -> IntersectionConfig {
    let lanes = [0, 0, e - 1, 1, w - 1, 0, 0, n - 1];
    IntersectionConfig::new(name, 3, lanes, phase_cycle(lists))
}

/// Builds a preset by name, case-insensitively. Returns None for unknown
/// names.
pub fn build(name: &str) -> Option<IntersectionConfig> {
    let key = name.to_ascii_uppercase();
    let config = match key.as_str() {
        "INT-1" => cross(
            "INT-1",
            [3, 3, 3, 3],
            &[
                &[North, South],
                &[NorthLeft, SouthLeft],
                &[East, West],
                &[EastLeft, WestLeft],
            ],
        ),
        "INT-2" => cross(
            "INT-2",
            [3, 3, 3, 3],
            &[
                &[North, South],
                &[East, West],
                &[NorthLeft, SouthLeft],
                &[EastLeft, WestLeft],
            ],
        ),
        "INT-3" => cross(
            "INT-3",
            [3, 3, 3, 3],
            &[
                &[North, NorthLeft, South, SouthLeft],
                &[East, EastLeft, West, WestLeft],
            ],
        ),
        "INT-4" => cross(
            "INT-4",
            [3, 4, 4, 5],
            &[
                &[North, South],
                &[NorthLeft, SouthLeft],
                &[East, West],
                &[EastLeft, WestLeft],
            ],
        ),
        "INT-5" => cross(
            "INT-5",
            [3, 4, 4, 5],
            &[
                &[East, West],
                &[EastLeft, WestLeft],
                &[North, South],
                &[NorthLeft, SouthLeft],
            ],
        ),
        "INT-6" => cross(
            "INT-6",
            [3, 4, 4, 5],
            &[
                &[North, South],
                &[North, NorthLeft],
                &[NorthLeft, SouthLeft],
                &[East, West],
                &[East, EastLeft],
                &[EastLeft, WestLeft],
            ],
        ),
        "INT-7" => tee(
            "INT-7",
            [3, 3, 3],
            &[&[East, West], &[East, EastLeft], &[SouthLeft]],
        ),
        "INT-8" => tee(
            "INT-8",
            [3, 3, 3],
            &[&[East, West], &[SouthLeft], &[East, EastLeft]],
        ),
        "INT-9" => cross(
            "INT-9",
            [3, 4, 3, 4],
            &[
                &[North, South],
                &[NorthLeft, SouthLeft],
                &[East, West],
                &[EastLeft, WestLeft],
            ],
        ),
        "INT-10" => cross(
            "INT-10",
            [3, 3, 3, 3],
            &[
                &[North, South],
                &[NorthLeft, SouthLeft],
                &[East, West],
                &[EastLeft, WestLeft],
                &[North, NorthLeft],
            ],
        ),
        "INT-11" => tee(
            "INT-11",
            [4, 3, 3],
            &[&[East, West], &[EastLeft, SouthLeft], &[East, EastLeft]],
        ),
        _ => return None,
    };
    Some(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds_and_validates() {
        for name in NAMES {
            let config = build(name).unwrap();
            assert_eq!(config.name, name);
            config.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn lookup_ignores_case_and_rejects_unknown_names() {
        assert_eq!(build("int-4").unwrap().name, "INT-4");
        assert_eq!(build("Int-10").unwrap().name, "INT-10");
        assert!(build("INT-12").is_none());
        assert!(build("INT-0").is_none());
        assert!(build("junction").is_none());
    }

    #[test]
    fn roads_and_phase_counts_match_the_catalogue() {
        let expected = [
            ("INT-1", 4, 4),
            ("INT-2", 4, 4),
            ("INT-3", 4, 2),
            ("INT-4", 4, 4),
            ("INT-5", 4, 4),
            ("INT-6", 4, 6),
            ("INT-7", 3, 3),
            ("INT-8", 3, 3),
            ("INT-9", 4, 4),
            ("INT-10", 4, 5),
            ("INT-11", 3, 3),
        ];
        for (name, roads, phases) in expected {
            let config = build(name).unwrap();
            assert_eq!(config.roads, roads, "{name}");
            assert_eq!(config.phases.len(), phases, "{name}");
        }
    }

    #[test]
    fn int4_has_the_wide_asymmetric_layout() {
        let config = build("INT-4").unwrap();
        assert_eq!(config.roads, 4);
        assert_eq!(config.lanes, [2, 1, 3, 1, 4, 1, 3, 1]);
        assert_eq!(config.phases.len(), 4);
    }

    #[test]
    fn int7_is_a_tee_with_three_lanes_per_road() {
        let config = build("INT-7").unwrap();
        assert_eq!(config.roads, 3);
        assert_eq!(config.lanes, [0, 0, 2, 1, 2, 0, 0, 2]);
        assert_eq!(config.phases.len(), 3);
        let active: Vec<Movement> = config.active_movements().collect();
        assert_eq!(active, vec![East, EastLeft, West, SouthLeft]);
    }

    #[test]
    fn int1_and_int2_share_lanes_but_order_phases_differently() {
        let a = build("INT-1").unwrap();
        let b = build("INT-2").unwrap();
        assert_eq!(a.lanes, b.lanes);
        assert_ne!(a.phases, b.phases);
        let mut sa = a.phases.clone();
        let mut sb = b.phases.clone();
        sa.sort_by_key(|p| format!("{p:?}"));
        sb.sort_by_key(|p| format!("{p:?}"));
        assert_eq!(sa, sb);
    }

    #[test]
    fn int3_merges_int1s_plan_into_two_phases() {
        let a = build("INT-1").unwrap();
        let c = build("INT-3").unwrap();
        assert_eq!(a.lanes, c.lanes);
        assert_eq!(c.phases.len(), 2);
    }

    #[test]
    fn int11_changes_both_lanes_and_phases_of_int8() {
        let base = build("INT-8").unwrap();
        let variant = build("INT-11").unwrap();
        assert_ne!(base.lanes, variant.lanes);
        assert_ne!(base.phases, variant.phases);
        assert_eq!(variant.lanes, [0, 0, 2, 1, 2, 0, 0, 3]);
    }

    #[test]
    fn four_way_presets_use_every_movement() {
        for name in NAMES {
            let config = build(name).unwrap();
            if config.roads == 4 {
                assert!(config.lanes.iter().all(|&l| l > 0), "{name}");
            }
        }
    }
}
