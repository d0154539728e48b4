//! Bundled desk-scale test system: a two-area, four-machine grid with two
//! tie corridors (7–9, double circuit, and 5–11) and a double-circuit 6–7 line.

use crate::poddesign::DesignConfig;
use crate::segment::SegmentationPlan;
use crate::simcore::{Event, EventKind, SimConfig, SystemModel};
use crate::study::{FrequencySource, StudyConfig};
use crate::suppctrl::FcParams;

const TWO_AREA: &str = include_str!("../fixtures/two_area.json");
const TWO_AREA_PLAN: &str = include_str!("../fixtures/two_area_segmentation.json");

pub fn two_area() -> SystemModel {
    serde_json::from_str(TWO_AREA).expect("bundled two-area fixture parses")
}

/// Replaces both tie corridors: link A for 7–9, link B for 5–11.
pub fn two_area_plan() -> SegmentationPlan {
    serde_json::from_str(TWO_AREA_PLAN).expect("bundled segmentation plan parses")
}

/// Study settings for the fixture: trip of the machine at bus 2 (gen-trip
/// runs) and of one 6–7 circuit (line-trip runs), both at t = 1 s.
pub fn two_area_study() -> StudyConfig {
    StudyConfig {
        pod_regions: Vec::new(),
        design: DesignConfig::default(),
        fc: FcParams::default(),
        delay_tau_s: None,
        delay_sweep_s: vec![0.0, 0.05, 0.1],
        gen_trip: Some(Event {
            time: 1.0,
            kind: EventKind::TripMachine { bus: 2, unit: 1 },
        }),
        line_trip: Some(Event {
            time: 1.0,
            kind: EventKind::TripBranch {
                from: 6,
                to: 7,
                circuit: Some(1),
            },
        }),
        sim: SimConfig::new(0.0025, 20.0),
        frequency_source: FrequencySource::Coi,
    }
}
