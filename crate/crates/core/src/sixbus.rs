//! Six-bus test system with synthetic daily profiles.
//!
//! Network, generator data, device placement, `β = 0.9`, `T = 24`, `K = 31`
//! and the power cap of 160 MW per aggregator follow the published case. The
//! fixed-load, wind-forecast and envelope series are stand-ins with a peak
//! from 8:00 to 23:00.

use crate::cli::case_file::{
    CaseFile, FarmEntry, NetworkSection, RiskSection, SampleSource, WindSection, CASE_FILE_VERSION,
};
use crate::cli::Weights;
use crate::cvar::{synthetic_samples, WindFarm, WindModel};
use crate::dispatch::{DispatchCase, FixedLoad, Generator};
use crate::flexload::FlexibleLoadSpec;
use crate::network::{six_bus_lines, DeviceBuses, NetworkModel};

pub const HORIZON: usize = 24;
pub const SAMPLES_PER_SLOT: usize = 31;
pub const BETA: f64 = 0.9;
pub const DEFAULT_SEED: u64 = 2017;
/// half-width of the multiplicative sample noise
pub const SAMPLE_SPREAD: f64 = 0.2;
pub const FLEX_CAP: f64 = 160.0;

/// `(η¹, η²)` of the six reference settings.
pub const WEIGHT_SWEEP: [(f64, f64); 6] = [
    (10.0, 10.0),
    (10.0, 100.0),
    (50.0, 100.0),
    (100.0, 100.0),
    (200.0, 100.0),
    (200.0, 200.0),
];

pub const FIXED_LOAD_BUS: usize = 5;
pub const WIND_BUS: usize = 1;
pub const FLEX_BUSES: [usize; 2] = [3, 4];

/// MW at bus 5, slot `t` covering hour `t`.
pub const FIXED_LOAD: [f64; HORIZON] = [
    100.0, 95.0, 90.0, 90.0, 90.0, 95.0, 100.0, 110.0, // 0:00-8:00
    600.0, 615.0, 625.0, 635.0, 640.0, 645.0, 640.0, 635.0, // 8:00-16:00
    640.0, 645.0, 655.0, 660.0, 650.0, 635.0, 610.0, 120.0, // 16:00-24:00
];

/// MW at bus 1.
pub const WIND_FORECAST: [f64; HORIZON] = [
    245.0, 250.0, 255.0, 255.0, 250.0, 245.0, 240.0, 230.0, //
    90.0, 75.0, 65.0, 60.0, 55.0, 50.0, 50.0, 55.0, //
    55.0, 60.0, 65.0, 70.0, 75.0, 85.0, 95.0, 225.0, //
];

pub fn generators() -> Vec<Generator> {
    let g = |bus, g_max, c2, c1| Generator {
        bus,
        g_min: 0.0,
        g_max,
        c2,
        c1,
        c0: 0.0,
    };
    vec![g(1, 1100.0, 0.03, 7.0), g(2, 500.0, 0.07, 10.0), g(6, 230.0, 0.05, 8.0)]
}

/// Envelope of one aggregator. `l` is the latest-start trajectory that still
/// delivers `energy` by the end of the day at the power cap; `u` trails the
/// cap by `headroom` and saturates at `ceiling`.
pub fn envelope(bus: usize, energy: f64, headroom: f64, ceiling: f64) -> FlexibleLoadSpec {
    let l = (0..HORIZON)
        .map(|t| (energy - FLEX_CAP * (HORIZON - 1 - t) as f64).max(0.0))
        .collect();
    let u = (0..HORIZON)
        .map(|t| (FLEX_CAP * (t + 1) as f64 + headroom).min(ceiling))
        .collect();
    FlexibleLoadSpec {
        bus,
        l,
        u,
        x_min: vec![0.0; HORIZON],
        x_max: vec![FLEX_CAP; HORIZON],
    }
}

pub fn flexible_loads() -> Vec<FlexibleLoadSpec> {
    vec![
        envelope(FLEX_BUSES[0], 1600.0, 120.0, 2200.0),
        envelope(FLEX_BUSES[1], 1500.0, 100.0, 2100.0),
    ]
}

pub fn network() -> NetworkModel {
    let devices = DeviceBuses {
        generators: generators().iter().map(|g| g.bus).collect(),
        fixed_loads: vec![FIXED_LOAD_BUS],
        wind: vec![WIND_BUS],
        flexible: FLEX_BUSES.to_vec(),
    };
    NetworkModel::new(6, six_bus_lines(), 1, devices).expect("six-bus data is valid")
}

pub fn wind(seed: u64) -> WindModel {
    WindModel {
        farms: vec![WindFarm {
            bus: WIND_BUS,
            forecast: WIND_FORECAST.to_vec(),
            samples: synthetic_samples(&WIND_FORECAST, SAMPLES_PER_SLOT, SAMPLE_SPREAD, seed),
        }],
    }
}

pub fn six_bus_case(eta1: f64, eta2: f64, seed: u64) -> DispatchCase {
    DispatchCase {
        network: network(),
        generators: generators(),
        fixed_loads: vec![FixedLoad {
            bus: FIXED_LOAD_BUS,
            demand: FIXED_LOAD.to_vec(),
        }],
        flexible: flexible_loads(),
        wind: wind(seed),
        eta1,
        eta2,
        beta: BETA,
        horizon: HORIZON,
        fixed_box: None,
    }
}

/// The bundled case file contents: the six settings of [`WEIGHT_SWEEP`] with
/// synthetic samples from `seed`.
pub fn case_file(seed: u64) -> CaseFile {
    let case = six_bus_case(WEIGHT_SWEEP[0].0, WEIGHT_SWEEP[0].1, seed);
    CaseFile {
        version: CASE_FILE_VERSION,
        name: "six-bus".into(),
        horizon: HORIZON,
        network: NetworkSection {
            buses: 6,
            slack: 1,
            lines: six_bus_lines(),
        },
        generators: case.generators,
        fixed_loads: case.fixed_loads,
        wind: WindSection {
            samples_per_slot: SAMPLES_PER_SLOT,
            farms: vec![FarmEntry {
                bus: WIND_BUS,
                forecast: WIND_FORECAST.to_vec(),
                samples: None,
            }],
            samples: SampleSource::Synthetic {
                spread: SAMPLE_SPREAD,
                seed,
            },
        },
        flexible_loads: case.flexible,
        risk: RiskSection {
            beta: BETA,
            eta1: None,
            eta2: None,
            sweep: Some(WEIGHT_SWEEP.iter().map(|&(eta1, eta2)| Weights { eta1, eta2 }).collect()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn bundled_file_matches_builder() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases/sixbus.json");
        let file = CaseFile::read(&path).unwrap();
        assert_eq!(file, case_file(DEFAULT_SEED));
        let scenario = file.build(path.parent().unwrap(), None).unwrap();
        for (k, &(eta1, eta2)) in WEIGHT_SWEEP.iter().enumerate() {
            assert_eq!(scenario.case(k + 1).unwrap(), six_bus_case(eta1, eta2, DEFAULT_SEED));
        }
    }

    #[test]
    fn off_peak_leaves_room_for_the_cap() {
        // the envelopes allow 160 MW in every off-peak slot
        for spec in flexible_loads() {
            let mut cum = 0.0;
            for t in 0..8 {
                cum += FLEX_CAP;
                assert!(cum <= spec.u[t]);
            }
        }
    }
}
