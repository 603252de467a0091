//! Versioned JSON case files.
//!
//! ```json
//! {
//!   "version": 1,
//!   "name": "six-bus",
//!   "horizon": 24,
//!   "network": { "buses": 6, "slack": 1,
//!                "lines": [{ "from_bus": 1, "to_bus": 2, "reactance": 0.17, "flow_limit": 450 }] },
//!   "generators": [{ "bus": 1, "g_min": 0, "g_max": 1100, "c2": 0.03, "c1": 7, "c0": 0 }],
//!   "fixed_loads": [{ "bus": 5, "demand": [100, 95] }],
//!   "wind": {
//!     "samples_per_slot": 31,
//!     "farms": [{ "bus": 1, "forecast": [245, 250] }],
//!     "samples": { "source": "synthetic", "spread": 0.2, "seed": 2017 }
//!   },
//!   "flexible_loads": [{ "bus": 3, "l": [0, 0], "u": [280, 440], "x_min": [0, 0], "x_max": [160, 160] }],
//!   "risk": { "beta": 0.9, "sweep": [{ "eta1": 10, "eta2": 10 }] }
//! }
//! ```
//!
//! `samples` is one of
//! - `{"source": "synthetic", "spread": s, "seed": n}`: farm `j` draws
//!   `max(0, w̄(1 + s·u))`, `u ~ U[-1, 1]`, from seed `n + j`;
//! - `{"source": "inline"}`: every farm carries `"samples": [[MW; K]; T]`;
//! - `{"source": "csv", "path": "file.csv"}`: `bus,slot,k,value_mw` records
//!   with 1-based slot and k, path relative to the case file.
//!
//! `risk` holds either a single `eta1`/`eta2` pair or a `sweep` list. Unknown
//! fields are rejected. Every series must have `horizon` entries.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cvar::{read_samples_csv, synthetic_samples, WindFarm, WindModel};
use crate::dispatch::{DispatchCase, DispatchError, FixedLoad, Generator};
use crate::flexload::FlexibleLoadSpec;
use crate::network::{DeviceBuses, Line, NetworkModel};

pub const CASE_FILE_VERSION: u32 = 1;

/// A schema violation, located by its JSON field path.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {message}")]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl SchemaError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub horizon: usize,
    pub network: NetworkSection,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub fixed_loads: Vec<FixedLoad>,
    pub wind: WindSection,
    #[serde(default)]
    pub flexible_loads: Vec<FlexibleLoadSpec>,
    pub risk: RiskSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub buses: usize,
    #[serde(default = "default_slack")]
    pub slack: usize,
    pub lines: Vec<Line>,
}

fn default_slack() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindSection {
    /// K, samples per farm and slot
    pub samples_per_slot: usize,
    pub farms: Vec<FarmEntry>,
    pub samples: SampleSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmEntry {
    pub bus: usize,
    pub forecast: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleSource {
    Synthetic { spread: f64, seed: u64 },
    Inline,
    Csv { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub eta1: f64,
    pub eta2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<Weights>>,
}

/// A validated case file: the base case (weights of the first setting) and
/// the weight settings to run, in file order.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub base: DispatchCase,
    pub settings: Vec<Weights>,
}

impl Scenario {
    /// Case `k`, 1-based.
    pub fn case(&self, k: usize) -> Option<DispatchCase> {
        let w = self.settings.get(k.checked_sub(1)?)?;
        Some(self.base.with_weights(w.eta1, w.eta2))
    }
}

impl CaseFile {
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: CaseFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            SchemaError::new(if path == "." { "$".to_string() } else { path }, e.inner().to_string())
        })?;
        if file.version != CASE_FILE_VERSION {
            return Err(SchemaError::new(
                "version",
                format!("unsupported version {}, expected {CASE_FILE_VERSION}", file.version),
            ));
        }
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|e| SchemaError::new("$", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn settings(&self) -> Result<Vec<Weights>, SchemaError> {
        let r = &self.risk;
        match (&r.sweep, r.eta1, r.eta2) {
            (Some(list), None, None) if !list.is_empty() => Ok(list.clone()),
            (Some(_), None, None) => Err(SchemaError::new("risk.sweep", "sweep list is empty")),
            (None, Some(eta1), Some(eta2)) => Ok(vec![Weights { eta1, eta2 }]),
            (Some(_), _, _) => Err(SchemaError::new("risk", "give either eta1/eta2 or sweep, not both")),
            _ => Err(SchemaError::new("risk", "eta1 and eta2 (or a sweep list) are required")),
        }
    }

    /// Validates the file and builds the cases. `base_dir` resolves a CSV
    /// sample path; `seed` overrides a synthetic sample seed.
    pub fn build(&self, base_dir: &Path, seed: Option<u64>) -> Result<Scenario, SchemaError> {
        let t = self.horizon;
        if t == 0 {
            return Err(SchemaError::new("horizon", "must be at least 1"));
        }
        let settings = self.settings()?;
        for (i, w) in settings.iter().enumerate() {
            let path = if self.risk.sweep.is_some() { format!("risk.sweep[{i}]") } else { "risk".into() };
            if !(w.eta1 >= 0.0 && w.eta2 >= 0.0) {
                return Err(SchemaError::new(path, "weights must be nonnegative"));
            }
        }
        if !(0.0..1.0).contains(&self.risk.beta) {
            return Err(SchemaError::new("risk.beta", format!("{} outside [0, 1)", self.risk.beta)));
        }

        let n = self.network.buses;
        let bus_ok = |path: String, bus: usize| {
            if bus >= 1 && bus <= n {
                Ok(())
            } else {
                Err(SchemaError::new(path, format!("bus {bus} outside 1..={n}")))
            }
        };
        let series = |path: String, v: &[f64]| {
            if v.len() != t {
                Err(SchemaError::new(path, format!("{} entries, expected {t}", v.len())))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(SchemaError::new(path, "non-finite entry"))
            } else {
                Ok(())
            }
        };
        if n == 0 {
            return Err(SchemaError::new("network.buses", "must be at least 1"));
        }
        bus_ok("network.slack".into(), self.network.slack)?;
        for (i, l) in self.network.lines.iter().enumerate() {
            bus_ok(format!("network.lines[{i}].from_bus"), l.from_bus)?;
            bus_ok(format!("network.lines[{i}].to_bus"), l.to_bus)?;
        }
        for (i, g) in self.generators.iter().enumerate() {
            bus_ok(format!("generators[{i}].bus"), g.bus)?;
            if !(g.g_min <= g.g_max) {
                return Err(SchemaError::new(format!("generators[{i}]"), "g_min exceeds g_max"));
            }
            if !(g.c2 >= 0.0) {
                return Err(SchemaError::new(format!("generators[{i}].c2"), "must be nonnegative"));
            }
        }
        for (i, d) in self.fixed_loads.iter().enumerate() {
            bus_ok(format!("fixed_loads[{i}].bus"), d.bus)?;
            series(format!("fixed_loads[{i}].demand"), &d.demand)?;
        }
        for (i, f) in self.flexible_loads.iter().enumerate() {
            bus_ok(format!("flexible_loads[{i}].bus"), f.bus)?;
            for (name, v) in [("l", &f.l), ("u", &f.u), ("x_min", &f.x_min), ("x_max", &f.x_max)] {
                series(format!("flexible_loads[{i}].{name}"), v)?;
            }
            f.validate()
                .map_err(|e| SchemaError::new(format!("flexible_loads[{i}]"), e.to_string()))?;
        }
        let k = self.wind.samples_per_slot;
        if k == 0 {
            return Err(SchemaError::new("wind.samples_per_slot", "must be at least 1"));
        }
        for (j, farm) in self.wind.farms.iter().enumerate() {
            bus_ok(format!("wind.farms[{j}].bus"), farm.bus)?;
            series(format!("wind.farms[{j}].forecast"), &farm.forecast)?;
            let inline = matches!(self.wind.samples, SampleSource::Inline);
            match (&farm.samples, inline) {
                (Some(_), false) => {
                    return Err(SchemaError::new(format!("wind.farms[{j}].samples"), "only allowed with inline samples"))
                }
                (None, true) => return Err(SchemaError::new(format!("wind.farms[{j}].samples"), "missing inline samples")),
                _ => {}
            }
        }

        let samples = self.samples(base_dir, seed)?;
        for (j, per_slot) in samples.iter().enumerate() {
            let path = format!("wind.farms[{j}].samples");
            if per_slot.len() != t {
                return Err(SchemaError::new(path, format!("{} slots, expected {t}", per_slot.len())));
            }
            for (s, row) in per_slot.iter().enumerate() {
                if row.len() != k {
                    return Err(SchemaError::new(format!("{path}[{s}]"), format!("{} samples, expected {k}", row.len())));
                }
                if row.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(SchemaError::new(format!("{path}[{s}]"), "samples must be finite and nonnegative"));
                }
            }
        }

        let devices = DeviceBuses {
            generators: self.generators.iter().map(|g| g.bus).collect(),
            fixed_loads: self.fixed_loads.iter().map(|d| d.bus).collect(),
            wind: self.wind.farms.iter().map(|f| f.bus).collect(),
            flexible: self.flexible_loads.iter().map(|f| f.bus).collect(),
        };
        let network = NetworkModel::new(n, self.network.lines.clone(), self.network.slack, devices)
            .map_err(|e| SchemaError::new("network", e.to_string()))?;
        let first = settings[0];
        let base = DispatchCase {
            network,
            generators: self.generators.clone(),
            fixed_loads: self.fixed_loads.clone(),
            flexible: self.flexible_loads.clone(),
            wind: WindModel {
                farms: self
                    .wind
                    .farms
                    .iter()
                    .zip(samples)
                    .map(|(f, samples)| WindFarm {
                        bus: f.bus,
                        forecast: f.forecast.clone(),
                        samples,
                    })
                    .collect(),
            },
            eta1: first.eta1,
            eta2: first.eta2,
            beta: self.risk.beta,
            horizon: t,
            fixed_box: None,
        };
        base.validate().map_err(|e| {
            let path = match e {
                DispatchError::Flex(_) => "flexible_loads",
                DispatchError::Cvar(_) => "wind",
                _ => "$",
            };
            SchemaError::new(path, e.to_string())
        })?;
        Ok(Scenario {
            name: self.name.clone(),
            base,
            settings,
        })
    }

    /// `[farm][slot][k]`
    fn samples(&self, base_dir: &Path, seed: Option<u64>) -> Result<Vec<Vec<Vec<f64>>>, SchemaError> {
        let w = &self.wind;
        match &w.samples {
            SampleSource::Synthetic { spread, seed: file_seed } => {
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return Err(SchemaError::new("wind.samples.spread", "must be finite and nonnegative"));
                }
                let s = seed.unwrap_or(*file_seed);
                Ok(w.farms
                    .iter()
                    .enumerate()
                    .map(|(j, f)| synthetic_samples(&f.forecast, w.samples_per_slot, *spread, s.wrapping_add(j as u64)))
                    .collect())
            }
            SampleSource::Inline => Ok(w.farms.iter().map(|f| f.samples.clone().unwrap_or_default()).collect()),
            SampleSource::Csv { path } => {
                let full = base_dir.join(path);
                let file = File::open(&full)
                    .map_err(|e| SchemaError::new("wind.samples.path", format!("{}: {e}", full.display())))?;
                let buses: Vec<usize> = w.farms.iter().map(|f| f.bus).collect();
                read_samples_csv(file, &buses, self.horizon).map_err(|e| SchemaError::new("wind.samples.path", e.to_string()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> serde_json::Value {
        serde_json::json!({
            "version": 1,
            "name": "tiny",
            "horizon": 2,
            "network": { "buses": 2, "lines": [{ "from_bus": 1, "to_bus": 2, "reactance": 0.1, "flow_limit": 500.0 }] },
            "generators": [{ "bus": 1, "g_min": 0.0, "g_max": 400.0, "c2": 0.03, "c1": 7.0, "c0": 0.0 }],
            "fixed_loads": [{ "bus": 2, "demand": [100.0, 120.0] }],
            "wind": {
                "samples_per_slot": 3,
                "farms": [{ "bus": 2, "forecast": [30.0, 40.0], "samples": [[20.0, 30.0, 40.0], [35.0, 40.0, 45.0]] }],
                "samples": { "source": "inline" }
            },
            "flexible_loads": [{ "bus": 2, "l": [0.0, 50.0], "u": [60.0, 120.0], "x_min": [0.0, 0.0], "x_max": [60.0, 60.0] }],
            "risk": { "beta": 0.9, "eta1": 10.0, "eta2": 10.0 }
        })
    }

    fn build(v: &serde_json::Value) -> Result<Scenario, SchemaError> {
        CaseFile::parse(&v.to_string())?.build(Path::new("."), None)
    }

    #[test]
    fn tiny_case_builds() {
        let s = build(&tiny()).unwrap();
        assert_eq!(s.settings.len(), 1);
        assert_eq!(s.base.wind.farms[0].samples[1], vec![35.0, 40.0, 45.0]);
        assert!(s.case(2).is_none());
    }

    #[test]
    fn short_series_names_the_section() {
        let mut v = tiny();
        v["fixed_loads"][0]["demand"] = serde_json::json!([100.0]);
        let e = build(&v).unwrap_err();
        assert_eq!(e.path, "fixed_loads[0].demand");

        let mut v = tiny();
        v["flexible_loads"][0]["u"] = serde_json::json!([60.0, 120.0, 180.0]);
        assert_eq!(build(&v).unwrap_err().path, "flexible_loads[0].u");

        let mut v = tiny();
        v["wind"]["farms"][0]["samples"][1] = serde_json::json!([35.0, 40.0]);
        assert_eq!(build(&v).unwrap_err().path, "wind.farms[0].samples[1]");
    }

    #[test]
    fn type_errors_carry_the_path() {
        let mut v = tiny();
        v["generators"][0]["c1"] = serde_json::json!("seven");
        let e = build(&v).unwrap_err();
        assert_eq!(e.path, "generators[0].c1");

        let mut v = tiny();
        v["network"]["extra"] = serde_json::json!(1);
        assert_eq!(build(&v).unwrap_err().path, "network.extra");
    }

    #[test]
    fn risk_section_rules() {
        let mut v = tiny();
        v["risk"] = serde_json::json!({ "beta": 0.9, "eta1": 1.0 });
        assert_eq!(build(&v).unwrap_err().path, "risk");

        let mut v = tiny();
        v["risk"] = serde_json::json!({ "beta": 0.9, "sweep": [{ "eta1": 1.0, "eta2": 2.0 }, { "eta1": 3.0, "eta2": 4.0 }] });
        let s = build(&v).unwrap();
        assert_eq!(s.case(2).unwrap().eta2, 4.0);

        let mut v = tiny();
        v["risk"]["beta"] = serde_json::json!(1.0);
        assert_eq!(build(&v).unwrap_err().path, "risk.beta");
    }

    #[test]
    fn version_is_checked() {
        let mut v = tiny();
        v["version"] = serde_json::json!(2);
        assert_eq!(build(&v).unwrap_err().path, "version");
    }

    #[test]
    fn infeasible_envelope_is_a_schema_error() {
        let mut v = tiny();
        v["flexible_loads"][0]["l"] = serde_json::json!([0.0, 130.0]);
        assert_eq!(build(&v).unwrap_err().path, "flexible_loads[0]");
    }

    #[test]
    fn csv_samples_relative_to_case_dir() {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = String::from("bus,slot,k,value_mw\n");
        for slot in 1..=2 {
            for k in 1..=3 {
                csv += &format!("2,{slot},{k},{}\n", 10.0 * (slot + k) as f64);
            }
        }
        std::fs::write(dir.path().join("w.csv"), csv).unwrap();
        let mut v = tiny();
        v["wind"]["farms"][0].as_object_mut().unwrap().remove("samples");
        v["wind"]["samples"] = serde_json::json!({ "source": "csv", "path": "w.csv" });
        let s = CaseFile::parse(&v.to_string()).unwrap().build(dir.path(), None).unwrap();
        assert_eq!(s.base.wind.farms[0].samples[0], vec![20.0, 30.0, 40.0]);
    }

    #[test]
    fn seed_override_changes_synthetic_samples() {
        let mut v = tiny();
        v["wind"]["farms"][0].as_object_mut().unwrap().remove("samples");
        v["wind"]["samples"] = serde_json::json!({ "source": "synthetic", "spread": 0.2, "seed": 1 });
        let file = CaseFile::parse(&v.to_string()).unwrap();
        let a = file.build(Path::new("."), None).unwrap();
        let b = file.build(Path::new("."), Some(1)).unwrap();
        let c = file.build(Path::new("."), Some(2)).unwrap();
        assert_eq!(a.base.wind, b.base.wind);
        assert_ne!(a.base.wind, c.base.wind);
    }
}
