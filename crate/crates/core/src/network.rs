//! Transmission network, DC power-flow sensitivities and device incidence.
//!
//! Bus ids are 1-based everywhere in the public API (matching case files);
//! matrix rows and columns are 0-based, so bus `k` is column `k - 1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network has no buses")]
    NoBuses,
    #[error("bus ids must be 1..={expected} without gaps, found {found}")]
    BusIds { expected: usize, found: usize },
    #[error("line {line}: bus {bus} does not exist")]
    UnknownBus { line: usize, bus: usize },
    #[error("line {line} connects bus {bus} to itself")]
    SelfLoop { line: usize, bus: usize },
    #[error("line {line}: reactance must be positive, got {value}")]
    Reactance { line: usize, value: f64 },
    #[error("line {line}: flow limit must be positive, got {value}")]
    FlowLimit { line: usize, value: f64 },
    #[error("slack bus {0} does not exist")]
    InvalidSlack(usize),
    #[error("{kind} device {index} sits on unknown bus {bus}")]
    DeviceBus { kind: &'static str, index: usize, bus: usize },
    #[error("reduced susceptance matrix is singular: network is not connected")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub has_generator: bool,
    pub has_fixed_load: bool,
    pub has_wind: bool,
    pub has_flex_load: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    /// per unit
    pub reactance: f64,
    /// MW, both directions
    pub flow_limit: f64,
}

/// Bus of every device, in device order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceBuses {
    pub generators: Vec<usize>,
    pub fixed_loads: Vec<usize>,
    pub wind: Vec<usize>,
    pub flexible: Vec<usize>,
}

/// 0/1 bus-device connection matrices, each `N × devices`.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    pub generators: DMatrix<f64>,
    pub fixed_loads: DMatrix<f64>,
    pub wind: DMatrix<f64>,
    pub flexible: DMatrix<f64>,
}

/// Immutable network with its shift-factor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    slack_bus: usize,
    devices: DeviceBuses,
    ptdf: DMatrix<f64>,
}

impl NetworkModel {
    pub fn new(
        num_buses: usize,
        lines: Vec<Line>,
        slack_bus: usize,
        devices: DeviceBuses,
    ) -> Result<Self, NetworkError> {
        if num_buses == 0 {
            return Err(NetworkError::NoBuses);
        }
        validate_lines(num_buses, &lines)?;
        let mut buses: Vec<Bus> = (1..=num_buses)
            .map(|id| Bus {
                id,
                has_generator: false,
                has_fixed_load: false,
                has_wind: false,
                has_flex_load: false,
            })
            .collect();
        let groups: [(&'static str, &Vec<usize>); 4] = [
            ("generator", &devices.generators),
            ("fixed load", &devices.fixed_loads),
            ("wind", &devices.wind),
            ("flexible load", &devices.flexible),
        ];
        for (kind, list) in groups {
            for (index, &bus) in list.iter().enumerate() {
                if bus == 0 || bus > num_buses {
                    return Err(NetworkError::DeviceBus { kind, index, bus });
                }
                let b = &mut buses[bus - 1];
                match kind {
                    "generator" => b.has_generator = true,
                    "fixed load" => b.has_fixed_load = true,
                    "wind" => b.has_wind = true,
                    _ => b.has_flex_load = true,
                }
            }
        }
        let mut model = Self {
            buses,
            lines,
            slack_bus,
            devices,
            ptdf: DMatrix::zeros(0, 0),
        };
        model.ptdf = compute_ptdf(&model, slack_bus)?;
        Ok(model)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn slack_bus(&self) -> usize {
        self.slack_bus
    }

    pub fn devices(&self) -> &DeviceBuses {
        &self.devices
    }

    /// `M × N` generation shift factors for the model's slack bus.
    pub fn ptdf(&self) -> &DMatrix<f64> {
        &self.ptdf
    }

    /// Shift factor of line `line` (0-based) for an injection at `bus` (1-based).
    pub fn shift_factor(&self, line: usize, bus: usize) -> f64 {
        self.ptdf[(line, bus - 1)]
    }

    /// Line flows (MW) for per-bus net injections.
    pub fn flows(&self, injections: &[f64]) -> Vec<f64> {
        assert_eq!(injections.len(), self.num_buses());
        (0..self.lines.len())
            .map(|l| (0..self.num_buses()).map(|b| self.ptdf[(l, b)] * injections[b]).sum())
            .collect()
    }

    /// Same network with a different slack bus.
    pub fn with_slack(&self, slack_bus: usize) -> Result<Self, NetworkError> {
        Self::new(self.num_buses(), self.lines.clone(), slack_bus, self.devices.clone())
    }
}

fn validate_lines(num_buses: usize, lines: &[Line]) -> Result<(), NetworkError> {
    for (i, l) in lines.iter().enumerate() {
        for bus in [l.from_bus, l.to_bus] {
            if bus == 0 || bus > num_buses {
                return Err(NetworkError::UnknownBus { line: i, bus });
            }
        }
        if l.from_bus == l.to_bus {
            return Err(NetworkError::SelfLoop { line: i, bus: l.from_bus });
        }
        if !(l.reactance > 0.0) {
            return Err(NetworkError::Reactance { line: i, value: l.reactance });
        }
        if !(l.flow_limit > 0.0) {
            return Err(NetworkError::FlowLimit { line: i, value: l.flow_limit });
        }
    }
    Ok(())
}

/// Generation shift factors `Γ` (`M × N`) for the given slack bus.
///
/// Factorizes the nodal susceptance matrix with the slack row and column
/// removed; the slack column of the result is zero.
pub fn compute_ptdf(network: &NetworkModel, slack: usize) -> Result<DMatrix<f64>, NetworkError> {
    let n = network.num_buses();
    if slack == 0 || slack > n {
        return Err(NetworkError::InvalidSlack(slack));
    }
    let lines = network.lines();
    validate_lines(n, lines)?;
    let s = slack - 1;
    // reduced index of each bus, None for the slack
    let reduced: Vec<Option<usize>> = (0..n)
        .map(|b| match b.cmp(&s) {
            std::cmp::Ordering::Less => Some(b),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(b - 1),
        })
        .collect();

    let mut b_red = DMatrix::<f64>::zeros(n - 1, n - 1);
    for l in lines {
        let b = 1.0 / l.reactance;
        let (f, t) = (reduced[l.from_bus - 1], reduced[l.to_bus - 1]);
        if let Some(f) = f {
            b_red[(f, f)] += b;
        }
        if let Some(t) = t {
            b_red[(t, t)] += b;
        }
        if let (Some(f), Some(t)) = (f, t) {
            b_red[(f, t)] -= b;
            b_red[(t, f)] -= b;
        }
    }
    if !is_connected(n, lines) {
        return Err(NetworkError::Singular);
    }
    let x = if n > 1 {
        b_red.try_inverse().ok_or(NetworkError::Singular)?
    } else {
        DMatrix::zeros(0, 0)
    };

    let mut ptdf = DMatrix::<f64>::zeros(lines.len(), n);
    for (li, l) in lines.iter().enumerate() {
        let b = 1.0 / l.reactance;
        let (f, t) = (reduced[l.from_bus - 1], reduced[l.to_bus - 1]);
        for bus in 0..n {
            let Some(k) = reduced[bus] else { continue };
            let theta_f = f.map_or(0.0, |f| x[(f, k)]);
            let theta_t = t.map_or(0.0, |t| x[(t, k)]);
            ptdf[(li, bus)] = b * (theta_f - theta_t);
        }
    }
    Ok(ptdf)
}

fn is_connected(n: usize, lines: &[Line]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for l in lines {
        let a = find(&mut parent, l.from_bus - 1);
        let b = find(&mut parent, l.to_bus - 1);
        parent[a] = b;
    }
    let root = find(&mut parent, 0);
    (0..n).all(|b| find(&mut parent, b) == root)
}

fn incidence_of(n: usize, buses: &[usize]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n, buses.len());
    for (j, &bus) in buses.iter().enumerate() {
        h[(bus - 1, j)] = 1.0;
    }
    h
}

/// `H_g, H_d, H_w, H_f` with exactly one 1 per column.
pub fn build_incidence(network: &NetworkModel) -> Incidence {
    let n = network.num_buses();
    let d = network.devices();
    Incidence {
        generators: incidence_of(n, &d.generators),
        fixed_loads: incidence_of(n, &d.fixed_loads),
        wind: incidence_of(n, &d.wind),
        flexible: incidence_of(n, &d.flexible),
    }
}

/// The six-bus test network (seven lines) with the given device placement.
pub fn six_bus_lines() -> Vec<Line> {
    [
        (1, 2, 0.170, 450.0),
        (1, 4, 0.258, 420.0),
        (2, 3, 0.037, 420.0),
        (2, 4, 0.197, 450.0),
        (3, 6, 0.018, 400.0),
        (4, 5, 0.037, 400.0),
        (5, 6, 0.140, 400.0),
    ]
    .into_iter()
    .map(|(from_bus, to_bus, reactance, flow_limit)| Line {
        from_bus,
        to_bus,
        reactance,
        flow_limit,
    })
    .collect()
}
