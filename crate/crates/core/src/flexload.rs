//! Load aggregators with multi-dimensional flexibility.
//!
//! An aggregator's schedule `x` (MW per hourly slot) must stay inside a power
//! band `x_min ≤ x ≤ x_max` and keep its cumulative energy `Lx` (prefix sums,
//! MWh) inside `l ≤ Lx ≤ u`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance (MW / MWh) used by [`check_schedule`].
pub const SCHEDULE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlexError {
    #[error("series lengths differ: l={l}, u={u}, x_min={x_min}, x_max={x_max}")]
    Length { l: usize, u: usize, x_min: usize, x_max: usize },
    #[error("empty horizon")]
    Empty,
    #[error("slot {slot}: cumulative lower bound {lower} exceeds upper bound {upper}")]
    CumulativeOrder { slot: usize, lower: f64, upper: f64 },
    #[error("slot {slot}: power lower bound {lower} exceeds upper bound {upper}")]
    PowerOrder { slot: usize, lower: f64, upper: f64 },
    #[error("envelope infeasible from slot {slot}: reachable cumulative energy [{reach_lo}, {reach_hi}] misses [{lower}, {upper}]")]
    Infeasible {
        slot: usize,
        reach_lo: f64,
        reach_hi: f64,
        lower: f64,
        upper: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexibleLoadSpec {
    /// 1-based bus id
    pub bus: usize,
    /// cumulative-energy lower bounds (MWh)
    pub l: Vec<f64>,
    /// cumulative-energy upper bounds (MWh)
    pub u: Vec<f64>,
    /// power lower bounds (MW)
    pub x_min: Vec<f64>,
    /// power upper bounds (MW)
    pub x_max: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    CumulativeLower,
    CumulativeUpper,
    PowerLower,
    PowerUpper,
}

impl EnvelopeKind {
    pub const ALL: [EnvelopeKind; 4] = [
        EnvelopeKind::CumulativeLower,
        EnvelopeKind::CumulativeUpper,
        EnvelopeKind::PowerLower,
        EnvelopeKind::PowerUpper,
    ];
}

/// One envelope inequality `Σ coef·x_slot ≤ rhs` over the aggregator's own
/// slot indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeRow {
    pub kind: EnvelopeKind,
    pub slot: usize,
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl EnvelopeRow {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(t, a)| a * x[t]).sum()
    }
}

/// Lower-triangular all-ones operator, applied as prefix sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CumulativeMatrix {
    pub horizon: usize,
}

impl CumulativeMatrix {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.horizon);
        x.iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    /// Row `t` as `(slot, 1.0)` pairs.
    pub fn row(&self, t: usize) -> Vec<(usize, f64)> {
        (0..=t).map(|s| (s, 1.0)).collect()
    }
}

impl FlexibleLoadSpec {
    pub fn horizon(&self) -> usize {
        self.l.len()
    }

    /// Checks orderings and runs the envelope feasibility test.
    pub fn validate(&self) -> Result<(), FlexError> {
        let t = self.l.len();
        if [self.u.len(), self.x_min.len(), self.x_max.len()].iter().any(|&n| n != t) {
            return Err(FlexError::Length {
                l: self.l.len(),
                u: self.u.len(),
                x_min: self.x_min.len(),
                x_max: self.x_max.len(),
            });
        }
        if t == 0 {
            return Err(FlexError::Empty);
        }
        for s in 0..t {
            if self.l[s] > self.u[s] {
                return Err(FlexError::CumulativeOrder { slot: s, lower: self.l[s], upper: self.u[s] });
            }
            if self.x_min[s] > self.x_max[s] {
                return Err(FlexError::PowerOrder { slot: s, lower: self.x_min[s], upper: self.x_max[s] });
            }
        }
        self.feasible_schedule().map(|_| ())
    }

    /// A schedule inside the envelope, or the first slot where none exists.
    ///
    /// Propagates the interval of reachable cumulative energy forward
    /// (filling at `x_max` / idling at `x_min`, clipped to `[l, u]`), then walks
    /// back choosing each slot's consumption inside its band.
    pub fn feasible_schedule(&self) -> Result<Vec<f64>, FlexError> {
        let t = self.horizon();
        let mut lo = vec![0.0; t];
        let mut hi = vec![0.0; t];
        let (mut prev_lo, mut prev_hi) = (0.0, 0.0);
        for s in 0..t {
            let reach_lo = prev_lo + self.x_min[s];
            let reach_hi = prev_hi + self.x_max[s];
            lo[s] = reach_lo.max(self.l[s]);
            hi[s] = reach_hi.min(self.u[s]);
            if lo[s] > hi[s] + SCHEDULE_TOL {
                return Err(FlexError::Infeasible {
                    slot: s,
                    reach_lo,
                    reach_hi,
                    lower: self.l[s],
                    upper: self.u[s],
                });
            }
            hi[s] = hi[s].max(lo[s]);
            prev_lo = lo[s];
            prev_hi = hi[s];
        }
        // backward: pick the lowest cumulative value that is still consistent
        let mut cum = vec![0.0; t];
        cum[t - 1] = lo[t - 1];
        for s in (0..t - 1).rev() {
            let need_lo = cum[s + 1] - self.x_max[s + 1];
            let need_hi = cum[s + 1] - self.x_min[s + 1];
            cum[s] = need_lo.max(lo[s]).min(need_hi.min(hi[s]));
        }
        let mut x = vec![0.0; t];
        let mut prev = 0.0;
        for s in 0..t {
            x[s] = (cum[s] - prev).clamp(self.x_min[s], self.x_max[s]);
            prev += x[s];
        }
        Ok(x)
    }
}

/// The `4T` envelope rows in canonical order: cumulative-lower,
/// cumulative-upper, power-lower, power-upper, each by slot ascending.
pub fn envelope_rows(spec: &FlexibleLoadSpec) -> Result<Vec<EnvelopeRow>, FlexError> {
    spec.validate()?;
    let t = spec.horizon();
    let cm = CumulativeMatrix { horizon: t };
    let mut rows = Vec::with_capacity(4 * t);
    for kind in EnvelopeKind::ALL {
        for s in 0..t {
            let row = match kind {
                EnvelopeKind::CumulativeLower => EnvelopeRow {
                    kind,
                    slot: s,
                    terms: cm.row(s).into_iter().map(|(j, a)| (j, -a)).collect(),
                    rhs: -spec.l[s],
                },
                EnvelopeKind::CumulativeUpper => EnvelopeRow {
                    kind,
                    slot: s,
                    terms: cm.row(s),
                    rhs: spec.u[s],
                },
                EnvelopeKind::PowerLower => EnvelopeRow {
                    kind,
                    slot: s,
                    terms: vec![(s, -1.0)],
                    rhs: -spec.x_min[s],
                },
                EnvelopeKind::PowerUpper => EnvelopeRow {
                    kind,
                    slot: s,
                    terms: vec![(s, 1.0)],
                    rhs: spec.x_max[s],
                },
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleCheck {
    pub feasible: bool,
    /// First violated row in canonical order, with its violation.
    pub first_violation: Option<(EnvelopeKind, usize, f64)>,
}

/// Tests `x` against all `4T` envelope rows with [`SCHEDULE_TOL`].
pub fn check_schedule(spec: &FlexibleLoadSpec, x: &[f64]) -> ScheduleCheck {
    assert_eq!(x.len(), spec.horizon(), "schedule length");
    let cum = CumulativeMatrix { horizon: spec.horizon() }.apply(x);
    for kind in EnvelopeKind::ALL {
        for s in 0..spec.horizon() {
            let violation = match kind {
                EnvelopeKind::CumulativeLower => spec.l[s] - cum[s],
                EnvelopeKind::CumulativeUpper => cum[s] - spec.u[s],
                EnvelopeKind::PowerLower => spec.x_min[s] - x[s],
                EnvelopeKind::PowerUpper => x[s] - spec.x_max[s],
            };
            if violation > SCHEDULE_TOL {
                return ScheduleCheck {
                    feasible: false,
                    first_violation: Some((kind, s, violation)),
                };
            }
        }
    }
    ScheduleCheck {
        feasible: true,
        first_violation: None,
    }
}
