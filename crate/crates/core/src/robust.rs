//! Robust constraints over the adjustable wind box and their deterministic
//! counterpart under a surrogate affine recourse.
//!
//! The realized deviation of farm `j` in slot `t` is written on the unit box
//! as `δ = -δ⁻ ε⁻ + δ⁺ ε⁺` with `ε⁻, ε⁺ ∈ [0, 1]`, and the recourse devices
//! adjust by `Δ_t = E⁻_t ε⁻_t + E⁺_t ε⁺_t`. A robust row
//!
//! ```text
//!     a·y + Σ B Δ + Σ D δ <= J     for all ε in the box
//! ```
//!
//! is affine in `ε` with coefficients that are linear in `(E, δ⁻, δ⁺)`, so it
//! dualizes into the linear system `π >= coef`, `a·y + Σ π <= J`, `π >= 0`.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::DispatchCase;
use crate::flexload::{envelope_rows, EnvelopeKind, FlexError};
use crate::qp::QpProblem;

#[derive(Debug, Error)]
pub enum RobustError {
    #[error(transparent)]
    Flex(#[from] FlexError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Column indices of `δ⁻_{j,t}` and `δ⁺_{j,t}`, stored farm-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxScaling {
    pub farms: usize,
    pub horizon: usize,
    pub minus: Range<usize>,
    pub plus: Range<usize>,
}

impl BoxScaling {
    /// Allocates the box variables without bounds; callers add `δ >= 0` or pin them.
    pub fn allocate(qp: &mut QpProblem, farms: usize, horizon: usize) -> Self {
        let minus = qp.add_variables("delta_minus", farms * horizon);
        let plus = qp.add_variables("delta_plus", farms * horizon);
        Self {
            farms,
            horizon,
            minus,
            plus,
        }
    }

    pub fn minus(&self, farm: usize, slot: usize) -> usize {
        self.minus.start + farm * self.horizon + slot
    }

    pub fn plus(&self, farm: usize, slot: usize) -> usize {
        self.plus.start + farm * self.horizon + slot
    }

    pub fn column(&self, side: EpsSide, farm: usize, slot: usize) -> usize {
        match side {
            EpsSide::Minus => self.minus(farm, slot),
            EpsSide::Plus => self.plus(farm, slot),
        }
    }

    /// `(δ⁻, δ⁺)` as `[farm][slot]`.
    pub fn values(&self, z: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let grab = |r: &Range<usize>| z[r.clone()].chunks(self.horizon.max(1)).map(<[f64]>::to_vec).collect();
        (grab(&self.minus), grab(&self.plus))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsSide {
    Minus,
    Plus,
}

/// One coordinate of the unit box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpsCoord {
    pub slot: usize,
    pub farm: usize,
    pub side: EpsSide,
}

/// Which devices carry the recourse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecourseMode {
    /// flexible loads adjust, generators stay at their set-points
    FlexibleLoads,
    /// generators adjust, flexible loads stay at their set-points
    Generators,
}

impl RecourseMode {
    /// Sign of a device adjustment in the bus injection.
    pub fn injection_sign(self) -> f64 {
        match self {
            RecourseMode::FlexibleLoads => -1.0,
            RecourseMode::Generators => 1.0,
        }
    }
}

/// Column indices of `E⁻_t`, `E⁺_t` (devices × farms per slot). Entries are
/// free; no columns exist across slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoursePolicy {
    pub mode: RecourseMode,
    pub devices: usize,
    pub farms: usize,
    pub horizon: usize,
    pub minus: Range<usize>,
    pub plus: Range<usize>,
}

/// Per-slot recourse matrices as `[device][farm]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecourseMatrices {
    pub minus: Vec<Vec<f64>>,
    pub plus: Vec<Vec<f64>>,
}

impl RecoursePolicy {
    pub fn allocate(qp: &mut QpProblem, mode: RecourseMode, devices: usize, farms: usize, horizon: usize) -> Self {
        let n = devices * farms * horizon;
        let minus = qp.add_variables("e_minus", n);
        let plus = qp.add_variables("e_plus", n);
        Self {
            mode,
            devices,
            farms,
            horizon,
            minus,
            plus,
        }
    }

    fn offset(&self, slot: usize, device: usize, farm: usize) -> usize {
        (slot * self.devices + device) * self.farms + farm
    }

    pub fn e_minus(&self, slot: usize, device: usize, farm: usize) -> usize {
        self.minus.start + self.offset(slot, device, farm)
    }

    pub fn e_plus(&self, slot: usize, device: usize, farm: usize) -> usize {
        self.plus.start + self.offset(slot, device, farm)
    }

    pub fn column(&self, side: EpsSide, slot: usize, device: usize, farm: usize) -> usize {
        match side {
            EpsSide::Minus => self.e_minus(slot, device, farm),
            EpsSide::Plus => self.e_plus(slot, device, farm),
        }
    }

    pub fn matrices(&self, z: &[f64]) -> Vec<RecourseMatrices> {
        (0..self.horizon)
            .map(|t| {
                let grab = |side| {
                    (0..self.devices)
                        .map(|d| (0..self.farms).map(|j| z[self.column(side, t, d, j)]).collect())
                        .collect()
                };
                RecourseMatrices {
                    minus: grab(EpsSide::Minus),
                    plus: grab(EpsSide::Plus),
                }
            })
            .collect()
    }
}

/// Column layout of the set-points `g` (generator-major) and `x̄` (aggregator-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetPoints {
    pub horizon: usize,
    pub generators: usize,
    pub flexible: usize,
    pub g_start: usize,
    pub x_start: usize,
}

impl SetPoints {
    pub fn allocate(qp: &mut QpProblem, generators: usize, flexible: usize, horizon: usize) -> Self {
        let g = qp.add_variables("g", generators * horizon);
        let x = qp.add_variables("x_bar", flexible * horizon);
        Self {
            horizon,
            generators,
            flexible,
            g_start: g.start,
            x_start: x.start,
        }
    }

    pub fn g(&self, gen: usize, slot: usize) -> usize {
        self.g_start + gen * self.horizon + slot
    }

    pub fn x(&self, flex: usize, slot: usize) -> usize {
        self.x_start + flex * self.horizon + slot
    }
}

/// Constraint family and device or line a robust row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RowOrigin {
    Envelope { kind: EnvelopeKind, device: usize },
    GenLower { device: usize },
    GenUpper { device: usize },
    FlowForward { line: usize },
    FlowBackward { line: usize },
}

/// `nominal·y + Σ coef·Δ_{device,slot} + Σ coef·δ_{farm,slot} <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustRow {
    pub origin: RowOrigin,
    pub slot: usize,
    pub nominal: Vec<(usize, f64)>,
    pub rhs: f64,
    /// `(device, slot, B)`
    pub recourse: Vec<(usize, usize, f64)>,
    /// `(farm, slot, D)`
    pub deviation: Vec<(usize, usize, f64)>,
}

impl RobustRow {
    pub fn nominal_value(&self, z: &[f64]) -> f64 {
        self.nominal.iter().map(|&(c, a)| a * z[c]).sum()
    }

    /// ε-coefficients as linear expressions in `(E, δ⁻, δ⁺)`, ordered by coordinate.
    pub fn coefficient_terms(&self, policy: &RecoursePolicy, bounds: &BoxScaling) -> Vec<(EpsCoord, Vec<(usize, f64)>)> {
        let mut out: Vec<(EpsCoord, Vec<(usize, f64)>)> = Vec::new();
        let mut entry = |coord: EpsCoord, col: usize, a: f64| match out.iter_mut().find(|(c, _)| *c == coord) {
            Some((_, terms)) => terms.push((col, a)),
            None => out.push((coord, vec![(col, a)])),
        };
        for &(d, t, b) in &self.recourse {
            for j in 0..policy.farms {
                for side in [EpsSide::Minus, EpsSide::Plus] {
                    entry(EpsCoord { slot: t, farm: j, side }, policy.column(side, t, d, j), b);
                }
            }
        }
        for &(j, t, d) in &self.deviation {
            entry(EpsCoord { slot: t, farm: j, side: EpsSide::Minus }, bounds.minus(j, t), -d);
            entry(EpsCoord { slot: t, farm: j, side: EpsSide::Plus }, bounds.plus(j, t), d);
        }
        out.sort_by_key(|(c, _)| *c);
        out
    }

    /// ε-coefficients evaluated at `z`.
    pub fn coefficients(&self, policy: &RecoursePolicy, bounds: &BoxScaling, z: &[f64]) -> Vec<(EpsCoord, f64)> {
        self.coefficient_terms(policy, bounds)
            .into_iter()
            .map(|(c, terms)| (c, terms.iter().map(|&(col, a)| a * z[col]).sum()))
            .collect()
    }

    /// Left-hand side at a point `ε` of the box, evaluated from `Δ` and `δ`
    /// directly rather than through the coefficients.
    pub fn lhs_at(&self, policy: &RecoursePolicy, bounds: &BoxScaling, z: &[f64], eps: &dyn Fn(EpsCoord) -> f64) -> f64 {
        let e = |slot, farm, side| eps(EpsCoord { slot, farm, side });
        let mut lhs = self.nominal_value(z);
        for &(d, t, b) in &self.recourse {
            let adj: f64 = (0..policy.farms)
                .map(|j| {
                    z[policy.e_minus(t, d, j)] * e(t, j, EpsSide::Minus)
                        + z[policy.e_plus(t, d, j)] * e(t, j, EpsSide::Plus)
                })
                .sum();
            lhs += b * adj;
        }
        for &(j, t, d) in &self.deviation {
            let delta = -z[bounds.minus(j, t)] * e(t, j, EpsSide::Minus) + z[bounds.plus(j, t)] * e(t, j, EpsSide::Plus);
            lhs += d * delta;
        }
        lhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSystem {
    pub mode: RecourseMode,
    pub rows: Vec<RobustRow>,
}

impl RobustSystem {
    pub fn count(&self, pred: impl Fn(&RowOrigin) -> bool) -> usize {
        self.rows.iter().filter(|r| pred(&r.origin)).count()
    }
}

/// Robust rows for every slot: the envelope rows of each aggregator (flexible
/// recourse) or the generator bounds (generator recourse), then both
/// directions of every line limit.
pub fn assemble_robust_system(
    case: &DispatchCase,
    sp: &SetPoints,
    mode: RecourseMode,
) -> Result<RobustSystem, RobustError> {
    let horizon = case.horizon;
    if sp.horizon != horizon || sp.generators != case.generators.len() || sp.flexible != case.flexible.len() {
        return Err(RobustError::Dimension("set-point layout does not match case".into()));
    }
    let mut rows = Vec::new();
    match mode {
        RecourseMode::FlexibleLoads => {
            for (f, spec) in case.flexible.iter().enumerate() {
                for env in envelope_rows(spec)? {
                    rows.push(RobustRow {
                        origin: RowOrigin::Envelope { kind: env.kind, device: f },
                        slot: env.slot,
                        nominal: env.terms.iter().map(|&(s, a)| (sp.x(f, s), a)).collect(),
                        rhs: env.rhs,
                        recourse: env.terms.iter().map(|&(s, a)| (f, s, a)).collect(),
                        deviation: Vec::new(),
                    });
                }
            }
        }
        RecourseMode::Generators => {
            for (i, gen) in case.generators.iter().enumerate() {
                for t in 0..horizon {
                    rows.push(RobustRow {
                        origin: RowOrigin::GenLower { device: i },
                        slot: t,
                        nominal: vec![(sp.g(i, t), -1.0)],
                        rhs: -gen.g_min,
                        recourse: vec![(i, t, -1.0)],
                        deviation: Vec::new(),
                    });
                    rows.push(RobustRow {
                        origin: RowOrigin::GenUpper { device: i },
                        slot: t,
                        nominal: vec![(sp.g(i, t), 1.0)],
                        rhs: gen.g_max,
                        recourse: vec![(i, t, 1.0)],
                        deviation: Vec::new(),
                    });
                }
            }
        }
    }
    let net = &case.network;
    for t in 0..horizon {
        for (m, line) in net.lines().iter().enumerate() {
            let sf = |bus: usize| net.shift_factor(m, bus);
            let mut nominal = Vec::new();
            let mut recourse = Vec::new();
            for (i, gen) in case.generators.iter().enumerate() {
                nominal.push((sp.g(i, t), sf(gen.bus)));
                if mode == RecourseMode::Generators {
                    recourse.push((i, t, sf(gen.bus)));
                }
            }
            for (f, spec) in case.flexible.iter().enumerate() {
                nominal.push((sp.x(f, t), -sf(spec.bus)));
                if mode == RecourseMode::FlexibleLoads {
                    recourse.push((f, t, -sf(spec.bus)));
                }
            }
            let mut constant = 0.0;
            let mut deviation = Vec::new();
            for (j, farm) in case.wind.farms.iter().enumerate() {
                constant += sf(farm.bus) * farm.forecast[t];
                deviation.push((j, t, sf(farm.bus)));
            }
            for load in &case.fixed_loads {
                constant -= sf(load.bus) * load.demand[t];
            }
            nominal.retain(|&(_, a)| a != 0.0);
            recourse.retain(|&(_, _, a)| a != 0.0);
            deviation.retain(|&(_, _, a)| a != 0.0);
            let negate = |v: &[(usize, f64)]| v.iter().map(|&(c, a)| (c, -a)).collect::<Vec<_>>();
            let negate3 = |v: &[(usize, usize, f64)]| v.iter().map(|&(c, s, a)| (c, s, -a)).collect::<Vec<_>>();
            rows.push(RobustRow {
                origin: RowOrigin::FlowBackward { line: m },
                slot: t,
                nominal: negate(&nominal),
                rhs: line.flow_limit + constant,
                recourse: negate3(&recourse),
                deviation: negate3(&deviation),
            });
            rows.push(RobustRow {
                origin: RowOrigin::FlowForward { line: m },
                slot: t,
                nominal,
                rhs: line.flow_limit - constant,
                recourse,
                deviation,
            });
        }
    }
    Ok(RobustSystem { mode, rows })
}

/// Row indices of the balance equalities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceRows {
    /// one per slot
    pub nominal: Vec<usize>,
    /// two per farm and slot
    pub matching: Vec<usize>,
}

/// Nominal balance `1ᵀ(g + w̄ - d - x̄) = 0` per slot, plus equality of the
/// ε-coefficients of the total injection deviation to zero. With flexible
/// recourse that is `1ᵀE⁻_t = -δ⁻_t` and `1ᵀE⁺_t = δ⁺_t`; generator recourse
/// flips both signs.
pub fn balance_coefficient_match(
    qp: &mut QpProblem,
    case: &DispatchCase,
    sp: &SetPoints,
    policy: &RecoursePolicy,
    bounds: &BoxScaling,
) -> BalanceRows {
    let mut rows = BalanceRows {
        nominal: Vec::new(),
        matching: Vec::new(),
    };
    for t in 0..case.horizon {
        let mut terms: Vec<(usize, f64)> = (0..sp.generators).map(|i| (sp.g(i, t), 1.0)).collect();
        terms.extend((0..sp.flexible).map(|f| (sp.x(f, t), -1.0)));
        let demand: f64 = case.fixed_loads.iter().map(|l| l.demand[t]).sum();
        let wind: f64 = case.wind.farms.iter().map(|w| w.forecast[t]).sum();
        rows.nominal.push(qp.add_eq(&terms, demand - wind));
    }
    let s = policy.mode.injection_sign();
    for t in 0..case.horizon {
        for j in 0..policy.farms {
            for side in [EpsSide::Minus, EpsSide::Plus] {
                let mut terms: Vec<(usize, f64)> = (0..policy.devices).map(|d| (policy.column(side, t, d, j), s)).collect();
                let sign = if side == EpsSide::Minus { -1.0 } else { 1.0 };
                terms.push((bounds.column(side, j, t), sign));
                rows.matching.push(qp.add_eq(&terms, 0.0));
            }
        }
    }
    rows
}

/// Dual variables attached to one robust row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualBlock {
    pub row: usize,
    pub pi: Range<usize>,
    pub coords: Vec<EpsCoord>,
    /// inequality index of `a·y + Σ π <= J`
    pub bound_row: usize,
}

/// Emits `π_c >= coef_c` per ε-coordinate, `nominal + Σ π <= J` and `π >= 0`
/// for every row. Coordinates whose coefficient is structurally zero get no
/// dual.
pub fn saa_dualize(
    qp: &mut QpProblem,
    system: &RobustSystem,
    policy: &RecoursePolicy,
    bounds: &BoxScaling,
) -> Vec<DualBlock> {
    let mut blocks = Vec::with_capacity(system.rows.len());
    for (r, row) in system.rows.iter().enumerate() {
        let coefs = row.coefficient_terms(policy, bounds);
        let pi = qp.add_variables(format!("pi[{r}]"), coefs.len());
        for (k, (_, terms)) in coefs.iter().enumerate() {
            let p = pi.start + k;
            let mut lhs = terms.clone();
            lhs.push((p, -1.0));
            qp.add_le(&lhs, 0.0);
            qp.add_lower_bound(p, 0.0);
        }
        let mut lhs = row.nominal.clone();
        lhs.extend(pi.clone().map(|p| (p, 1.0)));
        let bound_row = qp.add_le(&lhs, row.rhs);
        blocks.push(DualBlock {
            row: r,
            pi,
            coords: coefs.into_iter().map(|(c, _)| c).collect(),
            bound_row,
        });
    }
    blocks
}

/// `max over ε ∈ [0,1]^n` of `nominal + Σ c_j ε_j` and a maximizing vertex.
pub fn worst_case_affine(nominal: f64, coefficients: &[f64]) -> (f64, Vec<bool>) {
    let vertex: Vec<bool> = coefficients.iter().map(|&c| c > 0.0).collect();
    let value = nominal + coefficients.iter().map(|&c| c.max(0.0)).sum::<f64>();
    (value, vertex)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub value: f64,
    /// coordinates set to 1; all others are 0
    pub vertex: Vec<EpsCoord>,
}

/// Largest left-hand side of `row` over the unit box at the solved `z`.
pub fn worst_case_row(row: &RobustRow, policy: &RecoursePolicy, bounds: &BoxScaling, z: &[f64]) -> WorstCase {
    let coefs = row.coefficients(policy, bounds, z);
    let c: Vec<f64> = coefs.iter().map(|&(_, v)| v).collect();
    let (value, on) = worst_case_affine(row.nominal_value(z), &c);
    WorstCase {
        value,
        vertex: coefs.iter().zip(on).filter(|(_, on)| *on).map(|((coord, _), _)| *coord).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::tests::{one_bus_case, six_bus_case};
    use crate::qp::{solve, SolveStatus, SolverOptions};
    use proptest::prelude::*;

    fn layout(case: &DispatchCase, mode: RecourseMode) -> (QpProblem, SetPoints, BoxScaling, RecoursePolicy) {
        let mut qp = QpProblem::new();
        let sp = SetPoints::allocate(&mut qp, case.generators.len(), case.flexible.len(), case.horizon);
        let bounds = BoxScaling::allocate(&mut qp, case.wind.farms.len(), case.horizon);
        let devices = match mode {
            RecourseMode::FlexibleLoads => case.flexible.len(),
            RecourseMode::Generators => case.generators.len(),
        };
        let policy = RecoursePolicy::allocate(&mut qp, mode, devices, case.wind.farms.len(), case.horizon);
        (qp, sp, bounds, policy)
    }

    #[test]
    fn worst_case_affine_examples() {
        assert_eq!(worst_case_affine(3.0, &[1.0, -2.0]), (4.0, vec![true, false]));
        assert_eq!(worst_case_affine(3.0, &[0.0, 0.0]), (3.0, vec![false, false]));
    }

    proptest! {
        #[test]
        fn worst_case_matches_vertex_enumeration(nominal in -10.0f64..10.0, c in proptest::array::uniform4(-5.0f64..5.0)) {
            let (value, vertex) = worst_case_affine(nominal, &c);
            let brute = (0..16u32)
                .map(|m| nominal + (0..4).map(|j| if m >> j & 1 == 1 { c[j] } else { 0.0 }).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((value - brute).abs() < 1e-12);
            let at: f64 = nominal + (0..4).filter(|&j| vertex[j]).map(|j| c[j]).sum::<f64>();
            prop_assert!((at - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn single_slot_row_counts() {
        let case = one_bus_case(1, true, true);
        let (_, sp, _, _) = layout(&case, RecourseMode::FlexibleLoads);
        let sys = assemble_robust_system(&case, &sp, RecourseMode::FlexibleLoads).unwrap();
        assert_eq!(sys.rows.len(), 4);
        assert_eq!(sys.count(|o| matches!(o, RowOrigin::FlowForward { .. } | RowOrigin::FlowBackward { .. })), 0);
    }

    #[test]
    fn six_bus_flow_rows_per_slot() {
        let case = six_bus_case(10.0, 10.0, 3);
        let (_, sp, _, _) = layout(&case, RecourseMode::FlexibleLoads);
        let sys = assemble_robust_system(&case, &sp, RecourseMode::FlexibleLoads).unwrap();
        for t in 0..case.horizon {
            let flows = sys
                .rows
                .iter()
                .filter(|r| r.slot == t && matches!(r.origin, RowOrigin::FlowForward { .. } | RowOrigin::FlowBackward { .. }))
                .count();
            assert_eq!(flows, 14);
        }
        assert_eq!(sys.rows.len(), case.horizon * (14 + 4 * case.flexible.len()));
        let gen = assemble_robust_system(&case, &sp, RecourseMode::Generators).unwrap();
        assert_eq!(gen.rows.len(), case.horizon * (14 + 2 * case.generators.len()));
    }

    #[test]
    fn zero_box_reduces_to_nominal_rows() {
        let case = six_bus_case(10.0, 10.0, 2);
        let (mut qp, sp, bounds, policy) = layout(&case, RecourseMode::FlexibleLoads);
        let sys = assemble_robust_system(&case, &sp, RecourseMode::FlexibleLoads).unwrap();
        qp.add_variables("pad", 0);
        let mut z = vec![0.0; qp.num_vars()];
        for (k, v) in z.iter_mut().enumerate().take(sp.x_start + sp.flexible * sp.horizon).skip(sp.g_start) {
            *v = 1.0 + k as f64;
        }
        for row in &sys.rows {
            let wc = worst_case_row(row, &policy, &bounds, &z);
            assert_eq!(wc.value, row.nominal_value(&z));
            assert!(wc.vertex.is_empty());
        }
    }

    #[test]
    fn cumulative_rows_reach_back_to_first_slot() {
        let case = one_bus_case(3, true, true);
        let (_, sp, bounds, policy) = layout(&case, RecourseMode::FlexibleLoads);
        let sys = assemble_robust_system(&case, &sp, RecourseMode::FlexibleLoads).unwrap();
        let row = sys
            .rows
            .iter()
            .find(|r| r.slot == 2 && matches!(r.origin, RowOrigin::Envelope { kind: EnvelopeKind::CumulativeUpper, .. }))
            .unwrap();
        let coords: Vec<EpsCoord> = row.coefficient_terms(&policy, &bounds).into_iter().map(|(c, _)| c).collect();
        assert_eq!(coords.len(), 6);
        assert!(coords.windows(2).all(|w| w[0] < w[1]));
        // power rows stay in their own slot
        let p = sys
            .rows
            .iter()
            .find(|r| r.slot == 1 && matches!(r.origin, RowOrigin::Envelope { kind: EnvelopeKind::PowerUpper, .. }))
            .unwrap();
        assert!(p.coefficient_terms(&policy, &bounds).iter().all(|(c, _)| c.slot == 1));
    }

    /// `Δx <= 5` with one aggregator and one farm and the policy fixed.
    fn recourse_row_problem(e_minus: f64, e_plus: f64, with_bound: bool) -> (QpProblem, Vec<DualBlock>) {
        let mut qp = QpProblem::new();
        let bounds = BoxScaling::allocate(&mut qp, 1, 1);
        let policy = RecoursePolicy::allocate(&mut qp, RecourseMode::FlexibleLoads, 1, 1, 1);
        qp.fix(policy.e_minus(0, 0, 0), e_minus);
        qp.fix(policy.e_plus(0, 0, 0), e_plus);
        qp.fix(bounds.minus(0, 0), 0.0);
        qp.fix(bounds.plus(0, 0), 0.0);
        let row = RobustRow {
            origin: RowOrigin::Envelope {
                kind: EnvelopeKind::PowerUpper,
                device: 0,
            },
            slot: 0,
            nominal: vec![],
            rhs: if with_bound { 5.0 } else { 1e6 },
            recourse: vec![(0, 0, 1.0)],
            deviation: vec![],
        };
        let sys = RobustSystem {
            mode: RecourseMode::FlexibleLoads,
            rows: vec![row],
        };
        let blocks = saa_dualize(&mut qp, &sys, &policy, &bounds);
        for p in blocks[0].pi.clone() {
            qp.add_linear(p, 1.0);
        }
        (qp, blocks)
    }

    #[test]
    fn dual_rows_of_recourse_bound() {
        let (qp, blocks) = recourse_row_problem(3.0, -2.0, false);
        assert_eq!(blocks[0].pi.len(), 2);
        let sol = solve(&qp, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let total: f64 = sol.z[blocks[0].pi.clone()].iter().sum();
        assert!((total - 3.0).abs() < 1e-6, "{total}");
        let (qp, _) = recourse_row_problem(3.0, 1.5, true);
        assert_eq!(solve(&qp, &SolverOptions::default()).unwrap().status, SolveStatus::Optimal);
        let (qp, _) = recourse_row_problem(4.0, 3.0, true);
        assert_ne!(solve(&qp, &SolverOptions::default()).unwrap().status, SolveStatus::Optimal);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn minimal_duals_equal_vertex_maximum(em in -5.0f64..5.0, ep in -5.0f64..5.0) {
            let (qp, blocks) = recourse_row_problem(em, ep, false);
            let sol = solve(&qp, &SolverOptions::default()).unwrap();
            prop_assert_eq!(sol.status, SolveStatus::Optimal);
            let total: f64 = sol.z[blocks[0].pi.clone()].iter().sum();
            let brute = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
                .iter()
                .map(|(a, b)| em * a + ep * b)
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((total - brute).abs() < 1e-6, "{} vs {}", total, brute);
        }
    }

    #[test]
    fn single_aggregator_absorbs_full_deviation() {
        let case = one_bus_case(1, true, true);
        let (mut qp, sp, bounds, policy) = layout(&case, RecourseMode::FlexibleLoads);
        balance_coefficient_match(&mut qp, &case, &sp, &policy, &bounds);
        qp.fix(bounds.minus(0, 0), 2.0);
        qp.fix(bounds.plus(0, 0), 3.0);
        for c in sp.g_start..sp.x_start + sp.flexible * sp.horizon {
            qp.add_quadratic(c, c, 1.0);
        }
        let sol = solve(&qp, &SolverOptions::default()).unwrap();
        let z = &sol.z;
        assert!((z[policy.e_plus(0, 0, 0)] - 3.0).abs() < 1e-8);
        assert!((z[policy.e_minus(0, 0, 0)] + 2.0).abs() < 1e-8);
        let demand = case.fixed_loads[0].demand[0];
        let forecast = case.wind.farms[0].forecast[0];
        for (em, ep) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
            let delta = -2.0 * em + 3.0 * ep;
            let dx = z[policy.e_minus(0, 0, 0)] * em + z[policy.e_plus(0, 0, 0)] * ep;
            let bal = z[sp.g(0, 0)] + forecast + delta - demand - z[sp.x(0, 0)] - dx;
            assert!(bal.abs() < 1e-7, "{bal}");
        }
    }

    #[test]
    fn two_aggregators_split_freely() {
        let mut case = one_bus_case(1, true, true);
        let mut second = case.flexible[0].clone();
        second.bus = 1;
        case.flexible.push(second);
        let (mut qp, sp, bounds, policy) = layout(&case, RecourseMode::FlexibleLoads);
        balance_coefficient_match(&mut qp, &case, &sp, &policy, &bounds);
        qp.fix(bounds.plus(0, 0), 4.0);
        qp.fix(bounds.minus(0, 0), 0.0);
        qp.fix(policy.e_plus(0, 0, 0), 1.0);
        for c in 0..qp.num_vars() {
            qp.add_quadratic(c, c, 1.0);
        }
        let sol = solve(&qp, &SolverOptions::default()).unwrap();
        assert!((sol.z[policy.e_plus(0, 1, 0)] - 3.0).abs() < 1e-8);
        let col_minus = sol.z[policy.e_minus(0, 0, 0)] + sol.z[policy.e_minus(0, 1, 0)];
        assert!(col_minus.abs() < 1e-8);
    }

    #[test]
    fn lhs_at_agrees_with_coefficients() {
        let case = six_bus_case(10.0, 10.0, 3);
        for mode in [RecourseMode::FlexibleLoads, RecourseMode::Generators] {
            let (qp, sp, bounds, policy) = layout(&case, mode);
            let sys = assemble_robust_system(&case, &sp, mode).unwrap();
            let z: Vec<f64> = (0..qp.num_vars()).map(|k| ((k * 37 % 11) as f64 - 5.0) / 3.0).collect();
            for row in &sys.rows {
                let wc = worst_case_row(row, &policy, &bounds, &z);
                let on = |c: EpsCoord| if wc.vertex.contains(&c) { 1.0 } else { 0.0 };
                let direct = row.lhs_at(&policy, &bounds, &z, &on);
                assert!((direct - wc.value).abs() < 1e-9);
                let zero = row.lhs_at(&policy, &bounds, &z, &|_| 0.0);
                assert!((zero - row.nominal_value(&z)).abs() < 1e-12);
                assert!(wc.value >= zero - 1e-12);
            }
        }
    }
}
