//! Multi-period dispatch with flexible loads and an adjustable wind box,
//! assembled into one convex QP.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cvar::{build_cvar_blocks, empirical_cvar, value_at_risk, CvarBlock, CvarError, LossSide, WindModel};
use crate::flexload::{envelope_rows, FlexError, FlexibleLoadSpec};
use crate::network::NetworkModel;
use crate::oracle::{verify_solution, VerificationReport};
use crate::qp::{self, KktResiduals, QpError, QpProblem, SolveStatus, SolverOptions};
use crate::robust::{
    assemble_robust_system, balance_coefficient_match, saa_dualize, BalanceRows, BoxScaling, DualBlock, EpsCoord,
    RecourseMatrices, RecourseMode, RecoursePolicy, RobustError, RobustSystem, RowOrigin, SetPoints,
};

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("invalid case: {0}")]
    Case(String),
    #[error(transparent)]
    Flex(#[from] FlexError),
    #[error(transparent)]
    Cvar(#[from] CvarError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("solver returned {status:?} after {iterations} iterations (residuals {residuals:?})")]
    NotOptimal {
        status: SolveStatus,
        iterations: usize,
        residuals: KktResiduals,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// 1-based bus id
    pub bus: usize,
    pub g_min: f64,
    pub g_max: f64,
    /// $/MW²h
    pub c2: f64,
    /// $/MWh
    pub c1: f64,
    /// $/h
    pub c0: f64,
}

impl Generator {
    pub fn cost(&self, g: f64) -> f64 {
        generation_cost(g, self.c2, self.c1, self.c0)
    }
}

/// `c² g² + c¹ g + c⁰`
pub fn generation_cost(g: f64, c2: f64, c1: f64, c0: f64) -> f64 {
    c2 * g * g + c1 * g + c0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedLoad {
    pub bus: usize,
    /// MW per slot
    pub demand: Vec<f64>,
}

/// Box bounds pinned to given values, `[farm][slot]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedBox {
    pub minus: Vec<Vec<f64>>,
    pub plus: Vec<Vec<f64>>,
}

impl FixedBox {
    pub fn zero(farms: usize, horizon: usize) -> Self {
        Self {
            minus: vec![vec![0.0; horizon]; farms],
            plus: vec![vec![0.0; horizon]; farms],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchCase {
    pub network: NetworkModel,
    pub generators: Vec<Generator>,
    pub fixed_loads: Vec<FixedLoad>,
    pub flexible: Vec<FlexibleLoadSpec>,
    pub wind: WindModel,
    /// curtailment weight
    pub eta1: f64,
    /// deficiency weight
    pub eta2: f64,
    pub beta: f64,
    pub horizon: usize,
    pub fixed_box: Option<FixedBox>,
}

impl DispatchCase {
    pub fn with_weights(&self, eta1: f64, eta2: f64) -> Self {
        Self {
            eta1,
            eta2,
            ..self.clone()
        }
    }

    /// The first `horizon` slots of every series.
    pub fn truncated(&self, horizon: usize) -> Self {
        let h = horizon.min(self.horizon);
        let cut = |v: &Vec<f64>| v[..h].to_vec();
        let mut out = self.clone();
        out.horizon = h;
        for d in &mut out.fixed_loads {
            d.demand.truncate(h);
        }
        for f in &mut out.flexible {
            *f = FlexibleLoadSpec {
                bus: f.bus,
                l: cut(&f.l),
                u: cut(&f.u),
                x_min: cut(&f.x_min),
                x_max: cut(&f.x_max),
            };
        }
        for w in &mut out.wind.farms {
            w.forecast.truncate(h);
            w.samples.truncate(h);
        }
        if let Some(b) = &mut out.fixed_box {
            b.minus.iter_mut().chain(b.plus.iter_mut()).for_each(|r| r.truncate(h));
        }
        out
    }

    pub fn validate(&self) -> Result<(), DispatchError> {
        let bad = |m: String| Err(DispatchError::Case(m));
        let n = self.network.num_buses();
        let t = self.horizon;
        if t == 0 {
            return bad("horizon must be at least one slot".into());
        }
        if !(self.eta1 >= 0.0 && self.eta2 >= 0.0) {
            return bad("loss weights must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("risk level {} outside [0, 1)", self.beta));
        }
        let on_net = |b: usize| b >= 1 && b <= n;
        for (i, g) in self.generators.iter().enumerate() {
            if !on_net(g.bus) {
                return bad(format!("generator {i} at unknown bus {}", g.bus));
            }
            if !(g.g_min <= g.g_max) {
                return bad(format!("generator {i}: g_min > g_max"));
            }
            if g.c2 < 0.0 {
                return bad(format!("generator {i}: negative quadratic cost"));
            }
        }
        for (i, d) in self.fixed_loads.iter().enumerate() {
            if !on_net(d.bus) {
                return bad(format!("fixed load {i} at unknown bus {}", d.bus));
            }
            if d.demand.len() != t {
                return bad(format!("fixed load {i}: {} slots, expected {t}", d.demand.len()));
            }
        }
        for (i, f) in self.flexible.iter().enumerate() {
            if !on_net(f.bus) {
                return bad(format!("flexible load {i} at unknown bus {}", f.bus));
            }
            if f.horizon() != t {
                return bad(format!("flexible load {i}: {} slots, expected {t}", f.horizon()));
            }
            f.validate()?;
        }
        for (i, w) in self.wind.farms.iter().enumerate() {
            if !on_net(w.bus) {
                return bad(format!("wind farm {i} at unknown bus {}", w.bus));
            }
        }
        self.wind.validate(t)?;
        if let Some(b) = &self.fixed_box {
            let nw = self.wind.farms.len();
            let shape_ok = |m: &Vec<Vec<f64>>| m.len() == nw && m.iter().all(|r| r.len() == t && r.iter().all(|v| *v >= 0.0));
            if !shape_ok(&b.minus) || !shape_ok(&b.plus) {
                return bad("fixed box must be nonnegative with one row per farm and one entry per slot".into());
            }
        }
        Ok(())
    }

    fn active_sides(&self) -> Vec<(LossSide, f64)> {
        [(LossSide::Curtailment, self.eta1), (LossSide::Deficiency, self.eta2)]
            .into_iter()
            .filter(|&(_, eta)| eta > 0.0)
            .collect()
    }
}

/// Column map of a built dispatch problem.
#[derive(Debug, Clone)]
pub struct DispatchLayout {
    pub set_points: SetPoints,
    pub bounds: BoxScaling,
    pub policy: RecoursePolicy,
    pub robust: RobustSystem,
    pub duals: Vec<DualBlock>,
    pub cvar: CvarBlock,
    pub balance: BalanceRows,
}

fn add_set_point_rows(qp: &mut QpProblem, case: &DispatchCase, sp: &SetPoints) -> Result<(), DispatchError> {
    for (i, g) in case.generators.iter().enumerate() {
        for t in 0..case.horizon {
            let c = sp.g(i, t);
            qp.add_lower_bound(c, g.g_min);
            qp.add_upper_bound(c, g.g_max);
        }
    }
    for (f, spec) in case.flexible.iter().enumerate() {
        for row in envelope_rows(spec)? {
            let terms: Vec<(usize, f64)> = row.terms.iter().map(|&(s, a)| (sp.x(f, s), a)).collect();
            qp.add_le(&terms, row.rhs);
        }
    }
    Ok(())
}

fn add_generation_cost(qp: &mut QpProblem, case: &DispatchCase, sp: &SetPoints) {
    for (i, g) in case.generators.iter().enumerate() {
        for t in 0..case.horizon {
            let c = sp.g(i, t);
            qp.add_quadratic(c, c, 2.0 * g.c2);
            qp.add_linear(c, g.c1);
            qp.add_constant(g.c0);
        }
    }
}

fn add_box(qp: &mut QpProblem, case: &DispatchCase, bounds: &BoxScaling, pinned: Option<&FixedBox>) {
    for j in 0..case.wind.farms.len() {
        for t in 0..case.horizon {
            match pinned {
                Some(b) => {
                    qp.fix(bounds.minus(j, t), b.minus[j][t]);
                    qp.fix(bounds.plus(j, t), b.plus[j][t]);
                }
                None => {
                    qp.add_lower_bound(bounds.minus(j, t), 0.0);
                    qp.add_lower_bound(bounds.plus(j, t), 0.0);
                }
            }
        }
    }
}

/// Builds the deterministic QP: generation cost plus weighted CVaR blocks,
/// nominal balance and coefficient matching, set-point bounds and envelopes,
/// nominal flow limits, and the dualized robust rows. CVaR sides with zero
/// weight are left out.
pub fn build_problem(case: &DispatchCase) -> Result<(QpProblem, DispatchLayout), DispatchError> {
    case.validate()?;
    let t = case.horizon;
    let nw = case.wind.farms.len();
    let mut qp = QpProblem::new();
    let sp = SetPoints::allocate(&mut qp, case.generators.len(), case.flexible.len(), t);
    let bounds = BoxScaling::allocate(&mut qp, nw, t);
    let policy = RecoursePolicy::allocate(&mut qp, RecourseMode::FlexibleLoads, case.flexible.len(), nw, t);
    add_generation_cost(&mut qp, case, &sp);
    add_set_point_rows(&mut qp, case, &sp)?;
    add_box(&mut qp, case, &bounds, case.fixed_box.as_ref());
    let balance = balance_coefficient_match(&mut qp, case, &sp, &policy, &bounds);
    let robust = assemble_robust_system(case, &sp, RecourseMode::FlexibleLoads)?;
    for row in &robust.rows {
        if matches!(row.origin, RowOrigin::FlowForward { .. } | RowOrigin::FlowBackward { .. }) {
            qp.add_le(&row.nominal, row.rhs);
        }
    }
    let cvar = build_cvar_blocks(&mut qp, &case.wind, case.beta, &case.active_sides(), &bounds)?;
    let duals = saa_dualize(&mut qp, &robust, &policy, &bounds);
    Ok((
        qp,
        DispatchLayout {
            set_points: sp,
            bounds,
            policy,
            robust,
            duals,
            cvar,
            balance,
        },
    ))
}

/// Solved CVaR auxiliaries of one farm, slot and side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvarValues {
    pub farm: usize,
    pub slot: usize,
    pub side: LossSide,
    pub gamma: f64,
    pub v: Vec<f64>,
    pub mu: Vec<f64>,
    /// `1 / (K (1-β))`
    pub weight: f64,
    /// `γ + weight · Σ v`
    pub value: f64,
    /// false when the side had zero weight and was evaluated after the solve
    pub optimized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDuals {
    pub origin: RowOrigin,
    pub slot: usize,
    pub pi: Vec<(EpsCoord, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// Σ generation cost at the set-points ($)
    pub generation_cost: f64,
    /// Σ curtailment CVaR (MW)
    pub phi1: f64,
    /// Σ deficiency CVaR (MW)
    pub phi2: f64,
    /// `generation_cost + η¹ φ¹ + η² φ²`
    pub total: f64,
    pub solver_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub status: SolveStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub variables: usize,
    pub equalities: usize,
    pub inequalities: usize,
    /// wall time; not serialized so written results stay reproducible
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    /// `[generator][slot]` MW
    pub g: Vec<Vec<f64>>,
    /// `[aggregator][slot]` MW
    pub x_bar: Vec<Vec<f64>>,
    /// `[farm][slot]` MW
    pub delta_minus: Vec<Vec<f64>>,
    pub delta_plus: Vec<Vec<f64>>,
    /// per slot, `[aggregator][farm]`
    pub recourse: Vec<RecourseMatrices>,
    pub cvar: Vec<CvarValues>,
    pub duals: Vec<RowDuals>,
    pub objective: ObjectiveBreakdown,
    pub slack_bus: usize,
    pub stats: SolverStats,
    pub verification: Option<VerificationReport>,
}

impl DispatchSolution {
    pub fn cumulative(&self, flex: usize) -> Vec<f64> {
        self.x_bar[flex]
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseOptions {
    pub solver: SolverOptions,
    pub verify: bool,
}

/// Solver tolerance for dispatch solves. Tighter than the solver default so
/// that extracted CVaR values stay within the 1e-6 verification bar.
pub const DISPATCH_TOLERANCE: f64 = 1e-10;

impl Default for CaseOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions {
                tolerance: DISPATCH_TOLERANCE,
                ..SolverOptions::default()
            },
            verify: true,
        }
    }
}

fn cvar_values(case: &DispatchCase, block: &CvarBlock, z: &[f64], dm: &[Vec<f64>], dp: &[Vec<f64>]) -> Result<Vec<CvarValues>, DispatchError> {
    let mut out = Vec::new();
    for side in [LossSide::Curtailment, LossSide::Deficiency] {
        for (j, farm) in case.wind.farms.iter().enumerate() {
            for t in 0..case.horizon {
                let k = farm.samples[t].len();
                let weight = 1.0 / (k as f64 * (1.0 - case.beta));
                let vals = match block.term(j, t, side) {
                    Some(term) => CvarValues {
                        farm: j,
                        slot: t,
                        side,
                        gamma: z[term.gamma],
                        v: z[term.v.clone()].to_vec(),
                        mu: z[term.mu.clone()].to_vec(),
                        weight,
                        value: term.value(z),
                        optimized: true,
                    },
                    None => {
                        let losses: Vec<f64> = farm.samples[t]
                            .iter()
                            .map(|&w| side.loss(w, farm.forecast[t], dm[j][t], dp[j][t]))
                            .collect();
                        let gamma = value_at_risk(&losses, case.beta)?;
                        let v: Vec<f64> = losses.iter().map(|l| (l - gamma).max(0.0)).collect();
                        let value = gamma + weight * v.iter().sum::<f64>();
                        debug_assert!((value - empirical_cvar(&losses, case.beta)?).abs() <= 1e-9 * (1.0 + value));
                        CvarValues {
                            farm: j,
                            slot: t,
                            side,
                            gamma,
                            v,
                            mu: losses,
                            weight,
                            value,
                            optimized: false,
                        }
                    }
                };
                out.push(vals);
            }
        }
    }
    Ok(out)
}

/// Builds, solves and extracts; runs the verification suite when asked.
pub fn solve_case(case: &DispatchCase, options: &CaseOptions) -> Result<DispatchSolution, DispatchError> {
    let start = std::time::Instant::now();
    let (qp, layout) = build_problem(case)?;
    let sol = qp::solve(&qp, &options.solver)?;
    let seconds = start.elapsed().as_secs_f64();
    if sol.status != SolveStatus::Optimal {
        return Err(DispatchError::NotOptimal {
            status: sol.status,
            iterations: sol.iterations,
            residuals: sol.residuals,
        });
    }
    let z = &sol.z;
    let sp = &layout.set_points;
    let t = case.horizon;
    let g: Vec<Vec<f64>> = (0..sp.generators).map(|i| (0..t).map(|s| z[sp.g(i, s)]).collect()).collect();
    let x_bar: Vec<Vec<f64>> = (0..sp.flexible).map(|f| (0..t).map(|s| z[sp.x(f, s)]).collect()).collect();
    let (delta_minus, delta_plus) = layout.bounds.values(z);
    let cvar = cvar_values(case, &layout.cvar, z, &delta_minus, &delta_plus)?;
    let duals = layout
        .duals
        .iter()
        .map(|b| {
            let row = &layout.robust.rows[b.row];
            RowDuals {
                origin: row.origin,
                slot: row.slot,
                pi: b.coords.iter().copied().zip(z[b.pi.clone()].iter().copied()).collect(),
            }
        })
        .collect();
    let generation_cost: f64 = case
        .generators
        .iter()
        .zip(&g)
        .map(|(gen, row)| row.iter().map(|&v| gen.cost(v)).sum::<f64>())
        .sum();
    let phi = |side| cvar.iter().filter(|c| c.side == side).map(|c| c.value).sum::<f64>();
    let (phi1, phi2) = (phi(LossSide::Curtailment), phi(LossSide::Deficiency));
    let mut solution = DispatchSolution {
        g,
        x_bar,
        delta_minus,
        delta_plus,
        recourse: layout.policy.matrices(z),
        cvar,
        duals,
        objective: ObjectiveBreakdown {
            generation_cost,
            phi1,
            phi2,
            total: generation_cost + case.eta1 * phi1 + case.eta2 * phi2,
            solver_objective: sol.objective,
        },
        slack_bus: case.network.slack_bus(),
        stats: SolverStats {
            status: sol.status,
            iterations: sol.iterations,
            residuals: sol.residuals,
            variables: qp.num_vars(),
            equalities: qp.equalities().len(),
            inequalities: qp.inequalities().len(),
            seconds,
        },
        verification: None,
    };
    if options.verify {
        solution.verification = Some(verify_solution(case, &solution));
    }
    Ok(solution)
}

/// Worst-case generation cost with generators as the only recourse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseCost {
    /// Σ over slots of the largest vertex cost at the returned policy ($)
    pub value: f64,
    /// lower bound from the last outer approximation ($)
    pub lower_bound: f64,
    pub rounds: usize,
    /// `[generator][slot]` set-points of the generator-recourse schedule
    pub g: Vec<Vec<f64>>,
    /// per slot, `[generator][farm]`
    pub recourse: Vec<RecourseMatrices>,
}

fn box_vertices(farms: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..1usize << (2 * farms))
        .map(|m| {
            let minus = (0..farms).map(|j| (m >> (2 * j) & 1) as f64).collect();
            let plus = (0..farms).map(|j| (m >> (2 * j + 1) & 1) as f64).collect();
            (minus, plus)
        })
        .collect()
}

/// Re-dispatches with `x̄` and `δ±` pinned to `reference` and generators
/// absorbing every deviation in the box, minimizing
/// `Σ_t max over box vertices of Σ_i C_i(g_i + E⁻ε⁻ + E⁺ε⁺)`.
///
/// With generator recourse every row involves a single slot, so each slot is
/// solved on its own (in parallel). Each generator cost at each vertex is
/// bounded below by tangent cuts; rounds add tangents at the current outputs
/// until the exact worst-case cost and the cut model agree to `rel_gap`.
pub fn worst_case_generation_cost(
    case: &DispatchCase,
    reference: &DispatchSolution,
    solver: &SolverOptions,
    rel_gap: f64,
) -> Result<WorstCaseCost, DispatchError> {
    case.validate()?;
    if reference.x_bar.len() != case.flexible.len()
        || reference.delta_minus.len() != case.wind.farms.len()
        || reference.delta_plus.len() != case.wind.farms.len()
    {
        return Err(DispatchError::Case("reference solution does not match the case".into()));
    }
    let slots = (0..case.horizon)
        .into_par_iter()
        .map(|t| worst_case_slot(&slot_case(case, reference, t), solver, rel_gap))
        .collect::<Result<Vec<_>, _>>()?;
    let ng = case.generators.len();
    Ok(WorstCaseCost {
        value: slots.iter().map(|s| s.value).sum(),
        lower_bound: slots.iter().map(|s| s.lower_bound).sum(),
        rounds: slots.iter().map(|s| s.rounds).max().unwrap_or(0),
        g: (0..ng).map(|i| slots.iter().map(|s| s.g[i]).collect()).collect(),
        recourse: slots.into_iter().map(|s| s.recourse).collect(),
    })
}

/// One-slot copy of `case` with the flexible loads and the box pinned.
fn slot_case(case: &DispatchCase, reference: &DispatchSolution, t: usize) -> DispatchCase {
    let mut out = case.clone();
    out.horizon = 1;
    for d in &mut out.fixed_loads {
        d.demand = vec![d.demand[t]];
    }
    for (spec, x) in out.flexible.iter_mut().zip(&reference.x_bar) {
        let x = vec![x[t]];
        *spec = FlexibleLoadSpec {
            bus: spec.bus,
            l: x.clone(),
            u: x.clone(),
            x_min: x.clone(),
            x_max: x,
        };
    }
    for w in &mut out.wind.farms {
        w.forecast = vec![w.forecast[t]];
        w.samples = vec![w.samples[t].clone()];
    }
    let pick = |rows: &[Vec<f64>]| rows.iter().map(|r| vec![r[t]]).collect();
    out.fixed_box = Some(FixedBox {
        minus: pick(&reference.delta_minus),
        plus: pick(&reference.delta_plus),
    });
    out
}

struct SlotWorstCase {
    value: f64,
    lower_bound: f64,
    rounds: usize,
    g: Vec<f64>,
    recourse: RecourseMatrices,
}

fn worst_case_slot(case: &DispatchCase, solver: &SolverOptions, rel_gap: f64) -> Result<SlotWorstCase, DispatchError> {
    let nw = case.wind.farms.len();
    let ng = case.generators.len();
    let mut qp = QpProblem::new();
    let sp = SetPoints::allocate(&mut qp, ng, case.flexible.len(), 1);
    let bounds = BoxScaling::allocate(&mut qp, nw, 1);
    let policy = RecoursePolicy::allocate(&mut qp, RecourseMode::Generators, ng, nw, 1);
    for (i, g) in case.generators.iter().enumerate() {
        qp.add_lower_bound(sp.g(i, 0), g.g_min);
        qp.add_upper_bound(sp.g(i, 0), g.g_max);
    }
    for (f, spec) in case.flexible.iter().enumerate() {
        qp.fix(sp.x(f, 0), spec.l[0]);
    }
    add_box(&mut qp, case, &bounds, case.fixed_box.as_ref());
    balance_coefficient_match(&mut qp, case, &sp, &policy, &bounds);
    let robust = assemble_robust_system(case, &sp, RecourseMode::Generators)?;
    saa_dualize(&mut qp, &robust, &policy, &bounds);

    let vertices = box_vertices(nw);
    let tau = qp.add_variables("tau", 1).start;
    qp.add_linear(tau, 1.0);
    // output of generator i at vertex v, as linear terms
    let output = |i: usize, v: &(Vec<f64>, Vec<f64>)| -> Vec<(usize, f64)> {
        let mut terms = vec![(sp.g(i, 0), 1.0)];
        for j in 0..nw {
            terms.push((policy.e_minus(0, i, j), v.0[j]));
            terms.push((policy.e_plus(0, i, j), v.1[j]));
        }
        terms.retain(|&(_, a)| a != 0.0);
        terms
    };
    // k[v][i] models C_i at vertex v; tangent points already cut for each
    let mut k = Vec::with_capacity(vertices.len());
    let mut points: Vec<Vec<Vec<f64>>> = Vec::with_capacity(vertices.len());
    for (vi, v) in vertices.iter().enumerate() {
        let ks = qp.add_variables(format!("k[{vi}]"), ng).start;
        let mut epi = vec![(tau, -1.0)];
        let mut pts = Vec::with_capacity(ng);
        for (i, gen) in case.generators.iter().enumerate() {
            let p = output(i, v);
            epi.push((ks + i, 1.0));
            if gen.c2 > 0.0 {
                // outputs stay in [g_min, g_max], where C_i <= c_hi
                let c_hi = gen.cost(gen.g_min).max(gen.cost(gen.g_max));
                qp.add_upper_bound(ks + i, c_hi + 1.0 + c_hi.abs());
                let start = vec![gen.g_min, 0.5 * (gen.g_min + gen.g_max), gen.g_max];
                for &a in &start {
                    add_tangent(&mut qp, gen, ks + i, &p, a);
                }
                pts.push(start);
            } else {
                add_tangent(&mut qp, gen, ks + i, &p, 0.0);
                pts.push(Vec::new());
            }
        }
        // Σ_i k_i <= τ
        qp.add_le(&epi, 0.0);
        k.push(ks);
        points.push(pts);
    }

    let mut rounds = 0;
    loop {
        rounds += 1;
        let sol = qp::solve(&qp, solver)?;
        if sol.status != SolveStatus::Optimal {
            return Err(DispatchError::NotOptimal {
                status: sol.status,
                iterations: sol.iterations,
                residuals: sol.residuals,
            });
        }
        let z = &sol.z;
        let eval = |terms: &[(usize, f64)]| terms.iter().map(|&(c, a)| a * z[c]).sum::<f64>();
        let mut value = f64::NEG_INFINITY;
        let mut cuts = Vec::new();
        for (vi, v) in vertices.iter().enumerate() {
            let mut cost = 0.0;
            for (i, gen) in case.generators.iter().enumerate() {
                let p_terms = output(i, v);
                let p = eval(&p_terms);
                let exact = gen.cost(p);
                cost += exact;
                let fresh = points[vi][i].iter().all(|&a| (a - p).abs() > 1e-6 * (1.0 + p.abs()));
                if gen.c2 > 0.0 && fresh && exact - z[k[vi] + i] > 0.0 {
                    cuts.push((vi, i, p_terms, p));
                }
            }
            value = value.max(cost);
        }
        let lower_bound = sol.objective;
        if value - lower_bound <= rel_gap * (1.0 + value.abs()) || cuts.is_empty() || rounds >= 60 {
            return Ok(SlotWorstCase {
                value,
                lower_bound,
                rounds,
                g: (0..ng).map(|i| z[sp.g(i, 0)]).collect(),
                recourse: policy.matrices(z).remove(0),
            });
        }
        for (vi, i, p_terms, p) in cuts {
            add_tangent(&mut qp, &case.generators[i], k[vi] + i, &p_terms, p);
            points[vi][i].push(p);
        }
    }
}

/// `k >= C(a) + C'(a)·(p - a)`
fn add_tangent(qp: &mut QpProblem, gen: &Generator, k: usize, p: &[(usize, f64)], a: f64) {
    let slope = 2.0 * gen.c2 * a + gen.c1;
    let mut terms: Vec<(usize, f64)> = p.iter().map(|&(c, w)| (c, slope * w)).collect();
    terms.push((k, -1.0));
    qp.add_le(&terms, gen.c2 * a * a - gen.c0);
}
