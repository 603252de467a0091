//! Independent checks of a dispatch solution.
//!
//! Nothing here reuses the QP row builders except check (a), which evaluates
//! the assembled robust rows analytically. Envelope and balance vertices are
//! enumerated slot by slot, flows come from a direct angle solve, and the
//! nominal reference is written in angle form.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvar::empirical_cvar;
use crate::dispatch::{DispatchCase, DispatchError, DispatchSolution};
use crate::qp::{self, QpProblem, QpSolution, SolveStatus, SolverOptions};
use crate::robust::{assemble_robust_system, worst_case_row, BoxScaling, RecourseMode, RecoursePolicy, SetPoints};

/// Seed of the random box draws used by the flow check.
pub const FLOW_CHECK_SEED: u64 = 0x00f1_0c4e;
pub const FLOW_DRAWS: usize = 100;
/// Slack allowed on inequality checks (MW or MWh).
pub const ROW_TOL: f64 = 1e-6;
/// Allowed imbalance at any box vertex (MW).
pub const BALANCE_TOL: f64 = 1e-9;
/// Relative CVaR mismatch allowed against the sorted oracle.
pub const CVAR_TOL: f64 = 1e-6;
/// Relative KKT residual allowed on the solve.
pub const KKT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// smallest margin found; negative means violated by that much
    pub worst_slack: f64,
    pub tolerance: f64,
    /// items checked
    pub items: usize,
    /// items whose margin fell below `-tolerance`
    pub failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    items: usize,
    failures: usize,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            worst: f64::INFINITY,
            items: 0,
            failures: 0,
        }
    }

    fn margin(&mut self, m: f64) {
        self.items += 1;
        // NaN counts as a failure
        if !(m >= -self.tolerance) {
            self.failures += 1;
        }
        // finite so the report survives JSON
        self.worst = if m.is_nan() { f64::MIN } else { self.worst.min(m.max(f64::MIN)) };
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            passed: self.failures == 0,
            worst_slack: if self.items == 0 { 0.0 } else { self.worst },
            tolerance: self.tolerance,
            items: self.items,
            failures: self.failures,
        }
    }
}

/// All `4^{n_w}` vertices of one slot's box as `(ε⁻, ε⁺)`.
fn slot_vertices(farms: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..1usize << (2 * farms))
        .map(|m| {
            (
                (0..farms).map(|j| (m >> j & 1) as f64).collect(),
                (0..farms).map(|j| (m >> (farms + j) & 1) as f64).collect(),
            )
        })
        .collect()
}

/// Aggregator adjustment in slot `t` at a box point.
fn adjustment(sol: &DispatchSolution, t: usize, f: usize, em: &[f64], ep: &[f64]) -> f64 {
    let e = &sol.recourse[t];
    (0..em.len()).map(|j| e.minus[f][j] * em[j] + e.plus[f][j] * ep[j]).sum()
}

fn wind_at(case: &DispatchCase, sol: &DispatchSolution, t: usize, em: &[f64], ep: &[f64]) -> Vec<f64> {
    case.wind
        .farms
        .iter()
        .enumerate()
        .map(|(j, w)| w.forecast[t] - sol.delta_minus[j][t] * em[j] + sol.delta_plus[j][t] * ep[j])
        .collect()
}

/// Flows by solving the reduced angle system `B θ = p` directly.
struct AngleSolver {
    lines: Vec<(usize, usize, f64)>,
    slack: usize,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl AngleSolver {
    fn new(case: &DispatchCase) -> Self {
        let n = case.network.num_buses();
        let slack = case.network.slack_bus() - 1;
        let lines: Vec<(usize, usize, f64)> = case
            .network
            .lines()
            .iter()
            .map(|l| (l.from_bus - 1, l.to_bus - 1, l.reactance))
            .collect();
        let mut b = DMatrix::<f64>::zeros(n, n);
        for &(f, t, x) in &lines {
            let y = 1.0 / x;
            b[(f, f)] += y;
            b[(t, t)] += y;
            b[(f, t)] -= y;
            b[(t, f)] -= y;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
        let red = DMatrix::from_fn(keep.len(), keep.len(), |r, c| b[(keep[r], keep[c])]);
        Self {
            lines,
            slack,
            lu: red.lu(),
            n,
        }
    }

    fn flows(&self, injection: &[f64]) -> Vec<f64> {
        let p = DVector::from_iterator(self.n - 1, (0..self.n).filter(|&i| i != self.slack).map(|i| injection[i]));
        let theta_red = self.lu.solve(&p).unwrap_or_else(|| DVector::zeros(self.n - 1));
        let mut theta = vec![0.0; self.n];
        for (k, i) in (0..self.n).filter(|&i| i != self.slack).enumerate() {
            theta[i] = theta_red[k];
        }
        self.lines.iter().map(|&(f, t, x)| (theta[f] - theta[t]) / x).collect()
    }
}

fn bus_injections(case: &DispatchCase, sol: &DispatchSolution, t: usize, em: &[f64], ep: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; case.network.num_buses()];
    for (i, g) in case.generators.iter().enumerate() {
        p[g.bus - 1] += sol.g[i][t];
    }
    for (w, farm) in wind_at(case, sol, t, em, ep).iter().zip(&case.wind.farms) {
        p[farm.bus - 1] += w;
    }
    for d in &case.fixed_loads {
        p[d.bus - 1] -= d.demand[t];
    }
    for (f, spec) in case.flexible.iter().enumerate() {
        p[spec.bus - 1] -= sol.x_bar[f][t] + adjustment(sol, t, f, em, ep);
    }
    p
}

/// (a) analytic worst case of every assembled robust row.
fn check_robust_rows(case: &DispatchCase, sol: &DispatchSolution) -> CheckResult {
    let mut tally = Tally::new("robust_rows", ROW_TOL);
    let t_len = case.horizon;
    let nw = case.wind.farms.len();
    let mut scratch = QpProblem::new();
    let sp = SetPoints::allocate(&mut scratch, case.generators.len(), case.flexible.len(), t_len);
    let bounds = BoxScaling::allocate(&mut scratch, nw, t_len);
    let policy = RecoursePolicy::allocate(&mut scratch, RecourseMode::FlexibleLoads, case.flexible.len(), nw, t_len);
    let mut z = vec![0.0; scratch.num_vars()];
    for t in 0..t_len {
        for i in 0..sp.generators {
            z[sp.g(i, t)] = sol.g[i][t];
        }
        for f in 0..sp.flexible {
            z[sp.x(f, t)] = sol.x_bar[f][t];
            for j in 0..nw {
                z[policy.e_minus(t, f, j)] = sol.recourse[t].minus[f][j];
                z[policy.e_plus(t, f, j)] = sol.recourse[t].plus[f][j];
            }
        }
        for j in 0..nw {
            z[bounds.minus(j, t)] = sol.delta_minus[j][t];
            z[bounds.plus(j, t)] = sol.delta_plus[j][t];
        }
    }
    match assemble_robust_system(case, &sp, RecourseMode::FlexibleLoads) {
        Ok(system) => {
            for row in &system.rows {
                tally.margin(row.rhs - worst_case_row(row, &policy, &bounds, &z).value);
            }
        }
        Err(_) => tally.margin(f64::NEG_INFINITY),
    }
    tally.finish()
}

/// Envelope rows at every vertex, slot by slot. Cumulative extremes add the
/// per-slot extremes because each slot's box coordinates are independent.
fn check_envelope_vertices(case: &DispatchCase, sol: &DispatchSolution) -> CheckResult {
    let mut tally = Tally::new("envelope_vertices", ROW_TOL);
    let vertices = slot_vertices(case.wind.farms.len());
    for (f, spec) in case.flexible.iter().enumerate() {
        let (mut lo_sum, mut hi_sum) = (0.0, 0.0);
        for t in 0..case.horizon {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (em, ep) in &vertices {
                let x = sol.x_bar[f][t] + adjustment(sol, t, f, em, ep);
                lo = lo.min(x);
                hi = hi.max(x);
            }
            tally.margin(lo - spec.x_min[t]);
            tally.margin(spec.x_max[t] - hi);
            lo_sum += lo;
            hi_sum += hi;
            tally.margin(lo_sum - spec.l[t]);
            tally.margin(spec.u[t] - hi_sum);
        }
    }
    tally.finish()
}

/// (b) system balance at every vertex of every slot's box.
fn check_balance_vertices(case: &DispatchCase, sol: &DispatchSolution) -> CheckResult {
    let mut tally = Tally::new("balance_vertices", BALANCE_TOL);
    let vertices = slot_vertices(case.wind.farms.len());
    for t in 0..case.horizon {
        for (em, ep) in &vertices {
            let total: f64 = bus_injections(case, sol, t, em, ep).iter().sum();
            tally.margin(-total.abs());
        }
    }
    tally.finish()
}

/// (c) every CVaR value against the sorted oracle at the solved box, plus
/// the stored identity `value = γ + weight·Σv` and sign of the auxiliaries.
fn check_cvar(case: &DispatchCase, sol: &DispatchSolution) -> CheckResult {
    let mut tally = Tally::new("cvar", CVAR_TOL);
    for c in &sol.cvar {
        let farm = &case.wind.farms[c.farm];
        let losses: Vec<f64> = farm.samples[c.slot]
            .iter()
            .map(|&w| c.side.loss(w, farm.forecast[c.slot], sol.delta_minus[c.farm][c.slot], sol.delta_plus[c.farm][c.slot]))
            .collect();
        let oracle = empirical_cvar(&losses, case.beta).unwrap_or(f64::NAN);
        tally.margin(-(c.value - oracle).abs() / (1.0 + oracle.abs()));
        let identity = c.gamma + c.weight * c.v.iter().sum::<f64>();
        tally.margin(-(identity - c.value).abs() / (1.0 + c.value.abs()));
        let lowest = c.v.iter().chain(&c.mu).fold(0.0f64, |a, &b| a.min(b));
        tally.margin(lowest / (1.0 + c.value.abs()));
    }
    tally.finish()
}

/// (d) set-point constraints: generator bounds, envelopes, nominal balance
/// and box signs.
fn check_set_points(case: &DispatchCase, sol: &DispatchSolution) -> CheckResult {
    let mut tally = Tally::new("set_points", ROW_TOL);
    for (i, g) in case.generators.iter().enumerate() {
        for &v in &sol.g[i] {
            tally.margin(v - g.g_min);
            tally.margin(g.g_max - v);
        }
    }
    for (f, spec) in case.flexible.iter().enumerate() {
        let x = &sol.x_bar[f];
        let mut cum = 0.0;
        for t in 0..case.horizon {
            cum += x[t];
            tally.margin(x[t] - spec.x_min[t]);
            tally.margin(spec.x_max[t] - x[t]);
            tally.margin(cum - spec.l[t]);
            tally.margin(spec.u[t] - cum);
        }
    }
    let zero = vec![0.0; case.wind.farms.len()];
    for t in 0..case.horizon {
        let total: f64 = bus_injections(case, sol, t, &zero, &zero).iter().sum();
        tally.margin(-total.abs());
    }
    for d in sol.delta_minus.iter().chain(&sol.delta_plus).flatten() {
        tally.margin(*d);
    }
    tally.finish()
}

/// (e) line limits at the nominal point and at seeded random box points.
fn check_flows(case: &DispatchCase, sol: &DispatchSolution) -> CheckResult {
    let mut tally = Tally::new("flow_draws", ROW_TOL);
    if case.network.lines().is_empty() {
        return tally.finish();
    }
    let solver = AngleSolver::new(case);
    let nw = case.wind.farms.len();
    let mut rng = ChaCha8Rng::seed_from_u64(FLOW_CHECK_SEED);
    let zero = vec![0.0; nw];
    for draw in 0..=FLOW_DRAWS {
        for t in 0..case.horizon {
            let (em, ep): (Vec<f64>, Vec<f64>) = if draw == 0 {
                (zero.clone(), zero.clone())
            } else {
                ((0..nw).map(|_| rng.gen::<f64>()).collect(), (0..nw).map(|_| rng.gen::<f64>()).collect())
            };
            let flows = solver.flows(&bus_injections(case, sol, t, &em, &ep));
            for (flow, line) in flows.iter().zip(case.network.lines()) {
                tally.margin(line.flow_limit - flow.abs());
            }
        }
    }
    tally.finish()
}

fn check_solver(sol: &DispatchSolution) -> CheckResult {
    let mut tally = Tally::new("kkt_residuals", KKT_TOL);
    tally.margin(if sol.stats.status == SolveStatus::Optimal { 0.0 } else { f64::NEG_INFINITY });
    tally.margin(-sol.stats.residuals.max());
    tally.finish()
}

/// Runs every check and collects the margins.
pub fn verify_solution(case: &DispatchCase, sol: &DispatchSolution) -> VerificationReport {
    VerificationReport {
        checks: vec![
            check_robust_rows(case, sol),
            check_envelope_vertices(case, sol),
            check_balance_vertices(case, sol),
            check_cvar(case, sol),
            check_set_points(case, sol),
            check_flows(case, sol),
            check_solver(sol),
        ],
    }
}

/// Deterministic multi-period dispatch in angle form: generation cost subject
/// to per-bus balance, line limits, generator bounds and envelopes, with the
/// wind at its forecast and no risk terms.
pub fn nominal_ed_reference(case: &DispatchCase, options: &SolverOptions) -> Result<QpSolution, DispatchError> {
    case.validate()?;
    let t_len = case.horizon;
    let n = case.network.num_buses();
    let mut qp = QpProblem::new();
    let g = qp.add_variables("g", case.generators.len() * t_len);
    let x = qp.add_variables("x", case.flexible.len() * t_len);
    let theta = qp.add_variables("theta", n * t_len);
    let gc = |i: usize, t: usize| g.start + i * t_len + t;
    let xc = |f: usize, t: usize| x.start + f * t_len + t;
    let th = |b: usize, t: usize| theta.start + t * n + b;
    for (i, gen) in case.generators.iter().enumerate() {
        for t in 0..t_len {
            qp.add_quadratic(gc(i, t), gc(i, t), 2.0 * gen.c2);
            qp.add_linear(gc(i, t), gen.c1);
            qp.add_constant(gen.c0);
            qp.add_lower_bound(gc(i, t), gen.g_min);
            qp.add_upper_bound(gc(i, t), gen.g_max);
        }
    }
    for (f, spec) in case.flexible.iter().enumerate() {
        for t in 0..t_len {
            qp.add_lower_bound(xc(f, t), spec.x_min[t]);
            qp.add_upper_bound(xc(f, t), spec.x_max[t]);
            let prefix: Vec<(usize, f64)> = (0..=t).map(|s| (xc(f, s), 1.0)).collect();
            qp.add_ge(&prefix, spec.l[t]);
            qp.add_le(&prefix, spec.u[t]);
        }
    }
    let slack = case.network.slack_bus() - 1;
    for t in 0..t_len {
        qp.fix(th(slack, t), 0.0);
        // injection_b - Σ outgoing flows = 0
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut rhs = vec![0.0; n];
        for (i, gen) in case.generators.iter().enumerate() {
            rows[gen.bus - 1].push((gc(i, t), 1.0));
        }
        for (f, spec) in case.flexible.iter().enumerate() {
            rows[spec.bus - 1].push((xc(f, t), -1.0));
        }
        for w in &case.wind.farms {
            rhs[w.bus - 1] -= w.forecast[t];
        }
        for d in &case.fixed_loads {
            rhs[d.bus - 1] += d.demand[t];
        }
        for line in case.network.lines() {
            let (a, b) = (line.from_bus - 1, line.to_bus - 1);
            let y = 1.0 / line.reactance;
            rows[a].extend([(th(a, t), -y), (th(b, t), y)]);
            rows[b].extend([(th(b, t), -y), (th(a, t), y)]);
            let flow = [(th(a, t), y), (th(b, t), -y)];
            qp.add_le(&flow, line.flow_limit);
            qp.add_ge(&flow, -line.flow_limit);
        }
        for b in 0..n {
            qp.add_eq(&rows[b], rhs[b]);
        }
    }
    let sol = qp::solve(&qp, options)?;
    if sol.status != SolveStatus::Optimal {
        return Err(DispatchError::NotOptimal {
            status: sol.status,
            iterations: sol.iterations,
            residuals: sol.residuals,
        });
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::tests::{one_bus_case, six_bus_case};
    use crate::dispatch::{solve_case, CaseOptions, FixedBox};

    #[test]
    fn nominal_reference_on_forced_balance() {
        let case = one_bus_case(1, false, false);
        let sol = nominal_ed_reference(&case, &SolverOptions::default()).unwrap();
        assert!((sol.objective - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn corrupted_box_fails_cvar_check() {
        let case = six_bus_case(10.0, 10.0, 24);
        let mut sol = solve_case(&case, &CaseOptions::default()).unwrap();
        let report = sol.verification.clone().unwrap();
        assert!(report.passed(), "{report:#?}");
        for d in &mut sol.delta_plus[0] {
            *d += 1.0;
        }
        let report = verify_solution(&case, &sol);
        assert!(!report.check("cvar").unwrap().passed);
    }

    #[test]
    fn zero_box_vertices_stay_balanced() {
        let mut case = six_bus_case(0.0, 0.0, 3);
        case.fixed_box = Some(FixedBox::zero(1, 3));
        let sol = solve_case(&case, &CaseOptions::default()).unwrap();
        let report = sol.verification.clone().unwrap();
        assert!(report.passed(), "{report:#?}");
        // flexible loads may still trade power between buses, but wind stays
        // at the forecast and every vertex balances
        for t in 0..3 {
            for (em, ep) in slot_vertices(1) {
                let p = bus_injections(&case, &sol, t, &em, &ep);
                assert!(p.iter().sum::<f64>().abs() < 1e-7);
            }
        }
    }

    #[test]
    fn angle_flows_match_ptdf() {
        let case = six_bus_case(10.0, 10.0, 1);
        let solver = AngleSolver::new(&case);
        let p = [120.0, -30.0, -40.0, 10.0, -80.0, 20.0];
        let a = solver.flows(&p);
        let b = case.network.flows(&p);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn nominal_reference_bounds_robust_generation_cost() {
        let case = six_bus_case(10.0, 10.0, 24);
        let nominal = nominal_ed_reference(&case, &SolverOptions::default()).unwrap();
        let robust = solve_case(&case, &CaseOptions::default()).unwrap();
        assert!(nominal.objective > 1e5);
        assert!(nominal.objective <= robust.objective.generation_cost * (1.0 + 1e-6));
    }
}
