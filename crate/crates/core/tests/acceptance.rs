//! One pass/fail line per acceptance criterion, with timings.
//!
//! cargo test --release --test acceptance

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::{dc_flows, tail_mean_cvar, DenseQp};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_dispatch::cvar::{build_cvar_blocks, empirical_cvar, LossSide, WindFarm, WindModel};
use robust_dispatch::dispatch::{
    solve_case, worst_case_generation_cost, CaseOptions, DispatchSolution, FixedBox, WorstCaseCost,
};
use robust_dispatch::network::{DeviceBuses, Line, NetworkModel};
use robust_dispatch::oracle::nominal_ed_reference;
use robust_dispatch::qp::{self, QpProblem, SolveStatus, SolverOptions};
use robust_dispatch::robust::BoxScaling;
use robust_dispatch::sixbus::{self, six_bus_case, DEFAULT_SEED, WEIGHT_SWEEP};

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn timed(id: usize, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = f();
    Outcome {
        id,
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

struct Solved {
    eta: (f64, f64),
    solution: DispatchSolution,
    worst: WorstCaseCost,
    seconds: f64,
}

fn solve_sweep() -> Vec<Solved> {
    WEIGHT_SWEEP
        .iter()
        .map(|&(eta1, eta2)| {
            let case = six_bus_case(eta1, eta2, DEFAULT_SEED);
            let start = Instant::now();
            let solution = solve_case(&case, &CaseOptions::default()).expect("bundled case solves");
            let seconds = start.elapsed().as_secs_f64();
            let worst = worst_case_generation_cost(&case, &solution, &SolverOptions::default(), 1e-8)
                .expect("worst-case cost solves");
            Solved {
                eta: (eta1, eta2),
                solution,
                worst,
                seconds,
            }
        })
        .collect()
}

fn ptdf_oracle() -> (bool, String) {
    let tri_lines: Vec<Line> = [(1, 2), (2, 3), (1, 3)]
        .into_iter()
        .map(|(from_bus, to_bus)| Line { from_bus, to_bus, reactance: 0.1, flow_limit: 100.0 })
        .collect();
    let tri = NetworkModel::new(3, tri_lines.clone(), 1, DeviceBuses::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tri_err = 0.0f64;
    for _ in 0..100 {
        let mut p: Vec<f64> = (0..3).map(|_| rng.gen_range(-100.0..100.0)).collect();
        p[0] = -p[1] - p[2];
        for (a, b) in tri.flows(&p).iter().zip(dc_flows(3, &tri_lines, 1, &p)) {
            tri_err = tri_err.max((a - b).abs());
        }
    }
    let net = sixbus::network();
    let lines = sixbus_lines();
    let mut six_err = 0.0f64;
    for _ in 0..1000 {
        let mut p: Vec<f64> = (0..6).map(|_| rng.gen_range(-500.0..500.0)).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v -= total / 6.0);
        for (a, b) in net.flows(&p).iter().zip(dc_flows(6, &lines, 1, &p)) {
            six_err = six_err.max((a - b).abs());
        }
    }
    (
        tri_err <= 1e-9 && six_err <= 1e-8,
        format!("triangle max err {tri_err:.1e} (<= 1e-9), six-bus 1000 draws max err {six_err:.1e} (<= 1e-8)"),
    )
}

fn sixbus_lines() -> Vec<Line> {
    sixbus::network().lines().to_vec()
}

fn cvar_equivalence() -> (bool, String) {
    let exact = empirical_cvar(&(1..=10).map(f64::from).collect::<Vec<_>>(), 0.9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let opts = SolverOptions { tolerance: 1e-12, ..Default::default() };
    for _ in 0..200 {
        let k = rng.gen_range(1..=40);
        let forecast = rng.gen_range(0.0..300.0);
        let samples: Vec<f64> = (0..k).map(|_| (forecast + rng.gen_range(-80.0..80.0f64)).max(0.0)).collect();
        let beta = rng.gen_range(0.5..0.99);
        let (dm, dp) = (rng.gen_range(0.0..60.0), rng.gen_range(0.0..60.0));
        let wind = WindModel {
            farms: vec![WindFarm { bus: 1, forecast: vec![forecast], samples: vec![samples.clone()] }],
        };
        let mut qp = QpProblem::new();
        let bounds = BoxScaling::allocate(&mut qp, 1, 1);
        qp.fix(bounds.minus(0, 0), dm);
        qp.fix(bounds.plus(0, 0), dp);
        let sides = [(LossSide::Curtailment, 1.0), (LossSide::Deficiency, 1.0)];
        let block = build_cvar_blocks(&mut qp, &wind, beta, &sides, &bounds).unwrap();
        let sol = qp::solve(&qp, &opts).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        for (side, _) in sides {
            let losses: Vec<f64> = samples.iter().map(|&w| side.loss(w, forecast, dm, dp)).collect();
            let lp = block.total(side, &sol.z);
            worst = worst.max((lp - tail_mean_cvar(&losses, beta)).abs());
        }
    }
    (
        exact == 10.0 && worst <= 1e-8,
        format!("{{1..10}} at 0.9 -> {exact}, 200 random tuples max |LP - sorted| {worst:.1e} (<= 1e-8)"),
    )
}

fn saa_soundness(sweep: &[Solved]) -> (bool, String) {
    let mut row_slack = f64::INFINITY;
    let mut balance = f64::INFINITY;
    let mut ok = true;
    for s in sweep {
        let report = s.solution.verification.as_ref().unwrap();
        let rows = report.check("robust_rows").unwrap();
        let bal = report.check("balance_vertices").unwrap();
        row_slack = row_slack.min(rows.worst_slack);
        balance = balance.min(bal.worst_slack);
        ok &= rows.worst_slack >= -1e-6 && bal.worst_slack >= -1e-9 && report.passed();
    }
    (
        ok,
        format!("6 cases: worst robust-row slack {row_slack:.1e} (>= -1e-6), largest vertex imbalance {:.1e} MW (<= 1e-9), all checks pass", -balance),
    )
}

fn nominal_degeneration() -> (bool, String) {
    let mut case = six_bus_case(0.0, 0.0, DEFAULT_SEED);
    case.fixed_box = Some(FixedBox::zero(1, case.horizon));
    let robust = solve_case(&case, &CaseOptions::default()).unwrap();
    let nominal = nominal_ed_reference(&case, &SolverOptions { tolerance: 1e-10, ..Default::default() }).unwrap();
    let rel = (robust.objective.solver_objective - nominal.objective).abs() / nominal.objective.abs().max(1.0);
    (
        rel <= 1e-6,
        format!("objective {:.4} vs reference {:.4}, relative diff {rel:.1e} (<= 1e-6)", robust.objective.solver_objective, nominal.objective),
    )
}

fn weight_monotonicity(sweep: &[Solved]) -> (bool, String) {
    let phi = |e1: f64, e2: f64| {
        let s = sweep.iter().find(|s| s.eta == (e1, e2)).unwrap();
        (s.solution.objective.phi1, s.solution.objective.phi2)
    };
    let no_rise = |before: f64, after: f64| after <= before + 1e-6 * (1.0 + before.abs());
    let mut checks = Vec::new();
    // raise η² with η¹ fixed
    for (e1, lo, hi) in [(10.0, 10.0, 100.0), (200.0, 100.0, 200.0)] {
        checks.push((format!("phi2 eta1={e1}: {:.3} -> {:.3}", phi(e1, lo).1, phi(e1, hi).1), no_rise(phi(e1, lo).1, phi(e1, hi).1)));
    }
    // raise η¹ with η² fixed
    for (e2, lo, hi) in [(100.0, 10.0, 50.0), (100.0, 50.0, 100.0), (100.0, 100.0, 200.0)] {
        checks.push((format!("phi1 eta2={e2}: {:.3} -> {:.3}", phi(lo, e2).0, phi(hi, e2).0), no_rise(phi(lo, e2).0, phi(hi, e2).0)));
    }
    (checks.iter().all(|c| c.1), checks.into_iter().map(|c| c.0).collect::<Vec<_>>().join("; "))
}

fn flexibility_value(sweep: &[Solved]) -> (bool, String) {
    let pairs: Vec<String> = sweep
        .iter()
        .map(|s| format!("{:.0}<={:.0}", s.solution.objective.generation_cost, s.worst.value))
        .collect();
    let ok = sweep
        .iter()
        .all(|s| s.solution.objective.generation_cost <= s.worst.value * (1.0 + 1e-9));
    (ok, format!("C^G <= C^G w/o on all cases: {}", pairs.join(", ")))
}

fn qp_solver(sweep: &[Solved]) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let dense = DenseQp::random(&mut rng);
        let oracle = dense.active_set_solution().expect("feasible by construction");
        let sol = qp::solve(&dense.to_problem(), &SolverOptions::default()).unwrap();
        let z = DVector::from_vec(sol.z);
        worst = worst.max((&z - &oracle).amax() / (1.0 + oracle.amax()));
    }
    let kkt = sweep.iter().map(|s| s.solution.stats.residuals.max()).fold(0.0, f64::max);
    let slowest = sweep.iter().map(|s| s.seconds).fold(0.0, f64::max);
    (
        worst <= 1e-6 && kkt <= 1e-6 && slowest < 30.0,
        format!("500 random QPs max err {worst:.1e} (<= 1e-6), bundled KKT residual {kkt:.1e} (<= 1e-6), slowest case {slowest:.2} s (< 30 s)"),
    )
}

fn schedule_shape(sweep: &[Solved]) -> (bool, String) {
    let case1 = &sweep[0].solution;
    // off-peak: 0:00-8:00 and 23:00-24:00
    let off_peak: Vec<usize> = (0..8).chain([23]).collect();
    let at_cap = off_peak
        .iter()
        .all(|&t| case1.x_bar.iter().all(|x| x[t] >= sixbus::FLEX_CAP - 1e-6));
    let dm_max = case1.delta_minus[0].iter().cloned().fold(0.0, f64::max);
    let dp_max = case1.delta_plus[0].iter().cloned().fold(0.0, f64::max);
    (
        at_cap && dm_max <= 1e-6 && dp_max > 1.0,
        format!("case 1: both aggregators at 160 MW in all off-peak slots: {at_cap}; max delta- {dm_max:.1e} (<= 1e-6); max delta+ {dp_max:.1} MW (> 0)"),
    )
}

#[test]
fn acceptance() {
    let mut outcomes = vec![
        timed(1, "PTDF oracle", ptdf_oracle),
        timed(2, "CVaR equivalence", cvar_equivalence),
    ];
    let start = Instant::now();
    let sweep = solve_sweep();
    let sweep_time = start.elapsed();
    // straight to the stderr handle so the lines survive output capture
    let mut err = std::io::stderr().lock();
    writeln!(err, "six-bus sweep solved in {:.2} s", sweep_time.as_secs_f64()).unwrap();
    outcomes.push(timed(3, "SAA soundness", || saa_soundness(&sweep)));
    outcomes.push(timed(4, "Nominal degeneration", nominal_degeneration));
    outcomes.push(timed(5, "Weight monotonicity", || weight_monotonicity(&sweep)));
    outcomes.push(timed(6, "Flexibility value", || flexibility_value(&sweep)));
    outcomes.push(timed(7, "QP solver", || qp_solver(&sweep)));
    outcomes.push(timed(8, "Schedule shape", || schedule_shape(&sweep)));

    let limits = [(1, 1.0), (2, 5.0)];
    let mut all = true;
    for o in &mut outcomes {
        if let Some(&(_, limit)) = limits.iter().find(|(id, _)| *id == o.id) {
            let secs = o.elapsed.as_secs_f64();
            if secs >= limit {
                o.passed = false;
                o.detail += &format!("; runtime {secs:.2} s over {limit} s");
            }
        }
        all &= o.passed;
        writeln!(
            err,
            "[{}] {} {} ({:.3} s): {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.elapsed.as_secs_f64(),
            o.detail
        )
        .unwrap();
    }
    assert!(all, "acceptance criteria failed");
}
