//! The six weight settings on the bundled six-bus day, with the worst-case
//! generation cost when flexible loads cannot respond.
//!
//! cargo run --release --example six_bus_sweep

use std::time::Instant;

use robust_dispatch::dispatch::{solve_case, worst_case_generation_cost, CaseOptions};
use robust_dispatch::qp::SolverOptions;
use robust_dispatch::sixbus::{six_bus_case, DEFAULT_SEED, WEIGHT_SWEEP};

fn main() {
    println!(
        "{:>4} {:>5} {:>5} {:>10} {:>10} {:>11} {:>11} {:>9} {:>7}",
        "case", "eta1", "eta2", "phi1", "phi2", "C^G", "C^G w/o", "verified", "secs"
    );
    for (k, &(eta1, eta2)) in WEIGHT_SWEEP.iter().enumerate() {
        let case = six_bus_case(eta1, eta2, DEFAULT_SEED);
        let start = Instant::now();
        let sol = solve_case(&case, &CaseOptions::default()).unwrap();
        let without = worst_case_generation_cost(&case, &sol, &SolverOptions::default(), 1e-8).unwrap();
        let o = &sol.objective;
        println!(
            "{:>4} {eta1:>5} {eta2:>5} {:>10.3} {:>10.3} {:>11.1} {:>11.1} {:>9} {:>7.2}",
            k + 1,
            o.phi1,
            o.phi2,
            o.generation_cost,
            without.value,
            sol.verification.as_ref().is_some_and(|r| r.passed()),
            start.elapsed().as_secs_f64()
        );
        if k == 0 {
            let x: Vec<f64> = sol.x_bar[0].iter().map(|v| v.round()).collect();
            let up: Vec<f64> = sol.delta_plus[0].iter().map(|v| (v * 10.0).round() / 10.0).collect();
            println!("     bus-3 schedule: {x:?}");
            println!("     delta+:         {up:?}");
        }
    }
}
