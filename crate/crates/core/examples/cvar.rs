//! Empirical CVaR of wind-deviation losses, and the same value recovered
//! from the linear-programming block.
//!
//! cargo run --example cvar

use robust_dispatch::cvar::{build_cvar_blocks, empirical_cvar, value_at_risk, LossSide, WindModel};
use robust_dispatch::qp::{self, QpProblem, SolverOptions};
use robust_dispatch::robust::BoxScaling;
use robust_dispatch::sixbus;

fn main() {
    let losses: Vec<f64> = (1..=10).map(f64::from).collect();
    println!("losses 1..10, beta 0.9: VaR {} CVaR {}", value_at_risk(&losses, 0.9).unwrap(), empirical_cvar(&losses, 0.9).unwrap());

    let wind = sixbus::wind(sixbus::DEFAULT_SEED);
    let slot = 12;
    let farm = &wind.farms[0];
    let one = WindModel {
        farms: vec![robust_dispatch::cvar::WindFarm {
            bus: farm.bus,
            forecast: vec![farm.forecast[slot]],
            samples: vec![farm.samples[slot].clone()],
        }],
    };
    println!("\nslot {slot}: forecast {} MW, {} samples", farm.forecast[slot], farm.samples[slot].len());
    println!("{:>6} {:>6} {:>12} {:>12} {:>12} {:>12}", "d-", "d+", "curt sort", "curt LP", "def sort", "def LP");
    for (dm, dp) in [(0.0, 0.0), (3.0, 3.0), (6.0, 2.0), (12.0, 12.0)] {
        let mut qp = QpProblem::new();
        let bounds = BoxScaling::allocate(&mut qp, 1, 1);
        qp.fix(bounds.minus(0, 0), dm);
        qp.fix(bounds.plus(0, 0), dp);
        let sides = [(LossSide::Curtailment, 1.0), (LossSide::Deficiency, 1.0)];
        let block = build_cvar_blocks(&mut qp, &one, sixbus::BETA, &sides, &bounds).unwrap();
        let sol = qp::solve(&qp, &SolverOptions::default()).unwrap();
        let lp = |side| block.total(side, &sol.z);
        let sort = |side| one.cvar_at(0, 0, side, dm, dp, sixbus::BETA).unwrap();
        println!(
            "{dm:>6} {dp:>6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            sort(LossSide::Curtailment),
            lp(LossSide::Curtailment),
            sort(LossSide::Deficiency),
            lp(LossSide::Deficiency)
        );
    }
}
