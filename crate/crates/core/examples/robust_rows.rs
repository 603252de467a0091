//! Dualized robust rows: solve Case 1 and evaluate every row at its worst box
//! vertex.
//!
//! cargo run --release --example robust_rows

use robust_dispatch::dispatch::build_problem;
use robust_dispatch::qp::{self, SolverOptions};
use robust_dispatch::robust::{worst_case_row, RowOrigin};
use robust_dispatch::sixbus;

fn main() {
    let case = sixbus::six_bus_case(10.0, 10.0, sixbus::DEFAULT_SEED);
    let (qp, layout) = build_problem(&case).unwrap();
    println!("{} variables, {} equalities, {} inequalities", qp.num_vars(), qp.equalities().len(), qp.inequalities().len());
    let sol = qp::solve(&qp, &SolverOptions { tolerance: 1e-10, ..Default::default() }).unwrap();

    let mut tightest: Vec<(f64, &RowOrigin, usize)> = Vec::new();
    let mut worst_slack = f64::INFINITY;
    for row in &layout.robust.rows {
        let wc = worst_case_row(row, &layout.policy, &layout.bounds, &sol.z);
        let slack = row.rhs - wc.value;
        worst_slack = worst_slack.min(slack);
        tightest.push((slack, &row.origin, row.slot));
    }
    tightest.sort_by(|a, b| a.0.total_cmp(&b.0));
    println!("{} robust rows, smallest worst-case slack {worst_slack:.3e}", layout.robust.rows.len());
    println!("\ntightest rows:");
    for (slack, origin, slot) in tightest.iter().take(8) {
        println!("  slot {slot:>2} {origin:?}: {slack:.3e}");
    }
}
