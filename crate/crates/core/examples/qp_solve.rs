//! Building and solving a small convex QP with the interior-point solver.
//!
//! cargo run --example qp_solve

use robust_dispatch::qp::{self, QpProblem, SolverOptions};

fn main() {
    // two generators serving 150 MW:
    // min 0.03 g1² + 7 g1 + 0.07 g2² + 10 g2,  g1 + g2 = 150,  0 <= g1 <= 100,  0 <= g2
    let mut qp = QpProblem::new();
    let g = qp.add_variables("g", 2);
    qp.add_quadratic(g.start, g.start, 0.06);
    qp.add_quadratic(g.start + 1, g.start + 1, 0.14);
    qp.add_linear(g.start, 7.0);
    qp.add_linear(g.start + 1, 10.0);
    qp.add_eq(&[(g.start, 1.0), (g.start + 1, 1.0)], 150.0);
    qp.add_lower_bound(g.start, 0.0);
    qp.add_upper_bound(g.start, 100.0);
    qp.add_lower_bound(g.start + 1, 0.0);

    let sol = qp::solve(&qp, &SolverOptions::default()).unwrap();
    println!("status {:?} after {} iterations", sol.status, sol.iterations);
    println!("g = {:.4?}, cost {:.4}", sol.z, sol.objective);
    // equal marginal cost would put g1 at 115, so the cap binds
    println!("balance dual (marginal price) {:.4}", -sol.eq_duals[0]);
    println!("cap dual {:.4}", sol.ineq_duals[1]);
    println!("residuals {:?}", sol.residuals);

    println!("\nplain-text dump:\n{}", qp.dump());
}
