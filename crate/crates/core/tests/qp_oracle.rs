mod common;

use common::DenseQp;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_dispatch::qp::{self, SolveStatus, SolverOptions};

#[test]
fn random_qps_match_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for i in 0..500 {
        let dense = DenseQp::random(&mut rng);
        let oracle = dense.active_set_solution().expect("feasible by construction");
        let sol = qp::solve(&dense.to_problem(), &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "qp {i}");
        let z = DVector::from_vec(sol.z.clone());
        let err = (&z - &oracle).amax() / (1.0 + oracle.amax());
        worst = worst.max(err);
        assert!(err <= 1e-6, "qp {i}: error {err:e}\n{dense:?}");
        assert!(sol.residuals.max() <= 1e-6);
    }
    println!("worst relative error {worst:e}");
}

#[test]
fn unbounded_below_is_not_reported_optimal() {
    // min -z with z unbounded above
    let mut qp = robust_dispatch::qp::QpProblem::new();
    qp.add_variables("z", 1);
    qp.add_linear(0, -1.0);
    qp.add_lower_bound(0, 0.0);
    if let Ok(sol) = qp::solve(&qp, &SolverOptions::default()) {
        assert_ne!(sol.status, SolveStatus::Optimal);
    }
}

#[test]
fn contradictory_bounds_are_infeasible() {
    let mut qp = robust_dispatch::qp::QpProblem::new();
    qp.add_variables("z", 2);
    qp.add_quadratic(0, 0, 1.0);
    qp.add_quadratic(1, 1, 1.0);
    qp.add_eq(&[(0, 1.0), (1, 1.0)], 3.0);
    qp.add_upper_bound(0, 1.0);
    qp.add_upper_bound(1, 1.0);
    let sol = qp::solve(&qp, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
}
