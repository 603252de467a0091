//! Convex QP representation and a primal-dual interior-point solver.

mod ipm;
mod linsys;
mod problem;

pub use ipm::{kkt_residuals, solve};
pub use problem::{ConstraintRows, QpProblem, VarMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative tolerance on primal residual, dual residual and gap.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Static diagonal shift of the KKT matrix, removed by refinement.
    pub regularization: f64,
    pub refine_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
            regularization: 1e-9,
            refine_steps: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// A Farkas-type certificate was detected or the duals diverged. Heuristic.
    Infeasible,
    MaxIterations,
}

/// Relative KKT residuals of a primal-dual pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("quadratic term is not positive semidefinite")]
    NotConvex,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("KKT factorization broke down at iteration {iteration}")]
    Numerical { iteration: usize },
}
