//! Case-file runs: solve every weight setting, verify, and write results.
//!
//! Output directory layout:
//!
//! | file | rows |
//! |------|------|
//! | `results.csv` | one per case |
//! | `case_<k>.json` | full [`ResultRecord`] of case `k` |
//! | `schedule.csv` | `x̄` per aggregator and slot, with the fixed load |
//! | `cumulative.csv` | cumulative consumption with its `l`/`u` envelope |
//! | `admissible.csv` | admissible wind region `w̄ - δ⁻ .. w̄ + δ⁺` |
//! | `qp_case_<k>.txt` | QP dump, only with `dump_qp` |
//!
//! CSV numbers carry 6 significant digits (see [`fmt6`]); slots and case ids
//! are 1-based. Results do not depend on `jobs`.

pub mod case_file;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{
    build_problem, solve_case, worst_case_generation_cost, CaseOptions, DispatchCase, DispatchError, DispatchSolution,
    SolverStats, WorstCaseCost,
};
use crate::oracle::VerificationReport;
use crate::qp::SolverOptions;
pub use case_file::{CaseFile, SchemaError, Scenario, Weights};

/// Relative gap at which the worst-case cost loop stops.
pub const WORST_CASE_GAP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// 1-based case ids to run; empty runs all
    pub cases: Vec<usize>,
    /// replaces the seed of synthetic samples
    pub seed: Option<u64>,
    /// solver tolerance for the dispatch solves
    pub tolerance: Option<f64>,
    pub dump_qp: bool,
    pub verify: bool,
    /// worker threads; 0 lets rayon decide
    pub jobs: usize,
    pub out_dir: PathBuf,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            cases: Vec::new(),
            seed: None,
            tolerance: None,
            dump_qp: false,
            verify: true,
            jobs: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("case file: {0}")]
    Schema(#[from] SchemaError),
    #[error("case {case} does not exist (file has {available})")]
    UnknownCase { case: usize, available: usize },
    #[error("case {case}: {source}")]
    Solve {
        case: usize,
        #[source]
        source: DispatchError,
    },
    #[error("verification failed for case(s) {cases:?}")]
    Verification { cases: Vec<usize> },
}

impl RunError {
    /// 1 I/O, 2 bad case file or flags, 3 solver failure, 4 failed verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Io { .. } => 1,
            RunError::Schema(_) | RunError::UnknownCase { .. } => 2,
            RunError::Solve { .. } => 3,
            RunError::Verification { .. } => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything written for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    /// 1-based
    pub case: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// `C^G` at the set-points ($)
    pub generation_cost: f64,
    /// worst-case generation cost with flexible loads pinned ($)
    pub generation_cost_without_flex: f64,
    /// `C^G + η¹φ¹ + η²φ²`
    pub objective: f64,
    /// `[farm][slot]`
    pub delta_minus: Vec<Vec<f64>>,
    pub delta_plus: Vec<Vec<f64>>,
    /// `[aggregator][slot]`
    pub x_bar: Vec<Vec<f64>>,
    pub cumulative: Vec<Vec<f64>>,
    pub stats: SolverStats,
    pub verification: Option<VerificationReport>,
    pub solution: DispatchSolution,
    pub worst_case: WorstCaseCost,
}

impl ResultRecord {
    pub fn new(case: usize, dispatch: &DispatchCase, solution: DispatchSolution, worst_case: WorstCaseCost) -> Self {
        Self {
            case,
            eta1: dispatch.eta1,
            eta2: dispatch.eta2,
            phi1: solution.objective.phi1,
            phi2: solution.objective.phi2,
            generation_cost: solution.objective.generation_cost,
            generation_cost_without_flex: worst_case.value,
            objective: solution.objective.total,
            delta_minus: solution.delta_minus.clone(),
            delta_plus: solution.delta_plus.clone(),
            x_bar: solution.x_bar.clone(),
            cumulative: (0..solution.x_bar.len()).map(|f| solution.cumulative(f)).collect(),
            stats: solution.stats.clone(),
            verification: solution.verification.clone(),
            solution,
            worst_case,
        }
    }

    pub fn read(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| RunError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }

    pub fn verified(&self) -> Option<bool> {
        self.verification.as_ref().map(|r| r.passed())
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub name: String,
    pub records: Vec<ResultRecord>,
    /// wall time per case (s), same order as `records`
    pub seconds: Vec<f64>,
}

/// Six significant digits, no exponent, `-0` printed as `0`.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    format!("{rounded}")
}

/// Solves one case and its worst-case cost without flexible loads.
pub fn solve_record(case_id: usize, case: &DispatchCase, options: &CaseOptions) -> Result<ResultRecord, RunError> {
    let fail = |source| RunError::Solve { case: case_id, source };
    let solution = solve_case(case, options).map_err(fail)?;
    let worst = worst_case_generation_cost(case, &solution, &SolverOptions::default(), WORST_CASE_GAP).map_err(fail)?;
    Ok(ResultRecord::new(case_id, case, solution, worst))
}

/// Loads, solves and writes a case file. Artifacts are written before a
/// verification failure is reported.
pub fn run(case_path: &Path, options: &RunOptions) -> Result<RunSummary, RunError> {
    let file = CaseFile::read(case_path)?;
    let base_dir = case_path.parent().unwrap_or(Path::new("."));
    let scenario = file.build(base_dir, options.seed)?;
    let ids: Vec<usize> = if options.cases.is_empty() {
        (1..=scenario.settings.len()).collect()
    } else {
        options.cases.clone()
    };
    let cases = ids
        .iter()
        .map(|&k| {
            scenario.case(k).map(|c| (k, c)).ok_or(RunError::UnknownCase {
                case: k,
                available: scenario.settings.len(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut case_options = CaseOptions {
        verify: options.verify,
        ..CaseOptions::default()
    };
    if let Some(tol) = options.tolerance {
        case_options.solver.tolerance = tol;
    }
    std::fs::create_dir_all(&options.out_dir).map_err(io_err(&options.out_dir))?;
    if options.dump_qp {
        for (k, case) in &cases {
            let (qp, _) = build_problem(case).map_err(|source| RunError::Solve { case: *k, source })?;
            let path = options.out_dir.join(format!("qp_case_{k}.txt"));
            std::fs::write(&path, qp.dump()).map_err(io_err(&path))?;
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| RunError::Io {
            path: PathBuf::new(),
            source: std::io::Error::other(e),
        })?;
    let solved: Vec<(Result<ResultRecord, RunError>, f64)> = pool.install(|| {
        cases
            .par_iter()
            .map(|(k, case)| {
                let start = Instant::now();
                let r = solve_record(*k, case, &case_options);
                (r, start.elapsed().as_secs_f64())
            })
            .collect()
    });
    let mut records = Vec::with_capacity(solved.len());
    let mut seconds = Vec::with_capacity(solved.len());
    for (r, s) in solved {
        records.push(r?);
        seconds.push(s);
    }
    write_outputs(&options.out_dir, &scenario, &records)?;
    let failed: Vec<usize> = records.iter().filter(|r| r.verified() == Some(false)).map(|r| r.case).collect();
    if !failed.is_empty() {
        return Err(RunError::Verification { cases: failed });
    }
    Ok(RunSummary {
        name: scenario.name,
        records,
        seconds,
    })
}

fn write_outputs(dir: &Path, scenario: &Scenario, records: &[ResultRecord]) -> Result<(), RunError> {
    for r in records {
        let path = dir.join(format!("case_{}.json", r.case));
        let text = serde_json::to_string_pretty(r).expect("records serialize");
        std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    }
    let case = &scenario.base;
    let fixed_total = |t: usize| case.fixed_loads.iter().map(|d| d.demand[t]).sum::<f64>();

    write_csv(
        &dir.join("results.csv"),
        &[
            "case", "eta1", "eta2", "phi1", "phi2", "generation_cost", "generation_cost_without_flex", "objective",
            "status", "iterations", "max_residual", "verified",
        ],
        records.iter().map(|r| {
            vec![
                r.case.to_string(),
                fmt6(r.eta1),
                fmt6(r.eta2),
                fmt6(r.phi1),
                fmt6(r.phi2),
                fmt6(r.generation_cost),
                fmt6(r.generation_cost_without_flex),
                fmt6(r.objective),
                serde_json::to_value(r.stats.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                r.stats.iterations.to_string(),
                format!("{:.2e}", r.stats.residuals.max()),
                match r.verified() {
                    Some(true) => "yes",
                    Some(false) => "no",
                    None => "skipped",
                }
                .to_string(),
            ]
        }),
    )?;

    let mut rows = Vec::new();
    for r in records {
        for (f, spec) in case.flexible.iter().enumerate() {
            for t in 0..case.horizon {
                rows.push(vec![
                    r.case.to_string(),
                    (f + 1).to_string(),
                    spec.bus.to_string(),
                    (t + 1).to_string(),
                    fmt6(r.x_bar[f][t]),
                    fmt6(fixed_total(t)),
                ]);
            }
        }
    }
    write_csv(&dir.join("schedule.csv"), &["case", "aggregator", "bus", "slot", "x_bar", "fixed_load"], rows)?;

    let mut rows = Vec::new();
    for r in records {
        for (f, spec) in case.flexible.iter().enumerate() {
            for t in 0..case.horizon {
                rows.push(vec![
                    r.case.to_string(),
                    (f + 1).to_string(),
                    spec.bus.to_string(),
                    (t + 1).to_string(),
                    fmt6(r.cumulative[f][t]),
                    fmt6(spec.l[t]),
                    fmt6(spec.u[t]),
                ]);
            }
        }
    }
    write_csv(&dir.join("cumulative.csv"), &["case", "aggregator", "bus", "slot", "cumulative", "l", "u"], rows)?;

    let mut rows = Vec::new();
    for r in records {
        for (j, farm) in case.wind.farms.iter().enumerate() {
            for t in 0..case.horizon {
                let (w, dm, dp) = (farm.forecast[t], r.delta_minus[j][t], r.delta_plus[j][t]);
                rows.push(vec![
                    r.case.to_string(),
                    (j + 1).to_string(),
                    farm.bus.to_string(),
                    (t + 1).to_string(),
                    fmt6(w),
                    fmt6(dm),
                    fmt6(dp),
                    fmt6(w - dm),
                    fmt6(w + dp),
                ]);
            }
        }
    }
    write_csv(
        &dir.join("admissible.csv"),
        &["case", "farm", "bus", "slot", "forecast", "delta_minus", "delta_plus", "lower", "upper"],
        rows,
    )
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), RunError> {
    let to_io = |e: csv::Error| RunError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    w.write_record(header).map_err(to_io)?;
    for row in rows {
        w.write_record(&row).map_err(to_io)?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_digit_formatting() {
        assert_eq!(fmt6(160824.123), "160824");
        assert_eq!(fmt6(371.8712), "371.871");
        assert_eq!(fmt6(-0.0), "0");
        assert_eq!(fmt6(1e-7), "0.0000001");
        assert_eq!(fmt6(1234567.0), "1234570");
        assert_eq!(fmt6(0.1 + 0.2), "0.3");
    }
}
