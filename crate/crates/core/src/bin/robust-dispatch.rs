use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use robust_dispatch::cli::{fmt6, run, RunOptions};

/// Solve the weight settings of a case file and write results.
///
/// Exit codes: 0 all cases optimal and verified, 1 I/O error, 2 invalid case
/// file or flags, 3 solver failure, 4 verification failure.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// JSON case file
    case_file: PathBuf,
    /// run only these 1-based cases (repeat or comma-separate)
    #[arg(long = "case", value_delimiter = ',')]
    cases: Vec<usize>,
    /// seed for synthetic wind samples, overriding the file
    #[arg(long)]
    seed: Option<u64>,
    /// interior-point tolerance for the dispatch solves
    #[arg(long)]
    tol: Option<f64>,
    /// write each QP as qp_case_<k>.txt
    #[arg(long)]
    dump_qp: bool,
    /// skip the verification checks
    #[arg(long)]
    no_verify: bool,
    /// worker threads for the sweep (0 = all cores)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let options = RunOptions {
        cases: args.cases,
        seed: args.seed,
        tolerance: args.tol,
        dump_qp: args.dump_qp,
        verify: !args.no_verify,
        jobs: args.jobs,
        out_dir: args.out,
    };
    match run(&args.case_file, &options) {
        Ok(summary) => {
            for (r, s) in summary.records.iter().zip(&summary.seconds) {
                eprintln!(
                    "case {}: phi1 {} phi2 {} C^G {} C^G w/o flex {} ({:.2} s)",
                    r.case,
                    fmt6(r.phi1),
                    fmt6(r.phi2),
                    fmt6(r.generation_cost),
                    fmt6(r.generation_cost_without_flex),
                    s
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
