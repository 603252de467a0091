//! Runs the bundled case file the way the command-line tool does and prints
//! the written summary.
//!
//! cargo run --release --example case_file

use std::path::Path;

use robust_dispatch::cli::{run, RunOptions};

fn main() {
    let case_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases/sixbus.json");
    let out_dir = std::env::temp_dir().join("robust-dispatch-example");
    let options = RunOptions {
        cases: vec![1, 2],
        out_dir: out_dir.clone(),
        ..RunOptions::default()
    };
    let summary = run(&case_path, &options).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    });
    println!("{}: {} cases written to {}", summary.name, summary.records.len(), out_dir.display());
    print!("{}", std::fs::read_to_string(out_dir.join("results.csv")).unwrap());
}
