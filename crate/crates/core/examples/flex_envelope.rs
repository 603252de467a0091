//! Energy envelope of a flexible-load aggregator and schedule checks.
//!
//! cargo run --example flex_envelope

use robust_dispatch::flexload::{check_schedule, envelope_rows, EnvelopeKind};
use robust_dispatch::sixbus;

fn main() {
    let spec = &sixbus::flexible_loads()[0];
    let rows = envelope_rows(spec).unwrap();
    println!("aggregator at bus {}: {} envelope rows over {} slots", spec.bus, rows.len(), spec.horizon());
    for kind in EnvelopeKind::ALL {
        let r = rows.iter().find(|r| r.kind == kind && r.slot == 10).unwrap();
        println!("  {kind:?} at slot 10: {} terms, rhs {}", r.terms.len(), r.rhs + 0.0);
    }

    println!("\n slot      l      u");
    for t in (0..spec.horizon()).step_by(4) {
        println!("{t:>5} {:>6} {:>6}", spec.l[t], spec.u[t]);
    }

    let lazy = spec.feasible_schedule().unwrap();
    println!("\na feasible schedule: {:?}", lazy.iter().map(|v| v.round()).collect::<Vec<_>>());
    println!("check: {:?}", check_schedule(spec, &lazy));

    // running at the cap all day overshoots u
    let greedy = vec![sixbus::FLEX_CAP; spec.horizon()];
    println!("always at cap: {:?}", check_schedule(spec, &greedy).first_violation);
}
