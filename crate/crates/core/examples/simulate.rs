//! Runs one workload on every protocol and prints the headline numbers.
//!
//!     cargo run --release --example simulate [workload] [cores]

use neat::arch::ArchConfig;
use neat::sim::{run_simulation, SimOptions, SimProtocol};
use neat::workload::{generate, verify_drf, WorkloadKind, WorkloadSpec};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind = args.first().and_then(|a| WorkloadKind::parse(a)).unwrap_or(WorkloadKind::Disjoint);
    let mut spec = WorkloadSpec::new(kind);
    if let Some(c) = args.get(1).and_then(|a| a.parse().ok()) {
        spec.cores = c;
    }
    let trace = generate(&spec).expect("valid workload");
    verify_drf(&trace).expect("generated traces are race free");
    println!("{kind}: {} cores, {} events", spec.cores, trace.events());
    let cfg = ArchConfig::desk_scale();
    for p in SimProtocol::ALL {
        match run_simulation(&trace, p, &cfg, &SimOptions::default()) {
            Ok(r) => println!(
                "{:<11} cycles={:<9} flits={:<8} inv_flits={:<6} selfinv/acq={:<6.2} commit/rel={:.2}",
                p.name(),
                r.max_cycles(),
                r.flits.total(),
                r.flits.get(neat::sim::stats::FlitCategory::Invalidation),
                r.self_inv_per_acquire(),
                r.commit_per_release()
            ),
            Err(e) => println!("{:<11} FAILED: {e}", p.name()),
        }
    }
}
