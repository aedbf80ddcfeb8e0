//! Generates a workload trace, verifies it is race free and prints it.
//!
//!     cargo run --example generate_workload [workload] [iterations] [seed]

use neat::workload::{generate, verify_drf, WorkloadKind, WorkloadSpec};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind = args.first().and_then(|a| WorkloadKind::parse(a)).unwrap_or(WorkloadKind::ProducerConsumer);
    let mut spec = WorkloadSpec::new(kind);
    spec.iterations = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    spec.seed = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(1);
    let trace = generate(&spec).expect("valid workload");
    match verify_drf(&trace) {
        Ok(()) => eprintln!("{kind}: {} events, race free", trace.events()),
        Err(race) => eprintln!("{kind}: race {race:?}"),
    }
    print!("{}", trace.to_text());
}
