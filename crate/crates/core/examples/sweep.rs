//! Runs every workload on every protocol and prints the CSV.
//!
//!     cargo run --release --example sweep [iterations]

use neat::arch::ArchConfig;
use neat::sim::{SimOptions, SimProtocol};
use neat::sweep::{sweep, to_csv};
use neat::workload::{WorkloadKind, WorkloadSpec};

fn main() {
    let iterations: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let specs: Vec<WorkloadSpec> = WorkloadKind::ALL
        .into_iter()
        .map(|k| {
            let mut s = WorkloadSpec::new(k);
            if let Some(n) = iterations {
                s.iterations = n;
            }
            s
        })
        .collect();
    let rows = sweep(&specs, &SimProtocol::ALL, &ArchConfig::desk_scale(), &SimOptions::default()).expect("sweep");
    print!("{}", to_csv(&rows));
}
