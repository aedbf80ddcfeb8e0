//! Exhaustively checks every protocol on the small configurations and prints
//! state counts.
//!
//!     cargo run --release --example check_protocols [max-lines] [max-bytes]

use neat::checker::{explore, CheckOptions, MesiModel, Model, NeatModel};
use neat::neat::NeatVariant;

fn run<M: Model>(m: &M, opts: &CheckOptions) -> usize {
    let r = explore(m, opts);
    println!("{:<20} states={:<10} transitions={:<11} violations={} completed={} {:.1}s",
        r.model, r.states, r.transitions, r.violations.len(), r.completed, r.seconds);
    print!("{}", r.render_violations());
    r.states
}

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let max_lines = args.first().copied().unwrap_or(2);
    let max_bytes = args.get(1).copied().unwrap_or(2);
    let opts = CheckOptions::default();
    for lines in 1..=max_lines {
        for bytes in 1..=max_bytes {
            let base = run(&NeatModel::new(NeatVariant::Base, lines, bytes), &opts);
            run(&NeatModel::new(NeatVariant::PiOnly, lines, bytes), &opts);
            run(&NeatModel::new(NeatVariant::Full, lines, bytes), &opts);
            let mesi = run(&MesiModel::new(lines, bytes), &opts);
            println!("  mesi/neat-base = {:.1}", mesi as f64 / base as f64);
        }
    }
}
