//! Cross product of workloads and protocols, run in parallel, reported in a
//! fixed order.

use rayon::prelude::*;

use crate::arch::ArchConfig;
use crate::sim::stats::{StatsReport, CSV_HEADER};
use crate::sim::{run_simulation, SimError, SimOptions, SimProtocol};
use crate::workload::{generate, WorkloadSpec};

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub workload: WorkloadSpec,
    pub protocol: SimProtocol,
    pub stats: StatsReport,
}

/// Runs every (workload, protocol) pair. Rows come back workload-major in
/// the order given, whatever order the jobs finish in.
pub fn sweep(
    workloads: &[WorkloadSpec],
    protocols: &[SimProtocol],
    cfg: &ArchConfig,
    opts: &SimOptions,
) -> Result<Vec<SweepRow>, SimError> {
    let traces = workloads
        .iter()
        .map(|w| {
            let mut w = w.clone();
            w.line_size = cfg.line_size;
            generate(&w).map(|t| (w, t))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, SimProtocol)> =
        (0..traces.len()).flat_map(|w| protocols.iter().map(move |p| (w, *p))).collect();
    jobs.par_iter()
        .map(|&(w, p)| {
            let (spec, trace) = &traces[w];
            run_simulation(trace, p, cfg, opts).map(|stats| SweepRow { workload: spec.clone(), protocol: p, stats })
        })
        .collect()
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.stats.csv_row(r.workload.kind.name(), r.workload.seed));
        s.push('\n');
    }
    s
}
