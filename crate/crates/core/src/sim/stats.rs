//! Counters collected by a simulation run, and their CSV form.

use std::fmt::{self, Write as _};
use std::ops::AddAssign;

/// Every message is counted in exactly one of these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlitCategory {
    DataFetch,
    WriteBack,
    AckControl,
    Invalidation,
    Signature,
}

impl FlitCategory {
    pub const ALL: [FlitCategory; 5] = [
        FlitCategory::DataFetch,
        FlitCategory::WriteBack,
        FlitCategory::AckControl,
        FlitCategory::Invalidation,
        FlitCategory::Signature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FlitCategory::DataFetch => "data_fetch",
            FlitCategory::WriteBack => "write_back",
            FlitCategory::AckControl => "ack_control",
            FlitCategory::Invalidation => "invalidation",
            FlitCategory::Signature => "signature",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlitCounts {
    counts: [u64; 5],
    messages: [u64; 5],
}

impl FlitCounts {
    pub fn add(&mut self, cat: FlitCategory, flits: u64) {
        self.counts[cat as usize] += flits;
        self.messages[cat as usize] += 1;
    }

    pub fn get(&self, cat: FlitCategory) -> u64 {
        self.counts[cat as usize]
    }

    pub fn messages(&self, cat: FlitCategory) -> u64 {
        self.messages[cat as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CoreStats {
    pub cycles: u64,
    pub reads: u64,
    pub writes: u64,
    pub l1_hits: u64,
    pub l1_misses: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub llc_accesses: u64,
    pub mem_accesses: u64,
    pub acquires: u64,
    pub releases: u64,
    pub self_invalidated: u64,
    pub committed: u64,
    /// Copies this core's accesses destroyed in other caches (MESI).
    pub invalidations: u64,
}

impl AddAssign for CoreStats {
    fn add_assign(&mut self, o: CoreStats) {
        self.cycles += o.cycles;
        self.reads += o.reads;
        self.writes += o.writes;
        self.l1_hits += o.l1_hits;
        self.l1_misses += o.l1_misses;
        self.l2_hits += o.l2_hits;
        self.l2_misses += o.l2_misses;
        self.llc_accesses += o.llc_accesses;
        self.mem_accesses += o.mem_accesses;
        self.acquires += o.acquires;
        self.releases += o.releases;
        self.self_invalidated += o.self_invalidated;
        self.committed += o.committed;
        self.invalidations += o.invalidations;
    }
}

/// Results of one simulation. Ratios are computed on demand.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatsReport {
    pub protocol: String,
    pub cores: Vec<CoreStats>,
    pub flits: FlitCounts,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub const CSV_HEADER: &str = "workload,protocol,seed,cores,max_cycles,total_cycles,reads,writes,\
l1_hits,l1_misses,l2_hits,l2_misses,llc_accesses,mem_accesses,\
flits_data_fetch,flits_write_back,flits_ack_control,flits_invalidation,flits_signature,flits_total,\
invalidations,acquires,self_invalidated,self_inv_per_acquire,releases,committed,commit_per_release";

impl StatsReport {
    pub fn new(protocol: &str, cores: usize) -> Self {
        StatsReport { protocol: protocol.to_string(), cores: vec![CoreStats::default(); cores], flits: FlitCounts::default() }
    }

    /// Execution time: the slowest core.
    pub fn max_cycles(&self) -> u64 {
        self.cores.iter().map(|c| c.cycles).max().unwrap_or(0)
    }

    pub fn aggregate(&self) -> CoreStats {
        let mut t = CoreStats::default();
        for c in &self.cores {
            t += *c;
        }
        t
    }

    pub fn self_inv_per_acquire(&self) -> f64 {
        let t = self.aggregate();
        ratio(t.self_invalidated, t.acquires)
    }

    pub fn commit_per_release(&self) -> f64 {
        let t = self.aggregate();
        ratio(t.committed, t.releases)
    }

    /// One CSV row matching [`CSV_HEADER`].
    pub fn csv_row(&self, workload: &str, seed: u64) -> String {
        let t = self.aggregate();
        let mut s = String::new();
        write!(
            s,
            "{workload},{},{seed},{},{},{},{},{},{},{},{},{},{},{}",
            self.protocol,
            self.cores.len(),
            self.max_cycles(),
            t.cycles,
            t.reads,
            t.writes,
            t.l1_hits,
            t.l1_misses,
            t.l2_hits,
            t.l2_misses,
            t.llc_accesses,
            t.mem_accesses
        )
        .unwrap();
        for cat in FlitCategory::ALL {
            write!(s, ",{}", self.flits.get(cat)).unwrap();
        }
        write!(
            s,
            ",{},{},{},{},{:.4},{},{},{:.4}",
            self.flits.total(),
            t.invalidations,
            t.acquires,
            t.self_invalidated,
            self.self_inv_per_acquire(),
            t.releases,
            t.committed,
            self.commit_per_release()
        )
        .unwrap();
        s
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.aggregate();
        writeln!(f, "protocol      {}", self.protocol)?;
        writeln!(f, "cores         {}", self.cores.len())?;
        writeln!(f, "max cycles    {}", self.max_cycles())?;
        writeln!(f, "accesses      {} reads, {} writes", t.reads, t.writes)?;
        writeln!(f, "L1            {} hits, {} misses", t.l1_hits, t.l1_misses)?;
        writeln!(f, "L2            {} hits, {} misses", t.l2_hits, t.l2_misses)?;
        writeln!(f, "LLC           {} accesses, {} to memory", t.llc_accesses, t.mem_accesses)?;
        write!(f, "flits        ")?;
        for cat in FlitCategory::ALL {
            write!(f, " {}={}", cat.name(), self.flits.get(cat))?;
        }
        writeln!(f, " total={}", self.flits.total())?;
        writeln!(f, "invalidations {}", t.invalidations)?;
        writeln!(
            f,
            "acquires      {} ({} lines self-invalidated, {:.2} per acquire)",
            t.acquires,
            t.self_invalidated,
            self.self_inv_per_acquire()
        )?;
        write!(
            f,
            "releases      {} ({} lines committed, {:.2} per release)",
            t.releases,
            t.committed,
            self.commit_per_release()
        )
    }
}
