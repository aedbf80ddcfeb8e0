//! Seeded synthetic traces that are data-race-free by construction, and a
//! lockset checker that confirms it.
//!
//! Address map (byte addresses): a shared region at [`SHARED_BASE`] and one
//! private arena per core at `PRIVATE_BASE + core * ARENA_BYTES`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ConfigError;
use crate::sim::trace::{Trace, TraceEvent};

pub const SHARED_BASE: u64 = 0x10_0000;
pub const PRIVATE_BASE: u64 = 0x100_0000;
pub const ARENA_BYTES: u64 = 0x10_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WorkloadKind {
    Disjoint,
    SharedCounter,
    FalseSharing,
    ProducerConsumer,
    RandomDrf,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 5] = [
        WorkloadKind::Disjoint,
        WorkloadKind::SharedCounter,
        WorkloadKind::FalseSharing,
        WorkloadKind::ProducerConsumer,
        WorkloadKind::RandomDrf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::Disjoint => "disjoint",
            WorkloadKind::SharedCounter => "sharedCounter",
            WorkloadKind::FalseSharing => "falseSharing",
            WorkloadKind::ProducerConsumer => "producerConsumer",
            WorkloadKind::RandomDrf => "randomDrf",
        }
    }

    pub fn parse(s: &str) -> Option<WorkloadKind> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    /// What the generator does with each parameter.
    pub fn describe(self) -> &'static str {
        match self {
            WorkloadKind::Disjoint => {
                "each core repeats {ACQ own lock; read and write every line of its private block; REL}; \
                 iterations = regions, lines = block size per core, nops = gap after each region"
            }
            WorkloadKind::SharedCounter => {
                "all cores increment a shared region under lock 0; iterations = increments per core, \
                 lines = shared region size (at most 8), nops = gap between increments"
            }
            WorkloadKind::FalseSharing => {
                "core i writes byte i of one shared line with no locking, then joins through lock 0; \
                 iterations = writes per core, nops = gap between writes; cores <= line size"
            }
            WorkloadKind::ProducerConsumer => {
                "cores pair up (2k produces, 2k+1 consumes) and alternate on lock k: the producer \
                 writes a buffer, the consumer reads it; iterations = handoffs, lines = buffer size, \
                 nops = work inside each critical section; needs an even core count"
            }
            WorkloadKind::RandomDrf => {
                "seeded mix of private accesses and critical sections on per-region locks (one shared \
                 region of 2 lines per core); iterations = steps per core, lines = private arena size, \
                 nops = upper bound of the random gap after each step"
            }
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub cores: usize,
    pub iterations: usize,
    /// Working-set lines per core (meaning varies by kind, see `describe`).
    pub lines: usize,
    pub nops: u32,
    pub seed: u64,
    pub line_size: usize,
}

impl WorkloadSpec {
    /// Desk-scale defaults for `kind`.
    pub fn new(kind: WorkloadKind) -> Self {
        let (cores, iterations, lines, nops) = match kind {
            WorkloadKind::Disjoint => (8, 100, 16, 20),
            WorkloadKind::SharedCounter => (8, 100, 2, 50),
            WorkloadKind::FalseSharing => (4, 10_000, 1, 0),
            WorkloadKind::ProducerConsumer => (4, 50, 4, 20),
            WorkloadKind::RandomDrf => (4, 500, 32, 10),
        };
        WorkloadSpec { kind, cores, iterations, lines, nops, seed: 1, line_size: 64 }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |why: String| Err(ConfigError::Invariant(format!("{}: {why}", self.kind)));
        if self.cores == 0 || self.cores > 64 {
            return bad(format!("{} cores; 1 to 64 supported", self.cores));
        }
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if !self.line_size.is_power_of_two() || self.line_size < 8 || self.line_size > 64 {
            return bad("line size must be a power of two in 8..=64".into());
        }
        if self.lines == 0 || self.lines as u64 * self.line_size as u64 > ARENA_BYTES {
            return bad(format!("{} lines do not fit an arena", self.lines));
        }
        match self.kind {
            WorkloadKind::FalseSharing if self.cores > self.line_size => {
                bad(format!("{} cores cannot own distinct bytes of a {}-byte line", self.cores, self.line_size))
            }
            WorkloadKind::ProducerConsumer if self.cores % 2 != 0 => bad("needs an even number of cores".into()),
            WorkloadKind::SharedCounter if self.lines > 8 => bad("shared region is at most 8 lines".into()),
            _ => Ok(()),
        }
    }
}

fn private(core: usize) -> u64 {
    PRIVATE_BASE + core as u64 * ARENA_BYTES
}

/// Builds the trace for `spec`.
pub fn generate(spec: &WorkloadSpec) -> Result<Trace, ConfigError> {
    spec.validate()?;
    let mut t = Trace::new(spec.cores, spec.line_size);
    let ls = spec.line_size as u64;
    t.comments.push(format!(
        "workload={} cores={} iterations={} lines={} nops={} seed={}",
        spec.kind, spec.cores, spec.iterations, spec.lines, spec.nops, spec.seed
    ));
    t.comments.push(format!("shared region at {SHARED_BASE:#x}; core c private arena at {PRIVATE_BASE:#x} + c * {ARENA_BYTES:#x}"));
    let nop = |t: &mut Trace, c: usize, n: u32| {
        if n > 0 {
            t.push(c, TraceEvent::Nop(n));
        }
    };
    match spec.kind {
        WorkloadKind::Disjoint => {
            for c in 0..spec.cores {
                for _ in 0..spec.iterations {
                    t.push(c, TraceEvent::Acquire(c as u32));
                    for l in 0..spec.lines as u64 {
                        let a = private(c) + l * ls;
                        t.push(c, TraceEvent::Read { addr: a, size: 8 });
                        t.push(c, TraceEvent::Write { addr: a + 8, size: 8 });
                    }
                    t.push(c, TraceEvent::Release(c as u32));
                    nop(&mut t, c, spec.nops);
                }
            }
        }
        WorkloadKind::SharedCounter => {
            for c in 0..spec.cores {
                for _ in 0..spec.iterations {
                    t.push(c, TraceEvent::Acquire(0));
                    for l in 0..spec.lines as u64 {
                        let a = SHARED_BASE + l * ls;
                        t.push(c, TraceEvent::Read { addr: a, size: 8 });
                        t.push(c, TraceEvent::Write { addr: a, size: 8 });
                    }
                    t.push(c, TraceEvent::Release(0));
                    nop(&mut t, c, spec.nops);
                }
            }
        }
        WorkloadKind::FalseSharing => {
            for c in 0..spec.cores {
                let a = SHARED_BASE + (c % spec.line_size) as u64;
                for _ in 0..spec.iterations {
                    t.push(c, TraceEvent::Write { addr: a, size: 1 });
                    nop(&mut t, c, spec.nops);
                }
                t.push(c, TraceEvent::Acquire(0));
                t.push(c, TraceEvent::Release(0));
            }
        }
        WorkloadKind::ProducerConsumer => {
            // FIFO lock grants make the pair alternate strictly once the
            // consumer is queued behind the producer's first critical section.
            for pair in 0..spec.cores / 2 {
                let (p, c) = (2 * pair, 2 * pair + 1);
                let lock = pair as u32;
                let buf = SHARED_BASE + pair as u64 * spec.lines as u64 * ls;
                t.push(c, TraceEvent::Nop(1));
                for _ in 0..spec.iterations {
                    t.push(p, TraceEvent::Acquire(lock));
                    for l in 0..spec.lines as u64 {
                        t.push(p, TraceEvent::Write { addr: buf + l * ls, size: 8 });
                    }
                    nop(&mut t, p, spec.nops);
                    t.push(p, TraceEvent::Release(lock));
                    t.push(c, TraceEvent::Acquire(lock));
                    for l in 0..spec.lines as u64 {
                        t.push(c, TraceEvent::Read { addr: buf + l * ls, size: 8 });
                    }
                    nop(&mut t, c, spec.nops);
                    t.push(c, TraceEvent::Release(lock));
                }
            }
        }
        WorkloadKind::RandomDrf => {
            let regions = spec.cores as u64;
            let region_bytes = 2 * ls;
            let region_base = SHARED_BASE;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let access = |rng: &mut ChaCha8Rng, base: u64, span: u64| {
                let size = [1u8, 2, 4, 8][rng.gen_range(0..4)];
                let slot = rng.gen_range(0..span / size as u64);
                let addr = base + slot * size as u64;
                if rng.gen_bool(0.4) {
                    TraceEvent::Write { addr, size }
                } else {
                    TraceEvent::Read { addr, size }
                }
            };
            for c in 0..spec.cores {
                for _ in 0..spec.iterations {
                    let n = rng.gen_range(1..=4);
                    if rng.gen_bool(0.3) {
                        let r = rng.gen_range(0..regions);
                        t.push(c, TraceEvent::Acquire(r as u32));
                        for _ in 0..n {
                            let ev = access(&mut rng, region_base + r * region_bytes, region_bytes);
                            t.push(c, ev);
                        }
                        t.push(c, TraceEvent::Release(r as u32));
                    } else {
                        for _ in 0..n {
                            let ev = access(&mut rng, private(c), spec.lines as u64 * ls);
                            t.push(c, ev);
                        }
                    }
                    let gap = if spec.nops > 0 { rng.gen_range(0..=spec.nops) } else { 0 };
                    nop(&mut t, c, gap);
                }
            }
        }
    }
    Ok(t)
}

/// Position of an event in a trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventRef {
    pub thread: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Race {
    pub addr: u64,
    pub first: EventRef,
    pub second: EventRef,
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "race on byte {:#x}: T{} event {} and T{} event {} share no lock",
            self.addr, self.first.thread, self.first.index, self.second.thread, self.second.index
        )
    }
}

#[derive(Default)]
struct ByteHistory {
    /// Locks held at every access so far; `None` before the first access.
    lockset: Option<Vec<u32>>,
    /// First access and first write of each thread.
    first_access: BTreeMap<usize, EventRef>,
    first_write: BTreeMap<usize, EventRef>,
}

/// Lockset discipline: every byte that one thread writes and another thread
/// accesses must have a lock held at all of its accesses. Sound regardless
/// of how the simulator interleaves threads.
pub fn verify_drf(trace: &Trace) -> Result<(), Race> {
    let mut bytes: HashMap<u64, ByteHistory> = HashMap::new();
    for (t, evs) in trace.threads.iter().enumerate() {
        let mut held: Vec<u32> = Vec::new();
        for (i, ev) in evs.iter().enumerate() {
            let here = EventRef { thread: t, index: i };
            let (addr, size, write) = match *ev {
                TraceEvent::Acquire(l) => {
                    if let Err(p) = held.binary_search(&l) {
                        held.insert(p, l);
                    }
                    continue;
                }
                TraceEvent::Release(l) => {
                    held.retain(|h| *h != l);
                    continue;
                }
                TraceEvent::Nop(_) => continue,
                TraceEvent::Read { addr, size } => (addr, size, false),
                TraceEvent::Write { addr, size } => (addr, size, true),
            };
            for b in addr..addr + size as u64 {
                let h = bytes.entry(b).or_default();
                let ls = match h.lockset.take() {
                    None => held.clone(),
                    Some(prev) => prev.into_iter().filter(|l| held.binary_search(l).is_ok()).collect(),
                };
                let empty = ls.is_empty();
                h.lockset = Some(ls);
                h.first_access.entry(t).or_insert(here);
                if write {
                    h.first_write.entry(t).or_insert(here);
                }
                if !empty {
                    continue;
                }
                // A conflicting earlier access by another thread.
                let other = if write {
                    h.first_access.iter().find(|(ot, _)| **ot != t)
                } else {
                    h.first_write.iter().find(|(ot, _)| **ot != t)
                };
                if let Some((_, e)) = other {
                    return Err(Race { addr: b, first: *e, second: here });
                }
                // Earlier accesses of this thread may conflict with a later
                // write by another; the lockset being empty is remembered.
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec(kind: WorkloadKind, cores: usize, iterations: usize, lines: usize) -> WorkloadSpec {
        WorkloadSpec { cores, iterations, lines, ..WorkloadSpec::new(kind) }
    }

    #[test]
    fn every_default_generator_is_drf() {
        for k in WorkloadKind::ALL {
            let t = generate(&WorkloadSpec::new(k)).unwrap();
            t.validate().unwrap();
            assert_eq!(verify_drf(&t), Ok(()), "{k}");
        }
    }

    #[test]
    fn disjoint_writes_never_share_a_line() {
        let t = generate(&spec(WorkloadKind::Disjoint, 2, 3, 4)).unwrap();
        let lines = |c: usize| -> HashSet<u64> {
            t.threads[c]
                .iter()
                .filter_map(|e| match e {
                    TraceEvent::Write { addr, .. } => Some(addr / 64),
                    _ => None,
                })
                .collect()
        };
        assert_eq!(lines(0).len(), 4);
        assert!(lines(0).is_disjoint(&lines(1)));
    }

    #[test]
    fn false_sharing_bytes_are_disjoint_on_one_line() {
        let t = generate(&spec(WorkloadKind::FalseSharing, 4, 10, 1)).unwrap();
        let mut bytes = HashSet::new();
        for c in 0..4 {
            let w: HashSet<u64> = t.threads[c]
                .iter()
                .filter_map(|e| match e {
                    TraceEvent::Write { addr, .. } => Some(*addr),
                    _ => None,
                })
                .collect();
            assert_eq!(w.len(), 1);
            let a = *w.iter().next().unwrap();
            assert_eq!(a / 64, SHARED_BASE / 64);
            assert!(bytes.insert(a));
        }
        assert_eq!(verify_drf(&t), Ok(()));
    }

    #[test]
    fn random_drf_is_reproducible() {
        let s = WorkloadSpec { seed: 7, ..WorkloadSpec::new(WorkloadKind::RandomDrf) };
        assert_eq!(generate(&s).unwrap().to_text(), generate(&s).unwrap().to_text());
        let other = WorkloadSpec { seed: 8, ..s.clone() };
        assert_ne!(generate(&s).unwrap().to_text(), generate(&other).unwrap().to_text());
    }

    #[test]
    fn unsynchronized_write_then_read_races() {
        let mut t = Trace::new(2, 64);
        t.push(0, TraceEvent::Write { addr: 0x40, size: 1 });
        t.push(1, TraceEvent::Read { addr: 0x40, size: 1 });
        let r = verify_drf(&t).unwrap_err();
        assert_eq!(r.first, EventRef { thread: 0, index: 0 });
        assert_eq!(r.second, EventRef { thread: 1, index: 0 });
    }

    #[test]
    fn common_lock_makes_it_safe_but_different_locks_do_not() {
        let mk = |l1: u32| {
            let mut t = Trace::new(2, 64);
            t.push(0, TraceEvent::Acquire(0));
            t.push(0, TraceEvent::Write { addr: 0x40, size: 4 });
            t.push(0, TraceEvent::Release(0));
            t.push(1, TraceEvent::Acquire(l1));
            t.push(1, TraceEvent::Read { addr: 0x42, size: 1 });
            t.push(1, TraceEvent::Release(l1));
            t
        };
        assert_eq!(verify_drf(&mk(0)), Ok(()));
        assert_eq!(verify_drf(&mk(1)).unwrap_err().addr, 0x42);
    }

    #[test]
    fn read_only_sharing_is_fine() {
        let mut t = Trace::new(2, 64);
        t.push(0, TraceEvent::Read { addr: 0x40, size: 8 });
        t.push(1, TraceEvent::Read { addr: 0x40, size: 8 });
        assert_eq!(verify_drf(&t), Ok(()));
    }

    #[test]
    fn infeasible_specs_are_config_errors() {
        assert!(generate(&spec(WorkloadKind::Disjoint, 0, 1, 1)).is_err());
        assert!(generate(&spec(WorkloadKind::ProducerConsumer, 3, 1, 1)).is_err());
        assert!(generate(&spec(WorkloadKind::FalseSharing, 65, 1, 1)).is_err());
    }
}
