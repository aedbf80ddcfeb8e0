//! Trace-driven timing simulator.
//!
//! Cores are in-order and block on every memory access. The engine always
//! runs the core with the smallest local clock next (ties to the lower id), so
//! a core blocked on a lock simply falls behind until the lock is handed to it.
//! Protocol effects are applied at the moment an event is executed; latency
//! only moves the issuing core's clock.

pub mod cache;
mod mesi_backend;
mod neat_backend;
pub mod stats;
pub mod trace;
mod vips_backend;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::arch::{split_address, ArchConfig};
use crate::error::{ConfigError, ProtocolError};
use crate::neat::{Mutation, NeatVariant};
use crate::oracle::FlatMemoryOracle;
use crate::signature::SignatureMode;
use crate::types::{ByteIdx, LineAddr, LineData, Value};

use cache::{Level, PrivateCaches, SetAssoc};
use stats::{CoreStats, FlitCounts, StatsReport};
use trace::{Trace, TraceError, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SimProtocol {
    NeatBase,
    NeatPi,
    NeatFull,
    Mesi,
    VipsUnopt,
}

impl SimProtocol {
    pub const ALL: [SimProtocol; 5] =
        [SimProtocol::NeatBase, SimProtocol::NeatPi, SimProtocol::NeatFull, SimProtocol::Mesi, SimProtocol::VipsUnopt];

    pub fn name(self) -> &'static str {
        match self {
            SimProtocol::NeatBase => "neat-base",
            SimProtocol::NeatPi => "neat-pi",
            SimProtocol::NeatFull => "neat-full",
            SimProtocol::Mesi => "mesi",
            SimProtocol::VipsUnopt => "vips-unopt",
        }
    }

    pub fn parse(s: &str) -> Option<SimProtocol> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn neat_variant(self) -> Option<NeatVariant> {
        match self {
            SimProtocol::NeatBase => Some(NeatVariant::Base),
            SimProtocol::NeatPi => Some(NeatVariant::PiOnly),
            SimProtocol::NeatFull => Some(NeatVariant::Full),
            _ => None,
        }
    }
}

impl fmt::Display for SimProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimOptions {
    /// Signature flavour for neat-full.
    pub signatures: SignatureMode,
    /// Injected Neat bug; ignored by the other backends.
    pub mutation: Option<Mutation>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { signatures: SignatureMode::Bloom, mutation: None }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("oracle mismatch: core {core} read {got:#04x} at {addr:#x} (event {index}), last write was {expected:#04x}")]
    OracleMismatch { core: usize, index: usize, addr: u64, expected: Value, got: Value },
    #[error("deadlock: {0}")]
    Deadlock(String),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("internal inconsistency: {0}")]
    Internal(String),
}

impl SimError {
    /// Failures of the simulated system, as opposed to bad input.
    pub fn is_functional(&self) -> bool {
        !matches!(self, SimError::Config(_) | SimError::Trace(_))
    }
}

/// Cycles to move `total_bytes` between a core and the LLC in one burst,
/// rounded up to whole flits, plus the LLC access.
pub fn charge_bulk_transfer(total_bytes: u64, cfg: &ArchConfig) -> u64 {
    if total_bytes == 0 {
        return 0;
    }
    let flit = cfg.flit_size as u64;
    cfg.bandwidth.cycles_for(total_bytes.div_ceil(flit) * flit) + cfg.llc_latency
}

/// Per-call accounting handed to a backend.
pub(crate) struct Ctx<'a> {
    pub stats: &'a mut CoreStats,
    pub flits: &'a mut FlitCounts,
}

pub(crate) trait Backend {
    /// Returns the latency and the bytes read.
    fn read(&mut self, core: usize, addr: LineAddr, start: ByteIdx, len: usize, now: u64, cx: &mut Ctx)
        -> Result<(u64, LineData), SimError>;
    fn write(&mut self, core: usize, addr: LineAddr, start: ByteIdx, values: &[Value], now: u64, cx: &mut Ctx)
        -> Result<u64, SimError>;
    /// Called once the lock is granted.
    fn acquire(&mut self, core: usize, now: u64, cx: &mut Ctx) -> Result<u64, SimError>;
    fn release(&mut self, core: usize, now: u64, cx: &mut Ctx) -> Result<u64, SimError>;
}

/// Tag arrays and latency composition shared by every backend.
pub(crate) struct Hierarchy {
    pub cfg: ArchConfig,
    pub privs: Vec<PrivateCaches>,
    pub llc: SetAssoc,
}

impl Hierarchy {
    pub fn new(cores: usize, cfg: &ArchConfig) -> Self {
        Hierarchy { cfg: cfg.clone(), privs: (0..cores).map(|_| PrivateCaches::new(cfg)).collect(), llc: SetAssoc::new(cfg.llc) }
    }

    /// Latency of finding a line at `level`, or of missing in every
    /// private level.
    pub fn private_latency(&self, level: Level) -> u64 {
        let c = &self.cfg;
        match level {
            Level::L1 => c.l1_latency,
            Level::L2 => c.l1_latency + c.l2_latency,
            Level::Miss if c.private_levels == 2 => c.l1_latency + c.l2_latency,
            Level::Miss => c.l1_latency,
        }
    }

    pub fn record(&self, level: Level, st: &mut CoreStats) {
        match level {
            Level::L1 => st.l1_hits += 1,
            Level::L2 => {
                st.l1_misses += 1;
                st.l2_hits += 1;
            }
            Level::Miss => {
                st.l1_misses += 1;
                if self.cfg.private_levels == 2 {
                    st.l2_misses += 1;
                }
            }
        }
    }

    /// An LLC lookup on behalf of a private miss. Returns its latency and the
    /// line the LLC displaced on a fill from memory.
    pub fn llc_fetch(&mut self, addr: LineAddr, st: &mut CoreStats) -> (u64, Option<LineAddr>) {
        st.llc_accesses += 1;
        if self.llc.touch(addr) {
            (self.cfg.llc_latency, None)
        } else {
            st.mem_accesses += 1;
            (self.cfg.llc_latency + self.cfg.mem_latency, self.llc.insert(addr))
        }
    }

    /// A write-back allocates in the LLC without anyone waiting on memory.
    pub fn llc_write(&mut self, addr: LineAddr) -> Option<LineAddr> {
        self.llc.insert(addr)
    }
}

fn make_backend(protocol: SimProtocol, cores: usize, cfg: &ArchConfig, opts: &SimOptions) -> Box<dyn Backend> {
    match protocol.neat_variant() {
        Some(v) => Box::new(neat_backend::NeatBackend::new(v, cores, cfg, opts)),
        None if protocol == SimProtocol::Mesi => Box::new(mesi_backend::MesiBackend::new(cores, cfg)),
        None => Box::new(vips_backend::VipsBackend::new(cores, cfg)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

/// One executed access, for tests and debugging.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessRecord {
    pub core: usize,
    pub index: usize,
    pub kind: AccessKind,
    pub addr: u64,
    pub values: Vec<Value>,
    /// Issue time on the core's clock.
    pub cycle: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Runnable,
    Waiting(u32),
    Done,
}

struct CoreRun {
    pc: usize,
    clock: u64,
    status: Status,
}

#[derive(Default)]
struct Lock {
    holder: Option<usize>,
    waiters: VecDeque<usize>,
}

pub fn run_simulation(trace: &Trace, protocol: SimProtocol, cfg: &ArchConfig, opts: &SimOptions) -> Result<StatsReport, SimError> {
    Engine::new(trace, protocol, cfg, opts, false)?.run().map(|(s, _)| s)
}

/// Like [`run_simulation`], also returning every access in execution order.
pub fn run_simulation_logged(
    trace: &Trace,
    protocol: SimProtocol,
    cfg: &ArchConfig,
    opts: &SimOptions,
) -> Result<(StatsReport, Vec<AccessRecord>), SimError> {
    Engine::new(trace, protocol, cfg, opts, true)?.run()
}

struct Engine<'t> {
    trace: &'t Trace,
    cfg: ArchConfig,
    backend: Box<dyn Backend>,
    cores: Vec<CoreRun>,
    locks: BTreeMap<u32, Lock>,
    oracle: FlatMemoryOracle,
    next_value: u64,
    report: StatsReport,
    log: Option<Vec<AccessRecord>>,
}

impl<'t> Engine<'t> {
    fn new(trace: &'t Trace, protocol: SimProtocol, cfg: &ArchConfig, opts: &SimOptions, log: bool) -> Result<Self, SimError> {
        cfg.validate()?;
        if trace.line_size != cfg.line_size {
            return Err(ConfigError::Invariant(format!(
                "trace line size {} differs from configured line_size {}",
                trace.line_size, cfg.line_size
            ))
            .into());
        }
        if trace.cores == 0 || trace.cores > 64 {
            return Err(ConfigError::Invariant(format!("{} cores; 1 to 64 supported", trace.cores)).into());
        }
        trace.validate()?;
        let n = trace.cores;
        Ok(Engine {
            trace,
            cfg: cfg.clone(),
            backend: make_backend(protocol, n, cfg, opts),
            cores: (0..n)
                .map(|c| CoreRun {
                    pc: 0,
                    clock: 0,
                    status: if trace.threads.get(c).is_some_and(|t| !t.is_empty()) { Status::Runnable } else { Status::Done },
                })
                .collect(),
            locks: BTreeMap::new(),
            oracle: FlatMemoryOracle::new(),
            next_value: 0,
            report: StatsReport::new(protocol.name(), n),
            log: log.then(Vec::new),
        })
    }

    fn fresh_value(&mut self) -> Value {
        let v = (self.next_value % 255) as Value + 1;
        self.next_value += 1;
        v
    }

    fn run(mut self) -> Result<(StatsReport, Vec<AccessRecord>), SimError> {
        loop {
            let next = (0..self.cores.len())
                .filter(|&c| self.cores[c].status == Status::Runnable)
                .min_by_key(|&c| (self.cores[c].clock, c));
            match next {
                Some(c) => self.step(c)?,
                None if self.cores.iter().all(|c| c.status == Status::Done) => break,
                None => return Err(SimError::Deadlock(self.wait_graph())),
            }
        }
        for (c, run) in self.cores.iter().enumerate() {
            self.report.cores[c].cycles = run.clock;
        }
        Ok((self.report, self.log.unwrap_or_default()))
    }

    fn wait_graph(&self) -> String {
        let mut parts = Vec::new();
        for (c, run) in self.cores.iter().enumerate() {
            if let Status::Waiting(l) = run.status {
                let holder = self.locks.get(&l).and_then(|k| k.holder);
                parts.push(match holder {
                    Some(h) => format!("core {c} waits for lock {l} held by core {h}"),
                    None => format!("core {c} waits for free lock {l}"),
                });
            }
        }
        parts.join("; ")
    }

    fn advance(&mut self, c: usize) {
        let run = &mut self.cores[c];
        run.pc += 1;
        if run.pc == self.trace.threads[c].len() {
            run.status = Status::Done;
        }
    }

    fn step(&mut self, c: usize) -> Result<(), SimError> {
        let index = self.cores[c].pc;
        let ev = self.trace.threads[c][index];
        let now = self.cores[c].clock;
        let mut cx = Ctx { stats: &mut self.report.cores[c], flits: &mut self.report.flits };
        match ev {
            TraceEvent::Nop(n) => self.cores[c].clock += n as u64,
            TraceEvent::Read { addr, size } => {
                let (line, start) = split_address(addr, &self.cfg);
                cx.stats.reads += 1;
                let (lat, got) = self.backend.read(c, line, start, size as usize, now, &mut cx)?;
                for (i, v) in got.iter().enumerate() {
                    let expected = self.oracle.read(line, start + i);
                    if *v != expected {
                        return Err(SimError::OracleMismatch { core: c, index, addr: addr + i as u64, expected, got: *v });
                    }
                }
                if let Some(log) = &mut self.log {
                    log.push(AccessRecord { core: c, index, kind: AccessKind::Read, addr, values: got.to_vec(), cycle: now });
                }
                self.cores[c].clock += lat;
            }
            TraceEvent::Write { addr, size } => {
                let (line, start) = split_address(addr, &self.cfg);
                let values: Vec<Value> = (0..size).map(|_| self.fresh_value()).collect();
                for (i, v) in values.iter().enumerate() {
                    self.oracle.apply(line, start + i, *v);
                }
                let mut cx = Ctx { stats: &mut self.report.cores[c], flits: &mut self.report.flits };
                cx.stats.writes += 1;
                let lat = self.backend.write(c, line, start, &values, now, &mut cx)?;
                if let Some(log) = &mut self.log {
                    log.push(AccessRecord { core: c, index, kind: AccessKind::Write, addr, values, cycle: now });
                }
                self.cores[c].clock += lat;
            }
            TraceEvent::Acquire(l) => {
                let lock = self.locks.entry(l).or_default();
                if lock.holder.is_some() {
                    lock.waiters.push_back(c);
                    self.cores[c].status = Status::Waiting(l);
                    return Ok(());
                }
                lock.holder = Some(c);
                cx.stats.acquires += 1;
                self.cores[c].clock += self.backend.acquire(c, now, &mut cx)?;
            }
            TraceEvent::Release(l) => {
                cx.stats.releases += 1;
                self.cores[c].clock += self.backend.release(c, now, &mut cx)?;
                let done = self.cores[c].clock;
                let lock = self.locks.get_mut(&l).filter(|k| k.holder == Some(c)).ok_or_else(|| TraceError::Invalid {
                    thread: c,
                    index,
                    why: format!("release of unheld lock {l}"),
                })?;
                lock.holder = lock.waiters.pop_front();
                if let Some(w) = lock.holder {
                    let at = self.cores[w].clock.max(done);
                    let mut wcx = Ctx { stats: &mut self.report.cores[w], flits: &mut self.report.flits };
                    wcx.stats.acquires += 1;
                    self.cores[w].clock = at + self.backend.acquire(w, at, &mut wcx)?;
                    self.cores[w].status = Status::Runnable;
                    self.advance(w);
                }
            }
        }
        self.advance(c);
        Ok(())
    }
}
