//! Explicit-state breadth-first model checker.
//!
//! A [`Model`] supplies protocol states and their transitions; the explorer
//! wraps every protocol state in a world that also holds the lock and the
//! race/last-write ghost, deduplicates worlds by their byte encoding, and
//! checks assertions on every transition. Worlds whose latest access races
//! are replaced by the initial state, which prunes racy executions.

pub mod ghost;
pub mod mesi_model;
pub mod neat_model;

use std::fmt;
use std::hash::BuildHasher;
use std::time::Instant;

use hashbrown::HashTable;
use rayon::prelude::*;
use smallvec::SmallVec;

use ghost::{GhostVerdict, RaceGhost, MAX_BYTES, MAX_CORES};

use crate::error::ConfigError;
use crate::neat::{Mutation, NeatVariant};

pub use mesi_model::MesiModel;
pub use neat_model::NeatModel;

/// A program operation issued by one core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Read { line: u8, byte: u8 },
    Write { line: u8, byte: u8, value: u8 },
    Evict { line: u8 },
    Acquire,
    Release,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Program { core: u8, op: Op },
    /// Deliver the message at this index of the model's delivery list.
    Deliver(u16),
}

/// Something the program can observe, reported by a model transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    Read { core: usize, line: usize, byte: usize, value: u8 },
    Write { core: usize, line: usize, byte: usize, value: u8 },
    AcquireGranted { core: usize },
    ReleaseDone { core: usize },
}

pub type Events = SmallVec<[Event; 4]>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LockView {
    pub free: bool,
    pub mine: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationKind {
    LastWrite,
    Swmr,
    Structural,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::LastWrite => "lastWrite",
            ViolationKind::Swmr => "swmr",
            ViolationKind::Structural => "structural",
        })
    }
}

pub trait Model: Sync {
    type State: Clone + Send + Sync;

    fn name(&self) -> String;
    fn cores(&self) -> usize;
    fn lines(&self) -> usize;
    fn bytes(&self) -> usize;
    fn initial(&self) -> Self::State;
    /// Program operations `core` may issue in `s`.
    fn program_ops(&self, s: &Self::State, core: usize, lock: LockView, out: &mut Vec<Op>);
    fn apply_op(&self, s: &Self::State, core: usize, op: Op, ev: &mut Events) -> Result<Self::State, String>;
    /// Indices of messages whose delivery is enabled, one per distinct message.
    fn deliverable(&self, s: &Self::State, out: &mut Vec<u16>);
    fn deliver(&self, s: &Self::State, idx: u16, ev: &mut Events) -> Result<Self::State, String>;
    fn describe_delivery(&self, s: &Self::State, idx: u16) -> String;
    fn in_flight(&self, s: &Self::State) -> usize;
    /// Upper bound on in-flight messages implied by the protocol structure.
    fn network_bound(&self) -> usize;
    /// State assertions. `filtered` says whether racy executions are pruned,
    /// in which case assertions that only hold for race-free runs apply too.
    fn check_state(&self, s: &Self::State, ghost: &RaceGhost, filtered: bool) -> Result<(), (ViolationKind, String)>;
    fn encode(&self, s: &Self::State, out: &mut Vec<u8>);
    /// Inverse of [`encode`](Self::encode), up to canonicalization. The
    /// frontier is kept encoded and decoded when expanded.
    fn decode(&self, r: &mut Decoder<'_>) -> Self::State;
}

/// Cursor over a world encoding. Encodings are produced by the checker
/// itself, so running off the end is a bug and panics.
pub struct Decoder<'a> {
    buf: &'a [u8],
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf }
    }

    pub fn u8(&mut self) -> u8 {
        let (b, rest) = self.buf.split_first().expect("truncated world encoding");
        self.buf = rest;
        *b
    }

    pub fn u16(&mut self) -> u16 {
        u16::from_le_bytes([self.u8(), self.u8()])
    }

    pub fn take(&mut self, n: usize) -> &'a [u8] {
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        head
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub drf_filter: bool,
    pub max_states: usize,
    /// Exploration stops once this many violations are found.
    pub max_violations: usize,
    /// Worker threads for successor generation; 0 uses every available CPU.
    pub workers: usize,
    pub max_seconds: Option<f64>,
    /// Rough cap on memory held by the visited set.
    pub max_memory_bytes: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            drf_filter: true,
            max_states: 50_000_000,
            max_violations: 1,
            workers: 0,
            max_seconds: None,
            max_memory_bytes: 2 << 30,
        }
    }
}

/// Protocols the checker knows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CheckProtocol {
    Neat(NeatVariant),
    Mesi,
}

impl CheckProtocol {
    pub const ALL: [CheckProtocol; 4] = [
        CheckProtocol::Neat(NeatVariant::Base),
        CheckProtocol::Neat(NeatVariant::PiOnly),
        CheckProtocol::Neat(NeatVariant::Full),
        CheckProtocol::Mesi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckProtocol::Neat(v) => v.name(),
            CheckProtocol::Mesi => "mesi",
        }
    }

    pub fn parse(s: &str) -> Option<CheckProtocol> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Everything one `check` run needs.
#[derive(Clone, Debug)]
pub struct CheckRequest {
    pub protocol: CheckProtocol,
    pub lines: usize,
    pub bytes: usize,
    pub mutation: Option<Mutation>,
    pub si_waits_putacks: bool,
    pub strict_empty_episode: bool,
    pub options: CheckOptions,
}

impl CheckRequest {
    pub fn new(protocol: CheckProtocol, lines: usize, bytes: usize) -> Self {
        CheckRequest {
            protocol,
            lines,
            bytes,
            mutation: None,
            si_waits_putacks: false,
            strict_empty_episode: false,
            options: CheckOptions::default(),
        }
    }
}

/// Validates the request and explores it.
pub fn check(req: &CheckRequest) -> Result<ExplorationReport, ConfigError> {
    if req.lines == 0 || req.bytes == 0 || req.lines * req.bytes > MAX_BYTES {
        return Err(ConfigError::Invariant(format!(
            "{} lines x {} bytes: need at least one of each and at most {MAX_BYTES} bytes in total",
            req.lines, req.bytes
        )));
    }
    match req.protocol {
        CheckProtocol::Neat(v) => {
            let mut m = NeatModel::new(v, req.lines, req.bytes).with_mutation(req.mutation);
            m.opts.si_waits_putacks = req.si_waits_putacks;
            m.opts.strict_empty_episode = req.strict_empty_episode;
            Ok(explore(&m, &req.options))
        }
        CheckProtocol::Mesi => {
            if req.mutation.is_some() || req.si_waits_putacks || req.strict_empty_episode {
                return Err(ConfigError::Invariant(
                    "mutations and episode flags apply to the neat protocols only".into(),
                ));
            }
            Ok(explore(&MesiModel::new(req.lines, req.bytes), &req.options))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
    pub labels: Vec<Label>,
    /// Human-readable transition labels from the initial state.
    pub trace: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ExplorationReport {
    pub model: String,
    pub drf_filter: bool,
    pub states: usize,
    pub transitions: u64,
    pub depth: usize,
    pub violations: Vec<Violation>,
    pub completed: bool,
    pub seconds: f64,
}

impl ExplorationReport {
    pub fn summary(&self) -> String {
        format!(
            "{}: {} states, {} transitions, {} violation(s), {}",
            self.model,
            self.states,
            self.transitions,
            self.violations.len(),
            if self.completed { "complete" } else { "incomplete" }
        )
    }

    /// Flat `key=value` report, one pair per line.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        s += &format!("model={}\n", self.model);
        s += &format!("drf_filter={}\n", if self.drf_filter { "on" } else { "off" });
        s += &format!("states={}\n", self.states);
        s += &format!("transitions={}\n", self.transitions);
        s += &format!("depth={}\n", self.depth);
        s += &format!("violations={}\n", self.violations.len());
        s += &format!("completed={}\n", self.completed);
        s += &format!("seconds={:.3}\n", self.seconds);
        s
    }

    pub fn render_violations(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.violations.iter().enumerate() {
            s += &format!("violation {} [{}]: {}\n", i + 1, v.kind, v.detail);
            for (n, step) in v.trace.iter().enumerate() {
                s += &format!("  {:>3}. {}\n", n + 1, step);
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct World<S> {
    pub proto: S,
    pub lock: Option<u8>,
    pub ghost: RaceGhost,
}

enum Outcome<S> {
    Next(World<S>),
    Racy,
    Bad(ViolationKind, String),
}

fn initial_world<M: Model>(m: &M) -> World<M::State> {
    World { proto: m.initial(), lock: None, ghost: RaceGhost::new() }
}

fn encode_world<M: Model>(m: &M, w: &World<M::State>, out: &mut Vec<u8>) {
    m.encode(&w.proto, out);
    out.push(w.lock.unwrap_or(u8::MAX));
    w.ghost.encode(m.lines() * m.bytes(), m.cores(), out);
}

fn decode_world<M: Model>(m: &M, enc: &[u8]) -> World<M::State> {
    let mut r = Decoder::new(enc);
    let proto = m.decode(&mut r);
    let lock = match r.u8() {
        u8::MAX => None,
        c => Some(c),
    };
    let ghost = RaceGhost::decode(m.lines() * m.bytes(), m.cores(), &mut r);
    debug_assert!(r.is_empty(), "trailing bytes after a world encoding");
    World { proto, lock, ghost }
}

fn labels_of<M: Model>(m: &M, w: &World<M::State>, out: &mut Vec<Label>) {
    let mut ops = Vec::new();
    for c in 0..m.cores() {
        ops.clear();
        let lock = LockView { free: w.lock.is_none(), mine: w.lock == Some(c as u8) };
        m.program_ops(&w.proto, c, lock, &mut ops);
        out.extend(ops.iter().map(|&op| Label::Program { core: c as u8, op }));
    }
    let mut idx = Vec::new();
    m.deliverable(&w.proto, &mut idx);
    out.extend(idx.into_iter().map(Label::Deliver));
}

fn describe<M: Model>(m: &M, w: &World<M::State>, label: Label) -> String {
    match label {
        Label::Program { core, op } => match op {
            Op::Read { line, byte } => format!("c{core} read L{line}[{byte}]"),
            Op::Write { line, byte, value } => format!("c{core} write L{line}[{byte}]={value}"),
            Op::Evict { line } => format!("c{core} evict L{line}"),
            Op::Acquire => format!("c{core} acquire"),
            Op::Release => format!("c{core} release"),
        },
        Label::Deliver(i) => format!("deliver {}", m.describe_delivery(&w.proto, i)),
    }
}

fn step<M: Model>(m: &M, w: &World<M::State>, label: Label, filter: bool) -> Outcome<M::State> {
    let mut ev = Events::new();
    let result = match label {
        Label::Program { core, op } => m.apply_op(&w.proto, core as usize, op, &mut ev),
        Label::Deliver(i) => m.deliver(&w.proto, i, &mut ev),
    };
    let proto = match result {
        Ok(p) => p,
        Err(e) => return Outcome::Bad(ViolationKind::Structural, e),
    };
    let mut next = World { proto, lock: w.lock, ghost: w.ghost.clone() };
    let bytes = m.bytes();
    for e in ev {
        match e {
            Event::Write { core, line, byte, value } => {
                let b = line * bytes + byte;
                if filter {
                    if next.ghost.write(core, b, value) == GhostVerdict::Race {
                        return Outcome::Racy;
                    }
                } else {
                    next.ghost.write_value(b, value);
                }
            }
            Event::Read { core, line, byte, value } => {
                let b = line * bytes + byte;
                if filter && next.ghost.read(core, b) == GhostVerdict::Race {
                    return Outcome::Racy;
                }
                let expected = next.ghost.expected(b);
                if value != expected {
                    return Outcome::Bad(
                        ViolationKind::LastWrite,
                        format!("c{core} read L{line}[{byte}] = {value}, last write was {expected}"),
                    );
                }
            }
            Event::AcquireGranted { core } => {
                if next.lock.is_some() {
                    return Outcome::Bad(ViolationKind::Structural, format!("c{core} granted a held lock"));
                }
                next.lock = Some(core as u8);
                if filter {
                    next.ghost.acquire(core);
                }
            }
            Event::ReleaseDone { core } => {
                if next.lock != Some(core as u8) {
                    return Outcome::Bad(ViolationKind::Structural, format!("c{core} released a lock it does not hold"));
                }
                next.lock = None;
                if filter {
                    next.ghost.release(core);
                }
            }
        }
    }
    next.ghost.canonicalize(m.cores());
    let n = m.in_flight(&next.proto);
    if n > m.network_bound() {
        return Outcome::Bad(
            ViolationKind::Structural,
            format!("{n} messages in flight exceeds the structural bound {}", m.network_bound()),
        );
    }
    if let Err((kind, detail)) = m.check_state(&next.proto, &next.ghost, filter) {
        return Outcome::Bad(kind, detail);
    }
    Outcome::Next(next)
}

/// Replays `labels` from the initial state and renders each step.
pub fn render_trace<M: Model>(m: &M, labels: &[Label], filter: bool) -> Vec<String> {
    let mut w = initial_world(m);
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        out.push(describe(m, &w, l));
        match step(m, &w, l, filter) {
            Outcome::Next(n) => w = n,
            Outcome::Racy => w = initial_world(m),
            Outcome::Bad(..) => break,
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplayEnd {
    /// The final label produced this violation.
    Violation(ViolationKind, String),
    /// All labels applied; the final state has no enabled transition.
    Deadlock,
    /// All labels applied and the final state is healthy.
    Healthy,
    /// A label was not enabled where the trace says it fired.
    Diverged(usize),
}

/// Re-executes a trace, checking that every label is enabled where used.
pub fn replay<M: Model>(m: &M, labels: &[Label], filter: bool) -> ReplayEnd {
    let mut w = initial_world(m);
    let mut enabled = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        enabled.clear();
        labels_of(m, &w, &mut enabled);
        if !enabled.contains(&l) {
            return ReplayEnd::Diverged(i);
        }
        match step(m, &w, l, filter) {
            Outcome::Next(n) => w = n,
            Outcome::Racy => w = initial_world(m),
            Outcome::Bad(kind, detail) => {
                return if i + 1 == labels.len() { ReplayEnd::Violation(kind, detail) } else { ReplayEnd::Diverged(i) };
            }
        }
    }
    enabled.clear();
    labels_of(m, &w, &mut enabled);
    if enabled.is_empty() {
        ReplayEnd::Deadlock
    } else {
        ReplayEnd::Healthy
    }
}

/// Successors of the initial state, for inspection and tests.
pub fn initial_labels<M: Model>(m: &M) -> Vec<Label> {
    let mut out = Vec::new();
    labels_of(m, &initial_world(m), &mut out);
    out
}

struct Visited {
    arena: Vec<u8>,
    ends: Vec<usize>,
    parents: Vec<(u32, Label)>,
    table: HashTable<u32>,
    hasher: hashbrown::DefaultHashBuilder,
}

impl Visited {
    fn bytes_of(&self, i: u32) -> &[u8] {
        let i = i as usize;
        let start = if i == 0 { 0 } else { self.ends[i - 1] };
        &self.arena[start..self.ends[i]]
    }

    /// Inserts an encoding; returns its index if it was new.
    fn insert(&mut self, enc: &[u8], hash: u64, parent: u32, label: Label) -> Option<u32> {
        let Visited { arena, ends, table, hasher, .. } = self;
        let lookup = |&i: &u32| {
            let i = i as usize;
            let start = if i == 0 { 0 } else { ends[i - 1] };
            &arena[start..ends[i]] == enc
        };
        if table.find(hash, lookup).is_some() {
            return None;
        }
        let idx = ends.len() as u32;
        arena.extend_from_slice(enc);
        ends.push(arena.len());
        self.parents.push((parent, label));
        let (arena, ends) = (&self.arena, &self.ends);
        self.table.insert_unique(hash, idx, |&i| {
            let i = i as usize;
            let start = if i == 0 { 0 } else { ends[i - 1] };
            hasher.hash_one(&arena[start..ends[i]])
        });
        Some(idx)
    }

    fn path(&self, mut i: u32) -> Vec<Label> {
        let mut labels = Vec::new();
        while i != 0 {
            let (p, l) = self.parents[i as usize];
            labels.push(l);
            i = p;
        }
        labels.reverse();
        labels
    }

    fn memory(&self) -> usize {
        self.arena.len() + self.ends.len() * 8 + self.parents.len() * 12 + self.table.capacity() * 5
    }
}

struct Expanded<S> {
    label: Label,
    outcome: Outcome<S>,
    enc: Vec<u8>,
    hash: u64,
}

const CHUNK: usize = 2048;

/// Breadth-first exploration of every reachable world.
pub fn explore<M: Model>(m: &M, opts: &CheckOptions) -> ExplorationReport {
    assert!(m.cores() <= MAX_CORES && m.lines() * m.bytes() <= MAX_BYTES, "configuration too large for the ghost");
    let started = Instant::now();
    let filter = opts.drf_filter;
    let hasher = hashbrown::DefaultHashBuilder::default();
    let mut visited = Visited {
        arena: Vec::new(),
        ends: Vec::new(),
        parents: Vec::new(),
        table: HashTable::new(),
        hasher: hasher.clone(),
    };
    let mut enc = Vec::new();
    encode_world(m, &initial_world(m), &mut enc);
    visited.insert(&enc, hasher.hash_one(&enc[..]), 0, Label::Deliver(0));

    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.workers).build().expect("thread pool");
    let mut report = ExplorationReport {
        model: m.name(),
        drf_filter: filter,
        states: 1,
        transitions: 0,
        depth: 0,
        violations: Vec::new(),
        completed: false,
        seconds: 0.0,
    };
    let mut stopped = false;

    let expand = |enc: &[u8]| -> Vec<Expanded<M::State>> {
        let w = decode_world(m, enc);
        if cfg!(debug_assertions) {
            let mut again = Vec::new();
            encode_world(m, &w, &mut again);
            assert_eq!(again, enc, "world encoding does not round-trip");
        }
        let mut labels = Vec::new();
        labels_of(m, &w, &mut labels);
        labels
            .into_iter()
            .map(|label| {
                let outcome = step(m, &w, label, filter);
                let mut enc = Vec::new();
                let mut hash = 0;
                if let Outcome::Next(n) = &outcome {
                    encode_world(m, n, &mut enc);
                    hash = hasher.hash_one(&enc[..]);
                }
                Expanded { label, outcome, enc, hash }
            })
            .collect()
    };

    // Breadth-first order numbers states level by level, so the frontier is
    // always a contiguous range of the visited set.
    let mut level = 0..1u32;
    'levels: while !level.is_empty() {
        let next_start = visited.ends.len() as u32;
        for chunk_start in level.clone().step_by(CHUNK) {
            let chunk: Vec<u32> = (chunk_start..level.end.min(chunk_start + CHUNK as u32)).collect();
            let results: Vec<Vec<Expanded<M::State>>> = if opts.workers == 1 {
                chunk.iter().map(|&i| expand(visited.bytes_of(i))).collect()
            } else {
                let v = &visited;
                pool.install(|| chunk.par_iter().map(|&i| expand(v.bytes_of(i))).collect())
            };
            for (&parent, succs) in chunk.iter().zip(results) {
                if succs.is_empty() {
                    let labels = visited.path(parent);
                    let trace = render_trace(m, &labels, filter);
                    report.violations.push(Violation {
                        kind: ViolationKind::Structural,
                        detail: "deadlock: no transition is enabled".into(),
                        labels,
                        trace,
                    });
                }
                for s in succs {
                    report.transitions += 1;
                    match s.outcome {
                        Outcome::Racy => {}
                        Outcome::Bad(kind, detail) => {
                            let mut labels = visited.path(parent);
                            labels.push(s.label);
                            let trace = render_trace(m, &labels, filter);
                            report.violations.push(Violation { kind, detail, labels, trace });
                        }
                        Outcome::Next(_) => {
                            visited.insert(&s.enc, s.hash, parent, s.label);
                        }
                    }
                    if report.violations.len() >= opts.max_violations.max(1) {
                        stopped = true;
                        break 'levels;
                    }
                }
                if visited.ends.len() >= opts.max_states
                    || visited.memory() >= opts.max_memory_bytes
                    || opts.max_seconds.is_some_and(|t| started.elapsed().as_secs_f64() >= t)
                {
                    stopped = true;
                    break 'levels;
                }
            }
        }
        level = next_start..visited.ends.len() as u32;
        if !level.is_empty() {
            report.depth += 1;
        }
    }
    report.states = visited.ends.len();
    report.completed = !stopped;
    report.seconds = started.elapsed().as_secs_f64();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visited_set_deduplicates() {
        let hasher = hashbrown::DefaultHashBuilder::default();
        let mut v = Visited {
            arena: Vec::new(),
            ends: Vec::new(),
            parents: Vec::new(),
            table: HashTable::new(),
            hasher: hasher.clone(),
        };
        let a = [1u8, 2, 3];
        let b = [1u8, 2];
        assert_eq!(v.insert(&a, hasher.hash_one(&a[..]), 0, Label::Deliver(0)), Some(0));
        assert_eq!(v.insert(&b, hasher.hash_one(&b[..]), 0, Label::Deliver(1)), Some(1));
        assert_eq!(v.insert(&a, hasher.hash_one(&a[..]), 1, Label::Deliver(2)), None);
        // Colliding hash, different bytes: still distinct.
        assert_eq!(v.insert(&[9], hasher.hash_one(&a[..]), 1, Label::Deliver(3)), Some(2));
        assert_eq!(v.bytes_of(1), &b);
        assert_eq!(v.path(2), vec![Label::Deliver(1), Label::Deliver(3)]);
    }

    #[test]
    fn initial_successors_of_smallest_config() {
        // Per core: read, write 0, write 1, acquire. Nothing to evict or deliver.
        let m = NeatModel::new(NeatVariant::Base, 1, 1);
        let labels = initial_labels(&m);
        assert_eq!(labels.len(), 3 * 2 + 2);
    }
}
