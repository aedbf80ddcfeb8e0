//! The Neat protocol as pure transition functions.
//!
//! A private cache controller ([`NeatCore`]) and the LLC controller
//! ([`NeatLlc`]) each consume one input at a time and report what happened as
//! a list of [`Action`]s. They never talk to each other directly: every
//! message goes core to LLC or LLC to core, and the engine that owns them
//! decides when a message is delivered. The model checker delivers messages
//! in every possible order; the timing simulator delivers them immediately.
//!
//! Line storage is abstracted behind [`LineStore`] and [`LlcStore`] so the
//! same transitions drive a two-line checker cache and a set-associative
//! simulator cache.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use smallvec::SmallVec;

use crate::error::ProtocolError;
use crate::line::{L1Line, LineState};
use crate::message::{Message, WriteBackBody};
use crate::signature::{SignatureMode, WriteSignature};
use crate::types::{ByteIdx, CoreId, LineAddr, LineData, WriteMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NeatVariant {
    /// Self-invalidate every line at acquires.
    Base,
    /// Partially invalidate instead, keeping dirty bytes readable.
    PiOnly,
    /// PI state plus per-core write signatures.
    Full,
}

impl NeatVariant {
    pub fn name(self) -> &'static str {
        match self {
            NeatVariant::Base => "neat-base",
            NeatVariant::PiOnly => "neat-pi",
            NeatVariant::Full => "neat-full",
        }
    }
}

/// Deliberate protocol bugs used to show that the checker catches them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mutation {
    /// Release writes nothing back.
    SkipCommit,
    /// A dirty eviction drops its data instead of writing it back.
    SilentDirtyEvict,
    /// Acquire leaves every line valid.
    NoSelfInvalidate,
    /// The LLC never updates the other cores' write signatures.
    SkipWsInsert,
    /// A commit returns to normal execution before it is acknowledged.
    EarlyCmExit,
}

impl Mutation {
    pub const ALL: [Mutation; 5] = [
        Mutation::SkipCommit,
        Mutation::SilentDirtyEvict,
        Mutation::NoSelfInvalidate,
        Mutation::SkipWsInsert,
        Mutation::EarlyCmExit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mutation::SkipCommit => "skip-commit",
            Mutation::SilentDirtyEvict => "silent-dirty-evict",
            Mutation::NoSelfInvalidate => "no-self-invalidate",
            Mutation::SkipWsInsert => "skip-ws-insert",
            Mutation::EarlyCmExit => "early-cm-exit",
        }
    }

    pub fn parse(name: &str) -> Option<Mutation> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    /// The variant on which the mutation has an observable effect.
    pub fn natural_variant(self) -> NeatVariant {
        match self {
            Mutation::SkipWsInsert => NeatVariant::Full,
            _ => NeatVariant::Base,
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeatOptions {
    pub variant: NeatVariant,
    /// Leave SI only after eviction PutAcks as well as the PutAllAck.
    pub si_waits_putacks: bool,
    /// Send a `cnt = 0` data-less message even when an episode wrote nothing.
    pub strict_empty_episode: bool,
    pub signature_mode: SignatureMode,
    pub signature_bits: usize,
    pub signature_hashes: usize,
    pub mutation: Option<Mutation>,
}

impl NeatOptions {
    pub fn new(variant: NeatVariant) -> Self {
        NeatOptions {
            variant,
            si_waits_putacks: false,
            strict_empty_episode: false,
            signature_mode: SignatureMode::Bloom,
            signature_bits: 1008,
            signature_hashes: 4,
            mutation: None,
        }
    }

    fn mutated(&self, m: Mutation) -> bool {
        self.mutation == Some(m)
    }

    fn new_signature(&self) -> WriteSignature {
        WriteSignature::new(self.signature_mode, self.signature_bits, self.signature_hashes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoreMode {
    /// Normal execution.
    NE,
    /// Self-invalidation episode (acquire).
    SI,
    /// Commit episode (release).
    CM,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RequestKind {
    Fetch,
    EvictWb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestEntry {
    pub kind: RequestKind,
    pub addr: LineAddr,
}

/// A program access confined to one line.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Access {
    Read { addr: LineAddr, start: ByteIdx, len: usize },
    Write { addr: LineAddr, start: ByteIdx, values: LineData },
}

impl Access {
    pub fn addr(&self) -> LineAddr {
        match self {
            Access::Read { addr, .. } | Access::Write { addr, .. } => *addr,
        }
    }

    pub fn mask(&self) -> WriteMask {
        match self {
            Access::Read { start, len, .. } => WriteMask::range(*start, *len),
            Access::Write { start, values, .. } => WriteMask::range(*start, values.len()),
        }
    }

    fn end(&self) -> usize {
        match self {
            Access::Read { start, len, .. } => start + len,
            Access::Write { start, values, .. } => start + values.len(),
        }
    }

    fn perform(self, line: &mut L1Line) -> Performed {
        match self {
            Access::Read { addr, start, len } => Performed::Read {
                addr,
                start,
                values: line.data[start..start + len].iter().copied().collect(),
            },
            Access::Write { addr, start, values } => {
                line.write_bytes(start, &values);
                Performed::Write { addr, start, values }
            }
        }
    }
}

/// An access that took effect, with the values it read or wrote.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Performed {
    Read { addr: LineAddr, start: ByteIdx, values: LineData },
    Write { addr: LineAddr, start: ByteIdx, values: LineData },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Episode {
    Release,
    Acquire,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Send(Message),
    /// The core waits for an LLC response before it can continue.
    Stall,
    Invalidated(LineAddr),
    PartiallyInvalidated(LineAddr),
    Performed(Performed),
    /// The episode finished and the core is back in normal execution.
    Completed(Episode),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessStatus {
    Hit,
    Miss,
    /// An eviction write-back of the same line is still unacknowledged.
    Blocked,
}

/// Valid private lines of one core. Invalid lines are simply absent.
pub trait LineStore {
    fn get(&self, addr: LineAddr) -> Option<&L1Line>;
    fn get_mut(&mut self, addr: LineAddr) -> Option<&mut L1Line>;
    /// Inserts or replaces the line for `line.addr`. The caller has made room.
    fn insert(&mut self, line: L1Line);
    fn remove(&mut self, addr: LineAddr) -> Option<L1Line>;
    /// Addresses of all valid lines in ascending order.
    fn valid_addrs(&self) -> Vec<LineAddr>;
}

/// A handful of lines kept sorted by address; used by the model checker.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SmallLineStore(pub SmallVec<[L1Line; 2]>);

impl LineStore for SmallLineStore {
    fn get(&self, addr: LineAddr) -> Option<&L1Line> {
        self.0.iter().find(|l| l.addr == addr)
    }
    fn get_mut(&mut self, addr: LineAddr) -> Option<&mut L1Line> {
        self.0.iter_mut().find(|l| l.addr == addr)
    }
    fn insert(&mut self, line: L1Line) {
        match self.0.binary_search_by_key(&line.addr, |l| l.addr) {
            Ok(i) => self.0[i] = line,
            Err(i) => self.0.insert(i, line),
        }
    }
    fn remove(&mut self, addr: LineAddr) -> Option<L1Line> {
        let i = self.0.iter().position(|l| l.addr == addr)?;
        Some(self.0.remove(i))
    }
    fn valid_addrs(&self) -> Vec<LineAddr> {
        self.0.iter().map(|l| l.addr).collect()
    }
}

impl LineStore for BTreeMap<LineAddr, L1Line> {
    fn get(&self, addr: LineAddr) -> Option<&L1Line> {
        BTreeMap::get(self, &addr)
    }
    fn get_mut(&mut self, addr: LineAddr) -> Option<&mut L1Line> {
        BTreeMap::get_mut(self, &addr)
    }
    fn insert(&mut self, line: L1Line) {
        BTreeMap::insert(self, line.addr, line);
    }
    fn remove(&mut self, addr: LineAddr) -> Option<L1Line> {
        BTreeMap::remove(self, &addr)
    }
    fn valid_addrs(&self) -> Vec<LineAddr> {
        self.keys().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NeatCore<S> {
    pub id: CoreId,
    pub line_size: usize,
    pub mode: CoreMode,
    pub lines: S,
    /// Outstanding fetches and eviction write-backs, kept sorted.
    pub requests: SmallVec<[RequestEntry; 2]>,
    /// The access waiting for its fetch to return.
    pub pending: Option<Access>,
    pub episode_wb_count: u32,
    pub awaiting_put_all_ack: bool,
    pub awaiting_wr_sig: bool,
}

impl<S: LineStore> NeatCore<S> {
    pub fn new(id: CoreId, line_size: usize, lines: S) -> Self {
        NeatCore {
            id,
            line_size,
            mode: CoreMode::NE,
            lines,
            requests: SmallVec::new(),
            pending: None,
            episode_wb_count: 0,
            awaiting_put_all_ack: false,
            awaiting_wr_sig: false,
        }
    }

    /// Normal execution with nothing outstanding: the core may issue.
    pub fn ready(&self) -> bool {
        self.mode == CoreMode::NE && self.pending.is_none()
    }

    pub fn has_outstanding_evictions(&self) -> bool {
        self.requests.iter().any(|r| r.kind == RequestKind::EvictWb)
    }

    fn add_request(&mut self, kind: RequestKind, addr: LineAddr) {
        let entry = RequestEntry { kind, addr };
        let at = self.requests.partition_point(|e| *e < entry);
        self.requests.insert(at, entry);
    }

    fn take_request(&mut self, kind: RequestKind, addr: LineAddr, what: &'static str) -> Result<(), ProtocolError> {
        let i = self
            .requests
            .iter()
            .position(|e| e.kind == kind && e.addr == addr)
            .ok_or(ProtocolError::Unmatched { core: self.id, what, addr })?;
        self.requests.remove(i);
        Ok(())
    }

    fn require_ready(&self) -> Result<(), ProtocolError> {
        if self.mode != CoreMode::NE {
            return Err(ProtocolError::NotNormalMode { core: self.id });
        }
        if self.pending.is_some() {
            return Err(ProtocolError::AccessOutstanding { core: self.id });
        }
        Ok(())
    }

    /// A read or write in normal execution.
    pub fn access(&mut self, acc: Access, out: &mut Vec<Action>) -> Result<AccessStatus, ProtocolError> {
        self.require_ready()?;
        let addr = acc.addr();
        if acc.end() > self.line_size {
            return Err(ProtocolError::LineCrossing { addr });
        }
        if self.requests.iter().any(|e| e.addr == addr) {
            return Ok(AccessStatus::Blocked);
        }
        let hit = match self.lines.get(addr) {
            Some(line) => match line.state {
                LineState::V => true,
                LineState::PI => match &acc {
                    Access::Write { .. } => true,
                    Access::Read { .. } => line.write_bits.covers(acc.mask()),
                },
                LineState::I => false,
            },
            None => false,
        };
        if hit {
            let line = self.lines.get_mut(addr).expect("hit on a present line");
            out.push(Action::Performed(acc.perform(line)));
            return Ok(AccessStatus::Hit);
        }
        out.push(Action::Send(Message::GetLine { addr, requester: self.id }));
        out.push(Action::Stall);
        self.add_request(RequestKind::Fetch, addr);
        self.pending = Some(acc);
        Ok(AccessStatus::Miss)
    }

    /// Replacement of a valid line. Clean lines leave silently.
    pub fn evict(&mut self, addr: LineAddr, opts: &NeatOptions, out: &mut Vec<Action>) -> Result<(), ProtocolError> {
        if self.mode != CoreMode::NE {
            return Err(ProtocolError::NotNormalMode { core: self.id });
        }
        let line = match self.lines.remove(addr) {
            Some(l) if l.is_valid() => l,
            _ => return Err(ProtocolError::EvictInvalid { core: self.id, addr }),
        };
        if line.is_dirty() && !opts.mutated(Mutation::SilentDirtyEvict) {
            out.push(Action::Send(Message::WriteBack {
                sender: self.id,
                cnt: 1,
                body: Some(WriteBackBody::from_line(&line)),
            }));
            self.add_request(RequestKind::EvictWb, addr);
        }
        Ok(())
    }

    /// Starts a commit episode.
    pub fn release(&mut self, opts: &NeatOptions, out: &mut Vec<Action>) -> Result<(), ProtocolError> {
        self.require_ready()?;
        self.mode = CoreMode::CM;
        if !opts.mutated(Mutation::SkipCommit) {
            for addr in self.lines.valid_addrs() {
                let line = self.lines.get_mut(addr).expect("listed line");
                if line.is_dirty() {
                    out.push(Action::Send(Message::WriteBack {
                        sender: self.id,
                        cnt: 0,
                        body: Some(WriteBackBody::from_line(line)),
                    }));
                    line.write_bits.clear();
                    self.episode_wb_count += 1;
                }
            }
        }
        self.close_episode(opts, out);
        if opts.mutated(Mutation::EarlyCmExit) && self.mode == CoreMode::CM {
            self.mode = CoreMode::NE;
            self.episode_wb_count = 0;
            out.push(Action::Completed(Episode::Release));
        }
        Ok(())
    }

    /// Starts a self-invalidation episode.
    pub fn acquire(&mut self, opts: &NeatOptions, out: &mut Vec<Action>) -> Result<(), ProtocolError> {
        self.require_ready()?;
        self.mode = CoreMode::SI;
        match opts.variant {
            NeatVariant::Full => {
                self.awaiting_wr_sig = true;
                out.push(Action::Send(Message::GetWrSig { requester: self.id }));
                return Ok(());
            }
            NeatVariant::Base if !opts.mutated(Mutation::NoSelfInvalidate) => {
                for addr in self.lines.valid_addrs() {
                    let line = self.lines.remove(addr).expect("listed line");
                    if line.is_dirty() {
                        out.push(Action::Send(Message::WriteBack {
                            sender: self.id,
                            cnt: 0,
                            body: Some(WriteBackBody::from_line(&line)),
                        }));
                        self.episode_wb_count += 1;
                    }
                    out.push(Action::Invalidated(addr));
                }
            }
            NeatVariant::PiOnly if !opts.mutated(Mutation::NoSelfInvalidate) => {
                self.partially_invalidate(|_| true, out);
            }
            _ => {}
        }
        self.close_episode(opts, out);
        Ok(())
    }

    fn partially_invalidate(&mut self, mut hit: impl FnMut(LineAddr) -> bool, out: &mut Vec<Action>) {
        for addr in self.lines.valid_addrs() {
            let line = self.lines.get_mut(addr).expect("listed line");
            if line.state == LineState::V && hit(addr) {
                line.state = LineState::PI;
                out.push(Action::PartiallyInvalidated(addr));
            }
        }
    }

    fn close_episode(&mut self, opts: &NeatOptions, out: &mut Vec<Action>) {
        if self.episode_wb_count > 0 || opts.strict_empty_episode {
            out.push(Action::Send(Message::WriteBack {
                sender: self.id,
                cnt: self.episode_wb_count,
                body: None,
            }));
            self.awaiting_put_all_ack = true;
        }
        self.try_complete(opts, out);
    }

    fn try_complete(&mut self, opts: &NeatOptions, out: &mut Vec<Action>) {
        let evictions = self.has_outstanding_evictions();
        let episode = match self.mode {
            CoreMode::CM if !self.awaiting_put_all_ack && !evictions => Episode::Release,
            CoreMode::SI
                if !self.awaiting_put_all_ack
                    && !self.awaiting_wr_sig
                    && !(opts.si_waits_putacks && evictions) =>
            {
                Episode::Acquire
            }
            _ => return,
        };
        self.mode = CoreMode::NE;
        self.episode_wb_count = 0;
        out.push(Action::Completed(episode));
    }

    /// Handles a response from the LLC.
    pub fn on_message(&mut self, msg: &Message, opts: &NeatOptions, out: &mut Vec<Action>) -> Result<(), ProtocolError> {
        match msg {
            Message::Data { addr, bytes, .. } => {
                self.take_request(RequestKind::Fetch, *addr, "data")?;
                let acc = match self.pending.take() {
                    Some(a) if a.addr() == *addr => a,
                    _ => return Err(ProtocolError::Unmatched { core: self.id, what: "data", addr: *addr }),
                };
                match self.lines.get_mut(*addr) {
                    Some(line) if line.state == LineState::PI => line.merge_fetched(bytes)?,
                    _ => self.lines.insert(L1Line::new_valid(*addr, bytes.clone())),
                }
                let line = self.lines.get_mut(*addr).expect("line just filled");
                out.push(Action::Performed(acc.perform(line)));
            }
            Message::PutAck { addr, .. } => {
                self.take_request(RequestKind::EvictWb, *addr, "put-ack")?;
                self.try_complete(opts, out);
            }
            Message::PutAllAck { .. } => {
                if !self.awaiting_put_all_ack {
                    return Err(ProtocolError::Unexpected { core: self.id, what: "put-all-ack" });
                }
                self.awaiting_put_all_ack = false;
                self.try_complete(opts, out);
            }
            Message::WrSigResp { signature, .. } => {
                if !self.awaiting_wr_sig || self.mode != CoreMode::SI {
                    return Err(ProtocolError::Unexpected { core: self.id, what: "write signature" });
                }
                self.awaiting_wr_sig = false;
                if !opts.mutated(Mutation::NoSelfInvalidate) {
                    self.partially_invalidate(|a| signature.may_contain(a), out);
                }
                self.close_episode(opts, out);
            }
            _ => return Err(ProtocolError::Unexpected { core: self.id, what: "request message at a core" }),
        }
        Ok(())
    }

    /// Per-core structural invariants.
    pub fn check(&self, opts: &NeatOptions) -> Result<(), ProtocolError> {
        for addr in self.lines.valid_addrs() {
            self.lines.get(addr).expect("listed line").check()?;
        }
        if self.mode == CoreMode::NE && self.episode_wb_count != 0 {
            return Err(ProtocolError::Unexpected { core: self.id, what: "episode count outside an episode" });
        }
        if self.awaiting_wr_sig && (self.mode != CoreMode::SI || opts.variant != NeatVariant::Full) {
            return Err(ProtocolError::Unexpected { core: self.id, what: "signature wait outside a full SI" });
        }
        Ok(())
    }
}

/// Backing line data at the LLC; absent lines read as zero.
pub trait LlcStore {
    fn line(&self, addr: LineAddr) -> Option<&LineData>;
    fn line_mut(&mut self, addr: LineAddr, line_size: usize) -> &mut LineData;
}

/// Sorted small vector of lines; used by the model checker.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SmallLlcStore(pub SmallVec<[(LineAddr, LineData); 2]>);

impl LlcStore for SmallLlcStore {
    fn line(&self, addr: LineAddr) -> Option<&LineData> {
        self.0.iter().find(|(a, _)| *a == addr).map(|(_, d)| d)
    }
    fn line_mut(&mut self, addr: LineAddr, line_size: usize) -> &mut LineData {
        let i = match self.0.binary_search_by_key(&addr, |(a, _)| *a) {
            Ok(i) => i,
            Err(i) => {
                self.0.insert(i, (addr, std::iter::repeat_n(0, line_size).collect()));
                i
            }
        };
        &mut self.0[i].1
    }
}

impl LlcStore for HashMap<LineAddr, LineData> {
    fn line(&self, addr: LineAddr) -> Option<&LineData> {
        self.get(&addr)
    }
    fn line_mut(&mut self, addr: LineAddr, line_size: usize) -> &mut LineData {
        self.entry(addr).or_insert_with(|| std::iter::repeat_n(0, line_size).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NeatLlc<D> {
    pub line_size: usize,
    pub lines: D,
    /// Per core: `cnt = 0` write-backs received in the current episode.
    pub wb_received: SmallVec<[u32; 2]>,
    /// Per core: count announced by a data-less message that arrived early, 0 if none.
    pub pending_cnt: SmallVec<[u32; 2]>,
    /// Per core write signatures; empty unless the variant is `Full`.
    pub sigs: SmallVec<[WriteSignature; 2]>,
}

impl<D: LlcStore> NeatLlc<D> {
    pub fn new(cores: usize, line_size: usize, lines: D, opts: &NeatOptions) -> Self {
        let sigs = if opts.variant == NeatVariant::Full {
            (0..cores).map(|_| opts.new_signature()).collect()
        } else {
            SmallVec::new()
        };
        NeatLlc {
            line_size,
            lines,
            wb_received: smallvec::smallvec![0; cores],
            pending_cnt: smallvec::smallvec![0; cores],
            sigs,
        }
    }

    pub fn read_line(&self, addr: LineAddr) -> LineData {
        match self.lines.line(addr) {
            Some(d) => d.clone(),
            None => std::iter::repeat_n(0, self.line_size).collect(),
        }
    }

    fn finish_episode(&mut self, core: CoreId, out: &mut Vec<Message>) {
        self.wb_received[core.0] = 0;
        self.pending_cnt[core.0] = 0;
        out.push(Message::PutAllAck { dest: core });
    }

    /// Handles a request from a core, pushing any responses to `out`.
    pub fn on_message(&mut self, msg: &Message, opts: &NeatOptions, out: &mut Vec<Message>) -> Result<(), ProtocolError> {
        match msg {
            Message::GetLine { addr, requester } => {
                out.push(Message::Data { addr: *addr, bytes: self.read_line(*addr), requester: *requester });
            }
            Message::WriteBack { sender, cnt, body: Some(body) } => {
                if *cnt > 1 {
                    return Err(ProtocolError::MalformedWriteBack { core: *sender, why: "counted message carries data" });
                }
                let line = self.lines.line_mut(body.addr, self.line_size);
                for (i, v) in body.dirty_bytes() {
                    line[i] = v;
                }
                if !opts.mutated(Mutation::SkipWsInsert) {
                    for (c, sig) in self.sigs.iter_mut().enumerate() {
                        if c != sender.0 {
                            sig.insert(body.addr);
                        }
                    }
                }
                if *cnt == 1 {
                    out.push(Message::PutAck { addr: body.addr, dest: *sender });
                } else {
                    let c = sender.0;
                    self.wb_received[c] += 1;
                    let announced = self.pending_cnt[c];
                    if announced != 0 {
                        if self.wb_received[c] == announced {
                            self.finish_episode(*sender, out);
                        } else if self.wb_received[c] > announced {
                            return Err(ProtocolError::CountMismatch {
                                core: *sender,
                                received: self.wb_received[c],
                                announced,
                            });
                        }
                    }
                }
            }
            Message::WriteBack { sender, cnt, body: None } => {
                let c = sender.0;
                if self.pending_cnt[c] != 0 {
                    return Err(ProtocolError::MalformedWriteBack { core: *sender, why: "second count before completion" });
                }
                let received = self.wb_received[c];
                if received == *cnt {
                    self.finish_episode(*sender, out);
                } else if received < *cnt {
                    self.pending_cnt[c] = *cnt;
                } else {
                    return Err(ProtocolError::CountMismatch { core: *sender, received, announced: *cnt });
                }
            }
            Message::GetWrSig { requester } => {
                let sig = self
                    .sigs
                    .get_mut(requester.0)
                    .ok_or(ProtocolError::Unexpected { core: *requester, what: "signature request without signatures" })?;
                out.push(Message::WrSigResp { signature: sig.clone(), dest: *requester });
                sig.clear();
            }
            other => {
                return Err(ProtocolError::Unexpected { core: other.core(), what: "response message at the LLC" });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smallvec::smallvec;

    const LS: usize = 8;

    fn opts(v: NeatVariant) -> NeatOptions {
        NeatOptions::new(v)
    }

    fn core() -> NeatCore<BTreeMap<LineAddr, L1Line>> {
        NeatCore::new(CoreId(0), LS, BTreeMap::new())
    }

    fn llc(o: &NeatOptions) -> NeatLlc<HashMap<LineAddr, LineData>> {
        NeatLlc::new(2, LS, HashMap::new(), o)
    }

    fn write(addr: u64, start: usize, v: u8) -> Access {
        Access::Write { addr: LineAddr(addr), start, values: smallvec![v] }
    }

    fn read(addr: u64, start: usize, len: usize) -> Access {
        Access::Read { addr: LineAddr(addr), start, len }
    }

    fn sends(actions: &[Action]) -> Vec<Message> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Send(m) => Some(m.clone()),
                _ => None,
            })
            .collect()
    }

    /// Delivers every message between one core and the LLC until quiet.
    fn settle(c: &mut NeatCore<BTreeMap<LineAddr, L1Line>>, l: &mut NeatLlc<HashMap<LineAddr, LineData>>, o: &NeatOptions, first: Vec<Action>) -> Vec<Action> {
        let mut all = first.clone();
        let mut queue = sends(&first);
        while let Some(m) = queue.pop() {
            let mut replies = Vec::new();
            l.on_message(&m, o, &mut replies).unwrap();
            for r in replies {
                let mut acts = Vec::new();
                c.on_message(&r, o, &mut acts).unwrap();
                queue.extend(sends(&acts));
                all.extend(acts);
            }
        }
        all
    }

    fn valid_line(c: &mut NeatCore<BTreeMap<LineAddr, L1Line>>, addr: u64) {
        LineStore::insert(&mut c.lines, L1Line::new_valid(LineAddr(addr), smallvec![0; LS]));
    }

    #[test]
    fn write_hit_sets_write_bit() {
        let mut c = core();
        valid_line(&mut c, 1);
        let mut out = Vec::new();
        assert_eq!(c.access(write(1, 5, 9), &mut out).unwrap(), AccessStatus::Hit);
        assert!(sends(&out).is_empty());
        let line = c.lines.get(&LineAddr(1)).unwrap();
        assert!(line.write_bits.is_set(5));
        assert_eq!(line.write_bits.count(), 1);
    }

    #[test]
    fn pi_read_of_dirty_byte_hits() {
        let mut c = core();
        valid_line(&mut c, 1);
        let mut out = Vec::new();
        c.access(write(1, 2, 7), &mut out).unwrap();
        c.lines.get_mut(&LineAddr(1)).unwrap().state = LineState::PI;
        out.clear();
        assert_eq!(c.access(read(1, 2, 1), &mut out).unwrap(), AccessStatus::Hit);
        assert!(sends(&out).is_empty());
    }

    #[test]
    fn pi_read_of_clean_byte_merges() {
        let o = opts(NeatVariant::PiOnly);
        let mut l = llc(&o);
        l.lines.insert(LineAddr(1), smallvec![3; LS]);
        let mut c = core();
        valid_line(&mut c, 1);
        let mut out = Vec::new();
        c.access(write(1, 2, 7), &mut out).unwrap();
        c.lines.get_mut(&LineAddr(1)).unwrap().state = LineState::PI;
        out.clear();
        assert_eq!(c.access(read(1, 2, 2), &mut out).unwrap(), AccessStatus::Miss);
        assert!(matches!(sends(&out)[..], [Message::GetLine { .. }]));
        let all = settle(&mut c, &mut l, &o, out);
        let line = c.lines.get(&LineAddr(1)).unwrap();
        assert_eq!(line.state, LineState::V);
        assert_eq!(line.data[2], 7);
        assert_eq!(line.data[3], 3);
        assert!(all.contains(&Action::Performed(Performed::Read {
            addr: LineAddr(1),
            start: 2,
            values: smallvec![7, 3]
        })));
    }

    #[test]
    fn clean_eviction_is_silent() {
        let o = opts(NeatVariant::Base);
        let mut c = core();
        valid_line(&mut c, 1);
        let mut out = Vec::new();
        c.evict(LineAddr(1), &o, &mut out).unwrap();
        assert!(out.is_empty());
        assert!(c.lines.is_empty());
    }

    #[test]
    fn dirty_eviction_writes_back_with_count_one() {
        for v in [NeatVariant::Base, NeatVariant::PiOnly] {
            let o = opts(v);
            let mut c = core();
            valid_line(&mut c, 1);
            let mut out = Vec::new();
            c.access(write(1, 0, 1), &mut out).unwrap();
            c.access(write(1, 1, 1), &mut out).unwrap();
            if v == NeatVariant::PiOnly {
                c.lines.get_mut(&LineAddr(1)).unwrap().state = LineState::PI;
            }
            out.clear();
            c.evict(LineAddr(1), &o, &mut out).unwrap();
            match &sends(&out)[..] {
                [Message::WriteBack { cnt: 1, body: Some(b), .. }] => assert_eq!(b.mask.count(), 2),
                other => panic!("unexpected {other:?}"),
            }
            assert_eq!(c.requests.len(), 1);
            assert!(c.lines.get(&LineAddr(1)).is_none());
        }
    }

    #[test]
    fn evicting_invalid_line_is_rejected() {
        let mut c = core();
        let err = c.evict(LineAddr(4), &opts(NeatVariant::Base), &mut Vec::new());
        assert!(matches!(err, Err(ProtocolError::EvictInvalid { .. })));
    }

    #[test]
    fn release_commits_dirty_lines_with_one_count_message() {
        let o = opts(NeatVariant::Base);
        let mut c = core();
        let mut out = Vec::new();
        for a in 0..4 {
            valid_line(&mut c, a);
        }
        for a in 0..3 {
            c.access(write(a, 0, 1), &mut out).unwrap();
        }
        out.clear();
        c.release(&o, &mut out).unwrap();
        let msgs = sends(&out);
        let zero = msgs.iter().filter(|m| matches!(m, Message::WriteBack { cnt: 0, body: Some(_), .. })).count();
        assert_eq!(zero, 3);
        assert!(matches!(msgs.last(), Some(Message::WriteBack { cnt: 3, body: None, .. })));
        assert_eq!(c.mode, CoreMode::CM);
        assert!(c.lines.values().all(|l| l.state == LineState::V && l.write_bits.is_empty()));
    }

    #[test]
    fn empty_release_completes_at_once() {
        let o = opts(NeatVariant::Base);
        let mut c = core();
        valid_line(&mut c, 0);
        let mut out = Vec::new();
        c.release(&o, &mut out).unwrap();
        assert_eq!(out, vec![Action::Completed(Episode::Release)]);
        assert_eq!(c.mode, CoreMode::NE);

        let strict = NeatOptions { strict_empty_episode: true, ..o.clone() };
        let mut out = Vec::new();
        c.release(&strict, &mut out).unwrap();
        assert_eq!(sends(&out), vec![Message::WriteBack { sender: CoreId(0), cnt: 0, body: None }]);
        let mut l = llc(&strict);
        let all = settle(&mut c, &mut l, &strict, out);
        assert!(all.contains(&Action::Completed(Episode::Release)));
    }

    #[test]
    fn committed_line_stays_readable() {
        let o = opts(NeatVariant::Base);
        let mut l = llc(&o);
        let mut c = core();
        valid_line(&mut c, 0);
        let mut out = Vec::new();
        c.access(write(0, 7, 5), &mut out).unwrap();
        out.clear();
        c.release(&o, &mut out).unwrap();
        settle(&mut c, &mut l, &o, out);
        assert_eq!(c.mode, CoreMode::NE);
        let line = c.lines.get(&LineAddr(0)).unwrap();
        assert_eq!(line.state, LineState::V);
        assert!(line.write_bits.is_empty());
        let mut out = Vec::new();
        assert_eq!(c.access(read(0, 7, 1), &mut out).unwrap(), AccessStatus::Hit);
        assert_eq!(l.read_line(LineAddr(0))[7], 5);
    }

    #[test]
    fn base_acquire_invalidates_and_writes_back() {
        let o = opts(NeatVariant::Base);
        let mut c = core();
        valid_line(&mut c, 0);
        valid_line(&mut c, 1);
        let mut out = Vec::new();
        c.access(write(1, 0, 1), &mut out).unwrap();
        out.clear();
        c.acquire(&o, &mut out).unwrap();
        let msgs = sends(&out);
        assert_eq!(msgs.len(), 2);
        assert!(matches!(msgs[0], Message::WriteBack { cnt: 0, body: Some(_), .. }));
        assert!(matches!(msgs[1], Message::WriteBack { cnt: 1, body: None, .. }));
        assert!(c.lines.is_empty());
        assert_eq!(out.iter().filter(|a| matches!(a, Action::Invalidated(_))).count(), 2);
        assert_eq!(c.mode, CoreMode::SI);
    }

    #[test]
    fn pi_acquire_keeps_write_bits_and_sends_nothing() {
        let o = opts(NeatVariant::PiOnly);
        let mut c = core();
        valid_line(&mut c, 0);
        let mut out = Vec::new();
        c.access(write(0, 4, 1), &mut out).unwrap();
        out.clear();
        c.acquire(&o, &mut out).unwrap();
        assert!(sends(&out).is_empty());
        let line = c.lines.get(&LineAddr(0)).unwrap();
        assert_eq!(line.state, LineState::PI);
        assert_eq!(line.write_bits.iter().collect::<Vec<_>>(), vec![4]);
        assert_eq!(c.mode, CoreMode::NE);
    }

    #[test]
    fn full_acquire_with_empty_signature_keeps_lines() {
        let o = opts(NeatVariant::Full);
        let mut l = llc(&o);
        let mut c = core();
        valid_line(&mut c, 0);
        valid_line(&mut c, 1);
        let mut out = Vec::new();
        c.acquire(&o, &mut out).unwrap();
        assert_eq!(sends(&out), vec![Message::GetWrSig { requester: CoreId(0) }]);
        let all = settle(&mut c, &mut l, &o, out);
        assert!(c.lines.values().all(|l| l.state == LineState::V));
        assert!(!all.iter().any(|a| matches!(a, Action::PartiallyInvalidated(_) | Action::Invalidated(_))));
        assert_eq!(c.mode, CoreMode::NE);
    }

    #[test]
    fn full_acquire_partially_invalidates_signature_hits() {
        let mut o = opts(NeatVariant::Full);
        o.signature_mode = SignatureMode::Exact;
        let mut l = llc(&o);
        let body = WriteBackBody { addr: LineAddr(1), mask: WriteMask::range(0, 1), values: smallvec![9] };
        let mut replies = Vec::new();
        l.on_message(&Message::WriteBack { sender: CoreId(1), cnt: 1, body: Some(body) }, &o, &mut replies).unwrap();
        let mut c = core();
        valid_line(&mut c, 0);
        valid_line(&mut c, 1);
        let mut out = Vec::new();
        c.acquire(&o, &mut out).unwrap();
        settle(&mut c, &mut l, &o, out);
        assert_eq!(c.lines.get(&LineAddr(0)).unwrap().state, LineState::V);
        assert_eq!(c.lines.get(&LineAddr(1)).unwrap().state, LineState::PI);
        assert!(l.sigs[0].is_empty());
    }

    #[test]
    fn cm_waits_for_eviction_acks() {
        let o = opts(NeatVariant::Base);
        let mut l = llc(&o);
        let mut c = core();
        valid_line(&mut c, 0);
        valid_line(&mut c, 1);
        let mut out = Vec::new();
        c.access(write(0, 0, 1), &mut out).unwrap();
        c.access(write(1, 0, 1), &mut out).unwrap();
        out.clear();
        c.evict(LineAddr(0), &o, &mut out).unwrap();
        let evict_wb = sends(&out).pop().unwrap();
        out.clear();
        c.release(&o, &mut out).unwrap();
        // Deliver only the commit traffic; the eviction stays in flight.
        let mut acts = Vec::new();
        for m in sends(&out) {
            let mut replies = Vec::new();
            l.on_message(&m, &o, &mut replies).unwrap();
            for r in replies {
                c.on_message(&r, &o, &mut acts).unwrap();
            }
        }
        assert_eq!(c.mode, CoreMode::CM);
        assert!(!acts.contains(&Action::Completed(Episode::Release)));
        let mut replies = Vec::new();
        l.on_message(&evict_wb, &o, &mut replies).unwrap();
        c.on_message(&replies[0], &o, &mut acts).unwrap();
        assert_eq!(c.mode, CoreMode::NE);
        assert!(acts.contains(&Action::Completed(Episode::Release)));
    }

    #[test]
    fn si_does_not_wait_for_eviction_acks_unless_asked() {
        for (waits, expect_ne) in [(false, true), (true, false)] {
            let o = NeatOptions { si_waits_putacks: waits, ..opts(NeatVariant::Base) };
            let mut c = core();
            valid_line(&mut c, 0);
            let mut out = Vec::new();
            c.access(write(0, 0, 1), &mut out).unwrap();
            c.evict(LineAddr(0), &o, &mut out).unwrap();
            out.clear();
            c.acquire(&o, &mut out).unwrap();
            assert_eq!(c.mode == CoreMode::NE, expect_ne);
        }
    }

    #[test]
    fn access_blocked_behind_eviction() {
        let o = opts(NeatVariant::Base);
        let mut c = core();
        valid_line(&mut c, 0);
        let mut out = Vec::new();
        c.access(write(0, 0, 1), &mut out).unwrap();
        c.evict(LineAddr(0), &o, &mut out).unwrap();
        assert_eq!(c.access(read(0, 0, 1), &mut out).unwrap(), AccessStatus::Blocked);
    }

    #[test]
    fn line_crossing_access_rejected() {
        let mut c = core();
        let err = c.access(read(0, 7, 2), &mut Vec::new());
        assert!(matches!(err, Err(ProtocolError::LineCrossing { .. })));
    }

    #[test]
    fn llc_acks_in_order_and_reordered() {
        let o = opts(NeatVariant::Base);
        let wb = |a: u64| Message::WriteBack {
            sender: CoreId(1),
            cnt: 0,
            body: Some(WriteBackBody { addr: LineAddr(a), mask: WriteMask::range(0, 1), values: smallvec![1] }),
        };
        let cnt = Message::WriteBack { sender: CoreId(1), cnt: 2, body: None };
        let put_all = Message::PutAllAck { dest: CoreId(1) };

        let mut l = llc(&o);
        let mut out = Vec::new();
        l.on_message(&wb(0), &o, &mut out).unwrap();
        l.on_message(&wb(1), &o, &mut out).unwrap();
        assert!(out.is_empty());
        l.on_message(&cnt, &o, &mut out).unwrap();
        assert_eq!(out, vec![put_all.clone()]);
        assert_eq!(l.wb_received[1], 0);

        let mut l = llc(&o);
        let mut out = Vec::new();
        l.on_message(&cnt, &o, &mut out).unwrap();
        assert!(out.is_empty());
        l.on_message(&wb(0), &o, &mut out).unwrap();
        assert!(out.is_empty());
        l.on_message(&wb(1), &o, &mut out).unwrap();
        assert_eq!(out, vec![put_all]);
        assert_eq!((l.wb_received[1], l.pending_cnt[1]), (0, 0));
    }

    #[test]
    fn single_writeback_episode_is_not_mistaken_for_eviction() {
        let o = opts(NeatVariant::Base);
        let mut l = llc(&o);
        let mut out = Vec::new();
        l.on_message(&Message::WriteBack { sender: CoreId(0), cnt: 1, body: None }, &o, &mut out).unwrap();
        assert!(out.is_empty());
        let body = WriteBackBody { addr: LineAddr(3), mask: WriteMask::range(1, 1), values: smallvec![1] };
        l.on_message(&Message::WriteBack { sender: CoreId(0), cnt: 0, body: Some(body) }, &o, &mut out).unwrap();
        assert_eq!(out, vec![Message::PutAllAck { dest: CoreId(0) }]);
    }

    #[test]
    fn counted_writeback_with_data_is_malformed() {
        let o = opts(NeatVariant::Base);
        let mut l = llc(&o);
        let body = WriteBackBody { addr: LineAddr(3), mask: WriteMask::range(1, 1), values: smallvec![1] };
        let err = l.on_message(&Message::WriteBack { sender: CoreId(0), cnt: 2, body: Some(body) }, &o, &mut Vec::new());
        assert!(matches!(err, Err(ProtocolError::MalformedWriteBack { .. })));
    }

    #[test]
    fn writeback_updates_other_cores_signatures() {
        let o = opts(NeatVariant::Full);
        let mut l = llc(&o);
        let body = WriteBackBody { addr: LineAddr(5), mask: WriteMask::range(0, 1), values: smallvec![1] };
        l.on_message(&Message::WriteBack { sender: CoreId(0), cnt: 0, body: Some(body) }, &o, &mut Vec::new()).unwrap();
        assert!(l.sigs[1].may_contain(LineAddr(5)));
        assert!(!l.sigs[0].may_contain(LineAddr(5)));
        let mut out = Vec::new();
        l.on_message(&Message::GetWrSig { requester: CoreId(1) }, &o, &mut out).unwrap();
        match &out[..] {
            [Message::WrSigResp { signature, dest }] => {
                assert_eq!(*dest, CoreId(1));
                assert!(signature.may_contain(LineAddr(5)));
            }
            other => panic!("{other:?}"),
        }
        assert!(l.sigs[1].is_empty());
    }

    #[test]
    fn no_transition_addresses_another_core() {
        // Every message a core emits is LLC-bound, every LLC output core-bound.
        let o = opts(NeatVariant::Full);
        let mut l = llc(&o);
        let mut c = core();
        let mut out = Vec::new();
        c.access(write(0, 0, 1), &mut out).unwrap();
        let mut all = settle(&mut c, &mut l, &o, out);
        let mut out = Vec::new();
        c.release(&o, &mut out).unwrap();
        all.extend(settle(&mut c, &mut l, &o, out));
        let mut out = Vec::new();
        c.acquire(&o, &mut out).unwrap();
        all.extend(settle(&mut c, &mut l, &o, out));
        for m in sends(&all) {
            assert!(m.to_llc());
            assert_eq!(m.core(), CoreId(0));
        }
    }
}
