//! The Neat protocol family as a checker model: two cores, an always-hitting
//! LLC, and an unordered network kept as a sorted multiset.

use smallvec::{smallvec, SmallVec};

use super::ghost::RaceGhost;
use super::{Decoder, Event, Events, LockView, Model, Op, ViolationKind};
use crate::error::ProtocolError;
use crate::line::{L1Line, LineState};
use crate::message::Message;
use crate::neat::{
    Access, Action, CoreMode, Episode, LineStore, LlcStore, Mutation, NeatCore, NeatLlc, NeatOptions, NeatVariant,
    Performed, RequestEntry, RequestKind, SmallLineStore, SmallLlcStore,
};
use crate::signature::{SignatureMode, WriteSignature};
use crate::types::{CoreId, LineAddr, WriteMask};

#[derive(Clone, Debug)]
pub struct NeatModel {
    pub opts: NeatOptions,
    pub cores: usize,
    pub lines: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeatState {
    pub cores: SmallVec<[NeatCore<SmallLineStore>; 2]>,
    pub llc: NeatLlc<SmallLlcStore>,
    /// In-flight messages, sorted.
    pub net: Vec<Message>,
}

impl NeatModel {
    pub fn new(variant: NeatVariant, lines: usize, bytes: usize) -> Self {
        let mut opts = NeatOptions::new(variant);
        opts.signature_mode = SignatureMode::Exact;
        NeatModel { opts, cores: 2, lines, bytes }
    }

    pub fn with_mutation(mut self, m: Option<Mutation>) -> Self {
        self.opts.mutation = m;
        self
    }

    fn push_msg(net: &mut Vec<Message>, m: Message) {
        let at = net.partition_point(|x| *x < m);
        net.insert(at, m);
    }

    fn absorb(&self, s: &mut NeatState, core: usize, actions: Vec<Action>, ev: &mut Events) -> Result<(), ProtocolError> {
        for a in actions {
            match a {
                Action::Send(m) => {
                    if !m.to_llc() || m.core() != CoreId(core) {
                        return Err(ProtocolError::Unexpected { core: CoreId(core), what: "message not addressed to the LLC" });
                    }
                    Self::push_msg(&mut s.net, m);
                }
                Action::Performed(Performed::Read { addr, start, values }) => {
                    for (i, v) in values.iter().enumerate() {
                        ev.push(Event::Read { core, line: addr.0 as usize, byte: start + i, value: *v });
                    }
                }
                Action::Performed(Performed::Write { addr, start, values }) => {
                    for (i, v) in values.iter().enumerate() {
                        ev.push(Event::Write { core, line: addr.0 as usize, byte: start + i, value: *v });
                    }
                }
                Action::Completed(Episode::Release) => ev.push(Event::ReleaseDone { core }),
                Action::Completed(Episode::Acquire)
                | Action::Stall
                | Action::Invalidated(_)
                | Action::PartiallyInvalidated(_) => {}
            }
        }
        Ok(())
    }
}

impl NeatModel {
    fn apply_op_inner(&self, s: &NeatState, core: usize, op: Op, ev: &mut Events) -> Result<NeatState, ProtocolError> {
        let mut s = s.clone();
        let mut actions = Vec::new();
        let opts = &self.opts;
        let c = &mut s.cores[core];
        match op {
            Op::Read { line, byte } => {
                c.access(Access::Read { addr: LineAddr(line as u64), start: byte as usize, len: 1 }, &mut actions)?;
            }
            Op::Write { line, byte, value } => {
                let acc = Access::Write { addr: LineAddr(line as u64), start: byte as usize, values: smallvec![value] };
                c.access(acc, &mut actions)?;
            }
            Op::Evict { line } => c.evict(LineAddr(line as u64), opts, &mut actions)?,
            Op::Acquire => {
                ev.push(Event::AcquireGranted { core });
                c.acquire(opts, &mut actions)?;
            }
            Op::Release => c.release(opts, &mut actions)?,
        }
        self.absorb(&mut s, core, actions, ev)?;
        Ok(s)
    }

    fn deliver_inner(&self, s: &NeatState, idx: u16, ev: &mut Events) -> Result<NeatState, ProtocolError> {
        let mut s = s.clone();
        let msg = s.net.remove(idx as usize);
        if msg.to_llc() {
            let mut replies = Vec::new();
            s.llc.on_message(&msg, &self.opts, &mut replies)?;
            for r in replies {
                if r.to_llc() {
                    return Err(ProtocolError::Unexpected { core: r.core(), what: "LLC message addressed to the LLC" });
                }
                Self::push_msg(&mut s.net, r);
            }
        } else {
            let core = msg.core().0;
            let mut actions = Vec::new();
            s.cores[core].on_message(&msg, &self.opts, &mut actions)?;
            self.absorb(&mut s, core, actions, ev)?;
        }
        Ok(s)
    }
}

impl Model for NeatModel {
    type State = NeatState;

    fn name(&self) -> String {
        let mut n = format!("{} {}x{}", self.opts.variant.name(), self.lines, self.bytes);
        if let Some(m) = self.opts.mutation {
            n += &format!(" mutate={m}");
        }
        n
    }

    fn cores(&self) -> usize {
        self.cores
    }
    fn lines(&self) -> usize {
        self.lines
    }
    fn bytes(&self) -> usize {
        self.bytes
    }

    fn initial(&self) -> NeatState {
        NeatState {
            cores: (0..self.cores)
                .map(|c| NeatCore::new(CoreId(c), self.bytes, SmallLineStore::default()))
                .collect(),
            llc: NeatLlc::new(self.cores, self.bytes, SmallLlcStore::default(), &self.opts),
            net: Vec::new(),
        }
    }

    fn program_ops(&self, s: &NeatState, core: usize, lock: LockView, out: &mut Vec<Op>) {
        let c = &s.cores[core];
        if !c.ready() {
            return;
        }
        for line in 0..self.lines {
            let addr = LineAddr(line as u64);
            if c.requests.iter().any(|r| r.addr == addr) {
                continue;
            }
            for byte in 0..self.bytes {
                out.push(Op::Read { line: line as u8, byte: byte as u8 });
                for value in 0..2 {
                    out.push(Op::Write { line: line as u8, byte: byte as u8, value });
                }
            }
            if c.lines.get(addr).is_some() {
                out.push(Op::Evict { line: line as u8 });
            }
        }
        if lock.free {
            out.push(Op::Acquire);
        }
        if lock.mine {
            out.push(Op::Release);
        }
    }

    fn apply_op(&self, s: &NeatState, core: usize, op: Op, ev: &mut Events) -> Result<NeatState, String> {
        self.apply_op_inner(s, core, op, ev).map_err(|e| e.to_string())
    }

    fn deliver(&self, s: &NeatState, idx: u16, ev: &mut Events) -> Result<NeatState, String> {
        self.deliver_inner(s, idx, ev).map_err(|e| e.to_string())
    }

    fn deliverable(&self, s: &NeatState, out: &mut Vec<u16>) {
        for i in 0..s.net.len() {
            if i == 0 || s.net[i] != s.net[i - 1] {
                out.push(i as u16);
            }
        }
    }

    fn describe_delivery(&self, s: &NeatState, idx: u16) -> String {
        format!("{:?}", s.net[idx as usize])
    }

    fn in_flight(&self, s: &NeatState) -> usize {
        s.net.len()
    }

    fn network_bound(&self) -> usize {
        // Per core: one fetch, one eviction per line, one episode write-back
        // per line plus its count message, one ack, one signature exchange.
        self.cores * (2 * self.lines + 4)
    }

    fn check_state(&self, s: &NeatState, ghost: &RaceGhost, filtered: bool) -> Result<(), (ViolationKind, String)> {
        for c in &s.cores {
            c.check(&self.opts).map_err(|e| (ViolationKind::Structural, e.to_string()))?;
        }
        let quiescent = s.net.is_empty()
            && s.cores.iter().all(|c| {
                c.mode == CoreMode::NE
                    && c.pending.is_none()
                    && c.requests.is_empty()
                    && c.lines.0.iter().all(|l| !l.is_dirty())
            });
        if filtered && quiescent {
            for line in 0..self.lines {
                let data = s.llc.read_line(LineAddr(line as u64));
                for byte in 0..self.bytes {
                    let want = ghost.expected(line * self.bytes + byte);
                    if data[byte] != want {
                        return Err((
                            ViolationKind::LastWrite,
                            format!("quiescent LLC holds {} at L{line}[{byte}], last write was {want}", data[byte]),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn encode(&self, s: &NeatState, out: &mut Vec<u8>) {
        for c in &s.cores {
            out.push(c.mode as u8);
            out.push(c.awaiting_put_all_ack as u8 | (c.awaiting_wr_sig as u8) << 1);
            out.push(c.episode_wb_count as u8);
            out.push(c.requests.len() as u8);
            for r in &c.requests {
                out.push((r.kind == RequestKind::EvictWb) as u8);
                out.push(r.addr.0 as u8);
            }
            match &c.pending {
                None => out.push(0),
                Some(Access::Read { addr, start, len }) => out.extend([1, addr.0 as u8, *start as u8, *len as u8]),
                Some(Access::Write { addr, start, values }) => {
                    out.extend([2, addr.0 as u8, *start as u8, values.len() as u8]);
                    out.extend_from_slice(values);
                }
            }
            out.push(c.lines.0.len() as u8);
            for l in &c.lines.0 {
                out.push(l.addr.0 as u8);
                out.push(match l.state {
                    LineState::I => 0,
                    LineState::V => 1,
                    LineState::PI => 2,
                });
                // Clean bytes of a PI line are never read before a fetch
                // overwrites them.
                for (i, b) in l.data.iter().enumerate() {
                    out.push(if l.state == LineState::PI && !l.write_bits.is_set(i) { 0 } else { *b });
                }
                out.push(l.write_bits.0 as u8);
            }
        }
        for line in 0..self.lines {
            out.extend_from_slice(&s.llc.read_line(LineAddr(line as u64)));
        }
        for c in 0..self.cores {
            out.push(s.llc.wb_received[c] as u8);
            out.push(s.llc.pending_cnt[c] as u8);
        }
        for sig in &s.llc.sigs {
            out.push(sig.exact_members().len() as u8);
            out.extend(sig.exact_members().iter().map(|a| a.0 as u8));
        }
        out.push(s.net.len() as u8);
        for m in &s.net {
            let bytes = m.serialize();
            out.push(bytes.len() as u8);
            out.extend_from_slice(&bytes);
        }
    }

    fn decode(&self, r: &mut Decoder<'_>) -> NeatState {
        let mut s = self.initial();
        for c in s.cores.iter_mut() {
            c.mode = match r.u8() {
                0 => CoreMode::NE,
                1 => CoreMode::SI,
                _ => CoreMode::CM,
            };
            let flags = r.u8();
            c.awaiting_put_all_ack = flags & 1 != 0;
            c.awaiting_wr_sig = flags & 2 != 0;
            c.episode_wb_count = r.u8() as u32;
            for _ in 0..r.u8() {
                let kind = if r.u8() == 1 { RequestKind::EvictWb } else { RequestKind::Fetch };
                c.requests.push(RequestEntry { kind, addr: LineAddr(r.u8() as u64) });
            }
            c.pending = match r.u8() {
                0 => None,
                1 => {
                    let (addr, start, len) = (r.u8(), r.u8(), r.u8());
                    Some(Access::Read { addr: LineAddr(addr as u64), start: start as usize, len: len as usize })
                }
                _ => {
                    let (addr, start, len) = (r.u8(), r.u8(), r.u8());
                    let values = r.take(len as usize).into();
                    Some(Access::Write { addr: LineAddr(addr as u64), start: start as usize, values })
                }
            };
            for _ in 0..r.u8() {
                let addr = LineAddr(r.u8() as u64);
                let state = match r.u8() {
                    0 => LineState::I,
                    1 => LineState::V,
                    _ => LineState::PI,
                };
                let data = r.take(self.bytes).into();
                let write_bits = WriteMask(r.u8() as u64);
                c.lines.0.push(L1Line { addr, state, data, write_bits });
            }
        }
        for line in 0..self.lines {
            let data = r.take(self.bytes);
            if data.iter().any(|&b| b != 0) {
                s.llc.lines.line_mut(LineAddr(line as u64), self.bytes).copy_from_slice(data);
            }
        }
        for c in 0..self.cores {
            s.llc.wb_received[c] = r.u8() as u32;
            s.llc.pending_cnt[c] = r.u8() as u32;
        }
        for sig in s.llc.sigs.iter_mut() {
            *sig = WriteSignature::exact();
            for _ in 0..r.u8() {
                sig.insert(LineAddr(r.u8() as u64));
            }
        }
        for _ in 0..r.u8() {
            let n = r.u8() as usize;
            let m = Message::deserialize(r.take(n), self.opts.signature_bits, self.opts.signature_hashes)
                .expect("message encoded by the checker");
            s.net.push(m);
        }
        s
    }
}
