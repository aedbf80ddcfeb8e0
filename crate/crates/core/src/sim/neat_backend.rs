//! Neat under the simulator: the protocol state machines from `crate::neat`
//! with every message delivered on the spot.

use std::collections::{BTreeMap, HashMap, VecDeque};

use smallvec::SmallVec;

use super::cache::Level;
use super::stats::FlitCategory;
use super::{charge_bulk_transfer, Backend, Ctx, Hierarchy, SimError, SimOptions};
use crate::arch::ArchConfig;
use crate::line::L1Line;
use crate::message::Message;
use crate::neat::{Access, AccessStatus, Action, CoreMode, NeatCore, NeatLlc, NeatOptions, NeatVariant, Performed};
use crate::types::{ByteIdx, CoreId, LineAddr, LineData, Value};

type Core = NeatCore<BTreeMap<LineAddr, L1Line>>;

pub(crate) fn category(m: &Message) -> FlitCategory {
    match m {
        Message::GetLine { .. } | Message::Data { .. } => FlitCategory::DataFetch,
        Message::WriteBack { body: Some(_), .. } => FlitCategory::WriteBack,
        Message::WriteBack { body: None, .. } | Message::PutAck { .. } | Message::PutAllAck { .. } => {
            FlitCategory::AckControl
        }
        Message::GetWrSig { .. } | Message::WrSigResp { .. } => FlitCategory::Signature,
    }
}

#[derive(Default)]
struct Pumped {
    performed: Option<Performed>,
    invalidated: Vec<LineAddr>,
    partially_invalidated: u64,
    /// Wire bytes of everything the core itself sent.
    sent_bytes: u64,
    episode_write_backs: u64,
}

pub(crate) struct NeatBackend {
    opts: NeatOptions,
    hier: Hierarchy,
    cores: Vec<Core>,
    llc: NeatLlc<HashMap<LineAddr, LineData>>,
    /// When each core's last eviction write-back will have been acknowledged.
    evict_acked_at: Vec<u64>,
}

impl NeatBackend {
    pub fn new(variant: NeatVariant, cores: usize, cfg: &ArchConfig, sim: &SimOptions) -> Self {
        let mut opts = NeatOptions::new(variant);
        opts.signature_mode = sim.signatures;
        opts.signature_bits = cfg.signature_bits;
        opts.signature_hashes = cfg.signature_hashes;
        opts.mutation = sim.mutation;
        NeatBackend {
            hier: Hierarchy::new(cores, cfg),
            cores: (0..cores).map(|c| NeatCore::new(CoreId(c), cfg.line_size, BTreeMap::new())).collect(),
            llc: NeatLlc::new(cores, cfg.line_size, HashMap::new(), &opts),
            evict_acked_at: vec![0; cores],
            opts,
        }
    }

    /// Delivers `actions`' messages and everything they trigger, to quiescence.
    fn pump(&mut self, core: usize, actions: Vec<Action>, cx: &mut Ctx) -> Result<Pumped, SimError> {
        let (line_size, flit_size) = (self.hier.cfg.line_size, self.hier.cfg.flit_size);
        let mut out = Pumped::default();
        let mut net: VecDeque<Message> = VecDeque::new();
        let mut pending: VecDeque<(usize, Action)> = actions.into_iter().map(|a| (core, a)).collect();
        loop {
            while let Some((c, a)) = pending.pop_front() {
                match a {
                    Action::Send(m) => {
                        let bytes = m.wire_bytes(line_size);
                        cx.flits.add(category(&m), bytes.div_ceil(flit_size) as u64);
                        if c == core {
                            out.sent_bytes += bytes as u64;
                            if matches!(m, Message::WriteBack { cnt: 0, body: Some(_), .. }) {
                                out.episode_write_backs += 1;
                            }
                        }
                        net.push_back(m);
                    }
                    Action::Performed(p) => out.performed = Some(p),
                    Action::Invalidated(a) => out.invalidated.push(a),
                    Action::PartiallyInvalidated(_) => out.partially_invalidated += 1,
                    Action::Stall | Action::Completed(_) => {}
                }
            }
            let Some(m) = net.pop_front() else { break };
            if m.to_llc() {
                if let Message::WriteBack { body: Some(b), .. } = &m {
                    self.hier.llc_write(b.addr);
                }
                let mut replies = Vec::new();
                self.llc.on_message(&m, &self.opts, &mut replies)?;
                for r in replies {
                    let bytes = r.wire_bytes(line_size);
                    cx.flits.add(category(&r), bytes.div_ceil(flit_size) as u64);
                    net.push_back(r);
                }
            } else {
                let c = m.core().0;
                let mut acts = Vec::new();
                self.cores[c].on_message(&m, &self.opts, &mut acts)?;
                pending.extend(acts.into_iter().map(|a| (c, a)));
            }
        }
        Ok(out)
    }

    /// Capacity eviction; the write-back's acknowledgment only matters at the
    /// next release.
    fn evict(&mut self, core: usize, victim: LineAddr, now: u64, cx: &mut Ctx) -> Result<(), SimError> {
        let mut acts = Vec::new();
        self.cores[core].evict(victim, &self.opts, &mut acts)?;
        let p = self.pump(core, acts, cx)?;
        if p.sent_bytes > 0 {
            let at = now + charge_bulk_transfer(p.sent_bytes, &self.hier.cfg);
            self.evict_acked_at[core] = self.evict_acked_at[core].max(at);
        }
        Ok(())
    }

    fn access(&mut self, core: usize, acc: Access, now: u64, cx: &mut Ctx) -> Result<(u64, Performed), SimError> {
        let addr = acc.addr();
        let level = self.hier.privs[core].lookup(addr);
        let mut acts = Vec::new();
        let status = self.cores[core].access(acc, &mut acts)?;
        let latency = match status {
            AccessStatus::Hit => {
                if level == Level::Miss {
                    return Err(SimError::Internal(format!("core {core} hit on {addr:?} absent from its tags")));
                }
                self.hier.record(level, cx.stats);
                self.hier.private_latency(level)
            }
            AccessStatus::Miss => {
                self.hier.record(Level::Miss, cx.stats);
                let (llc, _) = self.hier.llc_fetch(addr, cx.stats);
                if level == Level::Miss {
                    if let Some(v) = self.hier.privs[core].fill(addr) {
                        self.evict(core, v, now, cx)?;
                    }
                }
                self.hier.private_latency(Level::Miss) + llc
            }
            AccessStatus::Blocked => {
                return Err(SimError::Internal(format!("core {core} blocked on {addr:?} with acks delivered eagerly")))
            }
        };
        let p = self.pump(core, acts, cx)?;
        let performed = p.performed.ok_or_else(|| SimError::Internal(format!("core {core} access to {addr:?} never performed")))?;
        Ok((latency, performed))
    }

    fn finish_episode(&self, core: usize) -> Result<(), SimError> {
        let c = &self.cores[core];
        if c.mode != CoreMode::NE {
            return Err(SimError::Internal(format!("core {core} stuck in {:?} after its episode", c.mode)));
        }
        Ok(())
    }
}

impl Backend for NeatBackend {
    fn read(&mut self, core: usize, addr: LineAddr, start: ByteIdx, len: usize, now: u64, cx: &mut Ctx)
        -> Result<(u64, LineData), SimError> {
        match self.access(core, Access::Read { addr, start, len }, now, cx)? {
            (lat, Performed::Read { values, .. }) => Ok((lat, values)),
            _ => Err(SimError::Internal("read performed as a write".into())),
        }
    }

    fn write(&mut self, core: usize, addr: LineAddr, start: ByteIdx, values: &[Value], now: u64, cx: &mut Ctx)
        -> Result<u64, SimError> {
        let values: SmallVec<_> = values.iter().copied().collect();
        Ok(self.access(core, Access::Write { addr, start, values }, now, cx)?.0)
    }

    fn acquire(&mut self, core: usize, _now: u64, cx: &mut Ctx) -> Result<u64, SimError> {
        let cfg = self.hier.cfg.clone();
        let scanned = self.hier.privs[core].len() as u64;
        let mut acts = Vec::new();
        self.cores[core].acquire(&self.opts, &mut acts)?;
        let p = self.pump(core, acts, cx)?;
        self.finish_episode(core)?;
        for a in &p.invalidated {
            self.hier.privs[core].remove(*a);
        }
        cx.stats.self_invalidated += p.invalidated.len() as u64 + p.partially_invalidated;
        let mut latency = scanned * cfg.episode_scan_cost;
        if self.opts.variant == NeatVariant::Full {
            // The signature exchange occupies a fixed eight-flit slot.
            latency += charge_bulk_transfer(8 * cfg.flit_size as u64, &cfg);
        } else {
            latency += charge_bulk_transfer(p.sent_bytes, &cfg);
        }
        Ok(latency)
    }

    fn release(&mut self, core: usize, now: u64, cx: &mut Ctx) -> Result<u64, SimError> {
        let scanned = self.hier.privs[core].len() as u64 * self.hier.cfg.episode_scan_cost;
        let mut acts = Vec::new();
        self.cores[core].release(&self.opts, &mut acts)?;
        let p = self.pump(core, acts, cx)?;
        self.finish_episode(core)?;
        cx.stats.committed += p.episode_write_backs;
        let done = (now + scanned + charge_bulk_transfer(p.sent_bytes, &self.hier.cfg)).max(self.evict_acked_at[core]);
        Ok(done - now)
    }
}
