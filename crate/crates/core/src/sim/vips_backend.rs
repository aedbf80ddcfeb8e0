//! VIPS under the simulator.

use super::cache::Level;
use super::neat_backend::category;
use super::{charge_bulk_transfer, Backend, Ctx, Hierarchy, SimError};
use crate::arch::ArchConfig;
use crate::message::Message;
use crate::types::{ByteIdx, CoreId, LineAddr, LineData, Value};
use crate::vips::{VipsCore, VipsLlc};

pub(crate) struct VipsBackend {
    hier: Hierarchy,
    cores: Vec<VipsCore>,
    llc: VipsLlc,
    evict_acked_at: Vec<u64>,
}

impl VipsBackend {
    pub fn new(cores: usize, cfg: &ArchConfig) -> Self {
        VipsBackend {
            hier: Hierarchy::new(cores, cfg),
            cores: (0..cores).map(|c| VipsCore::new(CoreId(c), cfg.line_size, cfg.wt_buffer_entries)).collect(),
            llc: VipsLlc::new(cfg.line_size),
            evict_acked_at: vec![0; cores],
        }
    }

    fn send(&mut self, m: &Message, cx: &mut Ctx) -> u64 {
        let (ls, fs) = (self.hier.cfg.line_size, self.hier.cfg.flit_size);
        let bytes = m.wire_bytes(ls);
        cx.flits.add(category(m), bytes.div_ceil(fs) as u64);
        if let Message::WriteBack { body: Some(b), .. } = m {
            self.hier.llc_write(b.addr);
        }
        let ack = self.llc.write_through(m);
        cx.flits.add(category(&ack), ack.wire_bytes(ls).div_ceil(fs) as u64);
        bytes as u64
    }

    /// Write-throughs off the critical path: only the next release waits.
    fn send_async(&mut self, core: usize, m: &Message, now: u64, cx: &mut Ctx) {
        let bytes = self.send(m, cx);
        let at = now + charge_bulk_transfer(bytes, &self.hier.cfg);
        self.evict_acked_at[core] = self.evict_acked_at[core].max(at);
    }

    /// Ensures `addr` is present, returning the access latency.
    fn reach(&mut self, core: usize, addr: LineAddr, now: u64, cx: &mut Ctx) -> u64 {
        let level = self.hier.privs[core].lookup(addr);
        if level != Level::Miss {
            self.hier.record(level, cx.stats);
            return self.hier.private_latency(level);
        }
        self.hier.record(Level::Miss, cx.stats);
        let (llc, _) = self.hier.llc_fetch(addr, cx.stats);
        if let Some(v) = self.hier.privs[core].fill(addr) {
            if let Some(wt) = self.cores[core].evict(v) {
                self.send_async(core, &wt, now, cx);
            }
        }
        let get = Message::GetLine { addr, requester: CoreId(core) };
        let data = Message::Data { addr, bytes: self.llc.read_line(addr), requester: CoreId(core) };
        let fs = self.hier.cfg.flit_size;
        for m in [&get, &data] {
            cx.flits.add(category(m), m.wire_bytes(self.hier.cfg.line_size).div_ceil(fs) as u64);
        }
        let Message::Data { bytes, .. } = data else { unreachable!() };
        self.cores[core].fill(addr, bytes);
        self.hier.private_latency(Level::Miss) + llc
    }

    fn flush(&mut self, core: usize, cx: &mut Ctx) -> (u64, u64) {
        let msgs = self.cores[core].flush();
        let bytes = msgs.iter().map(|m| self.send(m, cx)).sum();
        (msgs.len() as u64, bytes)
    }
}

impl Backend for VipsBackend {
    fn read(&mut self, core: usize, addr: LineAddr, start: ByteIdx, len: usize, now: u64, cx: &mut Ctx)
        -> Result<(u64, LineData), SimError> {
        let lat = self.reach(core, addr, now, cx);
        let v = self.cores[core].read(addr, start, len).ok_or_else(|| SimError::Internal(format!("{addr:?} not filled")))?;
        Ok((lat, v))
    }

    fn write(&mut self, core: usize, addr: LineAddr, start: ByteIdx, values: &[Value], now: u64, cx: &mut Ctx)
        -> Result<u64, SimError> {
        let lat = self.reach(core, addr, now, cx);
        if let Some(wt) = self.cores[core].write(addr, start, values) {
            self.send_async(core, &wt, now, cx);
        }
        Ok(lat)
    }

    fn acquire(&mut self, core: usize, _now: u64, cx: &mut Ctx) -> Result<u64, SimError> {
        let (_, bytes) = self.flush(core, cx);
        let (_, n) = self.cores[core].acquire();
        self.hier.privs[core].clear();
        cx.stats.self_invalidated += n as u64;
        Ok(n as u64 * self.hier.cfg.episode_scan_cost + charge_bulk_transfer(bytes, &self.hier.cfg))
    }

    fn release(&mut self, core: usize, now: u64, cx: &mut Ctx) -> Result<u64, SimError> {
        let (entries, bytes) = self.flush(core, cx);
        cx.stats.committed += entries;
        let done = (now + charge_bulk_transfer(bytes, &self.hier.cfg)).max(self.evict_acked_at[core]);
        Ok(done - now)
    }
}
