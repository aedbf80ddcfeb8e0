//! Atomic MESI under the simulator. Synchronization is free.

use super::cache::Level;
use super::{Backend, Ctx, Hierarchy, SimError};
use crate::arch::ArchConfig;
use crate::mesi::timing::{MesiDirectory, MesiOutcome, Stable};
use crate::types::{ByteIdx, LineAddr, LineData, Value};

pub(crate) struct MesiBackend {
    hier: Hierarchy,
    dir: MesiDirectory,
}

impl MesiBackend {
    pub fn new(cores: usize, cfg: &ArchConfig) -> Self {
        MesiBackend { hier: Hierarchy::new(cores, cfg), dir: MesiDirectory::new(cores, cfg.line_size) }
    }

    fn count(&mut self, addr: LineAddr, out: &MesiOutcome, cx: &mut Ctx) {
        for &c in &out.lost {
            self.hier.privs[c].remove(addr);
        }
        for (cat, bytes) in &out.messages {
            cx.flits.add(*cat, bytes.div_ceil(self.hier.cfg.flit_size) as u64);
        }
        cx.stats.invalidations += out.invalidations as u64;
    }

    /// Makes room before the directory installs `addr` at `core`; returns the
    /// latency of the LLC part of the miss.
    fn prepare_miss(&mut self, core: usize, addr: LineAddr, level: Level, cx: &mut Ctx) -> u64 {
        let (llc, llc_victim) = self.hier.llc_fetch(addr, cx.stats);
        if let Some(v) = llc_victim {
            let out = self.dir.recall(v);
            self.count(v, &out, cx);
        }
        if level == Level::Miss {
            if let Some(v) = self.hier.privs[core].fill(addr) {
                let out = self.dir.evict(core, v);
                self.count(v, &out, cx);
            }
        }
        llc
    }

    fn latency(&self, level: Level, out: &MesiOutcome, llc: u64) -> u64 {
        if out.hit {
            return self.hier.private_latency(level);
        }
        let remote = if out.remote { 2 * self.hier.cfg.remote_one_way } else { 0 };
        self.hier.private_latency(Level::Miss) + llc + remote
    }
}

impl Backend for MesiBackend {
    fn read(&mut self, core: usize, addr: LineAddr, start: ByteIdx, len: usize, _now: u64, cx: &mut Ctx)
        -> Result<(u64, LineData), SimError> {
        let level = self.hier.privs[core].lookup(addr);
        let held = self.dir.state(core, addr).is_some();
        if held != (level != Level::Miss) {
            return Err(SimError::Internal(format!("core {core} tags and directory disagree on {addr:?}")));
        }
        let llc = if held { 0 } else { self.prepare_miss(core, addr, level, cx) };
        let (values, out) = self.dir.read(core, addr, start, len);
        self.hier.record(if out.hit { level } else { Level::Miss }, cx.stats);
        self.count(addr, &out, cx);
        Ok((self.latency(level, &out, llc), values))
    }

    fn write(&mut self, core: usize, addr: LineAddr, start: ByteIdx, values: &[Value], _now: u64, cx: &mut Ctx)
        -> Result<u64, SimError> {
        let level = self.hier.privs[core].lookup(addr);
        let state = self.dir.state(core, addr);
        if state.is_some() != (level != Level::Miss) {
            return Err(SimError::Internal(format!("core {core} tags and directory disagree on {addr:?}")));
        }
        let llc = match state {
            Some(Stable::M | Stable::E) => 0,
            // Upgrade: the LLC already holds the line (inclusion).
            Some(Stable::S) => self.hier.llc_fetch(addr, cx.stats).0,
            None => self.prepare_miss(core, addr, level, cx),
        };
        let out = self.dir.write(core, addr, start, values);
        self.hier.record(if out.hit { level } else { Level::Miss }, cx.stats);
        self.count(addr, &out, cx);
        debug_assert!(self.dir.check_swmr().is_ok());
        Ok(self.latency(level, &out, llc))
    }

    fn acquire(&mut self, _core: usize, _now: u64, _cx: &mut Ctx) -> Result<u64, SimError> {
        Ok(0)
    }

    fn release(&mut self, _core: usize, _now: u64, _cx: &mut Ctx) -> Result<u64, SimError> {
        Ok(0)
    }
}
