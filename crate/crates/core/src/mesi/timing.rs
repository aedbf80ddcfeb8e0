//! Atomic-transition MESI for the trace-driven simulator.
//!
//! Every access completes in one step under the global interleaving, so there
//! are no transient states. The directory is exact and inclusive of every
//! private copy. Capacity is the caller's business: it tells the model which
//! line a private cache or the LLC dropped.

use std::collections::HashMap;

use smallvec::SmallVec;

use crate::message::HEADER_BYTES;
use crate::sim::stats::FlitCategory;
use crate::types::{ByteIdx, LineAddr, LineData, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stable {
    S,
    E,
    M,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct PrivLine {
    state: Stable,
    data: LineData,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct DirEntry {
    /// Holder of E or M.
    owner: Option<usize>,
    sharers: u64,
}

/// What one transition cost in messages, and whether a remote core had to
/// take part.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MesiOutcome {
    /// The access was satisfied by the private copy with no message.
    pub hit: bool,
    /// Data or ownership came from or through another core.
    pub remote: bool,
    /// Private copies destroyed at other cores.
    pub invalidations: u32,
    /// Cores whose copy was destroyed.
    pub lost: SmallVec<[usize; 4]>,
    /// `(category, wire bytes)` of every message exchanged.
    pub messages: SmallVec<[(FlitCategory, usize); 6]>,
}

impl MesiOutcome {
    fn control(&mut self, cat: FlitCategory) {
        self.messages.push((cat, HEADER_BYTES));
    }
    fn data(&mut self, cat: FlitCategory, line_size: usize) {
        self.messages.push((cat, HEADER_BYTES + line_size));
    }
}

#[derive(Clone, Debug)]
pub struct MesiDirectory {
    line_size: usize,
    privs: Vec<HashMap<LineAddr, PrivLine>>,
    dir: HashMap<LineAddr, DirEntry>,
    memory: HashMap<LineAddr, LineData>,
}

impl MesiDirectory {
    pub fn new(cores: usize, line_size: usize) -> Self {
        assert!(cores <= 64, "sharer sets are 64-bit masks");
        MesiDirectory { line_size, privs: vec![HashMap::new(); cores], dir: HashMap::new(), memory: HashMap::new() }
    }

    pub fn state(&self, core: usize, addr: LineAddr) -> Option<Stable> {
        self.privs[core].get(&addr).map(|l| l.state)
    }

    fn mem_line(&self, addr: LineAddr) -> LineData {
        self.memory.get(&addr).cloned().unwrap_or_else(|| smallvec::smallvec![0; self.line_size])
    }

    /// Reads `len` bytes; a miss brings the line in as S or E.
    pub fn read(&mut self, core: usize, addr: LineAddr, start: ByteIdx, len: usize) -> (LineData, MesiOutcome) {
        let mut out = MesiOutcome::default();
        if !self.privs[core].contains_key(&addr) {
            self.fetch_shared(core, addr, &mut out);
        } else {
            out.hit = true;
        }
        let line = &self.privs[core][&addr];
        (line.data[start..start + len].iter().copied().collect(), out)
    }

    /// Writes `values` at `start`, obtaining M first.
    pub fn write(&mut self, core: usize, addr: LineAddr, start: ByteIdx, values: &[Value]) -> MesiOutcome {
        let mut out = MesiOutcome::default();
        match self.state(core, addr) {
            Some(Stable::M) => out.hit = true,
            Some(Stable::E) => {
                out.hit = true;
                self.privs[core].get_mut(&addr).expect("held").state = Stable::M;
            }
            Some(Stable::S) | None => self.fetch_modified(core, addr, &mut out),
        }
        let line = self.privs[core].get_mut(&addr).expect("held in M");
        line.data[start..start + values.len()].copy_from_slice(values);
        out
    }

    fn fetch_shared(&mut self, core: usize, addr: LineAddr, out: &mut MesiOutcome) {
        use FlitCategory::*;
        out.control(DataFetch);
        let entry = self.dir.entry(addr).or_default().clone();
        let bit = 1u64 << core;
        let state = match entry.owner {
            Some(o) => {
                debug_assert_ne!(o, core);
                out.remote = true;
                out.control(DataFetch); // FwdGetS
                let owner = self.privs[o].get_mut(&addr).expect("directory owner holds the line");
                owner.state = Stable::S;
                let data = owner.data.clone();
                out.data(DataFetch, self.line_size);
                out.data(WriteBack, self.line_size);
                self.memory.insert(addr, data);
                self.dir.insert(addr, DirEntry { owner: None, sharers: bit | 1 << o });
                Stable::S
            }
            None if entry.sharers != 0 => {
                out.data(DataFetch, self.line_size);
                self.dir.get_mut(&addr).expect("entry").sharers |= bit;
                Stable::S
            }
            None => {
                out.data(DataFetch, self.line_size);
                self.dir.insert(addr, DirEntry { owner: Some(core), sharers: 0 });
                Stable::E
            }
        };
        let data = self.mem_line(addr);
        self.privs[core].insert(addr, PrivLine { state, data });
    }

    fn fetch_modified(&mut self, core: usize, addr: LineAddr, out: &mut MesiOutcome) {
        use FlitCategory::*;
        out.control(DataFetch);
        let entry = self.dir.entry(addr).or_default().clone();
        let bit = 1u64 << core;
        let data = match entry.owner {
            Some(o) => {
                debug_assert_ne!(o, core);
                out.remote = true;
                out.invalidations += 1;
                out.control(Invalidation); // FwdGetM
                let old = self.privs[o].remove(&addr).expect("directory owner holds the line");
                out.lost.push(o);
                out.data(DataFetch, self.line_size);
                old.data
            }
            None => {
                let others = entry.sharers & !bit;
                for s in 0..self.privs.len() {
                    if others & (1 << s) != 0 {
                        self.privs[s].remove(&addr);
                        out.lost.push(s);
                        out.control(Invalidation); // Inv
                        out.control(Invalidation); // InvAck
                        out.invalidations += 1;
                        out.remote = true;
                    }
                }
                out.data(DataFetch, self.line_size);
                self.mem_line(addr)
            }
        };
        self.dir.insert(addr, DirEntry { owner: Some(core), sharers: 0 });
        self.privs[core].insert(addr, PrivLine { state: Stable::M, data });
    }

    /// Replacement of a private line: PutS, PutE or PutM, each acknowledged.
    pub fn evict(&mut self, core: usize, addr: LineAddr) -> MesiOutcome {
        use FlitCategory::*;
        let mut out = MesiOutcome::default();
        let Some(line) = self.privs[core].remove(&addr) else { return out };
        let entry = self.dir.get_mut(&addr).expect("inclusive directory");
        match line.state {
            Stable::M => {
                out.data(WriteBack, self.line_size);
                self.memory.insert(addr, line.data);
                entry.owner = None;
            }
            Stable::E => {
                out.control(AckControl);
                entry.owner = None;
            }
            Stable::S => {
                out.control(AckControl);
                entry.sharers &= !(1 << core);
            }
        }
        out.control(AckControl);
        if entry.owner.is_none() && entry.sharers == 0 {
            self.dir.remove(&addr);
        }
        out
    }

    /// The LLC dropped `addr`: recall every private copy.
    pub fn recall(&mut self, addr: LineAddr) -> MesiOutcome {
        use FlitCategory::*;
        let mut out = MesiOutcome::default();
        for c in 0..self.privs.len() {
            if let Some(line) = self.privs[c].remove(&addr) {
                out.control(Invalidation);
                if line.state == Stable::M {
                    out.data(WriteBack, self.line_size);
                    self.memory.insert(addr, line.data);
                } else {
                    out.control(Invalidation);
                }
                out.invalidations += 1;
                out.lost.push(c);
            }
        }
        self.dir.remove(&addr);
        out
    }

    /// At most one E/M holder per line, never alongside sharers.
    pub fn check_swmr(&self) -> Result<(), String> {
        for (addr, entry) in &self.dir {
            let mut writers = 0;
            let mut readers = 0;
            for (c, p) in self.privs.iter().enumerate() {
                match p.get(addr).map(|l| l.state) {
                    Some(Stable::E | Stable::M) => {
                        writers += 1;
                        if entry.owner != Some(c) {
                            return Err(format!("{addr:?}: c{c} holds ownership the directory does not record"));
                        }
                    }
                    Some(Stable::S) => readers += 1,
                    None => {}
                }
            }
            if writers > 1 || (writers == 1 && readers > 0) {
                return Err(format!("{addr:?}: {writers} writers and {readers} readers"));
            }
        }
        Ok(())
    }
}
