//! VIPS without page classification: write-through private caches behind a
//! small LRU write-through buffer, and self-invalidation of every line at an
//! acquire.

use std::collections::{BTreeMap, HashMap};

use smallvec::smallvec;

use crate::message::{Message, WriteBackBody};
use crate::types::{ByteIdx, CoreId, LineAddr, LineData, Value, WriteMask};

/// Buffered dirty bytes of one line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WtEntry {
    pub addr: LineAddr,
    pub mask: WriteMask,
    /// Full-line image; only masked bytes are meaningful.
    pub values: LineData,
}

impl WtEntry {
    fn body(&self) -> WriteBackBody {
        WriteBackBody { addr: self.addr, mask: self.mask, values: self.mask.iter().map(|i| self.values[i]).collect() }
    }
}

/// Write-through buffer, least recently written entry first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WtBuffer {
    capacity: usize,
    entries: Vec<WtEntry>,
}

impl WtBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        WtBuffer { capacity, entries: Vec::with_capacity(capacity + 1) }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, addr: LineAddr) -> bool {
        self.entries.iter().any(|e| e.addr == addr)
    }

    /// Merges a write and returns the entry pushed out by overflow, if any.
    pub fn write(&mut self, addr: LineAddr, line_size: usize, start: ByteIdx, values: &[Value]) -> Option<WtEntry> {
        let mut entry = match self.entries.iter().position(|e| e.addr == addr) {
            Some(i) => self.entries.remove(i),
            None => WtEntry { addr, mask: WriteMask::default(), values: smallvec![0; line_size] },
        };
        for (i, v) in values.iter().enumerate() {
            entry.mask.set(start + i);
            entry.values[start + i] = *v;
        }
        self.entries.push(entry);
        let victim = (self.entries.len() > self.capacity).then(|| self.entries.remove(0));
        debug_assert!(self.entries.len() <= self.capacity);
        victim
    }

    pub fn take(&mut self, addr: LineAddr) -> Option<WtEntry> {
        let i = self.entries.iter().position(|e| e.addr == addr)?;
        Some(self.entries.remove(i))
    }

    pub fn drain(&mut self) -> Vec<WtEntry> {
        std::mem::take(&mut self.entries)
    }
}

/// Private state of one core: clean line copies plus the buffer.
#[derive(Clone, Debug)]
pub struct VipsCore {
    pub id: CoreId,
    pub line_size: usize,
    pub lines: BTreeMap<LineAddr, LineData>,
    pub buffer: WtBuffer,
}

impl VipsCore {
    pub fn new(id: CoreId, line_size: usize, buffer_entries: usize) -> Self {
        VipsCore { id, line_size, lines: BTreeMap::new(), buffer: WtBuffer::new(buffer_entries) }
    }

    fn write_through(&self, e: &WtEntry) -> Message {
        Message::WriteBack { sender: self.id, cnt: 1, body: Some(e.body()) }
    }

    pub fn holds(&self, addr: LineAddr) -> bool {
        self.lines.contains_key(&addr)
    }

    /// Installs a line fetched from the LLC.
    pub fn fill(&mut self, addr: LineAddr, data: LineData) {
        self.lines.insert(addr, data);
    }

    pub fn read(&self, addr: LineAddr, start: ByteIdx, len: usize) -> Option<LineData> {
        self.lines.get(&addr).map(|d| d[start..start + len].iter().copied().collect())
    }

    /// Writes into a present line; returns the write-through an overflowing
    /// buffer had to send.
    pub fn write(&mut self, addr: LineAddr, start: ByteIdx, values: &[Value]) -> Option<Message> {
        let line = self.lines.get_mut(&addr).expect("write-allocate fills the line first");
        line[start..start + values.len()].copy_from_slice(values);
        let victim = self.buffer.write(addr, self.line_size, start, values)?;
        Some(self.write_through(&victim))
    }

    /// Drops a line, flushing its buffered bytes first.
    pub fn evict(&mut self, addr: LineAddr) -> Option<Message> {
        self.lines.remove(&addr);
        let e = self.buffer.take(addr)?;
        Some(self.write_through(&e))
    }

    /// Write-throughs for every buffered entry, oldest first.
    pub fn flush(&mut self) -> Vec<Message> {
        let entries = self.buffer.drain();
        entries.iter().map(|e| self.write_through(e)).collect()
    }

    /// Flushes, then invalidates every line. Returns the flush and the number
    /// of lines invalidated.
    pub fn acquire(&mut self) -> (Vec<Message>, usize) {
        let flush = self.flush();
        let n = self.lines.len();
        self.lines.clear();
        (flush, n)
    }
}

/// Shared cache contents for the VIPS backend.
#[derive(Clone, Debug, Default)]
pub struct VipsLlc {
    pub line_size: usize,
    lines: HashMap<LineAddr, LineData>,
}

impl VipsLlc {
    pub fn new(line_size: usize) -> Self {
        VipsLlc { line_size, lines: HashMap::new() }
    }

    pub fn read_line(&self, addr: LineAddr) -> LineData {
        self.lines.get(&addr).cloned().unwrap_or_else(|| smallvec![0; self.line_size])
    }

    /// Applies a write-through and returns its PutAck.
    pub fn write_through(&mut self, msg: &Message) -> Message {
        let Message::WriteBack { sender, body: Some(b), .. } = msg else {
            panic!("VIPS only sends data-carrying write-throughs");
        };
        let line_size = self.line_size;
        let line = self.lines.entry(b.addr).or_insert_with(|| smallvec![0; line_size]);
        for (i, v) in b.dirty_bytes() {
            line[i] = v;
        }
        Message::PutAck { addr: b.addr, dest: *sender }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn core(entries: usize) -> VipsCore {
        VipsCore::new(CoreId(0), 64, entries)
    }

    #[test]
    fn eleventh_line_evicts_lru() {
        let mut c = core(10);
        for l in 0..10 {
            c.fill(LineAddr(l), smallvec![0; 64]);
            assert!(c.write(LineAddr(l), 0, &[1]).is_none());
        }
        c.fill(LineAddr(10), smallvec![0; 64]);
        let wt = c.write(LineAddr(10), 0, &[1]).expect("overflow");
        match wt {
            Message::WriteBack { cnt: 1, body: Some(b), .. } => assert_eq!(b.addr, LineAddr(0)),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.buffer.len(), 10);
    }

    #[test]
    fn same_line_writes_merge() {
        let mut c = core(10);
        c.fill(LineAddr(1), smallvec![0; 64]);
        c.write(LineAddr(1), 0, &[1]);
        c.write(LineAddr(1), 5, &[2, 3]);
        assert_eq!(c.buffer.len(), 1);
        let flush = c.flush();
        match &flush[..] {
            [Message::WriteBack { body: Some(b), .. }] => {
                assert_eq!(b.mask.count(), 3);
                assert_eq!(b.values.as_slice(), &[1, 2, 3]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn release_flushes_every_entry() {
        let mut c = core(10);
        for l in 0..4 {
            c.fill(LineAddr(l), smallvec![0; 64]);
            c.write(LineAddr(l), 1, &[4]);
        }
        assert_eq!(c.flush().len(), 4);
        assert!(c.flush().is_empty());
    }

    #[test]
    fn acquire_flushes_then_invalidates() {
        let mut c = core(10);
        let mut llc = VipsLlc::new(64);
        for l in 0..5 {
            c.fill(LineAddr(l), smallvec![0; 64]);
        }
        c.write(LineAddr(2), 0, &[8]);
        let (flush, n) = c.acquire();
        assert_eq!(n, 5);
        assert_eq!(flush.len(), 1);
        llc.write_through(&flush[0]);
        assert_eq!(llc.read_line(LineAddr(2))[0], 8);
        assert!(c.lines.is_empty());
    }

    #[test]
    fn buffered_eviction_flushes_entry() {
        let mut c = core(10);
        c.fill(LineAddr(1), smallvec![0; 64]);
        c.write(LineAddr(1), 0, &[1]);
        assert!(c.evict(LineAddr(1)).is_some());
        assert!(c.buffer.is_empty());
        c.fill(LineAddr(2), smallvec![0; 64]);
        assert!(c.evict(LineAddr(2)).is_none());
    }
}
