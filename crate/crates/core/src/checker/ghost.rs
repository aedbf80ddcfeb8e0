//! Ghost state for the data-race filter and the last-write oracle.
//!
//! Bytes are numbered `line * bytes_per_line + byte`; at most [`MAX_BYTES`]
//! bytes and [`MAX_CORES`] cores are tracked. There is a single lock.

pub const MAX_BYTES: usize = 16;
pub const MAX_CORES: usize = 4;

const NOBODY: u8 = u8::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GhostVerdict {
    Ok,
    Race,
}

/// Per-byte last writer plus happens-before visibility through the lock,
/// together with the value of the last program-order write to every byte.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RaceGhost {
    memory: [u8; MAX_BYTES],
    last_writer: [u8; MAX_BYTES],
    /// Bit `b` of `visible[c]`: core `c` is synchronized with the last write to `b`.
    visible: [u16; MAX_CORES],
    /// Bit `b`: the last write to `b` has been released under the lock.
    published: u16,
}

impl Default for RaceGhost {
    fn default() -> Self {
        RaceGhost { memory: [0; MAX_BYTES], last_writer: [NOBODY; MAX_BYTES], visible: [0; MAX_CORES], published: 0 }
    }
}

impl RaceGhost {
    pub fn new() -> Self {
        Self::default()
    }

    /// Value of the last program-order write to byte `b`, 0 if none.
    pub fn expected(&self, b: usize) -> u8 {
        self.memory[b]
    }

    pub fn last_writer(&self, b: usize) -> Option<usize> {
        match self.last_writer[b] {
            NOBODY => None,
            c => Some(c as usize),
        }
    }

    fn racy(&self, core: usize, b: usize) -> bool {
        match self.last_writer(b) {
            Some(w) if w != core => self.visible[core] & (1 << b) == 0,
            _ => false,
        }
    }

    pub fn read(&mut self, core: usize, b: usize) -> GhostVerdict {
        if self.racy(core, b) {
            GhostVerdict::Race
        } else {
            GhostVerdict::Ok
        }
    }

    pub fn write(&mut self, core: usize, b: usize, value: u8) -> GhostVerdict {
        let verdict = if self.racy(core, b) { GhostVerdict::Race } else { GhostVerdict::Ok };
        self.memory[b] = value;
        self.last_writer[b] = core as u8;
        for (c, vis) in self.visible.iter_mut().enumerate() {
            if c == core {
                *vis |= 1 << b;
            } else {
                *vis &= !(1 << b);
            }
        }
        self.published &= !(1 << b);
        verdict
    }

    pub fn release(&mut self, core: usize) {
        self.published |= self.visible[core];
    }

    pub fn acquire(&mut self, core: usize) {
        self.visible[core] |= self.published;
    }

    /// Records only the oracle value, leaving race bookkeeping untouched.
    /// Used when the filter is off.
    pub fn write_value(&mut self, b: usize, value: u8) {
        self.memory[b] = value;
    }

    /// Clears bookkeeping that cannot influence any future verdict, so that
    /// equivalent states encode identically.
    pub fn canonicalize(&mut self, cores: usize) {
        let mut live = 0u16;
        for b in 0..MAX_BYTES {
            if self.last_writer[b] != NOBODY {
                live |= 1 << b;
            }
        }
        for v in &mut self.visible {
            *v &= live;
        }
        // Publishing a write every core already sees changes nothing.
        let seen_by_all = self.visible[..cores].iter().fold(live, |acc, v| acc & v);
        self.published &= live & !seen_by_all;
    }

    /// Appends a compact encoding of the first `bytes` bytes and `cores` cores.
    pub fn encode(&self, bytes: usize, cores: usize, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.memory[..bytes]);
        out.extend_from_slice(&self.last_writer[..bytes]);
        for v in &self.visible[..cores] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.published.to_le_bytes());
    }

    pub fn decode(bytes: usize, cores: usize, r: &mut super::Decoder<'_>) -> Self {
        let mut g = RaceGhost::new();
        g.memory[..bytes].copy_from_slice(r.take(bytes));
        g.last_writer[..bytes].copy_from_slice(r.take(bytes));
        for v in &mut g.visible[..cores] {
            *v = r.u16();
        }
        g.published = r.u16();
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unsynchronized_read_races() {
        let mut g = RaceGhost::new();
        assert_eq!(g.write(1, 0, 1), GhostVerdict::Ok);
        assert_eq!(g.read(0, 0), GhostVerdict::Race);
    }

    #[test]
    fn release_acquire_orders_accesses() {
        let mut g = RaceGhost::new();
        g.write(1, 0, 1);
        g.release(1);
        g.acquire(0);
        assert_eq!(g.read(0, 0), GhostVerdict::Ok);
        assert_eq!(g.write(0, 0, 0), GhostVerdict::Ok);
    }

    #[test]
    fn own_write_never_races() {
        let mut g = RaceGhost::new();
        g.write(1, 0, 1);
        assert_eq!(g.read(1, 0), GhostVerdict::Ok);
    }

    #[test]
    fn write_after_release_is_not_published() {
        let mut g = RaceGhost::new();
        g.write(0, 0, 1);
        g.release(0);
        g.write(0, 0, 0);
        g.acquire(1);
        assert_eq!(g.read(1, 0), GhostVerdict::Race);
    }

    #[test]
    fn visibility_is_transitive_through_the_lock() {
        let mut g = RaceGhost::new();
        g.write(0, 0, 1);
        g.release(0);
        g.acquire(1);
        g.release(1);
        g.acquire(2);
        assert_eq!(g.read(2, 0), GhostVerdict::Ok);
    }

    #[test]
    fn canonicalize_drops_dead_bits() {
        let mut a = RaceGhost::new();
        a.release(0);
        a.acquire(1);
        a.visible[0] = 0b10;
        a.canonicalize(2);
        assert_eq!(a, RaceGhost::new());
    }

    #[test]
    fn canonicalize_forgets_publication_everyone_has_seen() {
        let mut a = RaceGhost::new();
        a.write(0, 0, 1);
        a.release(0);
        a.acquire(1);
        let mut b = a.clone();
        b.release(1);
        a.canonicalize(2);
        b.canonicalize(2);
        assert_eq!(a, b);
        assert_eq!(a.published, 0);
        let mut c = RaceGhost::new();
        c.write(0, 0, 1);
        c.release(0);
        c.canonicalize(2);
        assert_eq!(c.published, 1);
    }
}
