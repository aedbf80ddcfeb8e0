//! Small domain newtypes shared by every engine.

use std::fmt;

use smallvec::SmallVec;

/// Line-granular address (byte address divided by the line size).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LineAddr(pub u64);

impl fmt::Debug for LineAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{:#x}", self.0)
    }
}

impl fmt::Display for LineAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CoreId(pub usize);

impl fmt::Debug for CoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for CoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Offset of a byte inside its line, always `< line_size`.
pub type ByteIdx = usize;

/// One byte of data. The checker restricts itself to the values 0 and 1.
pub type Value = u8;

/// Line payload. Inline for the tiny lines the checker uses, heap for 64 B lines.
pub type LineData = SmallVec<[Value; 8]>;

/// Largest line the per-byte masks can describe.
pub const MAX_LINE_SIZE: usize = 64;

/// Per-byte write bits of one line. Bit `i` set means byte `i` is dirty.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct WriteMask(pub u64);

impl WriteMask {
    pub const EMPTY: WriteMask = WriteMask(0);

    /// Mask with bytes `start..start + len` set.
    pub fn range(start: ByteIdx, len: usize) -> Self {
        debug_assert!(start + len <= MAX_LINE_SIZE);
        if len == 0 {
            return WriteMask(0);
        }
        let ones = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        WriteMask(ones << start)
    }

    pub fn full(line_size: usize) -> Self {
        Self::range(0, line_size)
    }

    pub fn is_set(self, idx: ByteIdx) -> bool {
        idx < 64 && self.0 & (1 << idx) != 0
    }

    pub fn set(&mut self, idx: ByteIdx) {
        self.0 |= 1 << idx;
    }

    pub fn clear(&mut self) {
        self.0 = 0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: WriteMask) -> WriteMask {
        WriteMask(self.0 | other.0)
    }

    /// True when every byte of `other` is also set here.
    pub fn covers(self, other: WriteMask) -> bool {
        self.0 & other.0 == other.0
    }

    /// Set byte indices, ascending.
    pub fn iter(self) -> impl Iterator<Item = ByteIdx> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let idx = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(idx)
        })
    }
}

impl fmt::Debug for WriteMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_range_and_iter() {
        let m = WriteMask::range(2, 3);
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(WriteMask::full(64).count(), 64);
        assert!(WriteMask::range(0, 0).is_empty());
        assert!(WriteMask::full(8).covers(m));
        assert!(!m.covers(WriteMask::full(8)));
    }
}
