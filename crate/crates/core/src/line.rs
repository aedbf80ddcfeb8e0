//! Private cache lines with per-byte write bits.

use crate::error::ProtocolError;
use crate::types::{ByteIdx, LineAddr, LineData, Value, WriteMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LineState {
    I,
    V,
    /// Partially invalid: dirty bytes are current, clean bytes may be stale.
    PI,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct L1Line {
    pub addr: LineAddr,
    pub state: LineState,
    pub data: LineData,
    pub write_bits: WriteMask,
}

impl L1Line {
    pub fn new_valid(addr: LineAddr, data: LineData) -> Self {
        L1Line { addr, state: LineState::V, data, write_bits: WriteMask::EMPTY }
    }

    pub fn invalid(addr: LineAddr, line_size: usize) -> Self {
        L1Line {
            addr,
            state: LineState::I,
            data: std::iter::repeat_n(0, line_size).collect(),
            write_bits: WriteMask::EMPTY,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.state != LineState::I
    }

    pub fn is_dirty(&self) -> bool {
        self.is_valid() && !self.write_bits.is_empty()
    }

    /// Writes `values` starting at `start` and sets the matching write bits.
    pub fn write_bytes(&mut self, start: ByteIdx, values: &[Value]) {
        for (i, v) in values.iter().enumerate() {
            self.data[start + i] = *v;
            self.write_bits.set(start + i);
        }
    }

    /// Checks that an invalid line carries no write bits.
    pub fn check(&self) -> Result<(), ProtocolError> {
        if self.state == LineState::I && !self.write_bits.is_empty() {
            return Err(ProtocolError::LineInvariant {
                addr: self.addr,
                why: "invalid line with write bits set",
            });
        }
        Ok(())
    }

    /// Fills the clean bytes of a PI line from `fetched` and makes it valid.
    pub fn merge_fetched(&mut self, fetched: &[Value]) -> Result<(), ProtocolError> {
        if self.state != LineState::PI {
            return Err(ProtocolError::MergeNotPartial);
        }
        for (i, (slot, new)) in self.data.iter_mut().zip(fetched).enumerate() {
            if !self.write_bits.is_set(i) {
                *slot = *new;
            }
        }
        self.state = LineState::V;
        Ok(())
    }

    /// Dirty bytes in ascending byte order.
    pub fn extract_dirty(&self) -> Vec<(ByteIdx, Value)> {
        self.write_bits.iter().map(|i| (i, self.data[i])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pi_line(data: Vec<u8>, bits: WriteMask) -> L1Line {
        L1Line { addr: LineAddr(3), state: LineState::PI, data: data.into(), write_bits: bits }
    }

    #[test]
    fn merge_all_clean_overwrites_everything() {
        let mut line = pi_line(vec![1; 64], WriteMask::EMPTY);
        let fetched = [7u8; 64];
        line.merge_fetched(&fetched).unwrap();
        assert_eq!(line.state, LineState::V);
        assert_eq!(&line.data[..], &fetched[..]);
    }

    #[test]
    fn merge_all_dirty_keeps_data() {
        let mut line = pi_line(vec![1; 64], WriteMask::full(64));
        line.merge_fetched(&[7u8; 64]).unwrap();
        assert_eq!(line.state, LineState::V);
        assert!(line.data.iter().all(|&b| b == 1));
        assert_eq!(line.write_bits, WriteMask::full(64));
    }

    #[test]
    fn merge_keeps_single_dirty_byte() {
        let mut data = vec![5u8; 64];
        data[3] = 9;
        let mut bits = WriteMask::EMPTY;
        bits.set(3);
        let mut line = pi_line(data, bits);
        line.merge_fetched(&[0u8; 64]).unwrap();
        // Byte-wise expectation computed independently of the mask helpers.
        let mut expected = [0u8; 64];
        expected[3] = 9;
        assert_eq!(&line.data[..], &expected[..]);
        assert_eq!(line.state, LineState::V);
    }

    #[test]
    fn merge_on_valid_line_is_a_contract_violation() {
        let mut line = L1Line::new_valid(LineAddr(0), vec![0u8; 4].into());
        assert_eq!(line.merge_fetched(&[1, 1, 1, 1]), Err(ProtocolError::MergeNotPartial));
    }

    #[test]
    fn extract_dirty_examples() {
        let mut line = L1Line::new_valid(LineAddr(0), vec![0u8; 64].into());
        assert!(line.extract_dirty().is_empty());
        line.write_bytes(63, &[0xb]);
        line.write_bytes(0, &[0xa]);
        assert_eq!(line.extract_dirty(), vec![(0, 0xa), (63, 0xb)]);
    }

    #[test]
    fn invalid_line_with_write_bits_fails_check() {
        let mut line = L1Line::invalid(LineAddr(1), 4);
        assert!(line.check().is_ok());
        line.write_bits.set(0);
        assert!(line.check().is_err());
    }

    proptest! {
        #[test]
        fn extract_dirty_matches_scan(data in proptest::collection::vec(any::<u8>(), 64), bits in any::<u64>()) {
            let line = L1Line {
                addr: LineAddr(0),
                state: LineState::V,
                data: data.clone().into(),
                write_bits: WriteMask(bits),
            };
            let mut scan = Vec::new();
            for i in 0..64 {
                if (bits >> i) & 1 == 1 {
                    scan.push((i, data[i]));
                }
            }
            prop_assert_eq!(line.extract_dirty(), scan);
        }

        #[test]
        fn dirty_bytes_survive_merge(data in proptest::collection::vec(any::<u8>(), 64),
                                     fetched in proptest::collection::vec(any::<u8>(), 64),
                                     bits in any::<u64>()) {
            let mut line = pi_line(data, WriteMask(bits));
            let before = line.extract_dirty();
            line.merge_fetched(&fetched).unwrap();
            prop_assert_eq!(line.extract_dirty(), before);
        }
    }
}
