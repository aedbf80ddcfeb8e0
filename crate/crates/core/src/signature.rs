//! Per-core write signatures kept at the LLC.
//!
//! A signature records the lines that *other* cores wrote back since the
//! owning core's last acquire. In Bloom mode it over-approximates that set;
//! in exact mode it stores the set itself (used by the model checker and as
//! the reference in differential tests).
//!
//! Hashing is double hashing over two fixed 64-bit mixes:
//!
//! ```text
//! h1  = mix(addr ^ SEED_A)
//! h2  = mix(addr ^ SEED_B) | 1
//! pos = (h1 + i * h2) mod m        for i in 0..k
//! ```
//!
//! where `mix` is the SplitMix64 finalizer. The arithmetic is done in `u128`
//! so the positions are identical on every platform.
//!
//! Wire format (little-endian):
//!
//! ```text
//! sparse: 0x00 | count:u16 | count x position:u16 (ascending)
//! dense:  0x01 | ceil(m/8) bytes, bit i in byte i/8 at bit i%8
//! exact:  0x02 | count:u16 | count x addr:u64 (ascending)
//! ```
//!
//! A Bloom signature is sent in whichever of sparse and dense is strictly
//! shorter; ties go dense.

use smallvec::SmallVec;

use crate::error::DecodeError;
use crate::types::LineAddr;

const SEED_A: u64 = 0x6a09_e667_f3bc_c908;
const SEED_B: u64 = 0xbb67_ae85_84ca_a73b;

pub const TAG_SPARSE: u8 = 0x00;
pub const TAG_DENSE: u8 = 0x01;
pub const TAG_EXACT: u8 = 0x02;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The `k` bit positions of `addr` in an `m`-bit filter.
pub fn hash_positions(addr: LineAddr, k: usize, m: usize) -> impl Iterator<Item = usize> {
    let h1 = mix64(addr.0 ^ SEED_A) as u128;
    let h2 = (mix64(addr.0 ^ SEED_B) | 1) as u128;
    let m = m as u128;
    (0..k as u128).map(move |i| ((h1 + i * h2) % m) as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignatureMode {
    Bloom,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Repr {
    Bloom { words: Vec<u64>, bits: usize, hashes: usize },
    Exact(SmallVec<[LineAddr; 4]>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WriteSignature {
    repr: Repr,
}

impl WriteSignature {
    pub fn bloom(bits: usize, hashes: usize) -> Self {
        assert!(bits > 0 && bits <= u16::MAX as usize, "signature size out of range");
        assert!(hashes > 0);
        WriteSignature { repr: Repr::Bloom { words: vec![0; bits.div_ceil(64)], bits, hashes } }
    }

    pub fn exact() -> Self {
        WriteSignature { repr: Repr::Exact(SmallVec::new()) }
    }

    pub fn new(mode: SignatureMode, bits: usize, hashes: usize) -> Self {
        match mode {
            SignatureMode::Bloom => Self::bloom(bits, hashes),
            SignatureMode::Exact => Self::exact(),
        }
    }

    pub fn mode(&self) -> SignatureMode {
        match self.repr {
            Repr::Bloom { .. } => SignatureMode::Bloom,
            Repr::Exact(_) => SignatureMode::Exact,
        }
    }

    pub fn insert(&mut self, addr: LineAddr) {
        match &mut self.repr {
            Repr::Bloom { words, bits, hashes } => {
                for p in hash_positions(addr, *hashes, *bits) {
                    words[p / 64] |= 1 << (p % 64);
                }
            }
            Repr::Exact(set) => {
                if let Err(at) = set.binary_search(&addr) {
                    set.insert(at, addr);
                }
            }
        }
    }

    pub fn may_contain(&self, addr: LineAddr) -> bool {
        match &self.repr {
            Repr::Bloom { words, bits, hashes } => hash_positions(addr, *hashes, *bits)
                .all(|p| words[p / 64] & (1 << (p % 64)) != 0),
            Repr::Exact(set) => set.binary_search(&addr).is_ok(),
        }
    }

    pub fn clear(&mut self) {
        match &mut self.repr {
            Repr::Bloom { words, .. } => words.iter_mut().for_each(|w| *w = 0),
            Repr::Exact(set) => set.clear(),
        }
    }

    pub fn is_empty(&self) -> bool {
        match &self.repr {
            Repr::Bloom { words, .. } => words.iter().all(|&w| w == 0),
            Repr::Exact(set) => set.is_empty(),
        }
    }

    /// Set bits in Bloom mode, members in exact mode.
    pub fn population(&self) -> usize {
        match &self.repr {
            Repr::Bloom { words, .. } => words.iter().map(|w| w.count_ones() as usize).sum(),
            Repr::Exact(set) => set.len(),
        }
    }

    /// Members of an exact signature, ascending. Empty for Bloom mode.
    pub fn exact_members(&self) -> &[LineAddr] {
        match &self.repr {
            Repr::Exact(set) => set,
            Repr::Bloom { .. } => &[],
        }
    }

    fn set_positions(words: &[u64]) -> impl Iterator<Item = usize> + '_ {
        words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(wi * 64 + b)
            })
        })
    }

    pub fn serialize(&self) -> Vec<u8> {
        match &self.repr {
            Repr::Bloom { words, bits, .. } => {
                let set = self.population();
                let dense_len = 1 + bits.div_ceil(8);
                let sparse_len = 3 + 2 * set;
                if sparse_len < dense_len {
                    let mut out = Vec::with_capacity(sparse_len);
                    out.push(TAG_SPARSE);
                    out.extend_from_slice(&(set as u16).to_le_bytes());
                    for p in Self::set_positions(words) {
                        out.extend_from_slice(&(p as u16).to_le_bytes());
                    }
                    out
                } else {
                    let mut out = Vec::with_capacity(dense_len);
                    out.push(TAG_DENSE);
                    let bytes = bits.div_ceil(8);
                    out.extend(words.iter().flat_map(|w| w.to_le_bytes()).take(bytes));
                    out
                }
            }
            Repr::Exact(set) => {
                let mut out = Vec::with_capacity(3 + 8 * set.len());
                out.push(TAG_EXACT);
                out.extend_from_slice(&(set.len() as u16).to_le_bytes());
                for a in set {
                    out.extend_from_slice(&a.0.to_le_bytes());
                }
                out
            }
        }
    }

    /// Inverse of [`serialize`](Self::serialize). `bits` and `hashes` give
    /// the filter geometry, which the payload does not carry.
    pub fn deserialize(payload: &[u8], bits: usize, hashes: usize) -> Result<Self, DecodeError> {
        let (&tag, rest) = payload.split_first().ok_or(DecodeError::Truncated)?;
        let read_u16 = |b: &[u8], at: usize| -> Result<u16, DecodeError> {
            b.get(at..at + 2)
                .map(|s| u16::from_le_bytes([s[0], s[1]]))
                .ok_or(DecodeError::Truncated)
        };
        match tag {
            TAG_SPARSE => {
                let count = read_u16(rest, 0)? as usize;
                let body = &rest[2..];
                if body.len() < 2 * count {
                    return Err(DecodeError::Truncated);
                }
                if body.len() > 2 * count {
                    return Err(DecodeError::Trailing);
                }
                let mut sig = Self::bloom(bits, hashes);
                let Repr::Bloom { words, .. } = &mut sig.repr else { unreachable!() };
                let mut prev: Option<usize> = None;
                for i in 0..count {
                    let p = read_u16(body, 2 * i)? as usize;
                    if p >= bits {
                        return Err(DecodeError::OutOfRange("bit position"));
                    }
                    if prev.is_some_and(|q| q >= p) {
                        return Err(DecodeError::OutOfRange("positions not ascending"));
                    }
                    prev = Some(p);
                    words[p / 64] |= 1 << (p % 64);
                }
                Ok(sig)
            }
            TAG_DENSE => {
                let nbytes = bits.div_ceil(8);
                if rest.len() < nbytes {
                    return Err(DecodeError::Truncated);
                }
                if rest.len() > nbytes {
                    return Err(DecodeError::Trailing);
                }
                let mut sig = Self::bloom(bits, hashes);
                let Repr::Bloom { words, .. } = &mut sig.repr else { unreachable!() };
                for (i, &byte) in rest.iter().enumerate() {
                    words[i / 8] |= (byte as u64) << (8 * (i % 8));
                }
                if bits % 64 != 0 {
                    let last = words.len() - 1;
                    if words[last] >> (bits % 64) != 0 {
                        return Err(DecodeError::OutOfRange("padding bits set"));
                    }
                }
                Ok(sig)
            }
            TAG_EXACT => {
                let count = read_u16(rest, 0)? as usize;
                let body = &rest[2..];
                if body.len() < 8 * count {
                    return Err(DecodeError::Truncated);
                }
                if body.len() > 8 * count {
                    return Err(DecodeError::Trailing);
                }
                let mut set: SmallVec<[LineAddr; 4]> = SmallVec::new();
                for chunk in body.chunks_exact(8) {
                    let a = LineAddr(u64::from_le_bytes(chunk.try_into().unwrap()));
                    if set.last().is_some_and(|&q| q >= a) {
                        return Err(DecodeError::OutOfRange("addresses not ascending"));
                    }
                    set.push(a);
                }
                Ok(WriteSignature { repr: Repr::Exact(set) })
            }
            other => Err(DecodeError::UnknownTag(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const M: usize = 1008;
    const K: usize = 4;

    #[test]
    fn empty_and_inserted() {
        let mut sig = WriteSignature::bloom(M, K);
        assert!(!sig.may_contain(LineAddr(42)));
        sig.insert(LineAddr(42));
        assert!(sig.may_contain(LineAddr(42)));
        sig.clear();
        assert!(!sig.may_contain(LineAddr(42)));
        assert!(sig.is_empty());
    }

    #[test]
    fn single_hash_is_h1() {
        let addr = LineAddr(0xdead_beef);
        let h1 = mix64(addr.0 ^ SEED_A) % M as u64;
        assert_eq!(hash_positions(addr, 1, M).collect::<Vec<_>>(), vec![h1 as usize]);
        let a: Vec<_> = hash_positions(addr, K, M).collect();
        let b: Vec<_> = hash_positions(addr, K, M).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn positions_are_uniform() {
        // 1000 addresses x 4 positions over 1008 buckets, chi-square with
        // 1007 degrees of freedom: mean 1007, sd ~45. Accept within 4 sd.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut buckets = vec![0u32; M];
        let n = 1000;
        for _ in 0..n {
            for p in hash_positions(LineAddr(rng.gen()), K, M) {
                buckets[p] += 1;
            }
        }
        let expected = (n * K) as f64 / M as f64;
        let chi2: f64 =
            buckets.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let dof = (M - 1) as f64;
        assert!((chi2 - dof).abs() < 4.0 * (2.0 * dof).sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn encoding_sizes() {
        let empty = WriteSignature::bloom(M, K);
        assert_eq!(empty.serialize(), vec![TAG_SPARSE, 0, 0]);
        let mut full = WriteSignature::bloom(M, K);
        let Repr::Bloom { words, .. } = &mut full.repr else { unreachable!() };
        for p in 0..M {
            words[p / 64] |= 1 << (p % 64);
        }
        let dense = full.serialize();
        assert_eq!(dense.len(), 127);
        assert_eq!(dense[0], TAG_DENSE);
        assert_eq!(WriteSignature::deserialize(&dense, M, K).unwrap(), full);
    }

    #[test]
    fn tie_goes_dense() {
        // m = 16: dense is 3 bytes, sparse with 0 bits is 3 bytes as well.
        let sig = WriteSignature::bloom(16, 1);
        assert_eq!(sig.serialize()[0], TAG_DENSE);
    }

    #[test]
    fn malformed_payloads() {
        assert_eq!(WriteSignature::deserialize(&[], M, K), Err(DecodeError::Truncated));
        assert_eq!(WriteSignature::deserialize(&[9], M, K), Err(DecodeError::UnknownTag(9)));
        assert_eq!(
            WriteSignature::deserialize(&[TAG_SPARSE, 1, 0], M, K),
            Err(DecodeError::Truncated)
        );
        assert!(WriteSignature::deserialize(&[TAG_SPARSE, 1, 0, 0xff, 0xff], M, K).is_err());
        assert!(WriteSignature::deserialize(&[TAG_SPARSE, 2, 0, 5, 0, 4, 0], M, K).is_err());
        let mut dense = vec![TAG_DENSE];
        dense.extend(std::iter::repeat_n(0u8, 126));
        dense[126] = 0x80; // bit 1007 is the last legal bit
        assert!(WriteSignature::deserialize(&dense, M, K).is_ok());
        dense.push(0);
        assert_eq!(WriteSignature::deserialize(&dense, M, K), Err(DecodeError::Trailing));
        let mut dense = vec![TAG_DENSE];
        dense.extend(std::iter::repeat_n(0u8, 126));
        let mut odd = WriteSignature::bloom(1001, 4).serialize();
        odd[0] = TAG_DENSE;
        odd.resize(1 + 126, 0);
        odd[126] = 0x80; // bit 1007 beyond m = 1001
        assert!(WriteSignature::deserialize(&odd, 1001, 4).is_err());
    }

    #[test]
    fn exact_round_trip() {
        let mut sig = WriteSignature::exact();
        sig.insert(LineAddr(9));
        sig.insert(LineAddr(2));
        sig.insert(LineAddr(9));
        assert_eq!(sig.exact_members(), &[LineAddr(2), LineAddr(9)]);
        let bytes = sig.serialize();
        assert_eq!(WriteSignature::deserialize(&bytes, M, K).unwrap(), sig);
    }

    fn bloom_from(addrs: &[u64]) -> WriteSignature {
        let mut s = WriteSignature::bloom(M, K);
        for &a in addrs {
            s.insert(LineAddr(a));
        }
        s
    }

    proptest! {
        #[test]
        fn round_trip_and_minimal(addrs in proptest::collection::vec(0u64..100_000, 0..300)) {
            let sig = bloom_from(&addrs);
            let bytes = sig.serialize();
            prop_assert!(bytes.len() <= 127);
            let pop = sig.population();
            let sparse = 3 + 2 * pop;
            let dense = 127;
            prop_assert_eq!(bytes.len(), if sparse < dense { sparse } else { dense });
            prop_assert_eq!(WriteSignature::deserialize(&bytes, M, K).unwrap(), sig);
        }

        #[test]
        fn bloom_is_superset_of_exact(inserted in proptest::collection::vec(0u64..512, 0..64),
                                       probes in proptest::collection::vec(0u64..512, 1..64)) {
            let bloom = bloom_from(&inserted);
            let mut exact = WriteSignature::exact();
            for &a in &inserted {
                exact.insert(LineAddr(a));
            }
            for &p in probes.iter().chain(&inserted) {
                if exact.may_contain(LineAddr(p)) {
                    prop_assert!(bloom.may_contain(LineAddr(p)));
                }
            }
        }
    }
}
