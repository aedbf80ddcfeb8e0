//! Architectural parameters and address arithmetic.

use std::fmt;

use crate::error::ConfigError;
use crate::types::{ByteIdx, LineAddr, MAX_LINE_SIZE};

/// Capacity and associativity of one cache level, in lines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheGeometry {
    pub lines: usize,
    pub ways: usize,
}

impl CacheGeometry {
    pub fn new(lines: usize, ways: usize) -> Self {
        CacheGeometry { lines, ways }
    }

    /// Geometry for `bytes` of capacity with lines of `line_size` bytes.
    pub fn from_bytes(bytes: usize, line_size: usize, ways: usize) -> Self {
        CacheGeometry { lines: bytes / line_size, ways }
    }

    pub fn sets(&self) -> usize {
        self.lines / self.ways
    }
}

/// Core-to-LLC bandwidth as an exact ratio of bytes per cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bandwidth {
    pub bytes: u64,
    pub cycles: u64,
}

impl Bandwidth {
    /// 100 GB/s at 1.6 GHz is 62.5 bytes per cycle.
    pub const DEFAULT: Bandwidth = Bandwidth { bytes: 125, cycles: 2 };

    /// Parses a decimal such as `62.5` into an exact ratio.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::InvalidValue {
            key: "bandwidth_bytes_per_cycle".into(),
            value: text.into(),
        };
        let text = text.trim();
        let (int, frac) = match text.split_once('.') {
            Some((i, f)) => (i, f),
            None => (text, ""),
        };
        if int.is_empty() && frac.is_empty() || frac.len() > 9 {
            return Err(bad());
        }
        let digits = format!("{int}{frac}");
        let bytes: u64 = digits.parse().map_err(|_| bad())?;
        let cycles = 10u64.pow(frac.len() as u32);
        if bytes == 0 {
            return Err(bad());
        }
        let g = gcd(bytes, cycles);
        Ok(Bandwidth { bytes: bytes / g, cycles: cycles / g })
    }

    /// Cycles needed to move `bytes` bytes, rounded up.
    pub fn cycles_for(&self, bytes: u64) -> u64 {
        (bytes * self.cycles).div_ceil(self.bytes)
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bytes % self.cycles == 0 {
            write!(f, "{}", self.bytes / self.cycles)
        } else {
            write!(f, "{}", self.bytes as f64 / self.cycles as f64)
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub line_size: usize,
    pub l1_latency: u64,
    pub l2_latency: u64,
    pub llc_latency: u64,
    pub mem_latency: u64,
    /// One-way latency of a core-to-core transfer; only MESI pays it.
    pub remote_one_way: u64,
    pub flit_size: usize,
    pub bandwidth: Bandwidth,
    pub l1: CacheGeometry,
    pub l2: CacheGeometry,
    pub llc: CacheGeometry,
    /// 1 (L1 only) or 2 (L1 + inclusive L2).
    pub private_levels: u8,
    pub signature_bits: usize,
    pub signature_hashes: usize,
    pub wt_buffer_entries: usize,
    /// Cycles charged per private line scanned at a self-invalidation or commit.
    pub episode_scan_cost: u64,
}

impl ArchConfig {
    /// The full-size machine: 32 KB L1, 256 KB L2, 64 MB LLC.
    pub fn full_scale() -> Self {
        ArchConfig {
            l1: CacheGeometry::from_bytes(32 << 10, 64, 8),
            l2: CacheGeometry::from_bytes(256 << 10, 64, 8),
            llc: CacheGeometry::from_bytes(64 << 20, 64, 32),
            ..Self::desk_scale()
        }
    }

    /// Same latencies and bandwidth, capacities shrunk so small synthetic
    /// working sets still see evictions: 2 KB L1, 16 KB L2, 256 KB LLC.
    pub fn desk_scale() -> Self {
        ArchConfig {
            line_size: 64,
            l1_latency: 4,
            l2_latency: 10,
            llc_latency: 50,
            mem_latency: 120,
            remote_one_way: 15,
            flit_size: 16,
            bandwidth: Bandwidth::DEFAULT,
            l1: CacheGeometry::from_bytes(2 << 10, 64, 8),
            l2: CacheGeometry::from_bytes(16 << 10, 64, 8),
            llc: CacheGeometry::from_bytes(256 << 10, 64, 16),
            private_levels: 2,
            signature_bits: 1008,
            signature_hashes: 4,
            wt_buffer_entries: 10,
            episode_scan_cost: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, why: &str| ConfigError::Invariant(format!("{key}: {why}"));
        if !self.line_size.is_power_of_two() || self.line_size > MAX_LINE_SIZE {
            return Err(invalid("line_size", "must be a power of two no larger than 64"));
        }
        if self.flit_size == 0 || self.line_size % self.flit_size != 0 {
            return Err(invalid("flit_size", "must divide line_size"));
        }
        if !(1..=2).contains(&self.private_levels) {
            return Err(invalid("private_levels", "must be 1 or 2"));
        }
        for (name, g) in [("l1", self.l1), ("l2", self.l2), ("llc", self.llc)] {
            if g.ways == 0 || g.lines == 0 || g.lines % g.ways != 0 {
                return Err(invalid(name, "lines must be a non-zero multiple of ways"));
            }
        }
        if self.private_levels == 2 && self.l2.lines < self.l1.lines {
            return Err(invalid("l2", "inclusive L2 must be at least as large as L1"));
        }
        if self.signature_bits == 0 || self.signature_bits > u16::MAX as usize {
            return Err(invalid("signature_bits", "must be in 1..=65535"));
        }
        if self.signature_hashes == 0 {
            return Err(invalid("signature_hashes", "must be positive"));
        }
        if self.wt_buffer_entries == 0 {
            return Err(invalid("wt_buffer_entries", "must be positive"));
        }
        Ok(())
    }

    /// True when a dense signature plus its control byte fits in eight flits.
    pub fn signature_fits_eight_flits(&self) -> bool {
        crate::message::SIG_CONTROL_BYTES + 1 + self.signature_bits.div_ceil(8)
            <= 8 * self.flit_size
    }

    /// Applies one `key = value` override. Keys mirror the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::InvalidValue { key: key.into(), value: value.into() };
        let num = || value.trim().parse::<u64>().map_err(|_| bad());
        match key {
            "line_size" => self.line_size = num()? as usize,
            "l1_latency" => self.l1_latency = num()?,
            "l2_latency" => self.l2_latency = num()?,
            "llc_latency" => self.llc_latency = num()?,
            "mem_latency" => self.mem_latency = num()?,
            "remote_one_way" => self.remote_one_way = num()?,
            "flit_size" => self.flit_size = num()? as usize,
            "bandwidth_bytes_per_cycle" => self.bandwidth = Bandwidth::parse(value)?,
            "l1_lines" => self.l1.lines = num()? as usize,
            "l1_ways" => self.l1.ways = num()? as usize,
            "l2_lines" => self.l2.lines = num()? as usize,
            "l2_ways" => self.l2.ways = num()? as usize,
            "llc_lines" => self.llc.lines = num()? as usize,
            "llc_ways" => self.llc.ways = num()? as usize,
            "private_levels" => self.private_levels = num()? as u8,
            "signature_bits" => self.signature_bits = num()? as usize,
            "signature_hashes" => self.signature_hashes = num()? as usize,
            "wt_buffer_entries" => self.wt_buffer_entries = num()? as usize,
            "episode_scan_cost" => self.episode_scan_cost = num()?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: lineno + 1, text: raw.into() })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk_scale()
    }
}

/// Splits a global byte address into its line and the offset inside it.
pub fn split_address(byte_addr: u64, cfg: &ArchConfig) -> (LineAddr, ByteIdx) {
    let size = cfg.line_size as u64;
    (LineAddr(byte_addr / size), (byte_addr % size) as ByteIdx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_address_examples() {
        let cfg = ArchConfig::default();
        assert_eq!(split_address(0, &cfg), (LineAddr(0), 0));
        assert_eq!(split_address(70, &cfg), (LineAddr(1), 6));
        assert_eq!(split_address(127, &cfg), (LineAddr(1), 63));
    }

    #[test]
    fn defaults_are_valid() {
        ArchConfig::desk_scale().validate().unwrap();
        let full = ArchConfig::full_scale();
        full.validate().unwrap();
        assert_eq!(full.l1.lines, 512);
        assert_eq!(full.llc.lines, 1 << 20);
        assert!(full.signature_fits_eight_flits());
    }

    #[test]
    fn bandwidth_parsing() {
        assert_eq!(Bandwidth::parse("62.5").unwrap(), Bandwidth::DEFAULT);
        assert_eq!(Bandwidth::parse("64").unwrap(), Bandwidth { bytes: 64, cycles: 1 });
        assert!(Bandwidth::parse("0").is_err());
        assert!(Bandwidth::parse("x").is_err());
        assert_eq!(Bandwidth::DEFAULT.cycles_for(96), 2);
        assert_eq!(Bandwidth::DEFAULT.cycles_for(0), 0);
    }

    #[test]
    fn config_text_overrides() {
        let mut cfg = ArchConfig::default();
        cfg.apply_text("# comment\nllc_latency = 40\n\nprivate_levels=1 # trailing\n")
            .unwrap();
        assert_eq!(cfg.llc_latency, 40);
        assert_eq!(cfg.private_levels, 1);
        assert!(matches!(cfg.apply_text("bogus = 1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(cfg.apply_text("llc_latency"), Err(ConfigError::Syntax { .. })));
        assert!(cfg.clone().apply_text("line_size = 48").is_err());
    }
}
