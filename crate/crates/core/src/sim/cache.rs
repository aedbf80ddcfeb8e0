//! Tag-only set-associative caches with LRU replacement. Data lives in the
//! protocol state; these only decide hit levels and victims.

use crate::arch::{ArchConfig, CacheGeometry};
use crate::types::LineAddr;

#[derive(Clone, Debug)]
pub struct SetAssoc {
    ways: usize,
    /// Each set ordered least to most recently used.
    sets: Vec<Vec<LineAddr>>,
}

impl SetAssoc {
    pub fn new(g: CacheGeometry) -> Self {
        SetAssoc { ways: g.ways, sets: vec![Vec::with_capacity(g.ways); g.sets().max(1)] }
    }

    fn set(&self, addr: LineAddr) -> usize {
        (addr.0 % self.sets.len() as u64) as usize
    }

    pub fn contains(&self, addr: LineAddr) -> bool {
        self.sets[self.set(addr)].contains(&addr)
    }

    /// Marks `addr` most recently used; false if absent.
    pub fn touch(&mut self, addr: LineAddr) -> bool {
        let s = self.set(addr);
        let set = &mut self.sets[s];
        match set.iter().position(|a| *a == addr) {
            Some(i) => {
                let a = set.remove(i);
                set.push(a);
                true
            }
            None => false,
        }
    }

    /// Inserts as most recently used and returns the line it displaced.
    pub fn insert(&mut self, addr: LineAddr) -> Option<LineAddr> {
        if self.touch(addr) {
            return None;
        }
        let ways = self.ways;
        let s = self.set(addr);
        let set = &mut self.sets[s];
        let victim = (set.len() == ways).then(|| set.remove(0));
        set.push(addr);
        victim
    }

    pub fn remove(&mut self, addr: LineAddr) -> bool {
        let s = self.set(addr);
        let set = &mut self.sets[s];
        match set.iter().position(|a| *a == addr) {
            Some(i) => {
                set.remove(i);
                true
            }
            None => false,
        }
    }

    pub fn len(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.sets.iter_mut().for_each(Vec::clear);
    }
}

/// Where a private lookup found the line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    L1,
    L2,
    Miss,
}

/// One core's private hierarchy. The outermost private level (L2, or L1 when
/// there is only one) holds exactly the lines the protocol holds; an L2 is
/// inclusive of the L1.
#[derive(Clone, Debug)]
pub struct PrivateCaches {
    l1: SetAssoc,
    l2: Option<SetAssoc>,
}

impl PrivateCaches {
    pub fn new(cfg: &ArchConfig) -> Self {
        PrivateCaches { l1: SetAssoc::new(cfg.l1), l2: (cfg.private_levels == 2).then(|| SetAssoc::new(cfg.l2)) }
    }

    fn outer(&self) -> &SetAssoc {
        self.l2.as_ref().unwrap_or(&self.l1)
    }

    pub fn two_levels(&self) -> bool {
        self.l2.is_some()
    }

    pub fn contains(&self, addr: LineAddr) -> bool {
        self.outer().contains(addr)
    }

    /// Looks `addr` up, updating recency, and moves an L2 hit into the L1.
    pub fn lookup(&mut self, addr: LineAddr) -> Level {
        if self.l1.touch(addr) {
            if let Some(l2) = &mut self.l2 {
                l2.touch(addr);
            }
            return Level::L1;
        }
        if self.l2.as_mut().is_some_and(|l2| l2.touch(addr)) {
            self.l1.insert(addr);
            return Level::L2;
        }
        Level::Miss
    }

    /// Installs `addr` at every level. Returns the line the outermost level
    /// displaced; the protocol must evict it.
    pub fn fill(&mut self, addr: LineAddr) -> Option<LineAddr> {
        match &mut self.l2 {
            Some(l2) => {
                let victim = l2.insert(addr);
                if let Some(v) = victim {
                    self.l1.remove(v);
                }
                self.l1.insert(addr);
                victim
            }
            None => self.l1.insert(addr),
        }
    }

    pub fn remove(&mut self, addr: LineAddr) {
        self.l1.remove(addr);
        if let Some(l2) = &mut self.l2 {
            l2.remove(addr);
        }
    }

    pub fn clear(&mut self) {
        self.l1.clear();
        if let Some(l2) = &mut self.l2 {
            l2.clear();
        }
    }

    /// Lines held at the outermost level.
    pub fn len(&self) -> usize {
        self.outer().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_victim() {
        let mut c = SetAssoc::new(CacheGeometry::new(2, 2));
        assert_eq!(c.insert(LineAddr(1)), None);
        assert_eq!(c.insert(LineAddr(2)), None);
        c.touch(LineAddr(1));
        assert_eq!(c.insert(LineAddr(3)), Some(LineAddr(2)));
        assert!(c.contains(LineAddr(1)) && c.contains(LineAddr(3)));
    }

    #[test]
    fn sets_are_independent() {
        let mut c = SetAssoc::new(CacheGeometry::new(4, 1));
        for a in 0..4 {
            assert_eq!(c.insert(LineAddr(a)), None);
        }
        assert_eq!(c.insert(LineAddr(4)), Some(LineAddr(0)));
    }

    #[test]
    fn inclusive_l2_drops_l1_copy_of_victim() {
        let mut cfg = ArchConfig::desk_scale();
        cfg.l1 = CacheGeometry::new(2, 2);
        cfg.l2 = CacheGeometry::new(2, 2);
        let mut p = PrivateCaches::new(&cfg);
        p.fill(LineAddr(1));
        p.fill(LineAddr(2));
        assert_eq!(p.fill(LineAddr(3)), Some(LineAddr(1)));
        assert_eq!(p.lookup(LineAddr(1)), Level::Miss);
        assert_eq!(p.lookup(LineAddr(3)), Level::L1);
    }

    #[test]
    fn l2_hit_promotes() {
        let mut cfg = ArchConfig::desk_scale();
        cfg.l1 = CacheGeometry::new(1, 1);
        cfg.l2 = CacheGeometry::new(4, 4);
        let mut p = PrivateCaches::new(&cfg);
        p.fill(LineAddr(1));
        p.fill(LineAddr(2));
        assert_eq!(p.lookup(LineAddr(1)), Level::L2);
        assert_eq!(p.lookup(LineAddr(1)), Level::L1);
        assert_eq!(p.len(), 2);
    }
}
