use std::collections::BTreeMap;

use crate::types::{ByteIdx, LineAddr, Value};

/// Flat memory holding the value of the last program-order write to every
/// byte. Unwritten bytes read as 0. Zero values are not stored, so two
/// oracles are equal exactly when they agree on every byte.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlatMemoryOracle {
    bytes: BTreeMap<(LineAddr, ByteIdx), Value>,
}

impl FlatMemoryOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, addr: LineAddr, idx: ByteIdx, value: Value) {
        if value == 0 {
            self.bytes.remove(&(addr, idx));
        } else {
            self.bytes.insert((addr, idx), value);
        }
    }

    pub fn read(&self, addr: LineAddr, idx: ByteIdx) -> Value {
        self.bytes.get(&(addr, idx)).copied().unwrap_or(0)
    }

    /// Non-zero bytes in address order.
    pub fn iter(&self) -> impl Iterator<Item = ((LineAddr, ByteIdx), Value)> + '_ {
        self.bytes.iter().map(|(k, v)| (*k, *v))
    }
}
