//! Self-invalidation cache coherence: the Neat protocol family, a directory
//! MESI baseline and a VIPS-style write-through baseline, with an explicit
//! state model checker and a trace-driven timing simulator.

pub mod arch;
pub mod error;
pub mod line;
pub mod message;
pub mod neat;
pub mod oracle;
pub mod signature;
pub mod types;
pub mod checker;
pub mod mesi;
pub mod sim;
pub mod vips;
pub mod sweep;
pub mod workload;
