//! Directory MESI: a message-level protocol for the model checker and an
//! atomic timing model for the simulator.

pub mod protocol;
pub mod timing;
