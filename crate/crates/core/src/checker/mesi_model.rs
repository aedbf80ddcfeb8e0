//! Directory MESI as a checker model. Synchronization has no protocol
//! effect; acquire and release only move the lock.

use super::ghost::RaceGhost;
use super::{Decoder, Event, Events, LockView, Model, Op, ViolationKind};
use crate::mesi::protocol::{MesiOp, MesiPerformed, MesiSystem};

#[derive(Clone, Debug)]
pub struct MesiModel {
    pub cores: usize,
    pub lines: usize,
    pub bytes: usize,
}

impl MesiModel {
    pub fn new(lines: usize, bytes: usize) -> Self {
        MesiModel { cores: 2, lines, bytes }
    }
}

fn push_performed(p: Option<MesiPerformed>, ev: &mut Events) {
    match p {
        Some(MesiPerformed::Read { core, line, byte, value }) => {
            ev.push(Event::Read { core: core as usize, line: line as usize, byte: byte as usize, value })
        }
        Some(MesiPerformed::Write { core, line, byte, value }) => {
            ev.push(Event::Write { core: core as usize, line: line as usize, byte: byte as usize, value })
        }
        None => {}
    }
}

impl Model for MesiModel {
    type State = MesiSystem;

    fn name(&self) -> String {
        format!("mesi {}x{}", self.lines, self.bytes)
    }
    fn cores(&self) -> usize {
        self.cores
    }
    fn lines(&self) -> usize {
        self.lines
    }
    fn bytes(&self) -> usize {
        self.bytes
    }

    fn initial(&self) -> MesiSystem {
        MesiSystem::new(self.cores, self.lines, self.bytes)
    }

    fn program_ops(&self, s: &MesiSystem, core: usize, lock: LockView, out: &mut Vec<Op>) {
        if !s.ready(core) {
            return;
        }
        let mut ops = Vec::new();
        s.enabled_ops(core, &mut ops);
        out.extend(ops.into_iter().map(|o| match o {
            MesiOp::Read { line, byte } => Op::Read { line, byte },
            MesiOp::Write { line, byte, value } => Op::Write { line, byte, value },
            MesiOp::Evict { line } => Op::Evict { line },
        }));
        if lock.free {
            out.push(Op::Acquire);
        }
        if lock.mine {
            out.push(Op::Release);
        }
    }

    fn apply_op(&self, s: &MesiSystem, core: usize, op: Op, ev: &mut Events) -> Result<MesiSystem, String> {
        let mop = match op {
            Op::Read { line, byte } => MesiOp::Read { line, byte },
            Op::Write { line, byte, value } => MesiOp::Write { line, byte, value },
            Op::Evict { line } => MesiOp::Evict { line },
            Op::Acquire => {
                ev.push(Event::AcquireGranted { core });
                return Ok(s.clone());
            }
            Op::Release => {
                ev.push(Event::ReleaseDone { core });
                return Ok(s.clone());
            }
        };
        let (next, p) = s.apply_op(core, mop).map_err(|e| e.to_string())?;
        push_performed(p, ev);
        Ok(next)
    }

    fn deliverable(&self, s: &MesiSystem, out: &mut Vec<u16>) {
        s.deliverable(out);
    }

    fn deliver(&self, s: &MesiSystem, idx: u16, ev: &mut Events) -> Result<MesiSystem, String> {
        let (next, p) = s.deliver(idx as usize).map_err(|e| e.to_string())?;
        push_performed(p, ev);
        Ok(next)
    }

    fn describe_delivery(&self, s: &MesiSystem, idx: u16) -> String {
        s.describe_slot(idx as usize)
    }

    fn in_flight(&self, s: &MesiSystem) -> usize {
        s.in_flight()
    }

    fn network_bound(&self) -> usize {
        // Per line and core: a request, a forwarded message, a response,
        // and owner data to the directory.
        4 * self.lines * (self.cores + 1)
    }

    fn check_state(&self, s: &MesiSystem, _ghost: &RaceGhost, _filtered: bool) -> Result<(), (ViolationKind, String)> {
        s.check_swmr().map_err(|e| (ViolationKind::Swmr, e))
    }

    fn encode(&self, s: &MesiSystem, out: &mut Vec<u8>) {
        s.encode(out);
    }

    fn decode(&self, r: &mut Decoder<'_>) -> MesiSystem {
        MesiSystem::decode(r, self.cores, self.lines, self.bytes)
    }
}
