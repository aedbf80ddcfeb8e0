//! Message-level directory MESI with transient states.
//!
//! Follows the standard baseline directory protocol (MSI extended with an
//! Exclusive grant on a GetS that finds no sharers). Three virtual networks:
//!
//! * requests to the directory (GetS, GetM, PutS, PutM, PutE) and owner data
//!   written back to the directory travel unordered;
//! * forwarded messages from the directory to a core (FwdGetS, FwdGetM, Inv,
//!   PutAck) travel in FIFO order per destination;
//! * responses to cores (Data, InvAck) travel unordered.
//!
//! A message that a controller must stall on stays in the network and is
//! simply not deliverable. The system state is a value: every transition
//! clones and returns a new one.

use std::fmt;

use smallvec::SmallVec;

use crate::checker::Decoder;
use crate::types::LineData;

#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CacheState {
    I,
    IS_D,
    IM_AD,
    IM_A,
    S,
    SM_AD,
    SM_A,
    M,
    E,
    MI_A,
    EI_A,
    SI_A,
    II_A,
}

impl CacheState {
    const ALL: [CacheState; 13] = [
        CacheState::I,
        CacheState::IS_D,
        CacheState::IM_AD,
        CacheState::IM_A,
        CacheState::S,
        CacheState::SM_AD,
        CacheState::SM_A,
        CacheState::M,
        CacheState::E,
        CacheState::MI_A,
        CacheState::EI_A,
        CacheState::SI_A,
        CacheState::II_A,
    ];

    /// The core holds a readable copy.
    pub fn is_reader(self) -> bool {
        matches!(self, CacheState::S | CacheState::SM_AD | CacheState::SM_A)
    }

    pub fn is_writer(self) -> bool {
        matches!(self, CacheState::M | CacheState::E)
    }

    fn keeps_data(self) -> bool {
        matches!(
            self,
            CacheState::S | CacheState::SM_A | CacheState::IM_A | CacheState::M | CacheState::E | CacheState::MI_A | CacheState::EI_A
        )
    }
}

#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DirState {
    I,
    S,
    E,
    M,
    S_D,
}

impl DirState {
    const ALL: [DirState; 5] = [DirState::I, DirState::S, DirState::E, DirState::M, DirState::S_D];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DataSource {
    Dir,
    /// Directory data granting the Exclusive state.
    DirExclusive,
    Owner,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MesiMsg {
    GetS { src: u8, line: u8 },
    GetM { src: u8, line: u8 },
    PutS { src: u8, line: u8 },
    PutM { src: u8, line: u8, data: LineData },
    PutE { src: u8, line: u8 },
    DataToDir { src: u8, line: u8, data: LineData },
    FwdGetS { dst: u8, line: u8, req: u8 },
    FwdGetM { dst: u8, line: u8, req: u8 },
    Inv { dst: u8, line: u8, req: u8 },
    PutAck { dst: u8, line: u8 },
    Data { dst: u8, line: u8, data: LineData, acks: i8, from: DataSource },
    InvAck { dst: u8, line: u8 },
}

impl MesiMsg {
    pub fn to_dir(&self) -> bool {
        matches!(
            self,
            MesiMsg::GetS { .. }
                | MesiMsg::GetM { .. }
                | MesiMsg::PutS { .. }
                | MesiMsg::PutM { .. }
                | MesiMsg::PutE { .. }
                | MesiMsg::DataToDir { .. }
        )
    }

    /// Travels on the ordered directory-to-core channel.
    pub fn forwarded(&self) -> bool {
        matches!(self, MesiMsg::FwdGetS { .. } | MesiMsg::FwdGetM { .. } | MesiMsg::Inv { .. } | MesiMsg::PutAck { .. })
    }

    fn dst(&self) -> u8 {
        match self {
            MesiMsg::FwdGetS { dst, .. }
            | MesiMsg::FwdGetM { dst, .. }
            | MesiMsg::Inv { dst, .. }
            | MesiMsg::PutAck { dst, .. }
            | MesiMsg::Data { dst, .. }
            | MesiMsg::InvAck { dst, .. } => *dst,
            _ => u8::MAX,
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            MesiMsg::GetS { src, line } => out.extend([0, *src, *line]),
            MesiMsg::GetM { src, line } => out.extend([1, *src, *line]),
            MesiMsg::PutS { src, line } => out.extend([2, *src, *line]),
            MesiMsg::PutM { src, line, data } => {
                out.extend([3, *src, *line]);
                out.extend_from_slice(data);
            }
            MesiMsg::PutE { src, line } => out.extend([4, *src, *line]),
            MesiMsg::DataToDir { src, line, data } => {
                out.extend([5, *src, *line]);
                out.extend_from_slice(data);
            }
            MesiMsg::FwdGetS { dst, line, req } => out.extend([6, *dst, *line, *req]),
            MesiMsg::FwdGetM { dst, line, req } => out.extend([7, *dst, *line, *req]),
            MesiMsg::Inv { dst, line, req } => out.extend([8, *dst, *line, *req]),
            MesiMsg::PutAck { dst, line } => out.extend([9, *dst, *line]),
            MesiMsg::Data { dst, line, data, acks, from } => {
                out.extend([10, *dst, *line, *acks as u8, *from as u8]);
                out.extend_from_slice(data);
            }
            MesiMsg::InvAck { dst, line } => out.extend([11, *dst, *line]),
        }
    }

    fn decode(r: &mut Decoder<'_>, bytes: usize) -> MesiMsg {
        let tag = r.u8();
        let (a, line) = (r.u8(), r.u8());
        match tag {
            0 => MesiMsg::GetS { src: a, line },
            1 => MesiMsg::GetM { src: a, line },
            2 => MesiMsg::PutS { src: a, line },
            3 => MesiMsg::PutM { src: a, line, data: r.take(bytes).into() },
            4 => MesiMsg::PutE { src: a, line },
            5 => MesiMsg::DataToDir { src: a, line, data: r.take(bytes).into() },
            6 => MesiMsg::FwdGetS { dst: a, line, req: r.u8() },
            7 => MesiMsg::FwdGetM { dst: a, line, req: r.u8() },
            8 => MesiMsg::Inv { dst: a, line, req: r.u8() },
            9 => MesiMsg::PutAck { dst: a, line },
            10 => {
                let acks = r.u8() as i8;
                let from = [DataSource::Dir, DataSource::DirExclusive, DataSource::Owner][r.u8() as usize];
                MesiMsg::Data { dst: a, line, data: r.take(bytes).into(), acks, from }
            }
            _ => MesiMsg::InvAck { dst: a, line },
        }
    }
}

impl fmt::Display for MesiMsg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MesiMsg::GetS { src, line } => write!(f, "GetS(L{line}) c{src}->dir"),
            MesiMsg::GetM { src, line } => write!(f, "GetM(L{line}) c{src}->dir"),
            MesiMsg::PutS { src, line } => write!(f, "PutS(L{line}) c{src}->dir"),
            MesiMsg::PutM { src, line, data } => write!(f, "PutM(L{line}, {data:?}) c{src}->dir"),
            MesiMsg::PutE { src, line } => write!(f, "PutE(L{line}) c{src}->dir"),
            MesiMsg::DataToDir { src, line, data } => write!(f, "Data(L{line}, {data:?}) c{src}->dir"),
            MesiMsg::FwdGetS { dst, line, req } => write!(f, "FwdGetS(L{line}, req c{req}) dir->c{dst}"),
            MesiMsg::FwdGetM { dst, line, req } => write!(f, "FwdGetM(L{line}, req c{req}) dir->c{dst}"),
            MesiMsg::Inv { dst, line, req } => write!(f, "Inv(L{line}, req c{req}) dir->c{dst}"),
            MesiMsg::PutAck { dst, line } => write!(f, "PutAck(L{line}) dir->c{dst}"),
            MesiMsg::Data { dst, line, data, acks, from } => {
                write!(f, "Data(L{line}, {data:?}, acks={acks}, from {from:?}) ->c{dst}")
            }
            MesiMsg::InvAck { dst, line } => write!(f, "InvAck(L{line}) ->c{dst}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CacheLine {
    pub state: CacheState,
    pub data: LineData,
    /// Invalidation acks still expected; negative when acks beat the data.
    pub acks: i8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PendingOp {
    Read { byte: u8 },
    Write { byte: u8, value: u8 },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MesiCore {
    pub lines: SmallVec<[CacheLine; 2]>,
    /// The access the core is blocked on.
    pub pending: Option<(u8, PendingOp)>,
    /// Ordered forwarded channel into this core.
    pub fwd: Vec<MesiMsg>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DirLine {
    pub state: DirState,
    pub owner: Option<u8>,
    pub sharers: u8,
    pub memory: LineData,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MesiSystem {
    pub cores: SmallVec<[MesiCore; 2]>,
    pub dir: SmallVec<[DirLine; 2]>,
    /// Requests and responses in flight, sorted.
    pub net: Vec<MesiMsg>,
}

/// An access that took effect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MesiPerformed {
    Read { core: u8, line: u8, byte: u8, value: u8 },
    Write { core: u8, line: u8, byte: u8, value: u8 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MesiError {
    /// A message arrived in a state where the protocol defines no transition.
    Unexpected { at: String, state: String, msg: String },
    NotReady { core: u8 },
    BadOp { core: u8, why: &'static str },
}

impl fmt::Display for MesiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MesiError::Unexpected { at, state, msg } => write!(f, "{at} in state {state} cannot handle {msg}"),
            MesiError::NotReady { core } => write!(f, "c{core} issued while blocked"),
            MesiError::BadOp { core, why } => write!(f, "c{core}: {why}"),
        }
    }
}

impl std::error::Error for MesiError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MesiOp {
    Read { line: u8, byte: u8 },
    Write { line: u8, byte: u8, value: u8 },
    Evict { line: u8 },
}

fn zeros(n: usize) -> LineData {
    std::iter::repeat_n(0, n).collect()
}

impl MesiSystem {
    pub fn new(cores: usize, lines: usize, bytes: usize) -> Self {
        let line = CacheLine { state: CacheState::I, data: zeros(bytes), acks: 0 };
        MesiSystem {
            cores: (0..cores)
                .map(|_| MesiCore { lines: (0..lines).map(|_| line.clone()).collect(), pending: None, fwd: Vec::new() })
                .collect(),
            dir: (0..lines)
                .map(|_| DirLine { state: DirState::I, owner: None, sharers: 0, memory: zeros(bytes) })
                .collect(),
            net: Vec::new(),
        }
    }

    fn bytes(&self) -> usize {
        self.dir[0].memory.len()
    }

    pub fn ready(&self, core: usize) -> bool {
        self.cores[core].pending.is_none()
    }

    /// Operations a ready core may issue.
    pub fn enabled_ops(&self, core: usize, out: &mut Vec<MesiOp>) {
        if !self.ready(core) {
            return;
        }
        for (l, line) in self.cores[core].lines.iter().enumerate() {
            let l = l as u8;
            use CacheState::*;
            let (access, evict) = match line.state {
                I => (true, false),
                S | E | M => (true, true),
                _ => (false, false),
            };
            if access {
                for b in 0..self.bytes() as u8 {
                    out.push(MesiOp::Read { line: l, byte: b });
                    out.push(MesiOp::Write { line: l, byte: b, value: 0 });
                    out.push(MesiOp::Write { line: l, byte: b, value: 1 });
                }
            }
            if evict {
                out.push(MesiOp::Evict { line: l });
            }
        }
    }

    fn send(&mut self, m: MesiMsg) {
        if m.forwarded() {
            self.cores[m.dst() as usize].fwd.push(m);
        } else {
            let at = self.net.partition_point(|x| *x < m);
            self.net.insert(at, m);
        }
    }

    fn canonicalize(&mut self) {
        for c in &mut self.cores {
            for line in &mut c.lines {
                if !line.state.keeps_data() {
                    line.data.iter_mut().for_each(|b| *b = 0);
                }
                if !matches!(line.state, CacheState::IM_AD | CacheState::IM_A | CacheState::SM_AD | CacheState::SM_A) {
                    line.acks = 0;
                }
            }
        }
        for d in &mut self.dir {
            if d.state == DirState::S && d.sharers == 0 {
                d.state = DirState::I;
            }
            // The owner's data replaces the directory copy before it is read.
            if matches!(d.state, DirState::M | DirState::S_D) {
                d.memory.iter_mut().for_each(|b| *b = 0);
            }
            if d.state == DirState::I {
                d.sharers = 0;
                d.owner = None;
            }
        }
    }

    /// Issues a program operation; returns the access if it hit.
    pub fn apply_op(&self, core: usize, op: MesiOp) -> Result<(MesiSystem, Option<MesiPerformed>), MesiError> {
        if !self.ready(core) {
            return Err(MesiError::NotReady { core: core as u8 });
        }
        let mut s = self.clone();
        let c = core as u8;
        let mut performed = None;
        match op {
            MesiOp::Read { line, byte } => {
                let cl = &mut s.cores[core].lines[line as usize];
                match cl.state {
                    CacheState::S | CacheState::E | CacheState::M => {
                        performed = Some(MesiPerformed::Read { core: c, line, byte, value: cl.data[byte as usize] });
                    }
                    CacheState::I => {
                        cl.state = CacheState::IS_D;
                        s.cores[core].pending = Some((line, PendingOp::Read { byte }));
                        s.send(MesiMsg::GetS { src: c, line });
                    }
                    _ => return Err(MesiError::BadOp { core: c, why: "access to a line in transition" }),
                }
            }
            MesiOp::Write { line, byte, value } => {
                let cl = &mut s.cores[core].lines[line as usize];
                match cl.state {
                    CacheState::M | CacheState::E => {
                        cl.state = CacheState::M;
                        cl.data[byte as usize] = value;
                        performed = Some(MesiPerformed::Write { core: c, line, byte, value });
                    }
                    CacheState::I | CacheState::S => {
                        cl.state = if cl.state == CacheState::I { CacheState::IM_AD } else { CacheState::SM_AD };
                        s.cores[core].pending = Some((line, PendingOp::Write { byte, value }));
                        s.send(MesiMsg::GetM { src: c, line });
                    }
                    _ => return Err(MesiError::BadOp { core: c, why: "access to a line in transition" }),
                }
            }
            MesiOp::Evict { line } => {
                let cl = &mut s.cores[core].lines[line as usize];
                let msg = match cl.state {
                    CacheState::S => {
                        cl.state = CacheState::SI_A;
                        MesiMsg::PutS { src: c, line }
                    }
                    CacheState::E => {
                        cl.state = CacheState::EI_A;
                        MesiMsg::PutE { src: c, line }
                    }
                    CacheState::M => {
                        cl.state = CacheState::MI_A;
                        MesiMsg::PutM { src: c, line, data: cl.data.clone() }
                    }
                    _ => return Err(MesiError::BadOp { core: c, why: "evicting a line without a stable copy" }),
                };
                s.send(msg);
            }
        }
        s.canonicalize();
        Ok((s, performed))
    }

    /// Number of delivery slots: the unordered network, then one forwarded
    /// channel head per core.
    pub fn slots(&self) -> usize {
        self.net.len() + self.cores.len()
    }

    fn slot_msg(&self, slot: usize) -> Option<&MesiMsg> {
        if slot < self.net.len() {
            Some(&self.net[slot])
        } else {
            self.cores[slot - self.net.len()].fwd.first()
        }
    }

    pub fn describe_slot(&self, slot: usize) -> String {
        self.slot_msg(slot).map(|m| m.to_string()).unwrap_or_default()
    }

    /// Deliverable slots, one per distinct unordered message.
    pub fn deliverable(&self, out: &mut Vec<u16>) {
        for i in 0..self.net.len() {
            if (i == 0 || self.net[i] != self.net[i - 1]) && !self.stalls(&self.net[i]) {
                out.push(i as u16);
            }
        }
        for (c, core) in self.cores.iter().enumerate() {
            if let Some(m) = core.fwd.first() {
                if !self.stalls(m) {
                    out.push((self.net.len() + c) as u16);
                }
            }
        }
    }

    fn stalls(&self, m: &MesiMsg) -> bool {
        match m {
            MesiMsg::GetS { line, .. } | MesiMsg::GetM { line, .. } => self.dir[*line as usize].state == DirState::S_D,
            MesiMsg::FwdGetS { dst, line, .. } | MesiMsg::FwdGetM { dst, line, .. } => matches!(
                self.cores[*dst as usize].lines[*line as usize].state,
                CacheState::IS_D | CacheState::IM_AD | CacheState::IM_A | CacheState::SM_AD | CacheState::SM_A
            ),
            MesiMsg::Inv { dst, line, .. } => self.cores[*dst as usize].lines[*line as usize].state == CacheState::IS_D,
            _ => false,
        }
    }

    pub fn in_flight(&self) -> usize {
        self.net.len() + self.cores.iter().map(|c| c.fwd.len()).sum::<usize>()
    }

    pub fn deliver(&self, slot: usize) -> Result<(MesiSystem, Option<MesiPerformed>), MesiError> {
        let mut s = self.clone();
        let msg = if slot < s.net.len() { s.net.remove(slot) } else { s.cores[slot - self.net.len()].fwd.remove(0) };
        let performed = if msg.to_dir() { s.dir_receive(msg)?; None } else { s.core_receive(msg)? };
        s.canonicalize();
        Ok((s, performed))
    }

    fn unexpected(at: String, state: impl fmt::Debug, msg: &MesiMsg) -> MesiError {
        MesiError::Unexpected { at, state: format!("{state:?}"), msg: msg.to_string() }
    }

    fn dir_receive(&mut self, msg: MesiMsg) -> Result<(), MesiError> {
        use DirState::*;
        let line = match &msg {
            MesiMsg::GetS { line, .. }
            | MesiMsg::GetM { line, .. }
            | MesiMsg::PutS { line, .. }
            | MesiMsg::PutM { line, .. }
            | MesiMsg::PutE { line, .. }
            | MesiMsg::DataToDir { line, .. } => *line,
            _ => unreachable!("only directory-bound messages reach the directory"),
        };
        let cores = self.cores.len();
        let d = &mut self.dir[line as usize];
        let state = d.state;
        let mut out: SmallVec<[MesiMsg; 4]> = SmallVec::new();
        match (&msg, state) {
            (MesiMsg::GetS { src, .. }, I) => {
                out.push(MesiMsg::Data { dst: *src, line, data: d.memory.clone(), acks: 0, from: DataSource::DirExclusive });
                d.owner = Some(*src);
                d.state = E;
            }
            (MesiMsg::GetS { src, .. }, S) => {
                out.push(MesiMsg::Data { dst: *src, line, data: d.memory.clone(), acks: 0, from: DataSource::Dir });
                d.sharers |= 1 << src;
            }
            (MesiMsg::GetS { src, .. }, E | M) => {
                let owner = d.owner.expect("owned line has an owner");
                out.push(MesiMsg::FwdGetS { dst: owner, line, req: *src });
                d.sharers = (1 << src) | (1 << owner);
                d.owner = None;
                d.state = S_D;
            }
            (MesiMsg::GetM { src, .. }, I) => {
                out.push(MesiMsg::Data { dst: *src, line, data: d.memory.clone(), acks: 0, from: DataSource::Dir });
                d.owner = Some(*src);
                d.state = M;
            }
            (MesiMsg::GetM { src, .. }, S) => {
                let others = d.sharers & !(1 << src);
                out.push(MesiMsg::Data {
                    dst: *src,
                    line,
                    data: d.memory.clone(),
                    acks: others.count_ones() as i8,
                    from: DataSource::Dir,
                });
                for c in 0..cores as u8 {
                    if others & (1 << c) != 0 {
                        out.push(MesiMsg::Inv { dst: c, line, req: *src });
                    }
                }
                d.sharers = 0;
                d.owner = Some(*src);
                d.state = M;
            }
            (MesiMsg::GetM { src, .. }, E | M) => {
                let owner = d.owner.expect("owned line has an owner");
                out.push(MesiMsg::FwdGetM { dst: owner, line, req: *src });
                d.owner = Some(*src);
                d.state = M;
            }
            (MesiMsg::PutS { src, .. }, S | S_D) => {
                d.sharers &= !(1 << src);
                out.push(MesiMsg::PutAck { dst: *src, line });
            }
            (MesiMsg::PutS { src, .. }, I | E | M) => out.push(MesiMsg::PutAck { dst: *src, line }),
            (MesiMsg::PutM { src, data, .. }, E | M) if d.owner == Some(*src) => {
                d.memory = data.clone();
                d.owner = None;
                d.state = I;
                out.push(MesiMsg::PutAck { dst: *src, line });
            }
            (MesiMsg::PutE { src, .. }, E) if d.owner == Some(*src) => {
                d.owner = None;
                d.state = I;
                out.push(MesiMsg::PutAck { dst: *src, line });
            }
            (MesiMsg::PutM { src, .. } | MesiMsg::PutE { src, .. }, S | S_D) => {
                d.sharers &= !(1 << src);
                out.push(MesiMsg::PutAck { dst: *src, line });
            }
            (MesiMsg::PutM { src, .. } | MesiMsg::PutE { src, .. }, I | E | M) if d.owner != Some(*src) => {
                out.push(MesiMsg::PutAck { dst: *src, line });
            }
            (MesiMsg::DataToDir { data, .. }, S_D) => {
                d.memory = data.clone();
                d.state = S;
            }
            _ => return Err(Self::unexpected(format!("dir L{line}"), state, &msg)),
        }
        for m in out {
            self.send(m);
        }
        Ok(())
    }

    fn core_receive(&mut self, msg: MesiMsg) -> Result<Option<MesiPerformed>, MesiError> {
        use CacheState::*;
        let (core, line) = match &msg {
            MesiMsg::FwdGetS { dst, line, .. }
            | MesiMsg::FwdGetM { dst, line, .. }
            | MesiMsg::Inv { dst, line, .. }
            | MesiMsg::PutAck { dst, line }
            | MesiMsg::Data { dst, line, .. }
            | MesiMsg::InvAck { dst, line } => (*dst, *line),
            _ => unreachable!("only core-bound messages reach a core"),
        };
        let cl = &mut self.cores[core as usize].lines[line as usize];
        let state = cl.state;
        let mut out: SmallVec<[MesiMsg; 2]> = SmallVec::new();
        match (&msg, state) {
            (MesiMsg::FwdGetS { req, .. }, M | E | MI_A | EI_A) => {
                out.push(MesiMsg::Data { dst: *req, line, data: cl.data.clone(), acks: 0, from: DataSource::Owner });
                out.push(MesiMsg::DataToDir { src: core, line, data: cl.data.clone() });
                cl.state = if matches!(state, M | E) { S } else { SI_A };
            }
            (MesiMsg::FwdGetM { req, .. }, M | E | MI_A | EI_A) => {
                out.push(MesiMsg::Data { dst: *req, line, data: cl.data.clone(), acks: 0, from: DataSource::Owner });
                cl.state = if matches!(state, M | E) { I } else { II_A };
            }
            (MesiMsg::Inv { req, .. }, S | SM_AD | SI_A) => {
                out.push(MesiMsg::InvAck { dst: *req, line });
                cl.state = match state {
                    S => I,
                    SM_AD => IM_AD,
                    _ => II_A,
                };
            }
            (MesiMsg::PutAck { .. }, MI_A | EI_A | SI_A | II_A) => cl.state = I,
            (MesiMsg::Data { data, acks, from, .. }, IS_D) => {
                if *acks != 0 {
                    return Err(Self::unexpected(format!("c{core} L{line}"), state, &msg));
                }
                cl.data = data.clone();
                cl.state = if *from == DataSource::DirExclusive { E } else { S };
            }
            (MesiMsg::Data { data, acks, from, .. }, IM_AD | SM_AD) => {
                if *from == DataSource::DirExclusive {
                    return Err(Self::unexpected(format!("c{core} L{line}"), state, &msg));
                }
                cl.data = data.clone();
                cl.acks += acks;
                cl.state = match (cl.acks, state) {
                    (0, _) => M,
                    (_, IM_AD) => IM_A,
                    _ => SM_A,
                };
            }
            (MesiMsg::InvAck { .. }, IM_AD | SM_AD) => cl.acks -= 1,
            (MesiMsg::InvAck { .. }, IM_A | SM_A) => {
                cl.acks -= 1;
                if cl.acks == 0 {
                    cl.state = M;
                }
            }
            _ => return Err(Self::unexpected(format!("c{core} L{line}"), state, &msg)),
        }
        for m in out {
            self.send(m);
        }
        Ok(self.finish_pending(core as usize))
    }

    /// Performs the blocked access once its line reached a usable state.
    fn finish_pending(&mut self, core: usize) -> Option<MesiPerformed> {
        let c = &mut self.cores[core];
        let (line, op) = c.pending?;
        let cl = &mut c.lines[line as usize];
        let performed = match (op, cl.state) {
            (PendingOp::Read { byte }, CacheState::S | CacheState::E | CacheState::M) => {
                MesiPerformed::Read { core: core as u8, line, byte, value: cl.data[byte as usize] }
            }
            (PendingOp::Write { byte, value }, CacheState::M) => {
                cl.data[byte as usize] = value;
                MesiPerformed::Write { core: core as u8, line, byte, value }
            }
            _ => return None,
        };
        c.pending = None;
        Some(performed)
    }

    /// Single-writer/multiple-reader check over every line.
    pub fn check_swmr(&self) -> Result<(), String> {
        for l in 0..self.dir.len() {
            let writers = self.cores.iter().filter(|c| c.lines[l].state.is_writer()).count();
            let readers = self.cores.iter().filter(|c| c.lines[l].state.is_reader()).count();
            if writers > 1 || (writers == 1 && readers > 0) {
                return Err(format!("L{l}: {writers} writable and {readers} readable copies"));
            }
        }
        Ok(())
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        for c in &self.cores {
            match c.pending {
                None => out.push(0),
                Some((l, PendingOp::Read { byte })) => out.extend([1, l, byte]),
                Some((l, PendingOp::Write { byte, value })) => out.extend([2, l, byte, value]),
            }
            for line in &c.lines {
                out.push(line.state as u8);
                out.push(line.acks as u8);
                out.extend_from_slice(&line.data);
            }
            out.push(c.fwd.len() as u8);
            for m in &c.fwd {
                m.encode(out);
            }
        }
        for d in &self.dir {
            out.push(d.state as u8);
            out.push(d.owner.unwrap_or(u8::MAX));
            out.push(d.sharers);
            out.extend_from_slice(&d.memory);
        }
        out.push(self.net.len() as u8);
        for m in &self.net {
            m.encode(out);
        }
    }

    /// Inverse of [`encode`](Self::encode).
    pub fn decode(r: &mut Decoder<'_>, cores: usize, lines: usize, bytes: usize) -> MesiSystem {
        let mut s = MesiSystem::new(cores, lines, bytes);
        for c in s.cores.iter_mut() {
            c.pending = match r.u8() {
                0 => None,
                1 => Some((r.u8(), PendingOp::Read { byte: r.u8() })),
                _ => Some((r.u8(), PendingOp::Write { byte: r.u8(), value: r.u8() })),
            };
            for line in c.lines.iter_mut() {
                line.state = CacheState::ALL[r.u8() as usize];
                line.acks = r.u8() as i8;
                line.data.copy_from_slice(r.take(bytes));
            }
            for _ in 0..r.u8() {
                c.fwd.push(MesiMsg::decode(r, bytes));
            }
        }
        for d in s.dir.iter_mut() {
            d.state = DirState::ALL[r.u8() as usize];
            d.owner = match r.u8() {
                u8::MAX => None,
                o => Some(o),
            };
            d.sharers = r.u8();
            d.memory.copy_from_slice(r.take(bytes));
        }
        for _ in 0..r.u8() {
            s.net.push(MesiMsg::decode(r, bytes));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Delivers whatever is deliverable, lowest slot first, until quiet.
    fn drain(mut s: MesiSystem, performed: &mut Vec<MesiPerformed>) -> MesiSystem {
        loop {
            let mut slots = Vec::new();
            s.deliverable(&mut slots);
            let Some(&slot) = slots.first() else { return s };
            let (n, p) = s.deliver(slot as usize).unwrap();
            performed.extend(p);
            s = n;
        }
    }

    fn op(s: &MesiSystem, core: usize, o: MesiOp, performed: &mut Vec<MesiPerformed>) -> MesiSystem {
        let (n, p) = s.apply_op(core, o).unwrap();
        performed.extend(p);
        drain(n, performed)
    }

    #[test]
    fn sole_reader_gets_exclusive() {
        let s = MesiSystem::new(2, 1, 1);
        let mut p = Vec::new();
        let s = op(&s, 0, MesiOp::Read { line: 0, byte: 0 }, &mut p);
        assert_eq!(s.cores[0].lines[0].state, CacheState::E);
        assert_eq!(s.dir[0].state, DirState::E);
        assert_eq!(p, vec![MesiPerformed::Read { core: 0, line: 0, byte: 0, value: 0 }]);
    }

    #[test]
    fn read_of_modified_line_forwards_to_owner() {
        let s = MesiSystem::new(2, 1, 1);
        let mut p = Vec::new();
        let s = op(&s, 0, MesiOp::Write { line: 0, byte: 0, value: 1 }, &mut p);
        assert_eq!(s.cores[0].lines[0].state, CacheState::M);
        let (s1, _) = s.apply_op(1, MesiOp::Read { line: 0, byte: 0 }).unwrap();
        let (s2, _) = s1.deliver(0).unwrap();
        assert_eq!(s2.dir[0].state, DirState::S_D);
        assert!(matches!(s2.cores[0].fwd[..], [MesiMsg::FwdGetS { .. }]));
        let s3 = drain(s2, &mut p);
        assert_eq!(s3.cores[0].lines[0].state, CacheState::S);
        assert_eq!(s3.cores[1].lines[0].state, CacheState::S);
        assert_eq!(s3.dir[0].state, DirState::S);
        assert_eq!(p.last(), Some(&MesiPerformed::Read { core: 1, line: 0, byte: 0, value: 1 }));
    }

    #[test]
    fn upgrade_invalidates_other_sharer() {
        let s = MesiSystem::new(2, 1, 1);
        let mut p = Vec::new();
        let s = op(&s, 0, MesiOp::Read { line: 0, byte: 0 }, &mut p);
        let s = op(&s, 1, MesiOp::Read { line: 0, byte: 0 }, &mut p);
        assert_eq!(s.cores[0].lines[0].state, CacheState::S);
        assert_eq!(s.cores[1].lines[0].state, CacheState::S);
        let (s, _) = s.apply_op(0, MesiOp::Write { line: 0, byte: 0, value: 1 }).unwrap();
        let (s, _) = s.deliver(0).unwrap();
        assert!(matches!(s.cores[1].fwd[..], [MesiMsg::Inv { .. }]));
        assert!(matches!(s.net[..], [MesiMsg::Data { acks: 1, .. }]));
        let s = drain(s, &mut p);
        assert_eq!(s.cores[0].lines[0].state, CacheState::M);
        assert_eq!(s.cores[1].lines[0].state, CacheState::I);
    }

    #[test]
    fn getm_with_two_sharers_sends_two_invalidations() {
        let s = MesiSystem::new(3, 1, 1);
        let mut p = Vec::new();
        let s = op(&s, 0, MesiOp::Read { line: 0, byte: 0 }, &mut p);
        let s = op(&s, 1, MesiOp::Read { line: 0, byte: 0 }, &mut p);
        assert_eq!(s.dir[0].state, DirState::S);
        assert_eq!(s.dir[0].sharers, 0b011);
        let (s, _) = s.apply_op(2, MesiOp::Write { line: 0, byte: 0, value: 1 }).unwrap();
        let (s, _) = s.deliver(0).unwrap();
        assert!(matches!(s.net[..], [MesiMsg::Data { acks: 2, .. }]));
        assert_eq!(s.cores[0].fwd.len() + s.cores[1].fwd.len(), 2);
    }

    #[test]
    fn owner_putm_returns_directory_to_invalid() {
        let s = MesiSystem::new(2, 1, 1);
        let mut p = Vec::new();
        let s = op(&s, 0, MesiOp::Write { line: 0, byte: 0, value: 1 }, &mut p);
        let (s, _) = s.apply_op(0, MesiOp::Evict { line: 0 }).unwrap();
        let (s, _) = s.deliver(0).unwrap();
        assert_eq!(s.dir[0].state, DirState::I);
        assert_eq!(s.dir[0].memory[0], 1);
        assert!(matches!(s.cores[0].fwd[..], [MesiMsg::PutAck { .. }]));
    }

    #[test]
    fn false_sharing_ping_pong() {
        let s = MesiSystem::new(2, 1, 2);
        let mut p = Vec::new();
        let mut s = s;
        for i in 0..6 {
            let core = i % 2;
            s = op(&s, core, MesiOp::Write { line: 0, byte: core as u8, value: 1 }, &mut p);
            assert_eq!(s.cores[core].lines[0].state, CacheState::M);
            assert_eq!(s.cores[1 - core].lines[0].state, CacheState::I);
        }
    }
}
