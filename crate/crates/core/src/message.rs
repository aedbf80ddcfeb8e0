//! Messages between a private cache controller and the LLC.
//!
//! Flit accounting uses one fixed size convention for every engine: a 16-byte
//! header per message, plus `line_size` bytes for `Data`, plus the dirty
//! bytes and a `line_size / 8` byte mask for a `WriteBack` that carries data.
//! A signature response is the exception: its one control byte rides in front
//! of the encoded signature, so a dense 1008-bit signature occupies exactly
//! eight 16-byte flits.

use crate::error::DecodeError;
use crate::line::L1Line;
use crate::signature::WriteSignature;
use crate::types::{ByteIdx, CoreId, LineAddr, LineData, Value, WriteMask};

pub const HEADER_BYTES: usize = 16;
pub const SIG_CONTROL_BYTES: usize = 1;

/// Dirty bytes of one line, stored as the mask plus the values in mask order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WriteBackBody {
    pub addr: LineAddr,
    pub mask: WriteMask,
    pub values: LineData,
}

impl WriteBackBody {
    pub fn from_line(line: &L1Line) -> Self {
        WriteBackBody {
            addr: line.addr,
            mask: line.write_bits,
            values: line.write_bits.iter().map(|i| line.data[i]).collect(),
        }
    }

    /// `(byte, value)` pairs in ascending byte order.
    pub fn dirty_bytes(&self) -> impl Iterator<Item = (ByteIdx, Value)> + '_ {
        self.mask.iter().zip(self.values.iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Message {
    GetLine { addr: LineAddr, requester: CoreId },
    Data { addr: LineAddr, bytes: LineData, requester: CoreId },
    /// `body == None` is the data-less message that closes an episode and
    /// announces how many `cnt = 0` write-backs preceded it.
    WriteBack { sender: CoreId, cnt: u32, body: Option<WriteBackBody> },
    PutAck { addr: LineAddr, dest: CoreId },
    PutAllAck { dest: CoreId },
    GetWrSig { requester: CoreId },
    WrSigResp { signature: WriteSignature, dest: CoreId },
}

impl Message {
    /// The core at the other end of the message; the LLC is always one end.
    pub fn core(&self) -> CoreId {
        match self {
            Message::GetLine { requester, .. }
            | Message::Data { requester, .. }
            | Message::GetWrSig { requester } => *requester,
            Message::WriteBack { sender, .. } => *sender,
            Message::PutAck { dest, .. }
            | Message::PutAllAck { dest }
            | Message::WrSigResp { dest, .. } => *dest,
        }
    }

    /// True for messages travelling from a core to the LLC.
    pub fn to_llc(&self) -> bool {
        matches!(
            self,
            Message::GetLine { .. } | Message::WriteBack { .. } | Message::GetWrSig { .. }
        )
    }

    pub fn is_data_less(&self) -> bool {
        matches!(self, Message::WriteBack { body: None, .. })
    }

    /// Size on the wire under the accounting convention above.
    pub fn wire_bytes(&self, line_size: usize) -> usize {
        match self {
            Message::Data { .. } => HEADER_BYTES + line_size,
            Message::WriteBack { body: Some(b), .. } => {
                HEADER_BYTES + b.mask.count() + line_size.div_ceil(8)
            }
            Message::WrSigResp { signature, .. } => {
                SIG_CONTROL_BYTES + signature.serialize().len()
            }
            _ => HEADER_BYTES,
        }
    }

    pub fn flits(&self, line_size: usize, flit_size: usize) -> usize {
        self.wire_bytes(line_size).div_ceil(flit_size)
    }

    /// Binary codec. All integers little-endian.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32);
        match self {
            Message::GetLine { addr, requester } => {
                out.push(1);
                put_addr(&mut out, *addr);
                put_core(&mut out, *requester);
            }
            Message::Data { addr, bytes, requester } => {
                out.push(2);
                put_addr(&mut out, *addr);
                put_core(&mut out, *requester);
                out.push(bytes.len() as u8);
                out.extend_from_slice(bytes);
            }
            Message::WriteBack { sender, cnt, body } => {
                out.push(3);
                put_core(&mut out, *sender);
                out.extend_from_slice(&cnt.to_le_bytes());
                match body {
                    None => out.push(0),
                    Some(b) => {
                        out.push(1);
                        put_addr(&mut out, b.addr);
                        out.extend_from_slice(&b.mask.0.to_le_bytes());
                        out.extend_from_slice(&b.values);
                    }
                }
            }
            Message::PutAck { addr, dest } => {
                out.push(4);
                put_addr(&mut out, *addr);
                put_core(&mut out, *dest);
            }
            Message::PutAllAck { dest } => {
                out.push(5);
                put_core(&mut out, *dest);
            }
            Message::GetWrSig { requester } => {
                out.push(6);
                put_core(&mut out, *requester);
            }
            Message::WrSigResp { signature, dest } => {
                out.push(7);
                put_core(&mut out, *dest);
                let payload = signature.serialize();
                out.extend_from_slice(&(payload.len() as u16).to_le_bytes());
                out.extend_from_slice(&payload);
            }
        }
        out
    }

    /// Inverse of [`serialize`](Self::serialize); `sig_bits`/`sig_hashes`
    /// give the geometry of any Bloom signature in the payload.
    pub fn deserialize(bytes: &[u8], sig_bits: usize, sig_hashes: usize) -> Result<Self, DecodeError> {
        let mut r = Reader { buf: bytes, at: 0 };
        let msg = match r.u8()? {
            1 => Message::GetLine { addr: r.addr()?, requester: r.core()? },
            2 => {
                let addr = r.addr()?;
                let requester = r.core()?;
                let n = r.u8()? as usize;
                Message::Data { addr, requester, bytes: r.take(n)?.into() }
            }
            3 => {
                let sender = r.core()?;
                let cnt = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
                let body = match r.u8()? {
                    0 => None,
                    1 => {
                        let addr = r.addr()?;
                        let mask = WriteMask(u64::from_le_bytes(r.take(8)?.try_into().unwrap()));
                        let values = r.take(mask.count())?.into();
                        Some(WriteBackBody { addr, mask, values })
                    }
                    t => return Err(DecodeError::UnknownTag(t)),
                };
                Message::WriteBack { sender, cnt, body }
            }
            4 => Message::PutAck { addr: r.addr()?, dest: r.core()? },
            5 => Message::PutAllAck { dest: r.core()? },
            6 => Message::GetWrSig { requester: r.core()? },
            7 => {
                let dest = r.core()?;
                let n = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
                let signature = WriteSignature::deserialize(r.take(n)?, sig_bits, sig_hashes)?;
                Message::WrSigResp { signature, dest }
            }
            t => return Err(DecodeError::UnknownTag(t)),
        };
        if r.at != bytes.len() {
            return Err(DecodeError::Trailing);
        }
        Ok(msg)
    }
}

fn put_addr(out: &mut Vec<u8>, a: LineAddr) {
    out.extend_from_slice(&a.0.to_le_bytes());
}

fn put_core(out: &mut Vec<u8>, c: CoreId) {
    out.extend_from_slice(&(c.0 as u16).to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let s = self.buf.get(self.at..self.at + n).ok_or(DecodeError::Truncated)?;
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn addr(&mut self) -> Result<LineAddr, DecodeError> {
        Ok(LineAddr(u64::from_le_bytes(self.take(8)?.try_into().unwrap())))
    }
    fn core(&mut self) -> Result<CoreId, DecodeError> {
        Ok(CoreId(u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize))
    }
}
