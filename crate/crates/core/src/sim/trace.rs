//! Per-thread memory traces and their text format.
//!
//! ```text
//! #neatsim-trace v1 cores=2 linesize=64
//! # any further line starting with '#' is a comment
//! T0 ACQ 0
//! T0 W 0x1000 8
//! T0 REL 0
//! T1 NOP 40
//! T1 R 0x1000 8
//! ```
//!
//! Events of different threads may be interleaved freely in the file; only
//! the order within one thread matters.

use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    Read { addr: u64, size: u8 },
    Write { addr: u64, size: u8 },
    Acquire(u32),
    Release(u32),
    Nop(u32),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub cores: usize,
    pub line_size: usize,
    pub comments: Vec<String>,
    pub threads: Vec<Vec<TraceEvent>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {why}")]
    Parse { line: usize, why: String },
    #[error("thread {thread} event {index}: {why}")]
    Invalid { thread: usize, index: usize, why: String },
}

impl Trace {
    pub fn new(cores: usize, line_size: usize) -> Self {
        Trace { cores, line_size, comments: Vec::new(), threads: vec![Vec::new(); cores] }
    }

    pub fn push(&mut self, thread: usize, ev: TraceEvent) {
        self.threads[thread].push(ev);
    }

    pub fn events(&self) -> usize {
        self.threads.iter().map(Vec::len).sum()
    }

    /// Checks sizes, line crossings and lock pairing within each thread.
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.threads.len() > self.cores {
            return Err(TraceError::Invalid { thread: self.threads.len() - 1, index: 0, why: "more threads than cores".into() });
        }
        let ls = self.line_size as u64;
        for (t, evs) in self.threads.iter().enumerate() {
            let mut held: Vec<u32> = Vec::new();
            for (i, ev) in evs.iter().enumerate() {
                let bad = |why: String| TraceError::Invalid { thread: t, index: i, why };
                match *ev {
                    TraceEvent::Read { addr, size } | TraceEvent::Write { addr, size } => {
                        if size == 0 || size as u64 > ls {
                            return Err(bad(format!("access size {size}")));
                        }
                        if addr % ls + size as u64 > ls {
                            return Err(bad(format!("access at {addr:#x} of {size} bytes crosses a line")));
                        }
                    }
                    TraceEvent::Acquire(l) => {
                        if held.contains(&l) {
                            return Err(bad(format!("lock {l} acquired twice")));
                        }
                        held.push(l);
                    }
                    TraceEvent::Release(l) => match held.iter().position(|h| *h == l) {
                        Some(p) => {
                            held.remove(p);
                        }
                        None => return Err(bad(format!("release of unheld lock {l}"))),
                    },
                    TraceEvent::Nop(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text.lines().enumerate();
        let (cores, line_size) = loop {
            let Some((n, raw)) = lines.next() else {
                return Err(TraceError::Parse { line: 1, why: "missing header".into() });
            };
            if raw.trim().is_empty() {
                continue;
            }
            break parse_header(raw).ok_or_else(|| TraceError::Parse {
                line: n + 1,
                why: "expected `#neatsim-trace v1 cores=<n> linesize=<b>`".into(),
            })?;
        };
        let mut trace = Trace::new(cores, line_size);
        for (n, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                trace.comments.push(c.trim().to_string());
                continue;
            }
            let err = |why: &str| TraceError::Parse { line: n + 1, why: why.to_string() };
            let mut f = line.split_whitespace();
            let tid: usize = f
                .next()
                .and_then(|t| t.strip_prefix('T'))
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err("expected thread id `T<n>`"))?;
            if tid >= cores {
                return Err(err("thread id out of range"));
            }
            let op = f.next().ok_or_else(|| err("missing operation"))?;
            let mut arg = || f.next().ok_or_else(|| err("missing operand"));
            let ev = match op {
                "R" | "W" => {
                    let a = arg()?;
                    let a = a.strip_prefix("0x").or_else(|| a.strip_prefix("0X")).unwrap_or(a);
                    let addr = u64::from_str_radix(a, 16).map_err(|_| err("bad hex address"))?;
                    let size: u8 = arg()?.parse().map_err(|_| err("bad size"))?;
                    if op == "R" {
                        TraceEvent::Read { addr, size }
                    } else {
                        TraceEvent::Write { addr, size }
                    }
                }
                "ACQ" => TraceEvent::Acquire(arg()?.parse().map_err(|_| err("bad lock id"))?),
                "REL" => TraceEvent::Release(arg()?.parse().map_err(|_| err("bad lock id"))?),
                "NOP" => TraceEvent::Nop(arg()?.parse().map_err(|_| err("bad count"))?),
                _ => return Err(err("unknown operation")),
            };
            if f.next().is_some() {
                return Err(err("trailing tokens"));
            }
            trace.push(tid, ev);
        }
        Ok(trace)
    }

    /// Text form: header, comments, then each thread's events in order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "#neatsim-trace v1 cores={} linesize={}", self.cores, self.line_size).unwrap();
        for c in &self.comments {
            writeln!(s, "# {c}").unwrap();
        }
        for (t, evs) in self.threads.iter().enumerate() {
            for ev in evs {
                writeln!(s, "T{t} {ev}").unwrap();
            }
        }
        s
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut f = line.split_whitespace();
    if f.next()? != "#neatsim-trace" || f.next()? != "v1" {
        return None;
    }
    let cores = f.next()?.strip_prefix("cores=")?.parse().ok()?;
    let ls = f.next()?.strip_prefix("linesize=")?.parse().ok()?;
    f.next().is_none().then_some((cores, ls))
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Read { addr, size } => write!(f, "R {addr:#x} {size}"),
            TraceEvent::Write { addr, size } => write!(f, "W {addr:#x} {size}"),
            TraceEvent::Acquire(l) => write!(f, "ACQ {l}"),
            TraceEvent::Release(l) => write!(f, "REL {l}"),
            TraceEvent::Nop(n) => write!(f, "NOP {n}"),
        }
    }
}
