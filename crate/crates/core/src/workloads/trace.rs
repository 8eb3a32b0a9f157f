//! Work request traces.
//!
//! One record per line, whitespace separated:
//!
//! ```text
//! # arrival kernel buffers items bytes_per_item
//! 0 force 1,2,5 640 256
//! 12.5 force 2,3 320 256
//! ```
//!
//! Blank lines and `#` comments are ignored. Replay injects every record as
//! work of chare 0 arriving at its recorded time.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::runtime::{ChareId, Effects, EntryHooks, KernelClass, Time, WorkDraft, WorkRequest};
use crate::sim::{Injection, Workload};

pub const TRACE_HEADER: &str = "# arrival kernel buffers items bytes_per_item";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub arrival: Time,
    pub kernel: KernelClass,
    pub buffers: Vec<u32>,
    pub items: u64,
    pub bytes_per_item: u64,
}

impl From<&WorkRequest> for TraceRecord {
    fn from(w: &WorkRequest) -> Self {
        TraceRecord {
            arrival: w.arrival,
            kernel: w.kernel.clone(),
            buffers: w.buffers.clone(),
            items: w.items,
            bytes_per_item: w.bytes_per_item,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_line(text: &str) -> Result<TraceRecord, String> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    let [arrival, kernel, buffers, items, bytes] = fields[..] else {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    };
    let arrival: Time = arrival.parse().map_err(|_| format!("bad arrival time `{arrival}`"))?;
    if !(arrival >= 0.0) || !arrival.is_finite() {
        return Err(format!("arrival time must be finite and non-negative, got {arrival}"));
    }
    let buffers = buffers
        .split(',')
        .map(|b| b.parse::<u32>().map_err(|_| format!("bad buffer index `{b}`")))
        .collect::<Result<Vec<_>, _>>()?;
    let items: u64 = items.parse().map_err(|_| format!("bad item count `{items}`"))?;
    if items == 0 {
        return Err("item count must be at least 1".into());
    }
    let bytes_per_item: u64 = bytes.parse().map_err(|_| format!("bad byte count `{bytes}`"))?;
    Ok(TraceRecord { arrival, kernel: KernelClass::new(kernel), buffers, items, bytes_per_item })
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_line(line).map_err(|message| TraceError::Parse { line: i + 1, message })?);
    }
    Ok(out)
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let buffers: Vec<String> = r.buffers.iter().map(u32::to_string).collect();
        let _ = writeln!(out, "{} {} {} {} {}", r.arrival, r.kernel, buffers.join(","), r.items, r.bytes_per_item);
    }
    out
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    parse_trace(&fs::read_to_string(path)?)
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> io::Result<()> {
    fs::write(path, format_trace(records))
}

/// Open-loop replay of a trace.
#[derive(Debug, Clone)]
pub struct TraceWorkload {
    records: Vec<TraceRecord>,
}

impl TraceWorkload {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        TraceWorkload { records }
    }
}

impl EntryHooks for TraceWorkload {
    fn invoke(&mut self, _: ChareId, _: &'static str, _: Time) -> Effects {
        Effects::default()
    }
}

impl Workload for TraceWorkload {
    fn chare_count(&self) -> u32 {
        1
    }

    fn start(&mut self) -> Injection {
        let work = self
            .records
            .iter()
            .map(|r| {
                let draft = WorkDraft {
                    kernel: r.kernel.clone(),
                    buffers: r.buffers.clone(),
                    items: r.items,
                    bytes_per_item: r.bytes_per_item,
                    delay: r.arrival,
                };
                (ChareId(0), draft)
            })
            .collect();
        Injection { messages: vec![], work }
    }
}
