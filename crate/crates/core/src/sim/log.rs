//! Schedule log: one line-delimited record per transfer, kernel, CPU batch
//! and completion, closed by a makespan record.
//!
//! Line format: `time,kind,device,batch,items,bytes,transactions,duration`.
//! Absent fields are written as `-`. Floats use the shortest representation
//! that round-trips, so equal logs serialize to equal bytes.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use crate::runtime::{Device, Time};

pub const LOG_HEADER: &str = "time,kind,device,batch,items,bytes,transactions,duration";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    Transfer,
    Kernel,
    Cpu,
    Complete,
    Makespan,
}

impl LogKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LogKind::Transfer => "transfer",
            LogKind::Kernel => "kernel",
            LogKind::Cpu => "cpu",
            LogKind::Complete => "complete",
            LogKind::Makespan => "makespan",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    /// Start time, or finish time for completion and makespan records.
    pub time: Time,
    pub kind: LogKind,
    pub device: Option<Device>,
    pub batch: Option<u64>,
    pub items: u64,
    pub bytes: u64,
    pub transactions: u64,
    pub duration: Time,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},", self.time, self.kind.as_str())?;
        match self.device {
            Some(d) => write!(f, "{d},")?,
            None => f.write_str("-,")?,
        }
        match self.batch {
            Some(b) => write!(f, "{b},")?,
            None => f.write_str("-,")?,
        }
        write!(f, "{},{},{},{}", self.items, self.bytes, self.transactions, self.duration)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleLog {
    records: Vec<LogRecord>,
}

impl ScheduleLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn of_kind(&self, kind: LogKind) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn makespan(&self) -> Option<Time> {
        self.of_kind(LogKind::Makespan).last().map(|r| r.duration)
    }

    /// Total busy time of a device: transfers and kernels on the GPU, batches
    /// on the CPU.
    pub fn busy_time(&self, device: Device) -> Time {
        self.records
            .iter()
            .filter(|r| r.device == Some(device) && matches!(r.kind, LogKind::Transfer | LogKind::Kernel | LogKind::Cpu))
            .map(|r| r.duration)
            .sum()
    }

    /// Header line followed by one line per record.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_line_format() {
        let r = LogRecord {
            time: 1.5,
            kind: LogKind::Kernel,
            device: Some(Device::Gpu),
            batch: Some(3),
            items: 10,
            bytes: 0,
            transactions: 4,
            duration: 0.25,
        };
        assert_eq!(r.to_string(), "1.5,kernel,gpu,3,10,0,4,0.25");
        let m = LogRecord { kind: LogKind::Makespan, device: None, batch: None, ..r };
        assert_eq!(m.to_string(), "1.5,makespan,-,-,10,0,4,0.25");
    }

    #[test]
    fn busy_time_sums_device_work() {
        let mut log = ScheduleLog::new();
        let base = LogRecord {
            time: 0.0,
            kind: LogKind::Transfer,
            device: Some(Device::Gpu),
            batch: Some(0),
            items: 0,
            bytes: 0,
            transactions: 0,
            duration: 2.0,
        };
        log.push(base.clone());
        log.push(LogRecord { kind: LogKind::Kernel, duration: 3.0, ..base.clone() });
        log.push(LogRecord { kind: LogKind::Cpu, device: Some(Device::Cpu), duration: 4.0, ..base.clone() });
        log.push(LogRecord { kind: LogKind::Complete, duration: 100.0, ..base });
        assert_eq!(log.busy_time(Device::Gpu), 5.0);
        assert_eq!(log.busy_time(Device::Cpu), 4.0);
        assert!(log.to_text().starts_with(LOG_HEADER));
    }
}
