//! Experiment matrices, result rows and trace round trips.
//!
//! | experiment          | variants                                              |
//! |---------------------|-------------------------------------------------------|
//! | `single`            | the config as given                                   |
//! | `combine-vs-static` | aggregation `adaptive` vs `static_count(100)`         |
//! | `reuse-modes`       | memory mode `redundant`, `reuse`, `reuse_sorted`      |
//! | `policy-matrix`     | aggregation × memory mode × scheduler                 |
//! | `md-scheduling`     | scheduler `adaptive` vs `static_count`                |
//!
//! Result columns: `makespan` and `combined_batch_count`/`mean_batch_size`
//! compare combining strategies; `total_transfer_*`, `total_kernel_time` and
//! `transactions_total` decompose the memory modes; `total_cpu_time` and
//! `makespan` compare scheduling.

use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, WorkloadKind};
use crate::memory::MemoryMode;
use crate::sim::{run_timeline, SimError, SimOutcome, Workload};
use crate::workloads::{read_trace, MdWorkload, NBodyWorkload, TraceError, TraceRecord, TraceWorkload};

pub const EXPERIMENTS: [&str; 5] = ["single", "combine-vs-static", "reuse-modes", "policy-matrix", "md-scheduling"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown experiment `{0}` (expected one of single, combine-vs-static, reuse-modes, policy-matrix, md-scheduling)")]
    UnknownExperiment(String),
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error("simulation failed for {config_id}: {source}")]
    Sim { config_id: String, source: SimError },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("results file {path}: {source}")]
    Results { path: PathBuf, source: csv::Error },
    #[error("results file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl HarnessError {
    /// Whether the failure is a usage problem rather than a simulation one.
    pub fn is_usage(&self) -> bool {
        matches!(self, HarnessError::Config(_) | HarnessError::UnknownExperiment(_) | HarnessError::Workload(_))
    }
}

/// Policy toggles of one variant; `None` keeps the base config's value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Variant {
    pub name: String,
    pub aggregation: Option<String>,
    pub memory: Option<MemoryMode>,
    pub scheduler: Option<String>,
}

impl Variant {
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        if let Some(a) = &self.aggregation {
            cfg.aggregator.policy = a.clone();
        }
        if let Some(m) = self.memory {
            cfg.memory.mode = m.as_str().into();
        }
        if let Some(s) = &self.scheduler {
            cfg.scheduler.policy = s.clone();
        }
        cfg
    }
}

pub fn variants(experiment: &str) -> Result<Vec<Variant>, HarnessError> {
    let agg = |a: &str| Variant { name: a.into(), aggregation: Some(a.into()), ..Variant::default() };
    let mem = |m: MemoryMode| Variant { name: m.as_str().into(), memory: Some(m), ..Variant::default() };
    let sched = |s: &str| Variant { name: s.into(), scheduler: Some(s.into()), ..Variant::default() };
    Ok(match experiment {
        "single" => vec![Variant { name: "base".into(), ..Variant::default() }],
        "combine-vs-static" => vec![agg("adaptive"), agg("static_count(100)")],
        "reuse-modes" => MemoryMode::ALL.into_iter().map(mem).collect(),
        "md-scheduling" => vec![sched("adaptive"), sched("static_count")],
        "policy-matrix" => {
            let mut out = Vec::new();
            for a in ["adaptive", "static_count(100)"] {
                for m in MemoryMode::ALL {
                    for s in ["gpu_only", "adaptive"] {
                        out.push(Variant {
                            name: format!("{a}+{}+{s}", m.as_str()),
                            aggregation: Some(a.into()),
                            memory: Some(m),
                            scheduler: Some(s.into()),
                        });
                    }
                }
            }
            out
        }
        other => return Err(HarnessError::UnknownExperiment(other.into())),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_id: String,
    pub makespan: f64,
    pub total_transfer_bytes: u64,
    pub total_transfer_time: f64,
    pub total_kernel_time: f64,
    pub total_cpu_time: f64,
    pub combined_batch_count: u64,
    pub mean_batch_size: f64,
    pub transactions_total: u64,
}

impl ResultRow {
    pub fn from_outcome(config_id: String, out: &SimOutcome) -> Self {
        let s = &out.stats;
        ResultRow {
            config_id,
            makespan: s.makespan,
            total_transfer_bytes: s.transfer_bytes,
            total_transfer_time: s.transfer_time,
            total_kernel_time: s.kernel_time,
            total_cpu_time: s.cpu_time,
            combined_batch_count: s.combined_batches,
            mean_batch_size: s.mean_batch_size(),
            transactions_total: s.transactions,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub experiment: String,
    pub variant: String,
    pub repetition: u32,
    pub row: ResultRow,
    pub outcome: SimOutcome,
}

pub fn build_workload(cfg: &ExperimentConfig) -> Result<Box<dyn Workload>, HarnessError> {
    Ok(match cfg.workload.kind {
        WorkloadKind::Nbody => Box::new(NBodyWorkload::new(cfg.nbody.clone(), cfg.seed).map_err(HarnessError::Workload)?),
        WorkloadKind::Md => Box::new(MdWorkload::new(cfg.md.clone(), cfg.seed).map_err(HarnessError::Workload)?),
        WorkloadKind::Trace => {
            let path = cfg.trace.path.as_ref().ok_or_else(|| HarnessError::Workload("trace workload needs a path".into()))?;
            Box::new(TraceWorkload::new(read_trace(path)?))
        }
    })
}

/// Runs one configuration.
pub fn run_config(cfg: &ExperimentConfig, config_id: &str) -> Result<SimOutcome, HarnessError> {
    cfg.validate()?;
    let sim = cfg.sim_config()?;
    let mut workload = build_workload(cfg)?;
    log::info!("running {config_id}");
    run_timeline(workload.as_mut(), &sim).map_err(|source| HarnessError::Sim { config_id: config_id.into(), source })
}

/// One record per (variant × repetition). Every repetition uses the
/// config's seed.
pub fn run_experiment(cfg: &ExperimentConfig, experiment: &str) -> Result<Vec<RunRecord>, HarnessError> {
    let mut out = Vec::new();
    for v in variants(experiment)? {
        let vcfg = v.apply(cfg);
        vcfg.validate()?;
        for rep in 0..cfg.repetitions {
            let config_id = format!("{experiment}/{}", v.name);
            let outcome = run_config(&vcfg, &config_id)?;
            out.push(RunRecord {
                experiment: experiment.into(),
                variant: v.name.clone(),
                repetition: rep,
                row: ResultRow::from_outcome(config_id, &outcome),
                outcome,
            });
        }
    }
    Ok(out)
}

pub const RESULT_COLUMNS: [&str; 10] = [
    "run_id",
    "config_id",
    "makespan",
    "total_transfer_bytes",
    "total_transfer_time",
    "total_kernel_time",
    "total_cpu_time",
    "combined_batch_count",
    "mean_batch_size",
    "transactions_total",
];

fn row_fields(run_id: u64, r: &ResultRow) -> [String; 10] {
    [
        run_id.to_string(),
        r.config_id.clone(),
        r.makespan.to_string(),
        r.total_transfer_bytes.to_string(),
        r.total_transfer_time.to_string(),
        r.total_kernel_time.to_string(),
        r.total_cpu_time.to_string(),
        r.combined_batch_count.to_string(),
        r.mean_batch_size.to_string(),
        r.transactions_total.to_string(),
    ]
}

/// Reads `(run_id, row)` pairs from a results file.
pub fn read_results(path: &Path) -> Result<Vec<(u64, ResultRow)>, HarnessError> {
    let err = |source| HarnessError::Results { path: path.to_owned(), source };
    let mut rdr = csv::Reader::from_path(path).map_err(err)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(err)?;
        let run_id: u64 = rec.get(0).unwrap_or("").parse().map_err(|_| {
            HarnessError::Io { path: path.to_owned(), source: io::Error::new(io::ErrorKind::InvalidData, "bad run_id") }
        })?;
        let mut tail = csv::StringRecord::new();
        for f in rec.iter().skip(1) {
            tail.push_field(f);
        }
        let headers = csv::StringRecord::from(RESULT_COLUMNS[1..].to_vec());
        out.push((run_id, tail.deserialize(Some(&headers)).map_err(err)?));
    }
    Ok(out)
}

/// Writes `rows` under a fresh run id and returns that id. With `append`,
/// existing rows are kept and the id is one past the largest present;
/// otherwise the file is replaced and the id is 0.
pub fn write_results(rows: &[ResultRow], path: &Path, append: bool) -> Result<u64, HarnessError> {
    let existing = append && path.exists() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let run_id = if existing { read_results(path)?.iter().map(|(id, _)| id + 1).max().unwrap_or(0) } else { 0 };
    let io_err = |source| HarnessError::Io { path: path.to_owned(), source };
    let file = if existing {
        OpenOptions::new().append(true).open(path).map_err(io_err)?
    } else {
        fs::File::create(path).map_err(io_err)?
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let err = |source| HarnessError::Results { path: path.to_owned(), source };
    if !existing {
        w.write_record(RESULT_COLUMNS).map_err(err)?;
    }
    for row in rows {
        w.write_record(row_fields(run_id, row)).map_err(err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(run_id)
}

/// Outcome of a dump/replay round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrip {
    pub records: usize,
    /// Human-readable differences; empty when the streams are identical.
    pub diff: Vec<String>,
}

impl RoundTrip {
    pub fn identical(&self) -> bool {
        self.diff.is_empty()
    }
}

/// Generates the work request stream of `cfg` and returns it as trace
/// records in arrival order.
pub fn dump_stream(cfg: &ExperimentConfig) -> Result<Vec<TraceRecord>, HarnessError> {
    let out = run_config(cfg, "trace-dump")?;
    Ok(out.submitted.iter().map(TraceRecord::from).collect())
}

/// Dumps the stream of `cfg` to text, replays the text, and compares the
/// replayed request sequence with the original.
pub fn trace_roundtrip(cfg: &ExperimentConfig) -> Result<RoundTrip, HarnessError> {
    let original = dump_stream(cfg)?;
    let text = crate::workloads::format_trace(&original);
    let parsed = crate::workloads::parse_trace(&text)?;
    let mut replay_cfg = cfg.clone();
    replay_cfg.workload.kind = WorkloadKind::Trace;
    let sim = replay_cfg.sim_config()?;
    let mut workload = TraceWorkload::new(parsed);
    let out = run_timeline(&mut workload, &sim)
        .map_err(|source| HarnessError::Sim { config_id: "trace-replay".into(), source })?;
    let replayed: Vec<TraceRecord> = out.submitted.iter().map(TraceRecord::from).collect();
    Ok(RoundTrip { records: original.len(), diff: diff_streams(&original, &replayed) })
}

pub fn diff_streams(a: &[TraceRecord], b: &[TraceRecord]) -> Vec<String> {
    let mut diff = Vec::new();
    if a.len() != b.len() {
        diff.push(format!("length {} vs {}", a.len(), b.len()));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x != y || x.arrival.to_bits() != y.arrival.to_bits() {
            diff.push(format!("record {i}: {x:?} vs {y:?}"));
        }
    }
    diff
}

/// One directional assertion over an experiment's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

fn first<'a>(records: &'a [RunRecord], variant: &str) -> Option<&'a RunRecord> {
    records.iter().find(|r| r.variant == variant)
}

/// The directional expectations of each experiment.
pub fn checks(experiment: &str, records: &[RunRecord]) -> Vec<Check> {
    let mut out = Vec::new();
    match experiment {
        "combine-vs-static" => {
            if let (Some(a), Some(s)) = (first(records, "adaptive"), first(records, "static_count(100)")) {
                let (ma, ms) = (a.row.makespan, s.row.makespan);
                out.push(check("adaptive makespan <= static_count(100)", ma <= ms, format!("{ma} vs {ms}")));
            }
        }
        "reuse-modes" => {
            if let (Some(d), Some(r), Some(s)) = (first(records, "redundant"), first(records, "reuse"), first(records, "reuse_sorted")) {
                let (d, r, s) = (&d.row, &r.row, &s.row);
                out.push(check(
                    "transfer time: reuse modes < redundant",
                    r.total_transfer_time < d.total_transfer_time && s.total_transfer_time < d.total_transfer_time,
                    format!("{} / {} vs {}", r.total_transfer_time, s.total_transfer_time, d.total_transfer_time),
                ));
                out.push(check(
                    "kernel time: reuse > reuse_sorted > redundant",
                    r.total_kernel_time > s.total_kernel_time && s.total_kernel_time > d.total_kernel_time,
                    format!("{} > {} > {}", r.total_kernel_time, s.total_kernel_time, d.total_kernel_time),
                ));
                out.push(check(
                    "total time: reuse_sorted below redundant and reuse",
                    s.makespan < d.makespan && s.makespan < r.makespan,
                    format!("{} vs {} / {}", s.makespan, d.makespan, r.makespan),
                ));
            }
        }
        "md-scheduling" => {
            if let (Some(a), Some(s)) = (first(records, "adaptive"), first(records, "static_count")) {
                let (ma, ms) = (a.row.makespan, s.row.makespan);
                out.push(check("adaptive makespan <= static_count split", ma <= ms, format!("{ma} vs {ms}")));
                let parts = &a.outcome.stats.partitions;
                let bad = parts.iter().filter(|p| !p.is_balanced()).count();
                out.push(check(
                    "adaptive partitions within one request of target",
                    bad == 0,
                    format!("{bad} of {} unbalanced", parts.len()),
                ));
            }
        }
        _ => {}
    }
    out
}
