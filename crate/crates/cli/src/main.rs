//! `hetero-rt` command-line harness.
//!
//! Exit codes: 0 success, 1 a `--check` assertion failed, 2 usage error,
//! 3 simulation failure. Log verbosity comes from `HETERO_RT_LOG`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetero_rt::config::{ExperimentConfig, WorkloadKind};
use hetero_rt::harness::{self, HarnessError, RunRecord};
use hetero_rt::workloads::{force_errors, median, read_trace, write_trace, DEFAULT_SOFTENING};
use hetero_rt::MemoryMode;

const EXIT_CHECK: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_SIM: u8 = 3;

#[derive(Parser)]
#[command(name = "hetero-rt", version, about = "Experiment harness for the simulated CPU/GPU task runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment matrix and write one CSV row per variant and repetition.
    Run(RunArgs),
    /// Record or replay work request traces.
    #[command(subcommand)]
    Trace(TraceCommand),
    /// Compare tree forces with the direct-sum oracle.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Aggregation policy: adaptive | static_count(k).
    #[arg(long)]
    policy: Option<String>,
    /// Memory mode: redundant | reuse | reuse_sorted.
    #[arg(long)]
    mode: Option<String>,
    /// Scheduler policy: gpu_only | adaptive | static_count.
    #[arg(long)]
    scheduler: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Experiment id; falls back to the config's `experiment`, then `single`.
    #[arg(long)]
    experiment: Option<String>,
    /// Results CSV.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Keep existing rows and add these under a new run id.
    #[arg(long)]
    append: bool,
    /// Write each run's schedule log; several runs get `-<variant>-<rep>` suffixes.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Evaluate the experiment's directional assertions.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Generate the configured workload's stream and write it as a trace.
    Dump {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a trace under the configured policies.
    Replay {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
        #[arg(long)]
        append: bool,
    },
    /// Dump, parse and replay the configured stream and diff the two.
    Roundtrip {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 2048)]
    particles: usize,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, default_value_t = 0.6)]
    clustering: f64,
    #[arg(long, default_value_t = 16)]
    bucket_size: usize,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = DEFAULT_SOFTENING)]
    softening: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Fail with exit code 1 when the median relative error exceeds this.
    #[arg(long)]
    max_median: Option<f64>,
}

enum Failure {
    Usage(String),
    Sim(String),
    Check(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Sim(e.to_string())
        }
    }
}

fn load_config(a: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = &a.policy {
        cfg.aggregator.policy = p.clone();
    }
    if let Some(m) = &a.mode {
        cfg.memory.mode = m.clone();
    }
    if let Some(s) = &a.scheduler {
        cfg.scheduler.policy = s.clone();
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn log_path(base: &Path, rec: &RunRecord, many: bool) -> PathBuf {
    if !many {
        return base.to_owned();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("schedule");
    let variant: String = rec.variant.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' }).collect();
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-{variant}-{}.{ext}", rec.repetition),
        None => format!("{stem}-{variant}-{}", rec.repetition),
    };
    base.with_file_name(name)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.cfg)?;
    let experiment = args.experiment.clone().or_else(|| cfg.experiment.clone()).unwrap_or_else(|| "single".into());
    if let Some(m) = &args.cfg.mode {
        m.parse::<MemoryMode>().map_err(Failure::Usage)?;
    }
    let records = harness::run_experiment(&cfg, &experiment)?;
    let rows: Vec<_> = records.iter().map(|r| r.row.clone()).collect();
    let run_id = harness::write_results(&rows, &args.out, args.append)?;
    for r in &rows {
        println!(
            "{}\tmakespan={:.3}\ttransfer={:.3}\tkernel={:.3}\tcpu={:.3}\tbatches={}",
            r.config_id, r.makespan, r.total_transfer_time, r.total_kernel_time, r.total_cpu_time, r.combined_batch_count
        );
    }
    println!("wrote {} rows to {} (run {run_id})", rows.len(), args.out.display());
    if let Some(base) = &args.log {
        for rec in &records {
            let path = log_path(base, rec, records.len() > 1);
            rec.outcome.log.write_to(&path).map_err(|e| Failure::Sim(format!("{}: {e}", path.display())))?;
        }
    }
    if args.check {
        let checks = harness::checks(&experiment, &records);
        let mut failed = 0;
        for c in &checks {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            failed += usize::from(!c.passed);
        }
        if failed > 0 {
            return Err(Failure::Check(format!("{failed} of {} checks failed", checks.len())));
        }
    }
    Ok(())
}

fn trace(cmd: TraceCommand) -> Result<(), Failure> {
    match cmd {
        TraceCommand::Dump { cfg, out } => {
            let cfg = load_config(&cfg)?;
            let records = harness::dump_stream(&cfg)?;
            write_trace(&out, &records).map_err(|e| Failure::Sim(format!("{}: {e}", out.display())))?;
            println!("wrote {} records to {}", records.len(), out.display());
        }
        TraceCommand::Replay { cfg, trace, out, append } => {
            let mut cfg = load_config(&cfg)?;
            read_trace(&trace).map_err(|e| Failure::Usage(e.to_string()))?;
            cfg.workload.kind = WorkloadKind::Trace;
            cfg.trace.path = Some(trace.clone());
            let outcome = harness::run_config(&cfg, "trace-replay")?;
            let row = harness::ResultRow::from_outcome(format!("replay/{}", trace.display()), &outcome);
            println!("makespan={:.3} requests={}", row.makespan, outcome.submitted.len());
            harness::write_results(&[row], &out, append)?;
        }
        TraceCommand::Roundtrip { cfg } => {
            let cfg = load_config(&cfg)?;
            let rt = harness::trace_roundtrip(&cfg)?;
            if !rt.identical() {
                for line in &rt.diff {
                    println!("{line}");
                }
                return Err(Failure::Check(format!("replayed stream differs ({} differences)", rt.diff.len())));
            }
            println!("identical: {} records", rt.records);
        }
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<(), Failure> {
    if a.particles < 2 || a.bucket_size == 0 || !(a.theta >= 0.0) || !(2..=3).contains(&a.dims) {
        return Err(Failure::Usage("need particles >= 2, bucket_size >= 1, theta >= 0 and dims 2 or 3".into()));
    }
    let errs = force_errors(a.particles, a.dims, a.clustering, a.bucket_size, a.theta, a.softening, a.seed)
        .map_err(|e| Failure::Sim(e.to_string()))?;
    let med = median(&errs);
    let max = errs.iter().copied().fold(0.0, f64::max);
    println!("particles={} theta={} median_rel_error={med:.3e} max_rel_error={max:.3e}", a.particles, a.theta);
    match a.max_median {
        Some(limit) if med > limit => Err(Failure::Check(format!("median error {med:.3e} exceeds {limit:.3e}"))),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HETERO_RT_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Trace(t) => trace(t),
        Command::Oracle(o) => oracle(o),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Sim(m)) => {
            eprintln!("simulation failed: {m}");
            ExitCode::from(EXIT_SIM)
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}
