//! Global discrete-event timeline.
//!
//! Events are processed in `(time, seq)` order, where `seq` is a monotone
//! insertion counter, so simultaneous events resolve deterministically. The
//! GPU runs one combined batch at a time (transfer then kernel), the CPU one
//! batch at a time, and the two overlap in simulated time.
//!
//! Every combined batch produced by the aggregator is split between the
//! devices by the hybrid scheduler. Completions fan out callback messages,
//! which re-enter the runtime and may produce further work.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aggregator::{compute_max_size, make_combined, AggregationPolicy, CombinedWorkRequest};
use crate::memory::{MemoryConfig, MemoryError, MemoryManager};
use crate::runtime::{
    ChareId, CompletionEvent, Device, EntryHooks, KernelClass, Message, Runtime, RuntimeError, Time, WorkDraft,
    WorkRequest,
};
use crate::scheduler::{CrossingRule, HybridScheduler, SchedulerError, SchedulerPolicy};

use super::cost::{sim_cpu_time, sim_kernel_time, sim_transfer_time, CostParams};
use super::device::{DeviceSpec, KernelSpec, OccupancyError};
use super::log::{LogKind, LogRecord, ScheduleLog};

/// A workload drives the runtime: it supplies the initial messages and work,
/// and the entry-method bodies.
pub trait Workload: EntryHooks {
    fn chare_count(&self) -> u32;
    fn start(&mut self) -> Injection;
}

/// Initial stimulus. Messages are delivered at their send time; work drafts
/// arrive at their delay, measured from time zero.
#[derive(Debug, Default, Clone)]
pub struct Injection {
    pub messages: Vec<Message>,
    pub work: Vec<(ChareId, WorkDraft)>,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub device: DeviceSpec,
    pub kernels: Vec<KernelSpec>,
    /// Per-class maxSize replacing the occupancy-derived value.
    pub max_size_overrides: BTreeMap<String, usize>,
    pub aggregation: AggregationPolicy,
    /// Period of the aggregator tick.
    pub tick: Time,
    pub memory: MemoryConfig,
    pub scheduler: SchedulerPolicy,
    pub crossing: CrossingRule,
    pub decay: Option<f64>,
    pub cost: CostParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            device: DeviceSpec::kepler_k20_like(),
            kernels: vec![KernelSpec::force(), KernelSpec::ewald(), KernelSpec::interact()],
            max_size_overrides: BTreeMap::new(),
            aggregation: AggregationPolicy::adaptive(),
            tick: 1000.0,
            memory: MemoryConfig::default(),
            scheduler: SchedulerPolicy::GpuOnly,
            crossing: CrossingRule::Cpu,
            decay: None,
            cost: CostParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("liveness failure at t={time}: {pending} work requests can never be dispatched\n{dump}")]
    Liveness { time: Time, pending: usize, dump: String },
}

/// One scheduler decision.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionRecord {
    pub batch: u64,
    pub time: Time,
    pub cpu_items: u64,
    pub gpu_items: u64,
    pub cpu_requests: usize,
    pub gpu_requests: usize,
    pub target: f64,
    pub crossing_items: Option<u64>,
}

impl PartitionRecord {
    /// |items(cpu) − target| < size of the crossing request.
    pub fn is_balanced(&self) -> bool {
        match self.crossing_items {
            Some(c) => (self.cpu_items as f64 - self.target).abs() < c as f64,
            None => self.cpu_items == 0 && self.target <= 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimStats {
    pub first_arrival: Option<Time>,
    pub last_completion: Option<Time>,
    pub makespan: Time,
    pub transfer_bytes: u64,
    pub transfer_time: Time,
    pub kernel_time: Time,
    pub cpu_time: Time,
    pub combined_batches: u64,
    pub combined_members: u64,
    pub gpu_batches: u64,
    pub cpu_batches: u64,
    pub transactions: u64,
    pub partitions: Vec<PartitionRecord>,
}

impl SimStats {
    pub fn mean_batch_size(&self) -> f64 {
        if self.combined_batches == 0 {
            0.0
        } else {
            self.combined_members as f64 / self.combined_batches as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub log: ScheduleLog,
    pub stats: SimStats,
    /// Every submitted work request, in submission order, stamped with its
    /// arrival time.
    pub submitted: Vec<WorkRequest>,
}

#[derive(Debug)]
enum EventKind {
    Arrival(WorkRequest),
    Deliver(Message),
    Tick,
    Wakeup,
    GpuDone(Job),
    CpuDone(Job),
}

#[derive(Debug)]
struct Job {
    batch: u64,
    members: Vec<WorkRequest>,
    created: Time,
    started: Time,
}

#[derive(Debug)]
struct Event {
    time: Time,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    kernels: BTreeMap<KernelClass, KernelSpec>,
    runtime: Runtime,
    memory: MemoryManager,
    scheduler: HybridScheduler,
    noise: ChaCha8Rng,
    events: BinaryHeap<Event>,
    seq: u64,
    gpu_queue: VecDeque<CombinedWorkRequest>,
    cpu_queue: VecDeque<Job>,
    gpu_busy: bool,
    cpu_busy: bool,
    wakeups: BTreeMap<KernelClass, Time>,
    log: ScheduleLog,
    stats: SimStats,
    submitted: Vec<WorkRequest>,
}

/// Runs `workload` to completion and returns the schedule log.
pub fn run_timeline(workload: &mut dyn Workload, cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    validate(cfg)?;
    let mut sim = Sim::new(cfg, workload.chare_count())?;
    let start = workload.start();
    for msg in start.messages {
        let t = msg.send_time.max(0.0);
        sim.push(t, EventKind::Deliver(msg));
    }
    for (owner, draft) in start.work {
        let wr = sim.runtime.create_work_request(owner, draft, 0.0);
        let t = wr.arrival.max(0.0);
        sim.push(t, EventKind::Arrival(wr));
    }
    sim.push(cfg.tick, EventKind::Tick);
    while let Some(ev) = sim.events.pop() {
        sim.handle(ev, workload)?;
    }
    sim.finish()
}

fn validate(cfg: &SimConfig) -> Result<(), SimError> {
    cfg.cost.validate().map_err(SimError::Config)?;
    cfg.device.validate()?;
    if !(cfg.tick > 0.0) || !cfg.tick.is_finite() {
        return Err(SimError::Config(format!("aggregator tick must be positive, got {}", cfg.tick)));
    }
    if let AggregationPolicy::Adaptive { timeout_factor, .. } = cfg.aggregation {
        if !(timeout_factor >= 0.0) || !timeout_factor.is_finite() {
            return Err(SimError::Config(format!("timeout factor must be non-negative, got {timeout_factor}")));
        }
    }
    if let SchedulerPolicy::StaticCount { cpu_fraction: Some(f) } = cfg.scheduler {
        if !(0.0..=1.0).contains(&f) {
            return Err(SimError::Config(format!("static CPU fraction must lie in [0, 1], got {f}")));
        }
    }
    Ok(())
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, chares: u32) -> Result<Self, SimError> {
        let mut runtime = Runtime::new(chares, cfg.aggregation.clone());
        let mut kernels = BTreeMap::new();
        for k in &cfg.kernels {
            let max = match cfg.max_size_overrides.get(k.kernel.as_str()) {
                Some(&m) if m >= 1 => m,
                Some(_) => return Err(SimError::Config(format!("maxSize override for `{}` must be ≥ 1", k.kernel))),
                None => compute_max_size(k, &cfg.device)?,
            };
            runtime.register_kernel(k.kernel.clone(), max);
            kernels.insert(k.kernel.clone(), k.clone());
        }
        Ok(Sim {
            cfg,
            kernels,
            runtime,
            memory: MemoryManager::new(cfg.memory)?,
            scheduler: HybridScheduler::new(cfg.scheduler, cfg.crossing, cfg.decay),
            noise: ChaCha8Rng::seed_from_u64(cfg.cost.noise_seed),
            events: BinaryHeap::new(),
            seq: 0,
            gpu_queue: VecDeque::new(),
            cpu_queue: VecDeque::new(),
            gpu_busy: false,
            cpu_busy: false,
            wakeups: BTreeMap::new(),
            log: ScheduleLog::new(),
            stats: SimStats::default(),
            submitted: Vec::new(),
        })
    }

    fn push(&mut self, time: Time, kind: EventKind) {
        self.events.push(Event { time, seq: self.seq, kind });
        self.seq += 1;
    }

    fn handle(&mut self, ev: Event, workload: &mut dyn Workload) -> Result<(), SimError> {
        let now = ev.time;
        match ev.kind {
            EventKind::Arrival(wr) => {
                self.runtime.submit_work_request(wr.clone(), now)?;
                self.stats.first_arrival.get_or_insert(now);
                self.submitted.push(WorkRequest { arrival: now, ..wr });
                let batches = self.runtime.poll_groups(now);
                self.dispatch(batches, now);
            }
            EventKind::Deliver(msg) => {
                if let Some(inv) = self.runtime.dispatch_ready(&msg, workload)? {
                    for draft in inv.effects.work {
                        let wr = self.runtime.create_work_request(inv.chare, draft, now);
                        let t = wr.arrival.max(now);
                        self.push(t, EventKind::Arrival(wr));
                    }
                    for m in inv.effects.messages {
                        let t = m.send_time.max(now);
                        self.push(t, EventKind::Deliver(m));
                    }
                }
            }
            EventKind::Wakeup => {
                let batches = self.runtime.poll_groups(now);
                self.dispatch(batches, now);
            }
            EventKind::Tick => {
                let batches = self.runtime.tick_groups(now);
                self.dispatch(batches, now);
                self.reschedule_tick(now)?;
            }
            EventKind::GpuDone(job) => {
                self.gpu_busy = false;
                self.memory.release();
                self.complete(job, Device::Gpu, now)?;
            }
            EventKind::CpuDone(job) => {
                self.cpu_busy = false;
                self.complete(job, Device::Cpu, now)?;
            }
        }
        self.schedule_wakeups();
        self.start_gpu(now)?;
        self.start_cpu(now);
        Ok(())
    }

    fn idle(&self) -> bool {
        !self.gpu_busy && !self.cpu_busy && self.gpu_queue.is_empty() && self.cpu_queue.is_empty()
    }

    fn reschedule_tick(&mut self, now: Time) -> Result<(), SimError> {
        let pending = self.runtime.pending_in_groups();
        let quiet = self.events.is_empty() && self.idle();
        if !quiet {
            self.push(now + self.cfg.tick, EventKind::Tick);
            return Ok(());
        }
        if pending == 0 {
            return Ok(());
        }
        if self.runtime.groups().all(|g| g.can_flush_without_arrivals()) {
            self.push(now + self.cfg.tick, EventKind::Tick);
            return Ok(());
        }
        let mut dump = String::new();
        for g in self.runtime.groups().filter(|g| g.pending_len() > 0) {
            let _ = writeln!(
                dump,
                "  class {}: {} pending, maxSize {}, maxInterval {:?}, last arrival {:?}",
                g.kernel(),
                g.pending_len(),
                g.max_size(),
                g.max_interval(),
                g.last_arrival()
            );
        }
        Err(SimError::Liveness { time: now, pending, dump })
    }

    fn schedule_wakeups(&mut self) {
        let due: Vec<(KernelClass, Time)> = self
            .runtime
            .groups()
            .filter_map(|g| g.flush_deadline().map(|d| (g.kernel().clone(), d)))
            .collect();
        for (kernel, deadline) in due {
            if self.wakeups.get(&kernel) != Some(&deadline) {
                self.wakeups.insert(kernel, deadline);
                self.push(deadline, EventKind::Wakeup);
            }
        }
    }

    fn dispatch(&mut self, batches: Vec<CombinedWorkRequest>, now: Time) {
        for batch in batches {
            self.stats.combined_batches += 1;
            self.stats.combined_members += batch.members.len() as u64;
            let id = batch.id;
            let kernel = batch.kernel.clone();
            let created = batch.create_time;
            let part = self.scheduler.split(batch.members);
            if self.cfg.scheduler != SchedulerPolicy::GpuOnly {
                self.stats.partitions.push(PartitionRecord {
                    batch: id,
                    time: now,
                    cpu_items: part.cpu_items(),
                    gpu_items: part.gpu_items(),
                    cpu_requests: part.cpu.len(),
                    gpu_requests: part.gpu.len(),
                    target: part.cpu_target_items,
                    crossing_items: part.crossing_items,
                });
            }
            if !part.cpu.is_empty() {
                self.cpu_queue.push_back(Job { batch: id, members: part.cpu, created, started: now });
            }
            if !part.gpu.is_empty() {
                let gpu = make_combined(id, part.gpu, created).expect("non-empty single-class subset");
                debug_assert_eq!(gpu.kernel, kernel);
                self.gpu_queue.push_back(gpu);
            }
        }
    }

    fn start_gpu(&mut self, now: Time) -> Result<(), SimError> {
        if self.gpu_busy {
            return Ok(());
        }
        let Some(batch) = self.gpu_queue.pop_front() else {
            return Ok(());
        };
        let kernel = self.kernels.get(&batch.kernel).expect("registered at startup");
        let (plan, layout) = self.memory.build_plan(&batch.members, now)?;
        let transfer = sim_transfer_time(&plan, &self.cfg.cost);
        let compute = sim_kernel_time(&batch, &layout, kernel, &self.cfg.device, &self.cfg.cost)?;
        let items = batch.items();
        let bytes = plan.total_bytes + plan.indirection_bytes;
        let transactions = layout.transactions();
        self.log.push(LogRecord {
            time: now,
            kind: LogKind::Transfer,
            device: Some(Device::Gpu),
            batch: Some(batch.id),
            items,
            bytes,
            transactions: 0,
            duration: transfer,
        });
        self.log.push(LogRecord {
            time: now + transfer,
            kind: LogKind::Kernel,
            device: Some(Device::Gpu),
            batch: Some(batch.id),
            items,
            bytes: 0,
            transactions,
            duration: compute,
        });
        self.stats.transfer_bytes += bytes;
        self.stats.transfer_time += transfer;
        self.stats.kernel_time += compute;
        self.stats.transactions += transactions;
        self.stats.gpu_batches += 1;
        self.gpu_busy = true;
        let job = Job { batch: batch.id, created: batch.create_time, members: batch.members, started: now };
        self.push(now + transfer + compute, EventKind::GpuDone(job));
        Ok(())
    }

    fn start_cpu(&mut self, now: Time) {
        if self.cpu_busy {
            return;
        }
        let Some(mut job) = self.cpu_queue.pop_front() else {
            return;
        };
        let t = sim_cpu_time(&job.members, &self.cfg.cost, &mut self.noise);
        let items = job.members.iter().map(|w| w.items).sum();
        self.log.push(LogRecord {
            time: now,
            kind: LogKind::Cpu,
            device: Some(Device::Cpu),
            batch: Some(job.batch),
            items,
            bytes: 0,
            transactions: 0,
            duration: t,
        });
        self.stats.cpu_time += t;
        self.stats.cpu_batches += 1;
        self.cpu_busy = true;
        job.started = now;
        self.push(now + t, EventKind::CpuDone(job));
    }

    fn complete(&mut self, job: Job, device: Device, now: Time) -> Result<(), SimError> {
        let items: u64 = job.members.iter().map(|w| w.items).sum();
        let elapsed = now - job.started;
        if items > 0 && elapsed > 0.0 {
            self.scheduler.record_sample(device, items, elapsed)?;
        }
        let ev = CompletionEvent {
            combined_id: job.batch,
            members: job.members.iter().map(|w| w.id).collect(),
            device,
            finish_time: now,
        };
        let callbacks = self.runtime.on_completion(&ev)?;
        self.log.push(LogRecord {
            time: now,
            kind: LogKind::Complete,
            device: Some(device),
            batch: Some(job.batch),
            items,
            bytes: 0,
            transactions: 0,
            duration: now - job.created,
        });
        self.stats.last_completion = Some(now);
        for msg in callbacks {
            self.push(now, EventKind::Deliver(msg));
        }
        Ok(())
    }

    fn finish(mut self) -> Result<SimOutcome, SimError> {
        let pending = self.runtime.in_flight_count();
        if pending > 0 {
            return Err(SimError::Liveness {
                time: self.stats.last_completion.unwrap_or(0.0),
                pending,
                dump: format!("  {} submitted, {} completed", self.runtime.submitted_count(), self.runtime.completed_count()),
            });
        }
        let start = self.stats.first_arrival.unwrap_or(0.0);
        let end = self.stats.last_completion.unwrap_or(start);
        self.stats.makespan = end - start;
        self.log.push(LogRecord {
            time: end,
            kind: LogKind::Makespan,
            device: None,
            batch: None,
            items: self.submitted.iter().map(|w| w.items).sum(),
            bytes: self.stats.transfer_bytes,
            transactions: self.stats.transactions,
            duration: self.stats.makespan,
        });
        Ok(SimOutcome { log: self.log, stats: self.stats, submitted: self.submitted })
    }
}
