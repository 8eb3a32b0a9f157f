//! Hybrid CPU/GPU scheduling.
//!
//! Per-item execution times are tracked as running averages for both
//! devices. A queue of work requests is split by data items: the CPU share of
//! the total item count is its relative speed, and the queue is scanned from
//! the front until the cumulative item count reaches that share. The scanned
//! prefix runs on the CPU, the rest on the GPU.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::{Device, WorkRequest};

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("invalid measurement on {device}: {items} items in {elapsed}")]
    BadSample { device: Device, items: u64, elapsed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct RunningMean {
    mean: f64,
    samples: u64,
}

impl RunningMean {
    fn push(&mut self, value: f64, decay: Option<f64>) {
        self.samples += 1;
        self.mean = match decay {
            Some(alpha) if self.samples > 1 => self.mean + alpha * (value - self.mean),
            _ => self.mean + (value - self.mean) / self.samples as f64,
        };
    }
}

/// Running-average per-item execution times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerfEstimate {
    cpu: RunningMean,
    gpu: RunningMean,
    /// Exponential smoothing factor; `None` keeps a cumulative mean.
    decay: Option<f64>,
}

/// Fractions of the work assigned to each device; they sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shares {
    pub cpu: f64,
    pub gpu: f64,
}

impl Shares {
    pub const EVEN: Shares = Shares { cpu: 0.5, gpu: 0.5 };

    pub fn cpu_only_fraction(cpu: f64) -> Shares {
        let cpu = cpu.clamp(0.0, 1.0);
        Shares { cpu, gpu: 1.0 - cpu }
    }
}

impl PerfEstimate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_decay(alpha: f64) -> Self {
        PerfEstimate { decay: Some(alpha.clamp(f64::MIN_POSITIVE, 1.0)), ..Self::default() }
    }

    pub fn record_sample(&mut self, device: Device, items: u64, elapsed: f64) -> Result<(), SchedulerError> {
        if items == 0 || !(elapsed > 0.0) || !elapsed.is_finite() {
            return Err(SchedulerError::BadSample { device, items, elapsed });
        }
        let per_item = elapsed / items as f64;
        match device {
            Device::Cpu => self.cpu.push(per_item, self.decay),
            Device::Gpu => self.gpu.push(per_item, self.decay),
        }
        Ok(())
    }

    pub fn cpu_time_per_item(&self) -> Option<f64> {
        (self.cpu.samples > 0).then_some(self.cpu.mean)
    }

    pub fn gpu_time_per_item(&self) -> Option<f64> {
        (self.gpu.samples > 0).then_some(self.gpu.mean)
    }

    pub fn samples(&self, device: Device) -> u64 {
        match device {
            Device::Cpu => self.cpu.samples,
            Device::Gpu => self.gpu.samples,
        }
    }

    /// Shares proportional to device speed (inverse per-item time), or
    /// `None` until both devices have been measured.
    pub fn current_ratio(&self) -> Option<Shares> {
        let cpu_speed = 1.0 / self.cpu_time_per_item()?;
        let gpu_speed = 1.0 / self.gpu_time_per_item()?;
        let cpu = cpu_speed / (cpu_speed + gpu_speed);
        Some(Shares { cpu, gpu: 1.0 - cpu })
    }
}

/// Where the request that crosses the CPU target goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingRule {
    /// The crossing request joins the CPU prefix.
    #[default]
    Cpu,
    /// The crossing request goes wherever leaves the CPU total nearer the target.
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub cpu: Vec<WorkRequest>,
    pub gpu: Vec<WorkRequest>,
    pub cpu_target_items: f64,
    /// Items of the request at which the cumulative sum crossed the target.
    pub crossing_items: Option<u64>,
}

impl Partition {
    pub fn cpu_items(&self) -> u64 {
        self.cpu.iter().map(|w| w.items).sum()
    }

    pub fn gpu_items(&self) -> u64 {
        self.gpu.iter().map(|w| w.items).sum()
    }
}

/// Cumulative-sum partition of `queue` by data items.
pub fn partition_queue(queue: Vec<WorkRequest>, shares: Shares, crossing: CrossingRule) -> Partition {
    let total: u64 = queue.iter().map(|w| w.items).sum();
    let target = total as f64 * shares.cpu;
    let mut cumulative = 0u64;
    let mut split = 0usize;
    let mut crossing_items = None;
    if target > 0.0 {
        for (i, w) in queue.iter().enumerate() {
            let before = cumulative;
            cumulative += w.items;
            if cumulative as f64 >= target {
                crossing_items = Some(w.items);
                split = i + 1;
                if crossing == CrossingRule::Nearest && target - before as f64 <= cumulative as f64 - target {
                    split = i;
                }
                break;
            }
        }
    }
    let mut cpu = queue;
    let gpu = cpu.split_off(split);
    Partition { cpu, gpu, cpu_target_items: target, crossing_items }
}

/// Count-based split: the first `round(n × cpu share)` requests go to the CPU
/// regardless of their sizes.
pub fn partition_by_count(queue: Vec<WorkRequest>, shares: Shares) -> Partition {
    let total: u64 = queue.iter().map(|w| w.items).sum();
    let split = ((queue.len() as f64) * shares.cpu).round() as usize;
    let mut cpu = queue;
    let gpu = cpu.split_off(split.min(cpu.len()));
    Partition { cpu, gpu, cpu_target_items: total as f64 * shares.cpu, crossing_items: None }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulerPolicy {
    /// Everything runs on the GPU.
    GpuOnly,
    /// Item-based cumulative-sum split using measured speeds.
    Adaptive,
    /// Request-count split. Uses the fixed fraction when given, else the
    /// measured speed ratio applied to request counts.
    StaticCount { cpu_fraction: Option<f64> },
}

impl fmt::Display for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerPolicy::GpuOnly => f.write_str("gpu_only"),
            SchedulerPolicy::Adaptive => f.write_str("adaptive"),
            SchedulerPolicy::StaticCount { cpu_fraction: None } => f.write_str("static_count"),
            SchedulerPolicy::StaticCount { cpu_fraction: Some(x) } => write!(f, "static_count({x})"),
        }
    }
}

impl FromStr for SchedulerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "gpu_only" => Ok(SchedulerPolicy::GpuOnly),
            "adaptive" => Ok(SchedulerPolicy::Adaptive),
            "static_count" | "static" => Ok(SchedulerPolicy::StaticCount { cpu_fraction: None }),
            other => Err(format!("unknown scheduler policy `{other}` (expected gpu_only, adaptive or static_count)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HybridScheduler {
    policy: SchedulerPolicy,
    crossing: CrossingRule,
    estimate: PerfEstimate,
}

impl HybridScheduler {
    pub fn new(policy: SchedulerPolicy, crossing: CrossingRule, decay: Option<f64>) -> Self {
        let estimate = decay.map_or_else(PerfEstimate::new, PerfEstimate::with_decay);
        HybridScheduler { policy, crossing, estimate }
    }

    pub fn policy(&self) -> SchedulerPolicy {
        self.policy
    }

    pub fn estimate(&self) -> &PerfEstimate {
        &self.estimate
    }

    pub fn record_sample(&mut self, device: Device, items: u64, elapsed: f64) -> Result<(), SchedulerError> {
        self.estimate.record_sample(device, items, elapsed)
    }

    /// Shares in force right now: measured once both devices have a sample,
    /// an even split before that.
    pub fn shares(&self) -> Shares {
        self.estimate.current_ratio().unwrap_or(Shares::EVEN)
    }

    pub fn split(&self, queue: Vec<WorkRequest>) -> Partition {
        match self.policy {
            SchedulerPolicy::GpuOnly => partition_queue(queue, Shares { cpu: 0.0, gpu: 1.0 }, self.crossing),
            SchedulerPolicy::Adaptive => partition_queue(queue, self.shares(), self.crossing),
            SchedulerPolicy::StaticCount { cpu_fraction } => {
                let shares = cpu_fraction.map_or_else(|| self.shares(), Shares::cpu_only_fraction);
                partition_by_count(queue, shares)
            }
        }
    }
}
