//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! repetitions = 1
//!
//! [workload]
//! kind = "nbody"          # nbody | md | trace
//!
//! [nbody]                 # see NBodyParams
//! particles = 4096
//!
//! [device]
//! preset = "kepler-k20-like"
//!
//! [kernels.force]         # optional per-class overrides
//! max_size = 104
//!
//! [aggregator]
//! policy = "adaptive"     # adaptive | static_count(k)
//!
//! [memory]
//! mode = "reuse_sorted"   # redundant | reuse | reuse_sorted
//!
//! [scheduler]
//! policy = "gpu_only"     # gpu_only | adaptive | static_count
//!
//! [cost]                  # see CostParams
//! transfer_bandwidth = 6000.0
//! ```
//!
//! Every section and key is optional; omitted values take their defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::AggregationPolicy;
use crate::memory::{MemoryConfig, MemoryMode};
use crate::runtime::Time;
use crate::scheduler::{CrossingRule, SchedulerPolicy};
use crate::sim::{CostParams, DeviceSpec, KernelSpec, SimConfig};
use crate::workloads::{MdParams, NBodyParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    #[default]
    Nbody,
    Md,
    Trace,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    pub kind: WorkloadKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    pub preset: String,
    pub sm_count: Option<u32>,
    pub max_threads_per_sm: Option<u32>,
    pub max_blocks_per_sm: Option<u32>,
    pub registers_per_sm: Option<u32>,
    pub shared_mem_per_sm: Option<u32>,
}

impl Default for DeviceSection {
    fn default() -> Self {
        DeviceSection {
            preset: "kepler-k20-like".into(),
            sm_count: None,
            max_threads_per_sm: None,
            max_blocks_per_sm: None,
            registers_per_sm: None,
            shared_mem_per_sm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelOverride {
    pub block_shape: Option<(u32, u32)>,
    pub registers_per_thread: Option<u32>,
    pub shared_mem_per_block: Option<u32>,
    pub compute_per_item: Option<f64>,
    /// Replaces the occupancy-derived batch cap.
    pub max_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorSection {
    pub policy: String,
    pub tick: Time,
    pub timeout_factor: f64,
    /// Gaps considered by the running maximum; unset keeps the whole history.
    pub window: Option<usize>,
}

impl Default for AggregatorSection {
    fn default() -> Self {
        AggregatorSection { policy: "adaptive".into(), tick: 1000.0, timeout_factor: 2.0, window: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    pub mode: String,
    pub capacity_bytes: u64,
    pub slot_bytes: u64,
}

impl Default for MemorySection {
    fn default() -> Self {
        let d = MemoryConfig::default();
        MemorySection { mode: d.mode.as_str().into(), capacity_bytes: d.capacity_bytes, slot_bytes: d.slot_bytes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub policy: String,
    /// Fixed CPU fraction for `static_count`; unset uses the measured ratio.
    pub static_cpu_fraction: Option<f64>,
    pub crossing: CrossingRule,
    /// Exponential smoothing factor for the running averages.
    pub decay: Option<f64>,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection { policy: "gpu_only".into(), static_cpu_fraction: None, crossing: CrossingRule::Cpu, decay: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment run when none is named on the command line.
    pub experiment: Option<String>,
    pub seed: u64,
    pub repetitions: u32,
    pub workload: WorkloadSection,
    pub nbody: NBodyParams,
    pub md: MdParams,
    pub trace: TraceSection,
    pub device: DeviceSection,
    pub kernels: BTreeMap<String, KernelOverride>,
    pub aggregator: AggregatorSection,
    pub memory: MemorySection,
    pub scheduler: SchedulerSection,
    pub cost: CostParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            seed: 7,
            repetitions: 1,
            workload: WorkloadSection::default(),
            nbody: NBodyParams::default(),
            md: MdParams::default(),
            trace: TraceSection::default(),
            device: DeviceSection::default(),
            kernels: BTreeMap::new(),
            aggregator: AggregatorSection::default(),
            memory: MemorySection::default(),
            scheduler: SchedulerSection::default(),
            cost: CostParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a config file. A relative trace path is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(p), Some(dir)) = (cfg.trace.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = ConfigError::Invalid;
        if self.repetitions == 0 {
            return Err(invalid("repetitions must be at least 1".into()));
        }
        self.aggregation()?;
        self.memory_mode()?;
        self.scheduler_policy()?;
        let sim = self.sim_config()?;
        sim.cost.validate().map_err(invalid)?;
        for k in &sim.kernels {
            k.validate().map_err(|e| invalid(e.to_string()))?;
        }
        sim.device.validate().map_err(|e| invalid(e.to_string()))?;
        match self.workload.kind {
            WorkloadKind::Nbody => self.nbody.validate().map_err(invalid)?,
            WorkloadKind::Md => self.md.validate().map_err(invalid)?,
            WorkloadKind::Trace if self.trace.path.is_none() => {
                return Err(invalid("workload kind `trace` needs [trace] path".into()))
            }
            WorkloadKind::Trace => {}
        }
        if let Some(f) = self.scheduler.static_cpu_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid(format!("scheduler.static_cpu_fraction must lie in [0, 1], got {f}")));
            }
        }
        if let Some(d) = self.scheduler.decay {
            if !(d > 0.0 && d <= 1.0) {
                return Err(invalid(format!("scheduler.decay must lie in (0, 1], got {d}")));
            }
        }
        if !(self.aggregator.tick > 0.0) {
            return Err(invalid(format!("aggregator.tick must be positive, got {}", self.aggregator.tick)));
        }
        if self.aggregator.window == Some(0) {
            return Err(invalid("aggregator.window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn aggregation(&self) -> Result<AggregationPolicy, ConfigError> {
        match self.aggregator.policy.parse().map_err(ConfigError::Invalid)? {
            AggregationPolicy::Adaptive { .. } => Ok(AggregationPolicy::Adaptive {
                timeout_factor: self.aggregator.timeout_factor,
                window: self.aggregator.window,
            }),
            other => Ok(other),
        }
    }

    pub fn memory_mode(&self) -> Result<MemoryMode, ConfigError> {
        self.memory.mode.parse().map_err(ConfigError::Invalid)
    }

    pub fn scheduler_policy(&self) -> Result<SchedulerPolicy, ConfigError> {
        match self.scheduler.policy.parse().map_err(ConfigError::Invalid)? {
            SchedulerPolicy::StaticCount { .. } => {
                Ok(SchedulerPolicy::StaticCount { cpu_fraction: self.scheduler.static_cpu_fraction })
            }
            other => Ok(other),
        }
    }

    pub fn device_spec(&self) -> Result<DeviceSpec, ConfigError> {
        let d = &self.device;
        let mut spec = DeviceSpec::preset(&d.preset)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown device preset `{}`", d.preset)))?;
        spec.sm_count = d.sm_count.unwrap_or(spec.sm_count);
        spec.max_threads_per_sm = d.max_threads_per_sm.unwrap_or(spec.max_threads_per_sm);
        spec.max_blocks_per_sm = d.max_blocks_per_sm.unwrap_or(spec.max_blocks_per_sm);
        spec.registers_per_sm = d.registers_per_sm.unwrap_or(spec.registers_per_sm);
        spec.shared_mem_per_sm = d.shared_mem_per_sm.unwrap_or(spec.shared_mem_per_sm);
        Ok(spec)
    }

    pub fn kernel_specs(&self) -> Result<(Vec<KernelSpec>, BTreeMap<String, usize>), ConfigError> {
        let mut specs = vec![KernelSpec::force(), KernelSpec::ewald(), KernelSpec::interact()];
        let mut caps = BTreeMap::new();
        for (name, o) in &self.kernels {
            let spec = specs
                .iter_mut()
                .find(|k| k.kernel.as_str() == name)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown kernel class `{name}`")))?;
            if let Some((r, c)) = o.block_shape {
                spec.block_shape = (r, c);
                spec.threads_per_block = r * c;
            }
            spec.registers_per_thread = o.registers_per_thread.unwrap_or(spec.registers_per_thread);
            spec.shared_mem_per_block = o.shared_mem_per_block.unwrap_or(spec.shared_mem_per_block);
            spec.compute_per_item = o.compute_per_item.unwrap_or(spec.compute_per_item);
            if let Some(m) = o.max_size {
                if m == 0 {
                    return Err(ConfigError::Invalid(format!("kernels.{name}.max_size must be at least 1")));
                }
                caps.insert(name.clone(), m);
            }
        }
        Ok((specs, caps))
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let (kernels, max_size_overrides) = self.kernel_specs()?;
        Ok(SimConfig {
            device: self.device_spec()?,
            kernels,
            max_size_overrides,
            aggregation: self.aggregation()?,
            tick: self.aggregator.tick,
            memory: MemoryConfig {
                mode: self.memory_mode()?,
                capacity_bytes: self.memory.capacity_bytes,
                slot_bytes: self.memory.slot_bytes,
            },
            scheduler: self.scheduler_policy()?,
            crossing: self.scheduler.crossing,
            decay: self.scheduler.decay,
            cost: self.cost,
        })
    }
}
