//! Deterministic device simulation: occupancy, cost models and the global
//! event timeline.

pub mod cost;
pub mod device;
pub mod log;
pub mod timeline;

pub use cost::{sim_cpu_time, sim_kernel_time, sim_transfer_time, CostParams};
pub use device::{calc_occupancy, DeviceSpec, KernelSpec, Occupancy, OccupancyError};
pub use log::{LogKind, LogRecord, ScheduleLog};
pub use timeline::{run_timeline, Injection, PartitionRecord, SimConfig, SimError, SimOutcome, SimStats, Workload};
