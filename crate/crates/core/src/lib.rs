//! Message-driven, over-decomposed task runtime with a deterministic
//! CPU/GPU cost simulator.
//!
//! The crate is organised along the pipeline a unit of device work travels:
//!
//! - [`runtime`]: chares, entry-method messages, readiness dispatch and the
//!   per-kernel-class work group list.
//! - [`aggregator`]: occupancy- and arrival-aware combining of pending work
//!   requests into one kernel launch.
//! - [`memory`]: device residency tracking, transfer planning under the
//!   redundant / reuse / reuse-with-sorted-indices modes, and the half-warp
//!   coalescing model.
//! - [`scheduler`]: running-average performance estimates and the
//!   cumulative-sum CPU/GPU queue partition.
//! - [`sim`]: occupancy calculator, cost models and the discrete-event
//!   timeline that drives everything else.
//! - [`workloads`]: Barnes-Hut and patch-based molecular dynamics mini-apps
//!   plus trace record/replay.
//! - [`harness`]: experiment configuration, experiment matrices and CSV
//!   results.

pub mod aggregator;
pub mod config;
pub mod harness;
pub mod memory;
pub mod runtime;
pub mod scheduler;
pub mod sim;
pub mod workloads;

pub use aggregator::{AggregationPolicy, AggregatorState, CombinedWorkRequest};
pub use memory::{MemoryManager, MemoryMode};
pub use runtime::{
    ChareId, CompletionEvent, Device, KernelClass, Message, Runtime, Time, WorkId, WorkRequest,
};
pub use scheduler::{HybridScheduler, PerfEstimate, SchedulerPolicy};
pub use sim::{CostParams, DeviceSpec, KernelSpec, ScheduleLog};
