//! Kernel aggregation: deciding when pending work requests of one kernel
//! class become a single combined launch.
//!
//! The adaptive rule balances occupancy against idling. A class combines
//! `maxSize` requests as soon as that many are pending, where `maxSize` is the
//! number of thread blocks the device keeps resident for the kernel (one block
//! per request). With fewer pending, it flushes everything once the time since
//! the last arrival exceeds `timeout_factor` times the running maximum of
//! inter-arrival gaps.
//!
//! The static baseline combines whatever is pending after every `k`
//! arrivals, and flushes leftovers at a periodic tick that saw no arrival.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::runtime::{KernelClass, Time, WorkRequest};
use crate::sim::device::{calc_occupancy, DeviceSpec, KernelSpec, OccupancyError};

#[derive(Debug, Error, PartialEq)]
pub enum AggregatorError {
    #[error("arrival at {now} precedes the previous arrival at {last}")]
    ClockWentBackwards { now: Time, last: Time },
    #[error("cannot combine kernel classes `{0}` and `{1}`")]
    MixedKernels(String, String),
    #[error("a combined request needs at least one member")]
    EmptyBatch,
    #[error("maxSize must be at least 1")]
    ZeroMaxSize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggregationPolicy {
    /// maxSize cap plus inter-arrival timeout.
    Adaptive {
        timeout_factor: f64,
        /// Number of most recent gaps the running maximum looks at;
        /// `None` keeps the whole history.
        window: Option<usize>,
    },
    /// Combine everything pending, in maxSize chunks, after every `every`
    /// arrivals.
    StaticCount { every: usize },
}

impl AggregationPolicy {
    pub fn adaptive() -> Self {
        AggregationPolicy::Adaptive { timeout_factor: 2.0, window: None }
    }

    pub fn static_count(every: usize) -> Self {
        AggregationPolicy::StaticCount { every }
    }
}

impl fmt::Display for AggregationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregationPolicy::Adaptive { .. } => f.write_str("adaptive"),
            AggregationPolicy::StaticCount { every } => write!(f, "static_count({every})"),
        }
    }
}

impl FromStr for AggregationPolicy {
    type Err = String;

    /// Accepts `adaptive`, `static` (k = 100), `static_count(k)` and `static_count:k`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "adaptive" {
            return Ok(AggregationPolicy::adaptive());
        }
        if s == "static" || s == "static_count" {
            return Ok(AggregationPolicy::static_count(100));
        }
        let arg = s
            .strip_prefix("static_count(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("static_count:"));
        match arg.map(|a| a.trim().parse::<usize>()) {
            Some(Ok(k)) if k > 0 => Ok(AggregationPolicy::static_count(k)),
            _ => Err(format!("unknown aggregation policy `{s}` (expected adaptive or static_count(k))")),
        }
    }
}

/// An aggregated batch executed as one simulated kernel launch.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedWorkRequest {
    pub id: u64,
    pub kernel: KernelClass,
    pub members: Vec<WorkRequest>,
    /// Sorted, deduplicated union of the members' buffers.
    pub distinct_buffers: Vec<u32>,
    /// One thread block per member.
    pub block_count: usize,
    pub create_time: Time,
}

impl CombinedWorkRequest {
    pub fn items(&self) -> u64 {
        self.members.iter().map(|m| m.items).sum()
    }
}

/// Maximum work requests per combined kernel: resident blocks per SM times
/// the SM count.
pub fn compute_max_size(kernel: &KernelSpec, device: &DeviceSpec) -> Result<usize, OccupancyError> {
    let occ = calc_occupancy(kernel, device)?;
    Ok(occ.blocks_per_sm as usize * device.sm_count as usize)
}

pub fn make_combined(id: u64, members: Vec<WorkRequest>, now: Time) -> Result<CombinedWorkRequest, AggregatorError> {
    let kernel = members.first().ok_or(AggregatorError::EmptyBatch)?.kernel.clone();
    if let Some(other) = members.iter().find(|m| m.kernel != kernel) {
        return Err(AggregatorError::MixedKernels(kernel.to_string(), other.kernel.to_string()));
    }
    let mut distinct: Vec<u32> = members.iter().flat_map(|m| m.buffers.iter().copied()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    Ok(CombinedWorkRequest {
        id,
        kernel,
        block_count: members.len(),
        members,
        distinct_buffers: distinct,
        create_time: now,
    })
}

/// Aggregation state of one work group node.
#[derive(Debug, Clone)]
pub struct AggregatorState {
    kernel: KernelClass,
    max_size: usize,
    policy: AggregationPolicy,
    max_interval: Option<Time>,
    last_arrival: Option<Time>,
    gaps: VecDeque<Time>,
    pending: VecDeque<WorkRequest>,
    since_combine: usize,
    arrivals_since_tick: usize,
    /// A static flush is still draining in maxSize chunks.
    draining: bool,
}

impl AggregatorState {
    pub fn new(kernel: KernelClass, max_size: usize, policy: AggregationPolicy) -> Result<Self, AggregatorError> {
        if max_size == 0 {
            return Err(AggregatorError::ZeroMaxSize);
        }
        Ok(AggregatorState {
            kernel,
            max_size,
            policy,
            max_interval: None,
            last_arrival: None,
            gaps: VecDeque::new(),
            pending: VecDeque::new(),
            since_combine: 0,
            arrivals_since_tick: 0,
            draining: false,
        })
    }

    pub fn kernel(&self) -> &KernelClass {
        &self.kernel
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// Running maximum of inter-arrival gaps; `None` until two arrivals,
    /// which the timeout rule treats as infinite.
    pub fn max_interval(&self) -> Option<Time> {
        self.max_interval
    }

    pub fn last_arrival(&self) -> Option<Time> {
        self.last_arrival
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn pending(&self) -> impl Iterator<Item = &WorkRequest> {
        self.pending.iter()
    }

    pub fn observe_arrival(&mut self, now: Time) -> Result<(), AggregatorError> {
        if let Some(last) = self.last_arrival {
            if now < last {
                return Err(AggregatorError::ClockWentBackwards { now, last });
            }
            let gap = now - last;
            match self.policy {
                AggregationPolicy::Adaptive { window: Some(w), .. } => {
                    self.gaps.push_back(gap);
                    while self.gaps.len() > w.max(1) {
                        self.gaps.pop_front();
                    }
                    self.max_interval = self.gaps.iter().copied().reduce(f64::max);
                }
                _ => {
                    self.max_interval = Some(self.max_interval.map_or(gap, |m| m.max(gap)));
                }
            }
        }
        self.last_arrival = Some(now);
        self.since_combine += 1;
        self.arrivals_since_tick += 1;
        Ok(())
    }

    pub fn enqueue(&mut self, wr: WorkRequest) {
        debug_assert_eq!(wr.kernel, self.kernel);
        self.pending.push_back(wr);
    }

    fn timeout(&self) -> Option<Time> {
        match self.policy {
            AggregationPolicy::Adaptive { timeout_factor, .. } => self.max_interval.map(|m| timeout_factor * m),
            AggregationPolicy::StaticCount { .. } => None,
        }
    }

    /// Returns the next batch that is due at `now`, if any. Call repeatedly
    /// until `None` to drain every due batch.
    pub fn poll_combine(&mut self, now: Time, next_id: &mut u64) -> Option<CombinedWorkRequest> {
        if self.pending.is_empty() {
            return None;
        }
        let take = match self.policy {
            AggregationPolicy::Adaptive { .. } => {
                if self.pending.len() >= self.max_size {
                    self.max_size
                } else {
                    let last = self.last_arrival?;
                    let timeout = self.timeout()?;
                    if now - last > timeout {
                        self.pending.len()
                    } else {
                        return None;
                    }
                }
            }
            AggregationPolicy::StaticCount { every } => {
                if self.since_combine >= every || self.draining {
                    self.pending.len().min(self.max_size)
                } else {
                    return None;
                }
            }
        };
        Some(self.combine(take, now, next_id))
    }

    /// Periodic tick. The static policy flushes leftovers when no request
    /// arrived since the previous tick; the adaptive policy does nothing here.
    pub fn on_tick(&mut self, now: Time, next_id: &mut u64) -> Option<CombinedWorkRequest> {
        let idle = self.arrivals_since_tick == 0;
        self.arrivals_since_tick = 0;
        match self.policy {
            AggregationPolicy::StaticCount { .. } if idle && !self.pending.is_empty() => {
                let n = self.pending.len().min(self.max_size);
                Some(self.combine(n, now, next_id))
            }
            _ => None,
        }
    }

    /// Earliest time at which the timeout rule fires for the current pending
    /// set, or `None` when no timeout can fire.
    pub fn flush_deadline(&self) -> Option<Time> {
        if self.pending.is_empty() || self.pending.len() >= self.max_size {
            return None;
        }
        let last = self.last_arrival?;
        let timeout = self.timeout()?;
        // smallest representable time strictly past the threshold
        let mut t = last + timeout;
        while t - last <= timeout {
            t = t.next_up();
        }
        Some(t)
    }

    /// Whether pending work will eventually be flushed without further
    /// arrivals.
    pub fn can_flush_without_arrivals(&self) -> bool {
        if self.pending.is_empty() {
            return true;
        }
        match self.policy {
            AggregationPolicy::StaticCount { .. } => true,
            AggregationPolicy::Adaptive { .. } => self.pending.len() >= self.max_size || self.max_interval.is_some(),
        }
    }

    fn combine(&mut self, take: usize, now: Time, next_id: &mut u64) -> CombinedWorkRequest {
        let members: Vec<WorkRequest> = self.pending.drain(..take).collect();
        self.since_combine = self.pending.len();
        self.draining = matches!(self.policy, AggregationPolicy::StaticCount { .. }) && !self.pending.is_empty();
        let id = *next_id;
        *next_id += 1;
        make_combined(id, members, now).expect("pending holds one kernel class and is non-empty")
    }
}
