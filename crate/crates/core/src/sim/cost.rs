//! Closed-form cost models for transfers, GPU kernels and CPU execution.
//!
//! Kernel time is bulk-synchronous per wave of resident blocks:
//!
//! ```text
//! waves   = ceil(blocks / (blocksPerSM × smCount))
//! perWave = max over blocks in the wave of (items × computePerItem + transactions × memTransactionCost)
//! kernel  = launchOverhead + Σ perWave
//! ```
//!
//! Transfers cost `latency + bytes / bandwidth`, or nothing when the plan is
//! empty. CPU work costs `items × cpuTimePerItem`, optionally scaled by a
//! seeded multiplicative noise factor.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::CombinedWorkRequest;
use crate::memory::{AccessLayout, TransferPlan};
use crate::runtime::{Time, WorkRequest};

use super::device::{calc_occupancy, DeviceSpec, KernelSpec, OccupancyError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Fixed cost of any non-empty host-to-device copy.
    pub transfer_latency: Time,
    /// Bytes moved per unit of simulated time.
    pub transfer_bandwidth: f64,
    pub launch_overhead: Time,
    /// Cost of one global-memory transaction inside a block.
    pub mem_transaction_cost: Time,
    /// Ground-truth CPU cost of one data item.
    pub cpu_time_per_item: Time,
    /// Half-width of the uniform multiplicative CPU noise; 0 disables it.
    pub cpu_noise: f64,
    pub noise_seed: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            transfer_latency: 10.0,
            transfer_bandwidth: 6000.0,
            launch_overhead: 5.0,
            mem_transaction_cost: 0.05,
            cpu_time_per_item: 0.01,
            cpu_noise: 0.0,
            noise_seed: 0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), String> {
        let non_negative = [
            ("transfer_latency", self.transfer_latency),
            ("launch_overhead", self.launch_overhead),
            ("mem_transaction_cost", self.mem_transaction_cost),
            ("cpu_time_per_item", self.cpu_time_per_item),
            ("cpu_noise", self.cpu_noise),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("cost.{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.transfer_bandwidth > 0.0) || !self.transfer_bandwidth.is_finite() {
            return Err(format!("cost.transfer_bandwidth must be positive, got {}", self.transfer_bandwidth));
        }
        if self.cpu_noise >= 1.0 {
            return Err(format!("cost.cpu_noise must be below 1, got {}", self.cpu_noise));
        }
        Ok(())
    }
}

pub fn sim_kernel_time(
    batch: &CombinedWorkRequest,
    layout: &AccessLayout,
    kernel: &KernelSpec,
    device: &DeviceSpec,
    p: &CostParams,
) -> Result<Time, OccupancyError> {
    let occ = calc_occupancy(kernel, device)?;
    let per_wave = occ.blocks_per_sm as usize * device.sm_count as usize;
    let block_time = |b: usize| {
        let items = batch.members[b].items as f64;
        items * kernel.compute_per_item + layout.block_transactions(b) as f64 * p.mem_transaction_cost
    };
    let waves: Time = (0..batch.members.len())
        .collect::<Vec<_>>()
        .chunks(per_wave)
        .map(|wave| wave.iter().map(|&b| block_time(b)).fold(0.0, f64::max))
        .sum();
    Ok(p.launch_overhead + waves)
}

pub fn sim_transfer_time(plan: &TransferPlan, p: &CostParams) -> Time {
    if plan.is_empty() {
        return 0.0;
    }
    p.transfer_latency + (plan.total_bytes + plan.indirection_bytes) as f64 / p.transfer_bandwidth
}

/// CPU execution time of `wrs`. Draws one noise factor from `rng` when noise
/// is enabled and the set is non-empty.
pub fn sim_cpu_time(wrs: &[WorkRequest], p: &CostParams, rng: &mut ChaCha8Rng) -> Time {
    let items: u64 = wrs.iter().map(|w| w.items).sum();
    let base = items as f64 * p.cpu_time_per_item;
    if p.cpu_noise > 0.0 && items > 0 {
        base * (1.0 + rng.random_range(-p.cpu_noise..=p.cpu_noise))
    } else {
        base
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::make_combined;
    use crate::memory::MemoryMode;
    use crate::runtime::{ChareId, WorkId};
    use rand::SeedableRng;

    fn wr(id: u64, items: u64, buffers: usize) -> WorkRequest {
        WorkRequest {
            id: WorkId(id),
            owner: ChareId(0),
            kernel: "force".into(),
            buffers: (0..buffers as u32).collect(),
            items,
            arrival: 0.0,
            bytes_per_item: 8,
        }
    }

    fn layout(addresses: Vec<u64>, indirect: bool, blocks: usize) -> AccessLayout {
        let per = addresses.len() / blocks;
        AccessLayout {
            buffers: addresses.iter().map(|&a| a as u32).collect(),
            blocks: (0..blocks).map(|b| b * per..(b + 1) * per).collect(),
            addresses,
            indirect,
        }
    }

    fn params() -> CostParams {
        CostParams { launch_overhead: 3.0, mem_transaction_cost: 0.5, ..CostParams::default() }
    }

    #[test]
    fn single_coalesced_block() {
        let batch = make_combined(0, vec![wr(0, 16, 16)], 0.0).unwrap();
        let k = KernelSpec::force();
        let t = sim_kernel_time(&batch, &layout((0..16).collect(), false, 1), &k, &DeviceSpec::kepler_k20_like(), &params())
            .unwrap();
        assert_eq!(t, 3.0 + 16.0 * k.compute_per_item + 0.5);
    }

    #[test]
    fn indirect_stride_two_costs_thirty_two_transactions() {
        let batch = make_combined(0, vec![wr(0, 16, 16)], 0.0).unwrap();
        let k = KernelSpec::force();
        let l = layout((0..16).map(|i| 2 * i).collect(), true, 1);
        assert_eq!(l.transactions(), 32);
        let t = sim_kernel_time(&batch, &l, &k, &DeviceSpec::kepler_k20_like(), &params()).unwrap();
        assert_eq!(t, 3.0 + 16.0 * k.compute_per_item + 32.0 * 0.5);
    }

    #[test]
    fn blocks_beyond_capacity_run_in_a_second_wave() {
        let members: Vec<_> = (0..208).map(|i| wr(i, 10, 1)).collect();
        let batch = make_combined(0, members, 0.0).unwrap();
        let l = layout((0..208).collect(), false, 208);
        let k = KernelSpec::force();
        let p = params();
        let t = sim_kernel_time(&batch, &l, &k, &DeviceSpec::kepler_k20_like(), &p).unwrap();
        let per_block = 10.0 * k.compute_per_item + 0.5;
        assert_eq!(t, 3.0 + 2.0 * per_block);
    }

    #[test]
    fn transfer_formula() {
        let empty = TransferPlan { to_transfer: vec![], total_bytes: 0, indirection_bytes: 0, mode: MemoryMode::Reuse };
        let p = CostParams { transfer_latency: 10.0, transfer_bandwidth: 100.0, ..CostParams::default() };
        assert_eq!(sim_transfer_time(&empty, &p), 0.0);
        let plan =
            TransferPlan { to_transfer: vec![(0, 1000)], total_bytes: 1000, indirection_bytes: 0, mode: MemoryMode::Redundant };
        assert_eq!(sim_transfer_time(&plan, &p), 20.0);
    }

    #[test]
    fn cpu_cost_is_linear_and_reproducible() {
        let p = CostParams { cpu_time_per_item: 2.0, ..CostParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sim_cpu_time(&[], &p, &mut rng), 0.0);
        assert_eq!(sim_cpu_time(&[wr(0, 100, 1)], &p, &mut rng), 200.0);

        let noisy = CostParams { cpu_noise: 0.1, ..p };
        let a = sim_cpu_time(&[wr(0, 100, 1)], &noisy, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sim_cpu_time(&[wr(0, 100, 1)], &noisy, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((180.0..=220.0).contains(&a));
    }

    #[test]
    fn validation() {
        assert!(CostParams::default().validate().is_ok());
        assert!(CostParams { transfer_bandwidth: 0.0, ..CostParams::default() }.validate().is_err());
        assert!(CostParams { launch_overhead: -1.0, ..CostParams::default() }.validate().is_err());
    }
}
