//! Device memory management for combined kernels.
//!
//! Three placement modes decide what a batch transfers and how its threads
//! see the data:
//!
//! - [`MemoryMode::Redundant`]: every member's buffers are copied again,
//!   contiguously per member. Nothing is reused; access is fully coalesced.
//! - [`MemoryMode::Reuse`]: only buffers missing from the chare table are
//!   copied, in ascending index order into the lowest free slots. Threads follow request order over
//!   scattered slots through an address table.
//! - [`MemoryMode::ReuseSorted`]: as `Reuse`, but each member's accesses are
//!   reordered by ascending device index, kept in an incrementally sorted
//!   index array, so resident and new data form contiguous runs.

mod coalesce;
mod sorted;
mod table;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use coalesce::{min_transactions, transaction_count, HALF_WARP};
pub use sorted::SortedIndexArray;
pub use table::{evict_slots, ChareTable, DeviceHeap, DeviceSlot};

use crate::runtime::{KernelClass, Time, WorkRequest};

/// Bytes per entry of the address table shipped with reuse-mode batches.
pub const ADDRESS_BYTES: u64 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("device memory exhausted: need {needed_bytes} bytes, {available_bytes} available")]
    Capacity { needed_bytes: u64, available_bytes: u64 },
    #[error("slot {slot} already holds buffer {buffer}")]
    SlotTaken { slot: u32, buffer: u32 },
    #[error("buffer {0} is already resident")]
    AlreadyResident(u32),
    #[error("buffer of {bytes} bytes does not fit a {slot_bytes}-byte slot")]
    SlotTooSmall { bytes: u64, slot_bytes: u64 },
    #[error("invalid heap geometry: capacity {capacity_bytes} bytes, slot {slot_bytes} bytes")]
    BadGeometry { capacity_bytes: u64, slot_bytes: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    Redundant,
    Reuse,
    ReuseSorted,
}

impl MemoryMode {
    pub const ALL: [MemoryMode; 3] = [MemoryMode::Redundant, MemoryMode::Reuse, MemoryMode::ReuseSorted];

    pub fn as_str(self) -> &'static str {
        match self {
            MemoryMode::Redundant => "redundant",
            MemoryMode::Reuse => "reuse",
            MemoryMode::ReuseSorted => "reuse_sorted",
        }
    }
}

impl fmt::Display for MemoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MemoryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "redundant" => Ok(MemoryMode::Redundant),
            "reuse" => Ok(MemoryMode::Reuse),
            "reuse_sorted" => Ok(MemoryMode::ReuseSorted),
            other => Err(format!("unknown memory mode `{other}` (expected redundant, reuse or reuse_sorted)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferPlan {
    /// (buffer index, bytes) in transfer order.
    pub to_transfer: Vec<(u32, u64)>,
    pub total_bytes: u64,
    /// Address table bytes; zero in redundant mode.
    pub indirection_bytes: u64,
    pub mode: MemoryMode,
}

impl TransferPlan {
    pub fn is_empty(&self) -> bool {
        self.total_bytes == 0 && self.indirection_bytes == 0
    }
}

/// Device addresses (slot-granular) of every logical access, grouped per
/// thread block.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessLayout {
    pub addresses: Vec<u64>,
    /// Buffer index read by each logical access.
    pub buffers: Vec<u32>,
    pub blocks: Vec<Range<usize>>,
    /// Each access first reads its address from a table in global memory.
    pub indirect: bool,
}

impl AccessLayout {
    pub fn block_addresses(&self, block: usize) -> &[u64] {
        &self.addresses[self.blocks[block].clone()]
    }

    pub fn block_buffers(&self, block: usize) -> &[u32] {
        &self.buffers[self.blocks[block].clone()]
    }

    pub fn block_transactions(&self, block: usize) -> u64 {
        transaction_count(self.block_addresses(block), self.indirect)
    }

    pub fn transactions(&self) -> u64 {
        (0..self.blocks.len()).map(|b| self.block_transactions(b)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub mode: MemoryMode,
    pub capacity_bytes: u64,
    pub slot_bytes: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig { mode: MemoryMode::ReuseSorted, capacity_bytes: 64 << 20, slot_bytes: 256 }
    }
}

/// Residency state of one simulated device.
#[derive(Debug, Clone)]
pub struct MemoryManager {
    mode: MemoryMode,
    heap: DeviceHeap,
    table: ChareTable,
    sorted: BTreeMap<KernelClass, SortedIndexArray>,
}

impl MemoryManager {
    pub fn new(cfg: MemoryConfig) -> Result<Self, MemoryError> {
        Ok(MemoryManager {
            mode: cfg.mode,
            heap: DeviceHeap::new(cfg.capacity_bytes, cfg.slot_bytes)?,
            table: ChareTable::new(),
            sorted: BTreeMap::new(),
        })
    }

    pub fn mode(&self) -> MemoryMode {
        self.mode
    }

    pub fn table(&self) -> &ChareTable {
        &self.table
    }

    pub fn heap(&self) -> &DeviceHeap {
        &self.heap
    }

    pub fn sorted_indices(&self, kernel: &KernelClass) -> Option<&SortedIndexArray> {
        self.sorted.get(kernel)
    }

    /// Plans transfers and the access layout for one batch. Buffers touched
    /// by the batch stay pinned until [`MemoryManager::release`].
    pub fn build_plan(&mut self, members: &[WorkRequest], now: Time) -> Result<(TransferPlan, AccessLayout), MemoryError> {
        let slot_bytes = self.heap.slot_bytes();
        if let Some(m) = members.iter().find(|m| m.bytes_per_item > slot_bytes) {
            return Err(MemoryError::SlotTooSmall { bytes: m.bytes_per_item, slot_bytes });
        }
        match self.mode {
            MemoryMode::Redundant => self.plan_redundant(members),
            MemoryMode::Reuse | MemoryMode::ReuseSorted => self.plan_reuse(members, now),
        }
    }

    fn plan_redundant(&mut self, members: &[WorkRequest]) -> Result<(TransferPlan, AccessLayout), MemoryError> {
        let total: usize = members.iter().map(|m| m.buffers.len()).sum();
        if total as u64 > u64::from(self.heap.slot_count()) {
            return Err(MemoryError::Capacity {
                needed_bytes: total as u64 * self.heap.slot_bytes(),
                available_bytes: self.heap.capacity_bytes(),
            });
        }
        let mut to_transfer = Vec::with_capacity(total);
        let mut buffers = Vec::with_capacity(total);
        let mut blocks = Vec::with_capacity(members.len());
        for m in members {
            let start = buffers.len();
            for &b in &m.buffers {
                to_transfer.push((b, m.bytes_per_item));
                buffers.push(b);
            }
            blocks.push(start..buffers.len());
        }
        let total_bytes = to_transfer.iter().map(|(_, s)| s).sum();
        let plan = TransferPlan { to_transfer, total_bytes, indirection_bytes: 0, mode: MemoryMode::Redundant };
        let layout = AccessLayout { addresses: (0..total as u64).collect(), buffers, blocks, indirect: false };
        Ok((plan, layout))
    }

    fn plan_reuse(&mut self, members: &[WorkRequest], now: Time) -> Result<(TransferPlan, AccessLayout), MemoryError> {
        let mut distinct = Vec::new();
        let mut size_of = BTreeMap::new();
        for m in members {
            for &b in &m.buffers {
                if size_of.insert(b, m.bytes_per_item).is_none() {
                    distinct.push(b);
                }
            }
        }
        if distinct.len() as u64 > u64::from(self.heap.slot_count()) {
            return Err(MemoryError::Capacity {
                needed_bytes: distinct.len() as u64 * self.heap.slot_bytes(),
                available_bytes: self.heap.capacity_bytes(),
            });
        }
        let (resident, mut missing) = self.table.lookup_residency(&distinct, now);
        for &b in &resident {
            self.table.pin(b);
        }
        if missing.len() > self.heap.free_slots() {
            let needed = missing.len() as u64 * self.heap.slot_bytes();
            evict_slots(&mut self.heap, &mut self.table, needed)?;
        }
        // both reuse modes place new data identically; they differ only in
        // the order threads read it
        missing.sort_unstable();
        let mut to_transfer = Vec::with_capacity(missing.len());
        for &b in &missing {
            let slot = self.heap.allocate().expect("eviction made room");
            let bytes = size_of[&b];
            self.table.insert(b, slot, bytes, now)?;
            self.table.pin(b);
            to_transfer.push((b, bytes));
        }

        let slot_of = |b: u32| u64::from(self.table.get(b).expect("resident after planning").slot);
        let mut addresses = Vec::new();
        let mut buffers = Vec::new();
        let mut blocks = Vec::with_capacity(members.len());
        if self.mode == MemoryMode::ReuseSorted {
            let arr = self.sorted.entry(members[0].kernel.clone()).or_default();
            for m in members {
                let start = addresses.len();
                let mut accesses: Vec<(usize, u32, u64)> = m
                    .buffers
                    .iter()
                    .map(|&b| {
                        let slot = slot_of(b);
                        (arr.insert(slot), b, slot)
                    })
                    .collect();
                // positions may shift while later slots are inserted; the
                // final order is by position in the finished array
                for a in accesses.iter_mut() {
                    a.0 = arr.position(a.2).expect("inserted above");
                }
                accesses.sort_unstable_by_key(|a| a.0);
                for (_, b, slot) in accesses {
                    buffers.push(b);
                    addresses.push(slot);
                }
                blocks.push(start..addresses.len());
            }
        } else {
            for m in members {
                let start = addresses.len();
                for &b in &m.buffers {
                    buffers.push(b);
                    addresses.push(slot_of(b));
                }
                blocks.push(start..addresses.len());
            }
        }
        let total_bytes = to_transfer.iter().map(|(_, s)| s).sum();
        let plan = TransferPlan {
            to_transfer,
            total_bytes,
            indirection_bytes: addresses.len() as u64 * ADDRESS_BYTES,
            mode: self.mode,
        };
        Ok((plan, AccessLayout { addresses, buffers, blocks, indirect: true }))
    }

    /// Unpins the buffers of the batch that just finished.
    pub fn release(&mut self) {
        self.table.unpin_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{ChareId, WorkId};

    fn wr(id: u64, buffers: &[u32]) -> WorkRequest {
        WorkRequest {
            id: WorkId(id),
            owner: ChareId(0),
            kernel: "force".into(),
            buffers: buffers.to_vec(),
            items: buffers.len() as u64,
            arrival: 0.0,
            bytes_per_item: 100,
        }
    }

    fn manager(mode: MemoryMode, slots: u64) -> MemoryManager {
        MemoryManager::new(MemoryConfig { mode, capacity_bytes: slots * 128, slot_bytes: 128 }).unwrap()
    }

    /// Leaves {2, 5, 7} resident in slots 0, 2, 3 with the remaining two
    /// slots (1 and 4) about to be reclaimed from stale buffers 4 and 9.
    fn figure_one_state(mode: MemoryMode) -> MemoryManager {
        let mut mm = manager(mode, 5);
        mm.build_plan(&[wr(0, &[2, 4, 5, 7])], 0.0).unwrap();
        mm.release();
        mm.build_plan(&[wr(1, &[9])], 1.0).unwrap();
        mm.release();
        mm.build_plan(&[wr(2, &[2, 5, 7])], 2.0).unwrap();
        mm.release();
        mm
    }

    const REQUEST: [u32; 5] = [8, 3, 2, 5, 7];

    #[test]
    fn figure_one_redundant() {
        let mut mm = figure_one_state(MemoryMode::Redundant);
        let (plan, layout) = mm.build_plan(&[wr(3, &REQUEST)], 3.0).unwrap();
        assert_eq!(plan.to_transfer.len(), 5);
        assert_eq!(plan.total_bytes, 500);
        assert_eq!(plan.indirection_bytes, 0);
        assert_eq!(layout.addresses, vec![0, 1, 2, 3, 4]);
        assert!(!layout.indirect);
        assert_eq!(layout.transactions(), 1);
    }

    #[test]
    fn figure_one_reuse() {
        let mut mm = figure_one_state(MemoryMode::Reuse);
        let (plan, layout) = mm.build_plan(&[wr(3, &REQUEST)], 3.0).unwrap();
        let moved: Vec<u32> = plan.to_transfer.iter().map(|t| t.0).collect();
        assert_eq!(moved, vec![3, 8]);
        assert_eq!(plan.total_bytes, 200);
        assert_eq!(plan.indirection_bytes, 5 * ADDRESS_BYTES);
        // 3 -> slot 1, 8 -> slot 4; request order over [4, 1, 0, 2, 3]
        assert_eq!(layout.addresses, vec![4, 1, 0, 2, 3]);
        assert!(layout.addresses.windows(2).any(|w| w[1] < w[0]));
        assert_eq!(layout.transactions(), 8);
    }

    #[test]
    fn figure_one_reuse_sorted() {
        let mut mm = figure_one_state(MemoryMode::ReuseSorted);
        let (plan, layout) = mm.build_plan(&[wr(3, &REQUEST)], 3.0).unwrap();
        let moved: Vec<u32> = plan.to_transfer.iter().map(|t| t.0).collect();
        assert_eq!(moved, vec![3, 8]);
        assert_eq!(layout.buffers, vec![2, 3, 5, 7, 8]);
        assert_eq!(layout.addresses, vec![0, 1, 2, 3, 4]);
        assert_eq!(layout.transactions(), 2);
    }

    #[test]
    fn shared_buffers_are_transferred_once() {
        let mut mm = manager(MemoryMode::Reuse, 16);
        let (plan, layout) = mm.build_plan(&[wr(0, &[1, 2]), wr(1, &[2, 3])], 0.0).unwrap();
        assert_eq!(plan.to_transfer.len(), 3);
        assert_eq!(layout.blocks, vec![0..2, 2..4]);
        assert_eq!(layout.block_addresses(1), &[1, 2]);
    }

    #[test]
    fn batch_larger_than_device_is_a_capacity_error() {
        let mut mm = manager(MemoryMode::Reuse, 2);
        assert!(matches!(mm.build_plan(&[wr(0, &[1, 2, 3])], 0.0), Err(MemoryError::Capacity { .. })));
        let mut mm = manager(MemoryMode::Redundant, 2);
        assert!(matches!(mm.build_plan(&[wr(0, &[1, 2, 3])], 0.0), Err(MemoryError::Capacity { .. })));
    }

    #[test]
    fn oversize_buffers_are_rejected() {
        let mut mm = manager(MemoryMode::Reuse, 4);
        let mut big = wr(0, &[1]);
        big.bytes_per_item = 129;
        assert_eq!(mm.build_plan(&[big], 0.0), Err(MemoryError::SlotTooSmall { bytes: 129, slot_bytes: 128 }));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("reuse_sorted".parse::<MemoryMode>(), Ok(MemoryMode::ReuseSorted));
        assert!("lru".parse::<MemoryMode>().is_err());
    }
}
