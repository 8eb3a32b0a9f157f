//! Residency bookkeeping: the chare table mapping application buffers to
//! device slots, and the slot-granular device heap.

use std::collections::{BTreeSet, HashMap};

use crate::runtime::Time;

use super::MemoryError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceSlot {
    pub slot: u32,
    pub size_bytes: u64,
    pub last_use: Time,
    /// Monotone touch stamp; orders LRU eviction without relying on time ties.
    touch: u64,
}

/// Buffer index → device slot. Injective by construction.
#[derive(Debug, Clone, Default)]
pub struct ChareTable {
    entries: HashMap<u32, DeviceSlot>,
    by_slot: HashMap<u32, u32>,
    lru: BTreeSet<(u64, u32)>,
    pinned: BTreeSet<u32>,
    clock: u64,
}

impl ChareTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, buffer: u32) -> Option<&DeviceSlot> {
        self.entries.get(&buffer)
    }

    pub fn contains(&self, buffer: u32) -> bool {
        self.entries.contains_key(&buffer)
    }

    fn next_touch(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Splits `buffers` into (resident, missing), preserving input order,
    /// and refreshes the last use of every resident entry.
    pub fn lookup_residency(&mut self, buffers: &[u32], now: Time) -> (Vec<u32>, Vec<u32>) {
        let mut resident = Vec::new();
        let mut missing = Vec::new();
        for &b in buffers {
            if self.entries.contains_key(&b) {
                self.touch(b, now);
                resident.push(b);
            } else {
                missing.push(b);
            }
        }
        (resident, missing)
    }

    fn touch(&mut self, buffer: u32, now: Time) {
        let stamp = self.next_touch();
        if let Some(e) = self.entries.get_mut(&buffer) {
            self.lru.remove(&(e.touch, buffer));
            e.touch = stamp;
            e.last_use = now;
            self.lru.insert((stamp, buffer));
        }
    }

    /// Maps `buffer` to `slot`. The slot must be free in the table.
    pub fn insert(&mut self, buffer: u32, slot: u32, size_bytes: u64, now: Time) -> Result<(), MemoryError> {
        if let Some(&other) = self.by_slot.get(&slot) {
            return Err(MemoryError::SlotTaken { slot, buffer: other });
        }
        if self.entries.contains_key(&buffer) {
            return Err(MemoryError::AlreadyResident(buffer));
        }
        let touch = self.next_touch();
        self.entries.insert(buffer, DeviceSlot { slot, size_bytes, last_use: now, touch });
        self.by_slot.insert(slot, buffer);
        self.lru.insert((touch, buffer));
        Ok(())
    }

    pub fn remove(&mut self, buffer: u32) -> Option<DeviceSlot> {
        let e = self.entries.remove(&buffer)?;
        self.by_slot.remove(&e.slot);
        self.lru.remove(&(e.touch, buffer));
        self.pinned.remove(&buffer);
        Some(e)
    }

    pub fn pin(&mut self, buffer: u32) {
        if self.entries.contains_key(&buffer) {
            self.pinned.insert(buffer);
        }
    }

    pub fn unpin_all(&mut self) {
        self.pinned.clear();
    }

    pub fn is_pinned(&self, buffer: u32) -> bool {
        self.pinned.contains(&buffer)
    }

    /// Least recently used unpinned buffer.
    fn lru_victim(&self) -> Option<u32> {
        self.lru.iter().map(|&(_, b)| b).find(|b| !self.pinned.contains(b))
    }

    /// No two buffers share a slot and both directions agree.
    pub fn is_injective(&self) -> bool {
        self.entries.len() == self.by_slot.len()
            && self.entries.iter().all(|(b, e)| self.by_slot.get(&e.slot) == Some(b))
    }

    pub fn slots(&self) -> impl Iterator<Item = (u32, &DeviceSlot)> {
        self.entries.iter().map(|(b, e)| (*b, e))
    }
}

/// Fixed-size slots carved out of device memory. The lowest free slot is
/// always handed out first.
#[derive(Debug, Clone)]
pub struct DeviceHeap {
    capacity_bytes: u64,
    slot_bytes: u64,
    used_bytes: u64,
    free: BTreeSet<u32>,
}

impl DeviceHeap {
    pub fn new(capacity_bytes: u64, slot_bytes: u64) -> Result<Self, MemoryError> {
        if slot_bytes == 0 || capacity_bytes < slot_bytes {
            return Err(MemoryError::BadGeometry { capacity_bytes, slot_bytes });
        }
        let slots = u32::try_from(capacity_bytes / slot_bytes).unwrap_or(u32::MAX);
        Ok(DeviceHeap { capacity_bytes, slot_bytes, used_bytes: 0, free: (0..slots).collect() })
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn slot_bytes(&self) -> u64 {
        self.slot_bytes
    }

    pub fn slot_count(&self) -> u32 {
        (self.capacity_bytes / self.slot_bytes) as u32
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn free_bytes(&self) -> u64 {
        self.free.len() as u64 * self.slot_bytes
    }

    pub fn free_slots(&self) -> usize {
        self.free.len()
    }

    pub fn allocate(&mut self) -> Option<u32> {
        let slot = self.free.pop_first()?;
        self.used_bytes += self.slot_bytes;
        Some(slot)
    }

    pub fn release(&mut self, slot: u32) {
        if slot < self.slot_count() && self.free.insert(slot) {
            self.used_bytes -= self.slot_bytes;
        }
    }
}

/// Evicts least-recently-used unpinned buffers until at least
/// `needed_bytes` are free. Returns the evicted buffer indices, oldest first.
pub fn evict_slots(heap: &mut DeviceHeap, table: &mut ChareTable, needed_bytes: u64) -> Result<Vec<u32>, MemoryError> {
    if needed_bytes > heap.capacity_bytes() {
        return Err(MemoryError::Capacity { needed_bytes, available_bytes: heap.capacity_bytes() });
    }
    let mut evicted = Vec::new();
    while heap.free_bytes() < needed_bytes {
        let Some(victim) = table.lru_victim() else {
            return Err(MemoryError::Capacity { needed_bytes, available_bytes: heap.free_bytes() });
        };
        let slot = table.remove(victim).expect("victim comes from the table");
        heap.release(slot.slot);
        evicted.push(victim);
    }
    Ok(evicted)
}
