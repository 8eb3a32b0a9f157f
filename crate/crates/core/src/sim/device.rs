//! Device and kernel resource descriptions and the occupancy calculator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::KernelClass;

#[derive(Debug, Error, PartialEq)]
pub enum OccupancyError {
    #[error("kernel `{0}` does not fit a single block on an SM")]
    DoesNotFit(String),
    #[error("invalid spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub sm_count: u32,
    pub max_threads_per_sm: u32,
    pub max_blocks_per_sm: u32,
    pub registers_per_sm: u32,
    pub shared_mem_per_sm: u32,
}

impl DeviceSpec {
    /// 13 SMs, 2048 threads and 16 resident blocks per SM, 64K registers and
    /// 48 KiB shared memory per SM.
    pub fn kepler_k20_like() -> Self {
        DeviceSpec {
            sm_count: 13,
            max_threads_per_sm: 2048,
            max_blocks_per_sm: 16,
            registers_per_sm: 65536,
            shared_mem_per_sm: 49152,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "kepler-k20-like" | "kepler" => Some(Self::kepler_k20_like()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), OccupancyError> {
        if self.sm_count == 0 || self.max_threads_per_sm == 0 || self.max_blocks_per_sm == 0 {
            return Err(OccupancyError::Invalid("device limits must be positive".into()));
        }
        if self.registers_per_sm == 0 || self.shared_mem_per_sm == 0 {
            return Err(OccupancyError::Invalid("device register file and shared memory must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kernel: KernelClass,
    /// Informational 2D block shape; `threads_per_block` must equal rows × cols.
    pub block_shape: (u32, u32),
    pub threads_per_block: u32,
    /// Zero means the resource does not limit occupancy.
    pub registers_per_thread: u32,
    /// Zero means the resource does not limit occupancy.
    pub shared_mem_per_block: u32,
    /// Time for one block to process one data item.
    pub compute_per_item: f64,
}

impl KernelSpec {
    /// Gravity kernel on a 16×8 block. 64 registers per thread limit it to
    /// 8 resident blocks per SM on the Kepler preset (50% occupancy).
    pub fn force() -> Self {
        KernelSpec {
            kernel: KernelClass::new("force"),
            block_shape: (16, 8),
            threads_per_block: 128,
            registers_per_thread: 64,
            shared_mem_per_block: 4096,
            compute_per_item: 0.002,
        }
    }

    /// Ewald kernel on a 16×8 block. 96 registers per thread leave room for
    /// 5 blocks per SM (31.25% occupancy).
    pub fn ewald() -> Self {
        KernelSpec {
            kernel: KernelClass::new("ewald"),
            block_shape: (16, 8),
            threads_per_block: 128,
            registers_per_thread: 96,
            shared_mem_per_block: 4096,
            compute_per_item: 0.004,
        }
    }

    /// Patch-pair interaction kernel for the MD mini-app.
    pub fn interact() -> Self {
        KernelSpec {
            kernel: KernelClass::new("interact"),
            block_shape: (16, 8),
            threads_per_block: 128,
            registers_per_thread: 32,
            shared_mem_per_block: 2048,
            compute_per_item: 0.0005,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "force" => Some(Self::force()),
            "ewald" => Some(Self::ewald()),
            "interact" => Some(Self::interact()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), OccupancyError> {
        let (rows, cols) = self.block_shape;
        if self.threads_per_block == 0 {
            return Err(OccupancyError::Invalid(format!("kernel `{}` has zero threads per block", self.kernel)));
        }
        if rows * cols != self.threads_per_block {
            return Err(OccupancyError::Invalid(format!(
                "kernel `{}`: block shape {rows}x{cols} does not hold {} threads",
                self.kernel, self.threads_per_block
            )));
        }
        if !(self.compute_per_item >= 0.0) {
            return Err(OccupancyError::Invalid(format!("kernel `{}` has negative compute cost", self.kernel)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupancy {
    pub blocks_per_sm: u32,
    /// Fraction of the SM's thread capacity used by resident blocks.
    pub occupancy: f64,
}

/// Resident blocks per SM: the tightest of the block, thread, register and
/// shared-memory limits.
pub fn calc_occupancy(kernel: &KernelSpec, device: &DeviceSpec) -> Result<Occupancy, OccupancyError> {
    kernel.validate()?;
    device.validate()?;
    let threads = u64::from(kernel.threads_per_block);
    let mut blocks = u64::from(device.max_blocks_per_sm).min(u64::from(device.max_threads_per_sm) / threads);
    if kernel.registers_per_thread > 0 {
        blocks = blocks.min(u64::from(device.registers_per_sm) / (u64::from(kernel.registers_per_thread) * threads));
    }
    if kernel.shared_mem_per_block > 0 {
        blocks = blocks.min(u64::from(device.shared_mem_per_sm) / u64::from(kernel.shared_mem_per_block));
    }
    if blocks == 0 {
        return Err(OccupancyError::DoesNotFit(kernel.kernel.to_string()));
    }
    let blocks = blocks as u32;
    Ok(Occupancy {
        blocks_per_sm: blocks,
        occupancy: f64::from(blocks) * f64::from(kernel.threads_per_block) / f64::from(device.max_threads_per_sm),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn force_preset_on_kepler() {
        let occ = calc_occupancy(&KernelSpec::force(), &DeviceSpec::kepler_k20_like()).unwrap();
        assert_eq!(occ.blocks_per_sm, 8);
        assert_eq!(occ.occupancy, 0.5);
    }

    #[test]
    fn ewald_preset_on_kepler() {
        let occ = calc_occupancy(&KernelSpec::ewald(), &DeviceSpec::kepler_k20_like()).unwrap();
        assert_eq!(occ.blocks_per_sm, 5);
        assert_eq!(occ.occupancy, 0.3125);
    }

    #[test]
    fn oversized_shared_memory_does_not_fit() {
        let mut k = KernelSpec::force();
        k.shared_mem_per_block = DeviceSpec::kepler_k20_like().shared_mem_per_sm + 1;
        assert_eq!(
            calc_occupancy(&k, &DeviceSpec::kepler_k20_like()),
            Err(OccupancyError::DoesNotFit("force".into()))
        );
    }

    #[test]
    fn tiny_blocks_are_block_count_limited() {
        let k = KernelSpec {
            kernel: "tiny".into(),
            block_shape: (1, 1),
            threads_per_block: 1,
            registers_per_thread: 1,
            shared_mem_per_block: 0,
            compute_per_item: 1.0,
        };
        let occ = calc_occupancy(&k, &DeviceSpec::kepler_k20_like()).unwrap();
        assert_eq!(occ.blocks_per_sm, 16);
    }

    #[test]
    fn shape_mismatch_is_invalid() {
        let mut k = KernelSpec::force();
        k.block_shape = (8, 8);
        assert!(matches!(k.validate(), Err(OccupancyError::Invalid(_))));
    }
}
