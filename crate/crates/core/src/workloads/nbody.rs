//! Barnes-Hut force phase as a message-driven workload.
//!
//! Buckets are split into contiguous ranges owned by tree-piece chares. On
//! `walk`, a piece walks the tree for each of its buckets in turn and emits
//! one `force` work request per bucket once its interaction list is ready.
//! Walk cost grows with the list length, and a walk occasionally stalls on a
//! remote fetch, so arrivals come in bursts. A piece starts its next
//! iteration once all its requests have completed.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::runtime::{ChareId, Effects, EntryHooks, KernelClass, Message, Time, WorkDraft, CALLBACK_ENTRY};
use crate::sim::{Injection, Workload};

use super::particles::gen_particles;
use super::tree::{build_bucket_tree, build_interaction_lists};

pub const WALK_ENTRY: &str = "walk";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NBodyParams {
    pub particles: usize,
    pub clustering: f64,
    /// 2 (quadtree) or 3 (octree).
    pub dims: u8,
    pub bucket_size: usize,
    pub theta: f64,
    pub tree_pieces: u32,
    pub iterations: u32,
    /// Walk time per interaction-list entry.
    pub walk_cost_per_entry: Time,
    /// Probability that a bucket's walk stalls on a remote fetch.
    pub fetch_probability: f64,
    /// Mean of the exponentially distributed stall.
    pub fetch_pause_mean: Time,
    /// Device size of one node or bucket buffer.
    pub bytes_per_buffer: u64,
    /// Items per bucket particle of an extra `ewald` request per bucket;
    /// 0 disables the second kernel class.
    pub ewald_terms: u64,
}

impl Default for NBodyParams {
    fn default() -> Self {
        NBodyParams {
            particles: 4096,
            clustering: 0.6,
            dims: 2,
            bucket_size: 16,
            theta: 0.7,
            tree_pieces: 16,
            iterations: 1,
            walk_cost_per_entry: 0.05,
            fetch_probability: 0.05,
            fetch_pause_mean: 200.0,
            bytes_per_buffer: 256,
            ewald_terms: 0,
        }
    }
}

impl NBodyParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.particles == 0 {
            return Err("nbody.particles must be at least 1".into());
        }
        if !matches!(self.dims, 2 | 3) {
            return Err(format!("nbody.dims must be 2 or 3, got {}", self.dims));
        }
        if self.bucket_size == 0 || self.tree_pieces == 0 || self.iterations == 0 {
            return Err("nbody.bucket_size, tree_pieces and iterations must be at least 1".into());
        }
        if !(self.theta >= 0.0) {
            return Err(format!("nbody.theta must be non-negative, got {}", self.theta));
        }
        if !(0.0..=1.0).contains(&self.fetch_probability) {
            return Err(format!("nbody.fetch_probability must lie in [0, 1], got {}", self.fetch_probability));
        }
        if !(self.walk_cost_per_entry >= 0.0 && self.fetch_pause_mean >= 0.0) {
            return Err("nbody walk and fetch costs must be non-negative".into());
        }
        if self.bytes_per_buffer == 0 {
            return Err("nbody.bytes_per_buffer must be positive".into());
        }
        Ok(())
    }
}

/// Device work of one bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketWork {
    pub bucket: u32,
    pub particles: u64,
    pub buffers: Vec<u32>,
    /// Interactions: bucket particles × (nodes + source particles).
    pub items: u64,
}

/// Builds the tree and interaction lists and returns each bucket's work in
/// bucket order.
pub fn bucket_work(params: &NBodyParams, seed: u64) -> Vec<BucketWork> {
    match params.dims {
        3 => plan::<3>(params, seed),
        _ => plan::<2>(params, seed),
    }
}

fn plan<const D: usize>(params: &NBodyParams, seed: u64) -> Vec<BucketWork> {
    let ps = gen_particles::<D>(params.particles, seed, params.clustering);
    let tree = build_bucket_tree(&ps, params.bucket_size);
    build_interaction_lists(&tree, params.theta)
        .into_iter()
        .map(|l| {
            let nb = tree.particles_of(l.bucket).len() as u64;
            let sources: u64 = l.buckets.iter().map(|&b| tree.particles_of(b).len() as u64).sum();
            BucketWork { bucket: l.bucket, particles: nb, items: nb * (l.nodes.len() as u64 + sources), buffers: l.buffers() }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct NBodyWorkload {
    params: NBodyParams,
    seed: u64,
    work: Vec<BucketWork>,
    pieces: Vec<Range<usize>>,
    iteration: Vec<u32>,
    force: KernelClass,
    ewald: KernelClass,
}

impl NBodyWorkload {
    pub fn new(params: NBodyParams, seed: u64) -> Result<Self, String> {
        params.validate()?;
        let work = bucket_work(&params, seed);
        let n = work.len();
        let p = (params.tree_pieces as usize).min(n.max(1));
        let pieces = (0..p).map(|k| k * n / p..(k + 1) * n / p).collect();
        Ok(NBodyWorkload {
            iteration: vec![0; p],
            params,
            seed,
            work,
            pieces,
            force: KernelClass::new("force"),
            ewald: KernelClass::new("ewald"),
        })
    }

    pub fn buckets(&self) -> &[BucketWork] {
        &self.work
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    fn walk(&mut self, piece: usize) -> Effects {
        let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((piece as u64) << 32) ^ u64::from(self.iteration[piece]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut delay = 0.0;
        let mut work = Vec::new();
        for b in &self.work[self.pieces[piece].clone()] {
            delay += self.params.walk_cost_per_entry * b.buffers.len() as f64;
            if rng.random::<f64>() < self.params.fetch_probability {
                let u: f64 = rng.random();
                delay += -self.params.fetch_pause_mean * (1.0 - u).ln();
            }
            work.push(WorkDraft {
                kernel: self.force.clone(),
                buffers: b.buffers.clone(),
                items: b.items.max(1),
                bytes_per_item: self.params.bytes_per_buffer,
                delay,
            });
            if self.params.ewald_terms > 0 {
                work.push(WorkDraft {
                    kernel: self.ewald.clone(),
                    buffers: vec![b.bucket],
                    items: (b.particles * self.params.ewald_terms).max(1),
                    bytes_per_item: self.params.bytes_per_buffer,
                    delay,
                });
            }
        }
        Effects { work, messages: vec![] }
    }
}

impl EntryHooks for NBodyWorkload {
    fn invoke(&mut self, chare: ChareId, entry: &'static str, now: Time) -> Effects {
        let piece = chare.0 as usize;
        match entry {
            WALK_ENTRY => self.walk(piece),
            CALLBACK_ENTRY => {
                self.iteration[piece] += 1;
                if self.iteration[piece] < self.params.iterations {
                    Effects { work: vec![], messages: vec![Message::new(chare, WALK_ENTRY, 1, now)] }
                } else {
                    Effects::default()
                }
            }
            _ => Effects::default(),
        }
    }
}

impl Workload for NBodyWorkload {
    fn chare_count(&self) -> u32 {
        self.pieces.len() as u32
    }

    fn start(&mut self) -> Injection {
        let messages = (0..self.pieces.len() as u32).map(|k| Message::new(ChareId(k), WALK_ENTRY, 1, 0.0)).collect();
        Injection { messages, work: vec![] }
    }
}
