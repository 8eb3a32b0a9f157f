//! Workload generators: a Barnes-Hut N-body force phase, patch-based 2D
//! molecular dynamics and trace replay.

pub mod forces;
pub mod md;
pub mod nbody;
pub mod particles;
pub mod trace;
pub mod tree;

pub use forces::{direct_force_oracle, force_errors, DEFAULT_SOFTENING, median, relative_errors, tree_forces, ForceError};
pub use md::{gen_md_system, md_step, MdParams, MdWorkload, PairWork, PatchGrid};
pub use nbody::{bucket_work, BucketWork, NBodyParams, NBodyWorkload};
pub use particles::{gen_particles, ParticleSet};
pub use trace::{format_trace, parse_trace, read_trace, write_trace, TraceError, TraceRecord, TraceWorkload};
pub use tree::{build_bucket_tree, build_interaction_lists, BucketTree, InteractionList};
