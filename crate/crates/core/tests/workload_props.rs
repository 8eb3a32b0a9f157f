use std::collections::{BTreeMap, BTreeSet};

use hetero_rt::config::{ExperimentConfig, WorkloadKind};
use hetero_rt::harness::{dump_stream, run_config, trace_roundtrip};
use hetero_rt::workloads::{bucket_work, NBodyParams};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_bucket_requested_once_per_phase(particles in 100usize..1500, bucket in 4usize..32, seed in 0u64..500, dims in 2u8..4) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.nbody = NBodyParams { particles, bucket_size: bucket, dims, tree_pieces: 5, ..NBodyParams::default() };
        let out = run_config(&cfg, "p").unwrap();
        let mut want: Vec<Vec<u32>> = bucket_work(&cfg.nbody, seed).into_iter().map(|b| b.buffers).collect();
        let mut got: Vec<Vec<u32>> = out.submitted.iter().map(|w| w.buffers.clone()).collect();
        want.sort();
        got.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn each_patch_pair_at_most_once_per_step(rows in 1usize..5, cols in 1usize..5, steps in 1u32..6, seed in 0u64..500, periodic: bool) {
        prop_assume!(rows * cols >= 2);
        let mut cfg = ExperimentConfig::default();
        cfg.workload.kind = WorkloadKind::Md;
        cfg.seed = seed;
        cfg.md.grid = (rows, cols);
        cfg.md.steps = steps;
        cfg.md.periodic = periodic;
        cfg.aggregator.window = Some(16);
        let patches = (rows * cols) as u32;
        let out = run_config(&cfg, "p").unwrap();
        let mut per_step: BTreeMap<u32, BTreeSet<(u32, u32)>> = BTreeMap::new();
        for w in &out.submitted {
            let step = w.buffers[0] / patches;
            prop_assert!(w.buffers.iter().all(|b| b / patches == step));
            let a = w.buffers[0] % patches;
            let b = *w.buffers.last().unwrap() % patches;
            prop_assert!(per_step.entry(step).or_default().insert((a, b)), "pair ({}, {}) repeated in step {}", a, b, step);
        }
        prop_assert!(per_step.len() as u32 <= steps);
    }
}

// One patch emits one request per step; with no inter-arrival gap the
// adaptive rule can never flush it.
#[test]
fn single_patch_md_is_a_liveness_failure() {
    let mut cfg = ExperimentConfig::default();
    cfg.workload.kind = WorkloadKind::Md;
    cfg.md.grid = (1, 1);
    cfg.md.steps = 1;
    let err = run_config(&cfg, "p").unwrap_err().to_string();
    assert!(err.contains("liveness"), "{err}");
    cfg.aggregator.policy = "static_count(1)".into();
    assert!(run_config(&cfg, "p").is_ok());
}

#[test]
fn streams_reproduce_from_seed() {
    for kind in [WorkloadKind::Nbody, WorkloadKind::Md] {
        let mut cfg = ExperimentConfig::default();
        cfg.workload.kind = kind;
        cfg.nbody.particles = 1024;
        cfg.md.steps = 4;
        cfg.aggregator.window = Some(16);
        let a = dump_stream(&cfg).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, dump_stream(&cfg).unwrap());
        cfg.seed += 1;
        assert_ne!(a, dump_stream(&cfg).unwrap());
    }
}

#[test]
fn nbody_stream_survives_round_trip() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.seed, 7);
    let rt = trace_roundtrip(&cfg).unwrap();
    assert!(rt.identical(), "{:?}", rt.diff);
    assert!(rt.records > 0);
}
