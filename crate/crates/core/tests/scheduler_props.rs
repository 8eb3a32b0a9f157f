use hetero_rt::scheduler::{partition_by_count, partition_queue, CrossingRule, PerfEstimate, Shares};
use hetero_rt::{ChareId, Device, KernelClass, WorkId, WorkRequest};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn queue(items: &[u64]) -> Vec<WorkRequest> {
    items
        .iter()
        .enumerate()
        .map(|(i, &n)| WorkRequest {
            id: WorkId(i as u64),
            owner: ChareId(0),
            kernel: KernelClass::new("interact"),
            buffers: vec![i as u32],
            items: n,
            arrival: 0.0,
            bytes_per_item: 8,
        })
        .collect()
}

fn ids(ws: &[WorkRequest]) -> Vec<u64> {
    ws.iter().map(|w| w.id.0).collect()
}

fn rule() -> impl Strategy<Value = CrossingRule> {
    prop_oneof![Just(CrossingRule::Cpu), Just(CrossingRule::Nearest)]
}

proptest! {
    #[test]
    fn concatenation_restores_queue(items in prop::collection::vec(1u64..5000, 0..80), cpu in 0.0..=1.0f64, r in rule()) {
        let q = queue(&items);
        let p = partition_queue(q.clone(), Shares::cpu_only_fraction(cpu), r);
        let mut joined = p.cpu.clone();
        joined.extend(p.gpu.clone());
        prop_assert_eq!(ids(&joined), ids(&q));
        let c = partition_by_count(q.clone(), Shares::cpu_only_fraction(cpu));
        let mut joined = c.cpu;
        joined.extend(c.gpu);
        prop_assert_eq!(ids(&joined), ids(&q));
    }

    #[test]
    fn overshoot_is_below_the_crossing_request(items in prop::collection::vec(1u64..5000, 1..80), cpu in 0.001..=1.0f64, r in rule()) {
        let p = partition_queue(queue(&items), Shares::cpu_only_fraction(cpu), r);
        let crossing = p.crossing_items.expect("positive target crosses");
        let diff = (p.cpu_items() as f64 - p.cpu_target_items).abs();
        prop_assert!(diff < crossing as f64, "diff {} crossing {}", diff, crossing);
    }

    #[test]
    fn common_scaling_leaves_partition_unchanged(
        items in prop::collection::vec(1u64..5000, 1..60),
        cpu_t in 0.001..10.0f64,
        gpu_t in 0.001..10.0f64,
        exp in -20i32..20,
    ) {
        let shares_at = |scale: f64| {
            let mut e = PerfEstimate::new();
            e.record_sample(Device::Cpu, 100, 100.0 * cpu_t * scale).unwrap();
            e.record_sample(Device::Gpu, 100, 100.0 * gpu_t * scale).unwrap();
            e.current_ratio().unwrap()
        };
        let base = shares_at(1.0);
        let scaled = shares_at(2f64.powi(exp));
        prop_assert_eq!(base, scaled);
        let a = partition_queue(queue(&items), base, CrossingRule::Cpu);
        let b = partition_queue(queue(&items), scaled, CrossingRule::Cpu);
        prop_assert_eq!(ids(&a.cpu), ids(&b.cpu));
        // arbitrary factors move the shares by rounding only
        let odd = shares_at(3.7);
        prop_assert!((odd.cpu - base.cpu).abs() < 1e-12);
    }
}

#[test]
fn running_averages_converge_to_true_per_item_costs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (cpu_true, gpu_true) = (0.013, 0.0021);
    let mut e = PerfEstimate::new();
    for _ in 0..10_000 {
        let n = rng.random_range(1..2000u64);
        let noise = |rng: &mut ChaCha8Rng| 1.0 + rng.random_range(-0.3..0.3);
        e.record_sample(Device::Cpu, n, n as f64 * cpu_true * noise(&mut rng)).unwrap();
        e.record_sample(Device::Gpu, n, n as f64 * gpu_true * noise(&mut rng)).unwrap();
    }
    let cpu = e.cpu_time_per_item().unwrap();
    let gpu = e.gpu_time_per_item().unwrap();
    assert!((cpu / cpu_true - 1.0).abs() < 0.01, "cpu {cpu}");
    assert!((gpu / gpu_true - 1.0).abs() < 0.01, "gpu {gpu}");
    let s = e.current_ratio().unwrap();
    let want = (1.0 / cpu_true) / (1.0 / cpu_true + 1.0 / gpu_true);
    assert!((s.cpu - want).abs() < 0.01 * want);
}
