mod common;

use adaptsfl::engine::replay_timing;
use adaptsfl::latency::{cycle_breakdown, total_cycle_latency, SplitDecision};
use adaptsfl::network::NetworkSnapshot;
use common::{random_profile, random_snapshot, rel_close};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn cycle_formula_matches_event_trace() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=5);
        let l = rng.random_range(1..=6);
        let profile = random_profile(&mut rng, l);
        let snap = random_snapshot(&mut rng, n);
        let cuts = (0..n).map(|_| rng.random_range(1..=l)).collect();
        let split = SplitDecision::new(cuts, l).unwrap();
        let interval = rng.random_range(1..=30);
        let batch = rng.random_range(1..=64);
        let formula = total_cycle_latency(&profile, &snap, &split, interval, batch).unwrap();
        let snaps = vec![snap; interval as usize];
        let trace = replay_timing(&profile, &snaps, &split, interval, batch, interval).unwrap();
        assert!(rel_close(formula, trace.total(), 1e-9), "seed {seed}: {formula} vs {}", trace.total());
    }
}

#[test]
fn homogeneous_cuts_need_no_server_transfer() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = rng.random_range(1..=6);
        let n = rng.random_range(1..=8);
        let profile = random_profile(&mut rng, l);
        let snap = random_snapshot(&mut rng, n);
        let split = SplitDecision::uniform(n, rng.random_range(1..=l), l).unwrap();
        let b = cycle_breakdown(&profile, &snap, &split, 3, 16).unwrap();
        assert_eq!(b.aggregation.ma_up_server, 0.0);
        assert_eq!(b.aggregation.ma_down_server, 0.0);
    }
}

fn scaled(snap: &NetworkSnapshot, field: usize, k: f64) -> NetworkSnapshot {
    let mut s = snap.clone();
    for d in &mut s.devices {
        match field {
            0 => d.compute *= k,
            1 => d.up_edge *= k,
            2 => d.down_edge *= k,
            3 => d.up_fed *= k,
            4 => d.down_fed *= k,
            _ => {}
        }
    }
    match field {
        5 => s.server.compute *= k,
        6 => s.server.to_fed *= k,
        7 => s.server.from_fed *= k,
        _ => {}
    }
    s
}

proptest! {
    #[test]
    fn latency_grows_with_interval(seed in any::<u64>(), i in 1u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = rng.random_range(1..=6);
        let n = rng.random_range(1..=5);
        let profile = random_profile(&mut rng, l);
        let snap = random_snapshot(&mut rng, n);
        let cuts = (0..n).map(|_| rng.random_range(1..=l)).collect();
        let split = SplitDecision::new(cuts, l).unwrap();
        let a = total_cycle_latency(&profile, &snap, &split, i, 16).unwrap();
        let b = total_cycle_latency(&profile, &snap, &split, i + 1, 16).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn faster_resources_never_slow_a_cycle(seed in any::<u64>(), field in 0usize..8, k in 1.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = rng.random_range(1..=6);
        let n = rng.random_range(1..=5);
        let profile = random_profile(&mut rng, l);
        let snap = random_snapshot(&mut rng, n);
        let cuts = (0..n).map(|_| rng.random_range(1..=l)).collect();
        let split = SplitDecision::new(cuts, l).unwrap();
        let slow = total_cycle_latency(&profile, &snap, &split, 4, 16).unwrap();
        let fast = total_cycle_latency(&profile, &scaled(&snap, field, k), &split, 4, 16).unwrap();
        prop_assert!(fast <= slow);
    }
}
