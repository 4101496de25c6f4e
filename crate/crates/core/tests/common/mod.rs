//! Random instances and brute-force oracles shared by the integration tests.

#![allow(dead_code)]

use adaptsfl::bound::HyperParams;
use adaptsfl::network::{DeviceResources, NetworkSnapshot, ServerResources};
use adaptsfl::optimizer::SplitProblem;
use adaptsfl::profile::{LayerStats, ModelProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub profile: ModelProfile,
    pub snapshot: NetworkSnapshot,
    pub h: HyperParams,
}

impl Instance {
    pub fn problem(&self) -> SplitProblem {
        SplitProblem::new(&self.profile, &self.snapshot, &self.h).unwrap()
    }
}

pub fn random_profile(rng: &mut ChaCha8Rng, l: usize) -> ModelProfile {
    let (mut fp, mut bp, mut par) = (0.0, 0.0, 0.0);
    let layers = (0..l)
        .map(|_| {
            let f = rng.random_range(0.2e9..2e9);
            fp += f;
            bp += f * rng.random_range(1.5..2.5);
            par += rng.random_range(0.5e6..8e6);
            let act = rng.random_range(0.05e6..2e6);
            let var = rng.random_range(0.0..0.5);
            LayerStats {
                fp_flops_cum: fp,
                bp_flops_cum: bp,
                act_bits: act,
                grad_bits: act,
                param_bits_cum: par,
                grad_var: var,
                grad_sq_moment: var + rng.random_range(0.01..1.0),
            }
        })
        .collect();
    ModelProfile::new(layers).unwrap()
}

pub fn random_snapshot(rng: &mut ChaCha8Rng, n: usize) -> NetworkSnapshot {
    let devices = (0..n)
        .map(|_| DeviceResources {
            compute: rng.random_range(0.2e12..2e12),
            up_edge: rng.random_range(10e6..100e6),
            down_edge: rng.random_range(100e6..400e6),
            up_fed: rng.random_range(10e6..100e6),
            down_fed: rng.random_range(100e6..400e6),
        })
        .collect();
    NetworkSnapshot {
        devices,
        server: ServerResources {
            compute: rng.random_range(5e12..30e12),
            to_fed: rng.random_range(50e6..500e6),
            from_fed: rng.random_range(50e6..500e6),
        },
        round: 0,
    }
}

/// A problem whose every split is feasible at `I = 1`; the target leaves
/// room for intervals between roughly 1 and 20.
pub fn random_instance(seed: u64, n: usize, l: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profile = random_profile(&mut rng, l);
    let snapshot = random_snapshot(&mut rng, n);
    let gamma = rng.random_range(0.01..0.1);
    let beta = rng.random_range(1.0..5.0);
    let floor = beta * gamma * profile.sigma_total() / n as f64;
    let drift = 4.0 * beta * beta * gamma * gamma * profile.g_cum()[l - 1];
    let epsilon = floor + drift * rng.random_range(1.5f64.ln()..400f64.ln()).exp();
    let vartheta = rng.random_range(0.5..3.0);
    let h = HyperParams::new(gamma, beta, 16, n, vartheta, epsilon).unwrap();
    Instance { profile, snapshot, h }
}

/// Every assignment of cuts `1..=l` to `n` devices.
pub fn all_splits(n: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (1..=l).map(move |c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    out
}

/// Smallest `Q - lambda * P` over all splits, with the caps held tight.
pub fn brute_upsilon(problem: &SplitProblem, interval: u64, lambda: f64) -> f64 {
    all_splits(problem.num_devices(), problem.num_layers())
        .iter()
        .map(|c| {
            let t = problem.evaluate(c);
            problem.numerator(interval, &t) - lambda * problem.denominator(interval, t.aux.t1)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Smallest `Q / P` over all splits with a positive denominator.
pub fn brute_ratio(problem: &SplitProblem, interval: u64) -> f64 {
    all_splits(problem.num_devices(), problem.num_layers())
        .iter()
        .filter_map(|c| problem.objective(interval, &problem.evaluate(c)))
        .fold(f64::INFINITY, f64::min)
}

/// Smallest objective over every split and every interval up to `i_max`.
pub fn brute_joint(problem: &SplitProblem, i_max: u64) -> f64 {
    let splits = all_splits(problem.num_devices(), problem.num_layers());
    let terms: Vec<_> = splits.iter().map(|c| problem.evaluate(c)).collect();
    (1..=i_max)
        .flat_map(|i| terms.iter().filter_map(move |t| problem.objective(i, t)))
        .fold(f64::INFINITY, f64::min)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
