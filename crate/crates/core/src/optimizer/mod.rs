//! Joint optimization of the client-side aggregation interval and the
//! per-device cut layers.
//!
//! The objective is the fractional program
//!
//! ```text
//! Theta'(I, mu, T) = 2*vartheta*(I*(T3 + T_s^F + T_s^B + T4) + T5 + T6)
//!                  / (gamma*I*(c - 4*beta^2*gamma^2*I^2*T1))
//! ```
//!
//! with `c = epsilon - beta*gamma*sum(sigma^2)/N` and `T1..T6` capping the
//! per-device maxima. It is solved by block-coordinate descent that alternates
//! a closed-form interval step ([`interval`]) with a Dinkelbach loop over the
//! split ([`dinkelbach`]) whose parametric subproblem is solved exactly by
//! branch and bound ([`inner`]).

pub mod bcd;
pub mod dinkelbach;
pub mod inner;
pub mod interval;

pub use bcd::{bcd, bcd_on, BcdConfig, OptimizerSolution, TraceRow};
pub use dinkelbach::{dinkelbach, DinkelbachOutcome, DinkelbachState};
pub use inner::{inner_milp, InnerSolution};
pub use interval::{solve_interval, xi, IntervalCoefficients, IntervalSolution};

use serde::{Deserialize, Serialize};

use crate::bound::HyperParams;
use crate::error::Result;
use crate::latency::SplitDecision;
use crate::network::NetworkSnapshot;
use crate::profile::ModelProfile;

/// Caps introduced to linearize the per-device maxima.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxVars {
    /// Largest cumulative second moment over devices.
    pub t1: f64,
    /// Largest client sub-model size over devices, bits.
    pub t2: f64,
    /// Slowest client forward propagation plus activation upload, s.
    pub t3: f64,
    /// Slowest gradient download plus client back-propagation, s.
    pub t4: f64,
    /// Slowest model upload to the fed server, s.
    pub t5: f64,
    /// Slowest model download from the fed server, s.
    pub t6: f64,
}

/// Interval-independent quantities of a split: tight caps plus the server
/// forward and backward latency `T_s^F + T_s^B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitTerms {
    pub aux: AuxVars,
    pub server: f64,
}

impl SplitTerms {
    /// Latency of one split-training round.
    pub fn round_latency(&self) -> f64 {
        self.aux.t3 + self.server + self.aux.t4
    }

    /// Latency of one client-side aggregation.
    pub fn aggregation_latency(&self) -> f64 {
        self.aux.t5 + self.aux.t6
    }
}

/// Per-device, per-cut cost tables for one network snapshot.
#[derive(Debug, Clone)]
pub struct SplitProblem {
    n_devices: usize,
    n_layers: usize,
    /// Row-major `[device][cut - 1]` tables.
    upload: Vec<f64>,
    download: Vec<f64>,
    server: Vec<f64>,
    model_up: Vec<f64>,
    model_down: Vec<f64>,
    model_bits: Vec<f64>,
    g_cum: Vec<f64>,
    server_to_fed: f64,
    fed_to_server: f64,
    vartheta: f64,
    gamma: f64,
    beta: f64,
    epsilon: f64,
    slack: f64,
}

impl SplitProblem {
    pub fn new(profile: &ModelProfile, snapshot: &NetworkSnapshot, h: &HyperParams) -> Result<Self> {
        h.validate()?;
        snapshot.validate()?;
        if snapshot.num_devices() != h.n_devices {
            return Err(crate::Error::DeviceCountMismatch {
                split: h.n_devices,
                snapshot: snapshot.num_devices(),
            });
        }
        let n = snapshot.num_devices();
        let l = profile.num_layers();
        let b = h.batch as f64;
        let full = profile.full();
        let fs = snapshot.server.compute;
        let mut upload = Vec::with_capacity(n * l);
        let mut download = Vec::with_capacity(n * l);
        let mut server = Vec::with_capacity(n * l);
        let mut model_up = Vec::with_capacity(n * l);
        let mut model_down = Vec::with_capacity(n * l);
        for dev in &snapshot.devices {
            for s in profile.layers() {
                upload.push(b * s.fp_flops_cum / dev.compute + b * s.act_bits / dev.up_edge);
                download.push(b * s.grad_bits / dev.down_edge + b * s.bp_flops_cum / dev.compute);
                server.push(
                    b * (full.fp_flops_cum - s.fp_flops_cum) / fs
                        + b * (full.bp_flops_cum - s.bp_flops_cum) / fs,
                );
                model_up.push(s.param_bits_cum / dev.up_fed);
                model_down.push(s.param_bits_cum / dev.down_fed);
            }
        }
        Ok(Self {
            n_devices: n,
            n_layers: l,
            upload,
            download,
            server,
            model_up,
            model_down,
            model_bits: profile.layers().iter().map(|s| s.param_bits_cum).collect(),
            g_cum: profile.g_cum().to_vec(),
            server_to_fed: snapshot.server.to_fed,
            fed_to_server: snapshot.server.from_fed,
            vartheta: h.vartheta,
            gamma: h.gamma,
            beta: h.beta,
            epsilon: h.epsilon,
            slack: h.accuracy_slack(profile.sigma_total()),
        })
    }

    pub fn num_devices(&self) -> usize {
        self.n_devices
    }

    pub fn num_layers(&self) -> usize {
        self.n_layers
    }

    /// `c = epsilon - beta*gamma*sum(sigma^2)/N`.
    pub fn slack(&self) -> f64 {
        self.slack
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    fn idx(&self, device: usize, cut: usize) -> usize {
        device * self.n_layers + cut - 1
    }

    /// Coefficient `4*beta^2*gamma^2` of `I^2*T1` in the denominator.
    pub(crate) fn drift_coefficient(&self) -> f64 {
        4.0 * self.beta * self.beta * self.gamma * self.gamma
    }

    /// Tight caps and server latency for the given cuts.
    pub fn evaluate(&self, cuts: &[usize]) -> SplitTerms {
        debug_assert_eq!(cuts.len(), self.n_devices);
        let mut aux = AuxVars {
            t1: 0.0,
            t2: 0.0,
            t3: 0.0,
            t4: 0.0,
            t5: 0.0,
            t6: 0.0,
        };
        let mut server = 0.0;
        let mut bits = 0.0;
        for (i, &c) in cuts.iter().enumerate() {
            let k = self.idx(i, c);
            aux.t1 = aux.t1.max(self.g_cum[c - 1]);
            aux.t2 = aux.t2.max(self.model_bits[c - 1]);
            aux.t3 = aux.t3.max(self.upload[k]);
            aux.t4 = aux.t4.max(self.download[k]);
            aux.t5 = aux.t5.max(self.model_up[k]);
            aux.t6 = aux.t6.max(self.model_down[k]);
            server += self.server[k];
            bits += self.model_bits[c - 1];
        }
        let noncommon = if cuts.iter().all(|&c| self.model_bits[c - 1] == aux.t2) {
            0.0
        } else {
            (self.n_devices as f64 * aux.t2 - bits).max(0.0)
        };
        aux.t5 = aux.t5.max(noncommon / self.server_to_fed);
        aux.t6 = aux.t6.max(noncommon / self.fed_to_server);
        SplitTerms { aux, server }
    }

    /// Numerator `Q`: `2*vartheta` times the latency of one cycle.
    pub fn numerator(&self, interval: u64, terms: &SplitTerms) -> f64 {
        2.0 * self.vartheta * (interval as f64 * terms.round_latency() + terms.aggregation_latency())
    }

    /// Denominator `P = gamma*I*(c - 4*beta^2*gamma^2*I^2*T1)`.
    pub fn denominator(&self, interval: u64, t1: f64) -> f64 {
        let i = interval as f64;
        self.gamma * i * (self.slack - self.drift_coefficient() * i * i * t1)
    }

    /// `Theta'`, or `None` when the accuracy margin is not positive.
    pub fn objective(&self, interval: u64, terms: &SplitTerms) -> Option<f64> {
        let p = self.denominator(interval, terms.aux.t1);
        (p > 0.0).then(|| self.numerator(interval, terms) / p)
    }

    /// Coefficients of the interval subproblem with the split held fixed.
    pub fn interval_coefficients(&self, terms: &SplitTerms) -> IntervalCoefficients {
        IntervalCoefficients {
            a: terms.round_latency(),
            b: terms.aggregation_latency(),
            c: self.slack,
            beta: self.beta,
            gamma: self.gamma,
            t1: terms.aux.t1,
            vartheta: self.vartheta,
        }
    }

    pub(crate) fn table_row(&self, table: Table, device: usize) -> &[f64] {
        let t = match table {
            Table::Upload => &self.upload,
            Table::Download => &self.download,
            Table::Server => &self.server,
            Table::ModelUp => &self.model_up,
            Table::ModelDown => &self.model_down,
        };
        &t[device * self.n_layers..(device + 1) * self.n_layers]
    }

    pub(crate) fn model_bits(&self) -> &[f64] {
        &self.model_bits
    }

    pub(crate) fn g_cum(&self) -> &[f64] {
        &self.g_cum
    }

    pub(crate) fn inter_server_rates(&self) -> (f64, f64) {
        (self.server_to_fed, self.fed_to_server)
    }

    pub(crate) fn vartheta(&self) -> f64 {
        self.vartheta
    }

    /// The all-shallowest split: the smallest `T1`, so if any split has a
    /// positive accuracy margin this one does.
    pub fn shallowest(&self) -> SplitDecision {
        SplitDecision::uniform(self.n_devices, 1, self.n_layers).expect("n_devices >= 1")
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Table {
    Upload,
    Download,
    Server,
    ModelUp,
    ModelDown,
}


#[cfg(test)]
mod tests {
    use super::testkit::random_problem;
    use super::*;
    use crate::latency::total_cycle_latency;

    #[test]
    fn numerator_matches_latency_model() {
        for seed in 0..20 {
            let (profile, snapshot, h) = random_problem(seed, 3, 5);
            let problem = SplitProblem::new(&profile, &snapshot, &h).unwrap();
            let cuts = vec![1 + seed as usize % 5, 3, 5];
            let split = SplitDecision::new(cuts.clone(), 5).unwrap();
            let terms = problem.evaluate(&cuts);
            for interval in [1, 4, 17] {
                let t = total_cycle_latency(&profile, &snapshot, &split, interval, h.batch).unwrap();
                let q = problem.numerator(interval, &terms);
                assert!((q - 2.0 * h.vartheta * t).abs() <= 1e-12 * q, "seed {seed}");
            }
        }
    }

    #[test]
    fn objective_equals_weighted_objective_without_indicator() {
        use crate::bound::{accuracy_margin, weighted_objective, BoundInputs};
        let (profile, snapshot, h) = random_problem(3, 2, 4);
        let problem = SplitProblem::new(&profile, &snapshot, &h).unwrap();
        let cuts = vec![2, 3];
        let split = SplitDecision::new(cuts.clone(), 4).unwrap();
        let terms = problem.evaluate(&cuts);
        let interval = 2;
        let inputs = BoundInputs::from_split(&profile, &split, interval).unwrap();
        if accuracy_margin(&h, &inputs) > 0.0 {
            let t = total_cycle_latency(&profile, &snapshot, &split, interval, h.batch).unwrap();
            let theta = weighted_objective(&h, &inputs, t).unwrap();
            let theta_prime = problem.objective(interval, &terms).unwrap();
            assert!((theta - theta_prime).abs() <= 1e-12 * theta);
        }
    }
}
