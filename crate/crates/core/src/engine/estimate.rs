//! Empirical smoothness, gradient variance and gradient second moment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::data::{DataShards, Dataset};
use super::model::{layers, sq_norm, Mlp, Params};
use super::train::sample_batch;

/// Gradient access for a layered objective split across devices.
pub trait GradientOracle {
    fn num_parts(&self) -> usize;
    fn full_gradient(&self, w: &Params) -> Params;
    /// Exact gradient of one device's local objective.
    fn local_gradient(&self, w: &Params, part: usize) -> Params;
    /// One mini-batch gradient of a device's local objective.
    fn stochastic_gradient(&self, w: &Params, part: usize, rng: &mut ChaCha8Rng) -> Params;
}

pub struct MlpOracle<'a> {
    pub model: &'a Mlp,
    pub data: &'a Dataset,
    pub shards: &'a DataShards,
    pub batch: usize,
}

impl GradientOracle for MlpOracle<'_> {
    fn num_parts(&self) -> usize {
        self.shards.num_parts()
    }

    fn full_gradient(&self, w: &Params) -> Params {
        self.model.loss_and_gradient(&layers(w), self.data, &self.data.all()).1
    }

    fn local_gradient(&self, w: &Params, part: usize) -> Params {
        self.model
            .loss_and_gradient(&layers(w), self.data, self.shards.part(part))
            .1
    }

    fn stochastic_gradient(&self, w: &Params, part: usize, rng: &mut ChaCha8Rng) -> Params {
        let idx = sample_batch(rng, self.shards.part(part), self.batch);
        self.model.loss_and_gradient(&layers(w), self.data, &idx).1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    /// Smoothness probes; at least 2.
    pub probe_rounds: usize,
    /// Mini-batch draws per device and probe point.
    pub samples: usize,
    /// Probe step relative to `max(1, ||w||)`.
    pub radius: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            probe_rounds: 8,
            samples: 8,
            radius: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub beta: f64,
    /// Per-layer stochastic gradient variance.
    pub sigma_sq: Vec<f64>,
    /// Per-layer squared stochastic gradient norm, never below `sigma_sq`.
    pub g_sq: Vec<f64>,
}

fn sub(a: &Params, b: &Params) -> Params {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

fn norm(p: &Params) -> f64 {
    p.iter().map(|l| sq_norm(l)).sum::<f64>().sqrt()
}

fn axpy(w: &Params, s: f64, d: &Params) -> Params {
    w.iter()
        .zip(d)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + s * q).collect())
        .collect()
}

/// Estimates `beta`, per-layer `sigma^2` and per-layer `G^2` around `w0`.
///
/// Smoothness probes move `w0` along a direction that is replaced by the
/// resulting gradient difference after every probe, so successive ratios
/// climb toward the largest curvature. Variance and second moment are
/// measured at `w0` and at every probe point.
pub fn estimate_constants<O: GradientOracle>(
    oracle: &O,
    w0: &Params,
    config: &EstimateConfig,
    seed: u64,
) -> Result<Constants> {
    if config.probe_rounds < 2 || config.samples == 0 || !(config.radius > 0.0) {
        return Err(Error::InvalidArgument(
            "estimation needs probe_rounds >= 2, samples >= 1 and radius > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = w0.len();
    let mut sigma_sq = vec![0.0; n_layers];
    let mut g_sq = vec![0.0; n_layers];

    let mut measure = |w: &Params, rng: &mut ChaCha8Rng| {
        for part in 0..oracle.num_parts() {
            let local = oracle.local_gradient(w, part);
            let mut var = vec![0.0; n_layers];
            for _ in 0..config.samples {
                let g = oracle.stochastic_gradient(w, part, rng);
                for j in 0..n_layers {
                    let d: f64 = g[j].iter().zip(&local[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    var[j] += d;
                    g_sq[j] = f64::max(g_sq[j], sq_norm(&g[j]));
                }
            }
            for j in 0..n_layers {
                sigma_sq[j] = f64::max(sigma_sq[j], var[j] / config.samples as f64);
            }
        }
    };

    measure(w0, &mut rng);
    let g0 = oracle.full_gradient(w0);
    let step = config.radius * norm(w0).max(1.0);
    let mut dir = g0.clone();
    let mut beta: f64 = 0.0;
    for _ in 0..config.probe_rounds {
        let mut len = norm(&dir);
        if !(len > 0.0) || !len.is_finite() {
            dir = w0
                .iter()
                .map(|l| l.iter().map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            len = norm(&dir);
        }
        let w = axpy(w0, step / len, &dir);
        let dw = norm(&sub(&w, w0));
        if dw == 0.0 {
            continue;
        }
        let diff = sub(&oracle.full_gradient(&w), &g0);
        beta = beta.max(norm(&diff) / dw);
        measure(&w, &mut rng);
        dir = diff;
    }
    for (g, s) in g_sq.iter_mut().zip(&sigma_sq) {
        *g = g.max(*s);
    }
    Ok(Constants { beta, sigma_sq, g_sq })
}
