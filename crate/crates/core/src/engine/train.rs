//! The split federated training loop.
//!
//! Every round each device draws a mini-batch and the composed model
//! `[w_c,i; h_m,i; h_s]` is run forward and backward. The client part and the
//! server non-common part (layers `1..=L_c`, together the client-specific
//! model) take the device's own gradient step; the server common part takes
//! one step along the device-averaged gradient. Every `I` rounds the
//! client-specific models are averaged and broadcast back.
//!
//! Which of layers `1..=L_c` run on the device and which on the server only
//! changes where the work happens, so the arithmetic depends on `L_c` alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bound::HyperParams;
use crate::error::{Error, Result};
use crate::latency::SplitDecision;

use super::data::{DataShards, Dataset};
use super::model::{layers, sq_norm, Mlp, Params};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    /// Per device, layers `1..=L_c`.
    client_specific: Vec<Params>,
    /// Layers `L_c+1..=L`, shared by all devices.
    server_common: Params,
    l_c: usize,
    round: u64,
    /// Every device holds the same client-specific model.
    synced: bool,
}

impl TrainingState {
    /// Every device starts from `global`.
    pub fn new(global: &Params, n_devices: usize, l_c: usize) -> Result<Self> {
        if n_devices == 0 {
            return Err(Error::InvalidArgument("need at least one device".into()));
        }
        if l_c == 0 || l_c > global.len() {
            return Err(Error::CutOutOfRange {
                device: 0,
                cut: l_c,
                layers: global.len(),
            });
        }
        Ok(Self {
            client_specific: vec![global[..l_c].to_vec(); n_devices],
            server_common: global[l_c..].to_vec(),
            l_c,
            round: 0,
            synced: true,
        })
    }

    pub fn num_devices(&self) -> usize {
        self.client_specific.len()
    }

    pub fn client_depth(&self) -> usize {
        self.l_c
    }

    /// Rounds completed so far.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn client_specific(&self, device: usize) -> &Params {
        &self.client_specific[device]
    }

    pub fn server_common(&self) -> &Params {
        &self.server_common
    }

    /// Device `i`'s full model, input layer first.
    pub fn device_model(&self, device: usize) -> Vec<&[f64]> {
        self.client_specific[device]
            .iter()
            .chain(&self.server_common)
            .map(Vec::as_slice)
            .collect()
    }

    /// `h_c`, the device average of the client-specific models.
    pub fn averaged_client(&self) -> Params {
        if self.synced {
            return self.client_specific[0].clone();
        }
        let n = self.num_devices() as f64;
        let mut avg = self.client_specific[0].clone();
        for dev in &self.client_specific[1..] {
            for (a, d) in avg.iter_mut().zip(dev) {
                for (x, y) in a.iter_mut().zip(d) {
                    *x += y;
                }
            }
        }
        for x in avg.iter_mut().flatten() {
            *x /= n;
        }
        avg
    }

    /// The device-averaged full model.
    pub fn global_model(&self) -> Params {
        let mut w = self.averaged_client();
        w.extend(self.server_common.iter().cloned());
        w
    }

    /// `max_i ||h_c - h_c,i||^2`.
    pub fn drift(&self) -> f64 {
        if self.synced {
            return 0.0;
        }
        let avg = self.averaged_client();
        self.client_specific
            .iter()
            .map(|dev| {
                avg.iter()
                    .zip(dev)
                    .flat_map(|(a, d)| a.iter().zip(d))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Averages the client-specific models and broadcasts the result.
    pub fn aggregate(&mut self) {
        let avg = self.averaged_client();
        for dev in &mut self.client_specific {
            dev.clone_from(&avg);
        }
        self.synced = true;
    }

    /// Moves the common/non-common boundary. Only valid right after an
    /// aggregation, when every device holds the same client-specific model.
    pub fn set_client_depth(&mut self, l_c: usize) -> Result<()> {
        if !self.synced {
            return Err(Error::InvalidArgument(
                "client depth can only change right after an aggregation".into(),
            ));
        }
        let global = self.global_model();
        let round = self.round;
        *self = Self::new(&global, self.num_devices(), l_c)?;
        self.round = round;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: u64,
    /// Full-dataset loss of the averaged model after the round.
    pub loss: f64,
    /// Drift after the round (zero right after an aggregation).
    pub drift: f64,
    pub aggregated: bool,
}

/// Mini-batch generator of one device.
pub fn batch_rng(seed: u64, device: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(device as u64);
    rng
}

/// `batch` indices drawn with replacement from `part`, or the whole part in
/// order when the batch covers it.
pub fn sample_batch<R: Rng>(rng: &mut R, part: &[usize], batch: usize) -> Vec<usize> {
    if batch >= part.len() {
        return part.to_vec();
    }
    (0..batch).map(|_| part[rng.random_range(0..part.len())]).collect()
}

/// Steps the training state one round at a time.
pub struct Trainer<'a> {
    model: &'a Mlp,
    data: &'a Dataset,
    shards: &'a DataShards,
    batch: usize,
    gamma: f64,
    rngs: Vec<ChaCha8Rng>,
    state: TrainingState,
    g_sq_max: Vec<f64>,
    everything: Vec<usize>,
}

impl<'a> Trainer<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a Mlp,
        data: &'a Dataset,
        shards: &'a DataShards,
        init: &Params,
        l_c: usize,
        batch: usize,
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        if init.len() != model.num_layers() {
            return Err(Error::InvalidArgument("initial model has the wrong layer count".into()));
        }
        if batch == 0 || !(gamma > 0.0) {
            return Err(Error::InvalidHyperParams("batch and gamma must be positive".into()));
        }
        let n = shards.num_parts();
        Ok(Self {
            model,
            data,
            shards,
            batch,
            gamma,
            rngs: (0..n).map(|i| batch_rng(seed, i)).collect(),
            state: TrainingState::new(init, n, l_c)?,
            g_sq_max: vec![0.0; model.num_layers()],
            everything: data.all(),
        })
    }

    pub fn state(&self) -> &TrainingState {
        &self.state
    }

    pub fn into_state(self) -> TrainingState {
        self.state
    }

    /// Largest squared per-layer stochastic gradient norm seen so far.
    pub fn g_sq_max(&self) -> &[f64] {
        &self.g_sq_max
    }

    pub fn set_client_depth(&mut self, l_c: usize) -> Result<()> {
        self.state.set_client_depth(l_c)
    }

    pub fn loss(&self) -> f64 {
        let w = self.state.global_model();
        self.model.loss(&layers(&w), self.data, &self.everything)
    }

    /// One training round, followed by an aggregation when `aggregate`.
    pub fn round(&mut self, aggregate: bool) -> Result<RoundRecord> {
        let n = self.state.num_devices();
        let l_c = self.state.l_c;
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let idx = sample_batch(&mut self.rngs[i], self.shards.part(i), self.batch);
            let (_, g) = self.model.loss_and_gradient(&self.state.device_model(i), self.data, &idx);
            for (m, gj) in self.g_sq_max.iter_mut().zip(&g) {
                *m = m.max(sq_norm(gj));
            }
            grads.push(g);
        }
        self.state.synced = n == 1;
        for (dev, g) in self.state.client_specific.iter_mut().zip(&grads) {
            for (w, gj) in dev.iter_mut().zip(g) {
                for (x, d) in w.iter_mut().zip(gj) {
                    *x -= self.gamma * d;
                }
            }
        }
        for (k, w) in self.state.server_common.iter_mut().enumerate() {
            let j = l_c + k;
            let mut acc = vec![0.0; w.len()];
            for g in &grads {
                for (a, d) in acc.iter_mut().zip(&g[j]) {
                    *a += d;
                }
            }
            for (x, a) in w.iter_mut().zip(&acc) {
                *x -= self.gamma * (a / n as f64);
            }
        }
        self.state.round += 1;
        if aggregate {
            self.state.aggregate();
        }
        let drift = self.state.drift();
        let loss = self.loss();
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                round: self.state.round,
                loss,
            });
        }
        Ok(RoundRecord {
            round: self.state.round,
            loss,
            drift,
            aggregated: aggregate,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub state: TrainingState,
    pub loss: Vec<f64>,
    pub drift: Vec<f64>,
    /// Largest squared per-layer stochastic gradient norm over the run.
    pub g_sq_max: Vec<f64>,
}

/// Runs `rounds` rounds with a fixed split, aggregating every `interval`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &Mlp,
    data: &Dataset,
    shards: &DataShards,
    init: &Params,
    split: &SplitDecision,
    interval: u64,
    h: &HyperParams,
    rounds: u64,
    seed: u64,
) -> Result<TrainOutput> {
    h.validate()?;
    h.check_step_size()?;
    if interval == 0 {
        return Err(Error::InvalidArgument("interval must be >= 1".into()));
    }
    if split.num_devices() != shards.num_parts() || h.n_devices != shards.num_parts() {
        return Err(Error::DeviceCountMismatch {
            split: split.num_devices(),
            snapshot: shards.num_parts(),
        });
    }
    SplitDecision::new(split.cuts().to_vec(), model.num_layers())?;
    let mut trainer = Trainer::new(model, data, shards, init, split.client_depth(), h.batch, h.gamma, seed)?;
    let mut loss = Vec::with_capacity(rounds as usize);
    let mut drift = Vec::with_capacity(rounds as usize);
    for t in 1..=rounds {
        let rec = trainer.round(t % interval == 0)?;
        loss.push(rec.loss);
        drift.push(rec.drift);
    }
    let g_sq_max = trainer.g_sq_max().to_vec();
    Ok(TrainOutput {
        state: trainer.into_state(),
        loss,
        drift,
        g_sq_max,
    })
}
