//! Synthetic classification data and its partition across devices.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || classes == 0 || labels.is_empty() || features.len() != labels.len() * dim {
            return Err(Error::InvalidArgument("dataset shape mismatch".into()));
        }
        if labels.iter().any(|&y| y >= classes) {
            return Err(Error::InvalidArgument("label out of range".into()));
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    /// `n` samples from `classes` unit-variance Gaussians whose means are
    /// drawn with standard deviation `separation` per coordinate.
    pub fn gaussian_mixture(n: usize, dim: usize, classes: usize, separation: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means: Vec<f64> = (0..classes * dim)
            .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.random_range(0..classes);
            for k in 0..dim {
                features.push(means[y * dim + k] + rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(y);
        }
        Self::new(features, labels, dim, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn all(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Sample indices held by each device. The parts partition the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataShards {
    parts: Vec<Vec<usize>>,
    iid: bool,
}

impl DataShards {
    /// Shuffled, near-equal split.
    pub fn iid(data: &Dataset, n_devices: usize, seed: u64) -> Result<Self> {
        check(data, n_devices, 1)?;
        let mut idx = data.all();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            parts: chunks(&idx, n_devices),
            iid: true,
        })
    }

    /// Label-sorted data cut into `2 * n_devices` shards, two random shards
    /// per device.
    pub fn non_iid(data: &Dataset, n_devices: usize, seed: u64) -> Result<Self> {
        check(data, n_devices, 2)?;
        let mut idx = data.all();
        idx.sort_by_key(|&i| data.y(i));
        let mut shards = chunks(&idx, 2 * n_devices);
        shards.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let parts = shards
            .chunks(2)
            .map(|pair| {
                let mut p = pair.concat();
                p.sort_unstable();
                p
            })
            .collect();
        Ok(Self { parts, iid: false })
    }

    pub fn parts(&self) -> &[Vec<usize>] {
        &self.parts
    }

    pub fn part(&self, device: usize) -> &[usize] {
        &self.parts[device]
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn is_iid(&self) -> bool {
        self.iid
    }
}

fn check(data: &Dataset, n_devices: usize, per_device: usize) -> Result<()> {
    if n_devices == 0 || data.len() < per_device * n_devices {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot fill {per_device} shard(s) on each of {n_devices} devices",
            data.len()
        )));
    }
    Ok(())
}

fn chunks(idx: &[usize], k: usize) -> Vec<Vec<usize>> {
    let (q, r) = (idx.len() / k, idx.len() % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for j in 0..k {
        let len = q + usize::from(j < r);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}
