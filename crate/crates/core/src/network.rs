//! Per-round device and server resources with seeded sampling.
//!
//! A snapshot is a pure function of `(distribution, n_devices, round, seed)`:
//! every round draws from its own ChaCha stream, so rounds can be generated
//! in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One mega-bit per second, in bits/s.
pub const MBPS: f64 = 1e6;
/// One tera-FLOPS, in FLOPS.
pub const TFLOPS: f64 = 1e12;

/// Noisy samples never drop below this fraction of the nominal value.
const NOISE_FLOOR: f64 = 0.01;
const NOISE_STREAM_SALT: u64 = 0x6a09_e667_f3bc_c908;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceResources {
    /// FLOPS.
    pub compute: f64,
    /// Device to edge server, bits/s.
    pub up_edge: f64,
    /// Edge server to device, bits/s.
    pub down_edge: f64,
    /// Device to fed server, bits/s.
    pub up_fed: f64,
    /// Fed server to device, bits/s.
    pub down_fed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerResources {
    /// FLOPS.
    pub compute: f64,
    /// Edge server to fed server, bits/s.
    pub to_fed: f64,
    /// Fed server to edge server, bits/s.
    pub from_fed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub devices: Vec<DeviceResources>,
    pub server: ServerResources,
    pub round: u64,
}

impl NetworkSnapshot {
    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    /// Every device and server field must be strictly positive.
    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::InvalidArgument("snapshot has no devices".into()));
        }
        let ok = |v: f64| v.is_finite() && v > 0.0;
        for (i, d) in self.devices.iter().enumerate() {
            if ![d.compute, d.up_edge, d.down_edge, d.up_fed, d.down_fed]
                .into_iter()
                .all(ok)
            {
                return Err(Error::InvalidArgument(format!(
                    "device {i} has a non-positive resource"
                )));
            }
        }
        let s = &self.server;
        if ![s.compute, s.to_fed, s.from_fed].into_iter().all(ok) {
            return Err(Error::InvalidArgument(
                "server has a non-positive resource".into(),
            ));
        }
        Ok(())
    }
}

/// Sampling rule for a single resource field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldDist {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
}

impl FieldDist {
    fn validate(&self, name: &str) -> Result<()> {
        match *self {
            FieldDist::Constant(v) if v.is_finite() && v > 0.0 => Ok(()),
            FieldDist::Constant(v) => Err(Error::InvalidDistribution(format!(
                "{name}: constant {v} must be positive"
            ))),
            FieldDist::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi => {
                Ok(())
            }
            FieldDist::Uniform { lo, hi } => Err(Error::InvalidDistribution(format!(
                "{name}: uniform bounds [{lo}, {hi}] need 0 < lo <= hi"
            ))),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            FieldDist::Constant(v) => v,
            FieldDist::Uniform { lo, hi } => {
                // Always consume one draw so the stream layout does not depend
                // on which fields are degenerate.
                let u: f64 = rng.random();
                (lo + (hi - lo) * u).clamp(lo, hi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceDistribution {
    #[serde(alias = "f_i")]
    pub device_compute: FieldDist,
    #[serde(alias = "r_up_edge")]
    pub up_edge: FieldDist,
    #[serde(alias = "r_down_edge")]
    pub down_edge: FieldDist,
    #[serde(alias = "r_up_fed")]
    pub up_fed: FieldDist,
    #[serde(alias = "r_down_fed")]
    pub down_fed: FieldDist,
    #[serde(alias = "f_s")]
    pub server_compute: FieldDist,
    #[serde(alias = "r_server_to_fed")]
    pub server_to_fed: FieldDist,
    #[serde(alias = "r_fed_to_server")]
    pub fed_to_server: FieldDist,
    /// Coefficient of variation of multiplicative gaussian noise applied on
    /// top of the sampled values.
    pub cv: f64,
}

impl Default for ResourceDistribution {
    /// The simulation settings used throughout the evaluation: devices at
    /// 1-2 TFLOPS, server at 20 TFLOPS, 75-80 Mbps uplinks, 370 Mbps
    /// downlinks and 400 Mbps between the servers.
    fn default() -> Self {
        Self {
            device_compute: FieldDist::Uniform {
                lo: 1.0 * TFLOPS,
                hi: 2.0 * TFLOPS,
            },
            up_edge: FieldDist::Uniform {
                lo: 75.0 * MBPS,
                hi: 80.0 * MBPS,
            },
            down_edge: FieldDist::Constant(370.0 * MBPS),
            up_fed: FieldDist::Uniform {
                lo: 75.0 * MBPS,
                hi: 80.0 * MBPS,
            },
            down_fed: FieldDist::Constant(370.0 * MBPS),
            server_compute: FieldDist::Constant(20.0 * TFLOPS),
            server_to_fed: FieldDist::Constant(400.0 * MBPS),
            fed_to_server: FieldDist::Constant(400.0 * MBPS),
            cv: 0.0,
        }
    }
}

impl ResourceDistribution {
    pub fn validate(&self) -> Result<()> {
        self.device_compute.validate("f_i")?;
        self.up_edge.validate("r_up_edge")?;
        self.down_edge.validate("r_down_edge")?;
        self.up_fed.validate("r_up_fed")?;
        self.down_fed.validate("r_down_fed")?;
        self.server_compute.validate("f_s")?;
        self.server_to_fed.validate("r_server_to_fed")?;
        self.fed_to_server.validate("r_fed_to_server")?;
        if !self.cv.is_finite() || self.cv < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "cv must be >= 0, got {}",
                self.cv
            )));
        }
        Ok(())
    }

    /// Same distribution without measurement noise.
    pub fn nominal(&self) -> Self {
        Self {
            cv: 0.0,
            ..self.clone()
        }
    }
}

fn round_rng(seed: u64, round: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round);
    rng
}

/// Draws the resources available in `round`.
pub fn sample_snapshot(
    dist: &ResourceDistribution,
    n_devices: usize,
    round: u64,
    seed: u64,
) -> Result<NetworkSnapshot> {
    dist.validate()?;
    if n_devices == 0 {
        return Err(Error::InvalidArgument("n_devices must be >= 1".into()));
    }
    let mut rng = round_rng(seed, round);
    let devices: Vec<DeviceResources> = (0..n_devices)
        .map(|_| DeviceResources {
            compute: dist.device_compute.sample(&mut rng),
            up_edge: dist.up_edge.sample(&mut rng),
            down_edge: dist.down_edge.sample(&mut rng),
            up_fed: dist.up_fed.sample(&mut rng),
            down_fed: dist.down_fed.sample(&mut rng),
        })
        .collect();
    let server = ServerResources {
        compute: dist.server_compute.sample(&mut rng),
        to_fed: dist.server_to_fed.sample(&mut rng),
        from_fed: dist.fed_to_server.sample(&mut rng),
    };
    let mut snapshot = NetworkSnapshot {
        devices,
        server,
        round,
    };
    if dist.cv > 0.0 {
        apply_noise(&mut snapshot, dist.cv, seed ^ NOISE_STREAM_SALT);
    }
    Ok(snapshot)
}

fn apply_noise(snapshot: &mut NetworkSnapshot, cv: f64, seed: u64) {
    let mut rng = round_rng(seed, snapshot.round);
    let mut perturb = |v: &mut f64| {
        let z: f64 = rng.sample(StandardNormal);
        *v = (*v * (1.0 + cv * z)).max(*v * NOISE_FLOOR);
    };
    for d in &mut snapshot.devices {
        perturb(&mut d.compute);
        perturb(&mut d.up_edge);
        perturb(&mut d.down_edge);
        perturb(&mut d.up_fed);
        perturb(&mut d.down_fed);
    }
    perturb(&mut snapshot.server.compute);
    perturb(&mut snapshot.server.to_fed);
    perturb(&mut snapshot.server.from_fed);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant_dist() -> ResourceDistribution {
        ResourceDistribution {
            device_compute: FieldDist::Constant(1.5 * TFLOPS),
            up_edge: FieldDist::Constant(400.0 * MBPS),
            down_edge: FieldDist::Constant(400.0 * MBPS),
            up_fed: FieldDist::Constant(400.0 * MBPS),
            down_fed: FieldDist::Constant(400.0 * MBPS),
            server_compute: FieldDist::Constant(20.0 * TFLOPS),
            server_to_fed: FieldDist::Constant(400.0 * MBPS),
            fed_to_server: FieldDist::Constant(400.0 * MBPS),
            cv: 0.0,
        }
    }

    #[test]
    fn constants_are_echoed() {
        let s = sample_snapshot(&constant_dist(), 3, 7, 1).unwrap();
        assert_eq!(s.server.compute, 2e13);
        assert_eq!(s.server.to_fed, 4e8);
        assert_eq!(s.server.from_fed, 4e8);
        for d in &s.devices {
            assert_eq!(d.up_edge, 4e8);
            assert_eq!(d.down_fed, 4e8);
        }
        assert_eq!(s.round, 7);
    }

    #[test]
    fn zero_cv_matches_noiseless() {
        let dist = ResourceDistribution::default();
        let a = sample_snapshot(&dist, 5, 3, 11).unwrap();
        let b = sample_snapshot(&dist.nominal(), 5, 3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_perturbs_but_stays_above_floor() {
        let dist = ResourceDistribution {
            cv: 3.0,
            ..ResourceDistribution::default()
        };
        let noisy = sample_snapshot(&dist, 20, 0, 5).unwrap();
        let clean = sample_snapshot(&dist.nominal(), 20, 0, 5).unwrap();
        assert_ne!(noisy, clean);
        for (n, c) in noisy.devices.iter().zip(&clean.devices) {
            assert!(n.compute >= c.compute * NOISE_FLOOR);
            assert!(n.up_edge > 0.0);
        }
        noisy.validate().unwrap();
    }

    #[test]
    fn invalid_bounds_rejected() {
        let mut dist = constant_dist();
        dist.up_edge = FieldDist::Uniform { lo: 2.0, hi: 1.0 };
        assert!(matches!(
            sample_snapshot(&dist, 1, 0, 0),
            Err(Error::InvalidDistribution(_))
        ));
        let mut dist = constant_dist();
        dist.server_compute = FieldDist::Constant(0.0);
        assert!(sample_snapshot(&dist, 1, 0, 0).is_err());
        let mut dist = constant_dist();
        dist.cv = -0.1;
        assert!(sample_snapshot(&dist, 1, 0, 0).is_err());
        assert!(sample_snapshot(&constant_dist(), 0, 0, 0).is_err());
    }

    #[test]
    fn rounds_differ_and_are_order_independent() {
        let dist = ResourceDistribution::default();
        let r5 = sample_snapshot(&dist, 4, 5, 9).unwrap();
        let _ = sample_snapshot(&dist, 4, 6, 9).unwrap();
        let r4 = sample_snapshot(&dist, 4, 4, 9).unwrap();
        assert_ne!(r4.devices, r5.devices);
        assert_eq!(r5, sample_snapshot(&dist, 4, 5, 9).unwrap());
    }

    proptest! {
        #[test]
        fn uniform_support_and_determinism(seed in any::<u64>(), round in 0u64..10_000, n in 1usize..25) {
            let dist = ResourceDistribution::default();
            let a = sample_snapshot(&dist, n, round, seed).unwrap();
            let b = sample_snapshot(&dist, n, round, seed).unwrap();
            prop_assert_eq!(&a, &b);
            for d in &a.devices {
                prop_assert!((1e12..=2e12).contains(&d.compute));
                prop_assert!((75e6..=80e6).contains(&d.up_edge));
                prop_assert!((75e6..=80e6).contains(&d.up_fed));
                prop_assert_eq!(d.down_edge, 370e6);
            }
            prop_assert_eq!(a.server.compute, 20e12);
        }
    }
}
