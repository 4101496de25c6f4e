//! Latency of one split-training round, of one client-side aggregation, and
//! of a full aggregation cycle of `I` rounds.
//!
//! The cycle total is
//!
//! ```text
//! T(I, mu) = I * ( max_i(T_i^F + T_ai^U) + T_s^F + T_s^B + max_i(T_gi^D + T_i^B) )
//!          + max(max_i T_ci^U, T_s^U) + max(max_i T_ci^D, T_s^D)
//! ```
//!
//! Aggregation compute on the fed server is treated as free.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkSnapshot;
use crate::profile::ModelProfile;

/// Cut layer per device. Device `i` runs layers `1..=cuts[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitDecision {
    cuts: Vec<usize>,
}

impl SplitDecision {
    pub fn new(cuts: Vec<usize>, num_layers: usize) -> Result<Self> {
        if cuts.is_empty() {
            return Err(Error::InvalidArgument("split needs at least one device".into()));
        }
        for (device, &cut) in cuts.iter().enumerate() {
            if cut == 0 || cut > num_layers {
                return Err(Error::CutOutOfRange {
                    device,
                    cut,
                    layers: num_layers,
                });
            }
        }
        Ok(Self { cuts })
    }

    /// Every device cut at the same layer.
    pub fn uniform(n_devices: usize, cut: usize, num_layers: usize) -> Result<Self> {
        Self::new(vec![cut; n_devices], num_layers)
    }

    pub fn cuts(&self) -> &[usize] {
        &self.cuts
    }

    pub fn num_devices(&self) -> usize {
        self.cuts.len()
    }

    /// Deepest client cut, `L_c`.
    pub fn client_depth(&self) -> usize {
        self.cuts.iter().copied().max().unwrap_or(1)
    }

    pub(crate) fn check(&self, profile: &ModelProfile, snapshot: &NetworkSnapshot) -> Result<()> {
        if self.cuts.len() != snapshot.num_devices() {
            return Err(Error::DeviceCountMismatch {
                split: self.cuts.len(),
                snapshot: snapshot.num_devices(),
            });
        }
        let layers = profile.num_layers();
        for (device, &cut) in self.cuts.iter().enumerate() {
            if cut == 0 || cut > layers {
                return Err(Error::CutOutOfRange { device, cut, layers });
            }
        }
        Ok(())
    }
}

/// Split-training latencies of one round, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLatency {
    pub client_fp: Vec<f64>,
    pub act_up: Vec<f64>,
    pub server_fp: f64,
    pub server_bp: f64,
    pub grad_down: Vec<f64>,
    pub client_bp: Vec<f64>,
}

impl RoundLatency {
    /// Slowest device to finish forward propagation and upload.
    pub fn upload_phase(&self) -> f64 {
        max_of(self.client_fp.iter().zip(&self.act_up).map(|(f, u)| f + u))
    }

    /// Slowest device to receive gradients and finish back-propagation.
    pub fn download_phase(&self) -> f64 {
        max_of(self.grad_down.iter().zip(&self.client_bp).map(|(d, b)| d + b))
    }

    pub fn total(&self) -> f64 {
        self.upload_phase() + self.server_fp + self.server_bp + self.download_phase()
    }
}

/// Client-side model aggregation latencies, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationLatency {
    pub ma_up_client: Vec<f64>,
    pub ma_up_server: f64,
    pub ma_down_client: Vec<f64>,
    pub ma_down_server: f64,
    /// Bits of server-side non-common sub-models exchanged, `Lambda_s`.
    pub server_noncommon_bits: f64,
}

impl AggregationLatency {
    pub fn upload_phase(&self) -> f64 {
        max_of(self.ma_up_client.iter().copied()).max(self.ma_up_server)
    }

    pub fn download_phase(&self) -> f64 {
        max_of(self.ma_down_client.iter().copied()).max(self.ma_down_server)
    }

    pub fn total(&self) -> f64 {
        self.upload_phase() + self.download_phase()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub round: RoundLatency,
    pub aggregation: AggregationLatency,
    pub interval: u64,
    pub total: f64,
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::NEG_INFINITY, f64::max)
}

pub fn split_round_latency(
    profile: &ModelProfile,
    snapshot: &NetworkSnapshot,
    split: &SplitDecision,
    batch: usize,
) -> Result<RoundLatency> {
    split.check(profile, snapshot)?;
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be >= 1".into()));
    }
    let b = batch as f64;
    let full = profile.full();
    let n = split.num_devices();
    let mut out = RoundLatency {
        client_fp: Vec::with_capacity(n),
        act_up: Vec::with_capacity(n),
        server_fp: 0.0,
        server_bp: 0.0,
        grad_down: Vec::with_capacity(n),
        client_bp: Vec::with_capacity(n),
    };
    let mut server_fp_flops = 0.0;
    let mut server_bp_flops = 0.0;
    for (&cut, dev) in split.cuts().iter().zip(&snapshot.devices) {
        let l = profile.at(cut);
        out.client_fp.push(b * l.fp_flops_cum / dev.compute);
        out.act_up.push(b * l.act_bits / dev.up_edge);
        out.grad_down.push(b * l.grad_bits / dev.down_edge);
        out.client_bp.push(b * l.bp_flops_cum / dev.compute);
        server_fp_flops += full.fp_flops_cum - l.fp_flops_cum;
        server_bp_flops += full.bp_flops_cum - l.bp_flops_cum;
    }
    out.server_fp = b * server_fp_flops / snapshot.server.compute;
    out.server_bp = b * server_bp_flops / snapshot.server.compute;
    Ok(out)
}

pub fn ma_latency(
    profile: &ModelProfile,
    snapshot: &NetworkSnapshot,
    split: &SplitDecision,
) -> Result<AggregationLatency> {
    split.check(profile, snapshot)?;
    let sizes: Vec<f64> = split
        .cuts()
        .iter()
        .map(|&c| profile.at(c).param_bits_cum)
        .collect();
    let n = sizes.len() as f64;
    let largest = max_of(sizes.iter().copied());
    let total: f64 = sizes.iter().sum();
    // Exactly zero when every device shares the same cut.
    let noncommon = if sizes.iter().all(|&s| s == largest) {
        0.0
    } else {
        (n * largest - total).max(0.0)
    };
    Ok(AggregationLatency {
        ma_up_client: sizes
            .iter()
            .zip(&snapshot.devices)
            .map(|(s, d)| s / d.up_fed)
            .collect(),
        ma_up_server: noncommon / snapshot.server.to_fed,
        ma_down_client: sizes
            .iter()
            .zip(&snapshot.devices)
            .map(|(s, d)| s / d.down_fed)
            .collect(),
        ma_down_server: noncommon / snapshot.server.from_fed,
        server_noncommon_bits: noncommon,
    })
}

pub fn cycle_breakdown(
    profile: &ModelProfile,
    snapshot: &NetworkSnapshot,
    split: &SplitDecision,
    interval: u64,
    batch: usize,
) -> Result<LatencyBreakdown> {
    if interval == 0 {
        return Err(Error::InvalidArgument("interval must be >= 1".into()));
    }
    let round = split_round_latency(profile, snapshot, split, batch)?;
    let aggregation = ma_latency(profile, snapshot, split)?;
    let total = interval as f64 * round.total() + aggregation.total();
    Ok(LatencyBreakdown {
        round,
        aggregation,
        interval,
        total,
    })
}

/// Latency of `interval` split-training rounds followed by one aggregation.
pub fn total_cycle_latency(
    profile: &ModelProfile,
    snapshot: &NetworkSnapshot,
    split: &SplitDecision,
    interval: u64,
    batch: usize,
) -> Result<f64> {
    Ok(cycle_breakdown(profile, snapshot, split, interval, batch)?.total)
}

pub const BREAKDOWN_HEADER: [&str; 13] = [
    "cycle",
    "device",
    "t_client_fp",
    "t_act_up",
    "t_server_fp",
    "t_server_bp",
    "t_grad_down",
    "t_client_bp",
    "t_ma_up_client",
    "t_ma_up_server",
    "t_ma_down_client",
    "t_ma_down_server",
    "t_total",
];

/// Writes one row per device; shared server terms repeat on every row.
pub fn write_breakdown<W: Write>(
    wtr: &mut csv::Writer<W>,
    cycle: u64,
    b: &LatencyBreakdown,
) -> Result<()> {
    for i in 0..b.round.client_fp.len() {
        wtr.write_record(&[
            cycle.to_string(),
            i.to_string(),
            b.round.client_fp[i].to_string(),
            b.round.act_up[i].to_string(),
            b.round.server_fp.to_string(),
            b.round.server_bp.to_string(),
            b.round.grad_down[i].to_string(),
            b.round.client_bp[i].to_string(),
            b.aggregation.ma_up_client[i].to_string(),
            b.aggregation.ma_up_server.to_string(),
            b.aggregation.ma_down_client[i].to_string(),
            b.aggregation.ma_down_server.to_string(),
            b.total.to_string(),
        ])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{DeviceResources, ServerResources};
    use crate::profile::LayerStats;

    fn layer(fp: f64, bp: f64, act: f64, grad: f64, par: f64) -> LayerStats {
        LayerStats {
            fp_flops_cum: fp,
            bp_flops_cum: bp,
            act_bits: act,
            grad_bits: grad,
            param_bits_cum: par,
            grad_var: 0.0,
            grad_sq_moment: 0.0,
        }
    }

    fn dev(compute: f64, up: f64, down: f64, up_fed: f64, down_fed: f64) -> DeviceResources {
        DeviceResources {
            compute,
            up_edge: up,
            down_edge: down,
            up_fed,
            down_fed,
        }
    }

    fn snapshot(devices: Vec<DeviceResources>) -> NetworkSnapshot {
        NetworkSnapshot {
            devices,
            server: ServerResources {
                compute: 2e13,
                to_fed: 4e8,
                from_fed: 5e8,
            },
            round: 0,
        }
    }

    fn profile() -> ModelProfile {
        ModelProfile::new(vec![
            layer(1e9, 2e9, 1e6, 5e5, 1e6),
            layer(3e9, 6e9, 4e5, 2e5, 3e6),
            layer(4e9, 8e9, 1e5, 1e5, 4e6),
        ])
        .unwrap()
    }

    #[test]
    fn client_fp_and_uplink_substitution() {
        let p = profile();
        let s = snapshot(vec![dev(2e12, 8e7, 1e8, 8e7, 1e8)]);
        let split = SplitDecision::new(vec![1], 3).unwrap();
        let r = split_round_latency(&p, &s, &split, 16).unwrap();
        assert!((r.client_fp[0] - 8.0e-3).abs() < 1e-15);
        assert!((r.act_up[0] - 0.2).abs() < 1e-15);
        assert!((r.grad_down[0] - 16.0 * 5e5 / 1e8).abs() < 1e-15);
        assert!((r.client_bp[0] - 16.0 * 2e9 / 2e12).abs() < 1e-15);
        assert!((r.server_fp - 16.0 * 3e9 / 2e13).abs() < 1e-15);
    }

    #[test]
    fn cut_at_last_layer_leaves_server_idle() {
        let p = profile();
        let s = snapshot(vec![dev(1e12, 1e8, 1e8, 1e8, 1e8); 3]);
        let split = SplitDecision::uniform(3, 3, 3).unwrap();
        let r = split_round_latency(&p, &s, &split, 16).unwrap();
        assert_eq!(r.server_fp, 0.0);
        assert_eq!(r.server_bp, 0.0);
    }

    #[test]
    fn server_noncommon_volume() {
        let p = profile();
        let s = snapshot(vec![dev(1e12, 1e8, 1e8, 8e7, 1e8); 2]);
        let split = SplitDecision::new(vec![1, 2], 3).unwrap();
        let m = ma_latency(&p, &s, &split).unwrap();
        assert_eq!(m.server_noncommon_bits, 2e6);
        assert!((m.ma_up_server - 2e6 / 4e8).abs() < 1e-18);
        assert!((m.ma_down_server - 2e6 / 5e8).abs() < 1e-18);

        let split = SplitDecision::new(vec![3, 3], 3).unwrap();
        let m = ma_latency(&p, &s, &split).unwrap();
        assert!((m.ma_up_client[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn homogeneous_cuts_cancel_exactly() {
        let p = profile();
        let s = snapshot(vec![dev(1e12, 1e8, 1e8, 8e7, 1e8); 4]);
        for c in 1..=3 {
            let m = ma_latency(&p, &s, &SplitDecision::uniform(4, c, 3).unwrap()).unwrap();
            assert_eq!(m.ma_up_server, 0.0);
            assert_eq!(m.ma_down_server, 0.0);
        }
    }

    #[test]
    fn single_device_total_is_sum_of_parts() {
        let p = profile();
        let s = snapshot(vec![dev(1.5e12, 7e7, 3e8, 6e7, 2e8)]);
        let split = SplitDecision::new(vec![2], 3).unwrap();
        let b = cycle_breakdown(&p, &s, &split, 1, 16).unwrap();
        let r = &b.round;
        let a = &b.aggregation;
        let expected = r.client_fp[0]
            + r.act_up[0]
            + r.server_fp
            + r.server_bp
            + r.grad_down[0]
            + r.client_bp[0]
            + a.ma_up_client[0]
            + a.ma_down_client[0];
        assert!((b.total - expected).abs() <= 1e-15 * expected);
    }

    #[test]
    fn linear_in_interval() {
        let p = profile();
        let s = snapshot(vec![dev(1.5e12, 7e7, 3e8, 6e7, 2e8), dev(1e12, 8e7, 3e8, 7e7, 2e8)]);
        let split = SplitDecision::new(vec![1, 3], 3).unwrap();
        let b = cycle_breakdown(&p, &s, &split, 1, 16).unwrap();
        let per_round = b.round.total();
        let ma = b.aggregation.total();
        let t3 = total_cycle_latency(&p, &s, &split, 3, 16).unwrap();
        assert!((t3 - (3.0 * per_round + ma)).abs() < 1e-12 * t3);
    }

    #[test]
    fn max_of_sums_not_sum_of_maxes() {
        // Device 0 is slow to compute, device 1 slow to upload.
        let p = profile();
        let s = snapshot(vec![dev(1e10, 1e12, 1e12, 1e12, 1e12), dev(1e15, 1e6, 1e12, 1e12, 1e12)]);
        let split = SplitDecision::uniform(2, 1, 3).unwrap();
        let r = split_round_latency(&p, &s, &split, 1).unwrap();
        let sum_of_max = r.client_fp[0].max(r.client_fp[1]) + r.act_up[0].max(r.act_up[1]);
        assert!(r.upload_phase() < sum_of_max);
        assert_eq!(r.upload_phase(), (r.client_fp[0] + r.act_up[0]).max(r.client_fp[1] + r.act_up[1]));
    }

    #[test]
    fn precondition_errors() {
        let p = profile();
        let s = snapshot(vec![dev(1e12, 1e8, 1e8, 1e8, 1e8); 2]);
        assert!(SplitDecision::new(vec![0], 3).is_err());
        assert!(SplitDecision::new(vec![4], 3).is_err());
        let split = SplitDecision::uniform(3, 1, 3).unwrap();
        assert!(matches!(
            total_cycle_latency(&p, &s, &split, 1, 16),
            Err(Error::DeviceCountMismatch { .. })
        ));
        let split = SplitDecision::uniform(2, 1, 3).unwrap();
        assert!(total_cycle_latency(&p, &s, &split, 0, 16).is_err());
        assert!(total_cycle_latency(&p, &s, &split, 1, 0).is_err());
        // A split built for a deeper model is rejected against a shallower profile.
        let deep = SplitDecision::uniform(2, 5, 6).unwrap();
        assert!(matches!(
            total_cycle_latency(&p, &s, &deep, 1, 16),
            Err(Error::CutOutOfRange { .. })
        ));
    }

    #[test]
    fn breakdown_csv_has_one_row_per_device() {
        let p = profile();
        let s = snapshot(vec![dev(1e12, 1e8, 1e8, 1e8, 1e8); 3]);
        let split = SplitDecision::new(vec![1, 2, 3], 3).unwrap();
        let b = cycle_breakdown(&p, &s, &split, 2, 4).unwrap();
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(BREAKDOWN_HEADER).unwrap();
        write_breakdown(&mut wtr, 0, &b).unwrap();
        let text = String::from_utf8(wtr.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("cycle,device,t_client_fp"));
    }
}
