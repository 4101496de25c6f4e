//! Event-level replay of training latency.
//!
//! Devices work in parallel within a phase and every phase ends at a barrier:
//! the server starts once the last activation arrives, the round ends once
//! the last device finishes back-propagation, and each aggregation transfer
//! phase waits for its slowest sender.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::latency::SplitDecision;
use crate::network::NetworkSnapshot;
use crate::profile::ModelProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    ClientForward,
    ActivationUpload,
    ServerForward,
    ServerBackward,
    GradientDownload,
    ClientBackward,
    ModelUpload,
    NonCommonUpload,
    ModelDownload,
    NonCommonDownload,
}

impl Step {
    pub fn name(self) -> &'static str {
        match self {
            Step::ClientForward => "client_forward",
            Step::ActivationUpload => "activation_upload",
            Step::ServerForward => "server_forward",
            Step::ServerBackward => "server_backward",
            Step::GradientDownload => "gradient_download",
            Step::ClientBackward => "client_backward",
            Step::ModelUpload => "model_upload",
            Step::NonCommonUpload => "noncommon_upload",
            Step::ModelDownload => "model_download",
            Step::NonCommonDownload => "noncommon_download",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub round: u64,
    pub step: Step,
    /// `None` for work done by the servers.
    pub device: Option<usize>,
    pub start: f64,
    pub end: f64,
}

pub const EVENTS_HEADER: [&str; 5] = ["round", "step", "device", "start_s", "end_s"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timeline {
    events: Vec<Event>,
    now: f64,
}

fn check(profile: &ModelProfile, snapshot: &NetworkSnapshot, split: &SplitDecision) -> Result<()> {
    if split.num_devices() != snapshot.num_devices() {
        return Err(Error::DeviceCountMismatch {
            split: split.num_devices(),
            snapshot: snapshot.num_devices(),
        });
    }
    SplitDecision::new(split.cuts().to_vec(), profile.num_layers()).map(|_| ())
}

impl Timeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Elapsed time, seconds.
    pub fn total(&self) -> f64 {
        self.now
    }

    fn push(&mut self, round: u64, step: Step, device: Option<usize>, start: f64, len: f64) -> f64 {
        let end = start + len;
        self.events.push(Event {
            round,
            step,
            device,
            start,
            end,
        });
        end
    }

    /// Appends one split-training round; returns its duration.
    pub fn push_round(
        &mut self,
        profile: &ModelProfile,
        snapshot: &NetworkSnapshot,
        split: &SplitDecision,
        batch: usize,
        round: u64,
    ) -> Result<f64> {
        check(profile, snapshot, split)?;
        let b = batch as f64;
        let t0 = self.now;
        let top = profile.full();

        let mut barrier = t0;
        for (i, (&c, dev)) in split.cuts().iter().zip(&snapshot.devices).enumerate() {
            let layer = profile.at(c);
            let t = self.push(round, Step::ClientForward, Some(i), t0, b * layer.fp_flops_cum / dev.compute);
            let t = self.push(round, Step::ActivationUpload, Some(i), t, b * layer.act_bits / dev.up_edge);
            barrier = barrier.max(t);
        }
        let (mut fp, mut bp) = (0.0, 0.0);
        for &c in split.cuts() {
            let layer = profile.at(c);
            fp += b * (top.fp_flops_cum - layer.fp_flops_cum) / snapshot.server.compute;
            bp += b * (top.bp_flops_cum - layer.bp_flops_cum) / snapshot.server.compute;
        }
        let t = self.push(round, Step::ServerForward, None, barrier, fp);
        let t1 = self.push(round, Step::ServerBackward, None, t, bp);

        let mut end = t1;
        for (i, (&c, dev)) in split.cuts().iter().zip(&snapshot.devices).enumerate() {
            let layer = profile.at(c);
            let t = self.push(round, Step::GradientDownload, Some(i), t1, b * layer.grad_bits / dev.down_edge);
            let t = self.push(round, Step::ClientBackward, Some(i), t, b * layer.bp_flops_cum / dev.compute);
            end = end.max(t);
        }
        self.now = end;
        Ok(end - t0)
    }

    /// Appends one client-side aggregation; returns its duration.
    pub fn push_aggregation(
        &mut self,
        profile: &ModelProfile,
        snapshot: &NetworkSnapshot,
        split: &SplitDecision,
        round: u64,
    ) -> Result<f64> {
        check(profile, snapshot, split)?;
        let t0 = self.now;
        let deepest = profile.at(split.client_depth()).param_bits_cum;
        let noncommon: f64 = split
            .cuts()
            .iter()
            .map(|&c| deepest - profile.at(c).param_bits_cum)
            .sum();

        let mut up = self.push(round, Step::NonCommonUpload, None, t0, noncommon / snapshot.server.to_fed);
        for (i, (&c, dev)) in split.cuts().iter().zip(&snapshot.devices).enumerate() {
            let bits = profile.at(c).param_bits_cum;
            up = up.max(self.push(round, Step::ModelUpload, Some(i), t0, bits / dev.up_fed));
        }
        let mut down = self.push(round, Step::NonCommonDownload, None, up, noncommon / snapshot.server.from_fed);
        for (i, (&c, dev)) in split.cuts().iter().zip(&snapshot.devices).enumerate() {
            let bits = profile.at(c).param_bits_cum;
            down = down.max(self.push(round, Step::ModelDownload, Some(i), up, bits / dev.down_fed));
        }
        self.now = down;
        Ok(down - t0)
    }

    pub fn write_csv<W: Write>(&self, wtr: &mut csv::Writer<W>) -> Result<()> {
        for e in &self.events {
            wtr.write_record([
                e.round.to_string(),
                e.step.to_string(),
                e.device.map_or_else(|| "server".to_string(), |d| d.to_string()),
                e.start.to_string(),
                e.end.to_string(),
            ])?;
        }
        Ok(())
    }
}

/// Replays `rounds` rounds with a fixed split, aggregating after every
/// `interval`-th round. Round `t` (1-based) uses `snapshots[t - 1]`.
pub fn replay_timing(
    profile: &ModelProfile,
    snapshots: &[NetworkSnapshot],
    split: &SplitDecision,
    interval: u64,
    batch: usize,
    rounds: u64,
) -> Result<Timeline> {
    if interval == 0 || batch == 0 {
        return Err(Error::InvalidArgument("interval and batch must be >= 1".into()));
    }
    if (snapshots.len() as u64) < rounds {
        return Err(Error::InvalidArgument(format!(
            "{} snapshots for {rounds} rounds",
            snapshots.len()
        )));
    }
    let mut tl = Timeline::new();
    for t in 1..=rounds {
        let snap = &snapshots[(t - 1) as usize];
        tl.push_round(profile, snap, split, batch, t)?;
        if t % interval == 0 {
            tl.push_aggregation(profile, snap, split, t)?;
        }
    }
    Ok(tl)
}
