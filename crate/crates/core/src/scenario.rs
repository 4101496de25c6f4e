//! Scenario runs: training on the toy model while a strategy picks the
//! aggregation interval and the cuts, with time measured by the latency
//! model on per-round network draws.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::HyperParams;
use crate::engine::{
    estimate_constants, Constants, DataShards, Dataset, EstimateConfig, Mlp, MlpOracle, Params, Timeline,
    Trainer,
};
use crate::error::{Error, Result};
use crate::latency::SplitDecision;
use crate::network::{sample_snapshot, NetworkSnapshot, ResourceDistribution};
use crate::optimizer::{bcd_on, dinkelbach, inner_milp, solve_interval, BcdConfig, SplitProblem, TraceRow};
use crate::profile::{LayerStats, ModelProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "adaptsfl")]
    AdaptSfl,
    /// Random interval, optimized split.
    #[serde(rename = "rma+ms")]
    RmaMs,
    /// Optimized interval, random split.
    #[serde(rename = "ma+rms")]
    MaRms,
    #[serde(rename = "rma+rms")]
    RmaRms,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::AdaptSfl, Strategy::RmaMs, Strategy::MaRms, Strategy::RmaRms];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::AdaptSfl => "adaptsfl",
            Strategy::RmaMs => "rma+ms",
            Strategy::MaRms => "ma+rms",
            Strategy::RmaRms => "rma+rms",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Layer widths, input first. `dims.len() - 1` layers.
    pub dims: Vec<usize>,
    pub samples: usize,
    pub separation: f64,
    pub iid: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            dims: vec![10, 24, 24, 24, 24, 24, 4],
            samples: 1000,
            separation: 1.0,
            iid: false,
        }
    }
}

/// Where the per-layer costs come from. Without a path they are derived from
/// the model architecture and scaled so that the toy model stands in for a
/// realistic workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    pub path: Option<PathBuf>,
    pub flops_scale: f64,
    pub bits_per_value: f64,
    pub act_scale: f64,
    pub param_scale: f64,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self {
            path: None,
            flops_scale: 1e5,
            bits_per_value: 32.0,
            act_scale: 64.0,
            param_scale: 512.0,
        }
    }
}

/// Multiplies one device's sampled resources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceScale {
    pub device: usize,
    pub compute: f64,
    pub up_edge: f64,
    pub down_edge: f64,
    pub up_fed: f64,
    pub down_fed: f64,
}

impl Default for DeviceScale {
    fn default() -> Self {
        Self {
            device: 0,
            compute: 1.0,
            up_edge: 1.0,
            down_edge: 1.0,
            up_fed: 1.0,
            down_fed: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub n_devices: usize,
    pub resources: ResourceDistribution,
    pub device_scale: Vec<DeviceScale>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            n_devices: 4,
            resources: ResourceDistribution::default(),
            device_scale: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSection {
    pub gamma: f64,
    pub batch: usize,
    /// Absolute target accuracy. Overrides `eps_scale`.
    pub eps: Option<f64>,
    /// Target accuracy above the estimated noise floor, in units of the
    /// single-round drift term of a fully client-side model.
    pub eps_scale: f64,
    /// Initial optimality gap; defaults to the loss at the decision point.
    pub vartheta: Option<f64>,
    /// Smoothness constant; estimated when absent.
    pub beta: Option<f64>,
    pub eps_d: Option<f64>,
    pub eps_b: Option<f64>,
    pub i_max: u64,
    /// Random intervals are drawn from `1..=rma_max`.
    pub rma_max: u64,
}

impl Default for HyperSection {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            batch: 16,
            eps: None,
            eps_scale: 200.0,
            vartheta: None,
            beta: None,
            eps_d: None,
            eps_b: None,
            i_max: 200,
            rma_max: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    pub strategy: Strategy,
    pub seed: u64,
    /// Round budget.
    pub rounds: u64,
    pub target_loss: f64,
    /// Rounds between re-optimizations; `0` re-optimizes every cycle.
    pub reopt_period: u64,
    /// Rounds between re-estimations of the gradient statistics; `0`
    /// estimates once, at the first decision.
    pub reestimate_period: u64,
    pub model: ModelSection,
    pub profile: ProfileSection,
    pub network: NetworkSection,
    pub hyper: HyperSection,
    pub estimate: EstimateConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            id: "scenario".into(),
            strategy: Strategy::AdaptSfl,
            seed: 0,
            rounds: 200,
            target_loss: 0.6,
            reopt_period: 0,
            reestimate_period: 50,
            model: ModelSection::default(),
            profile: ProfileSection::default(),
            network: NetworkSection::default(),
            hyper: HyperSection::default(),
            estimate: EstimateConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative profile path is taken relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &self.profile.path {
            if p.is_relative() {
                self.profile.path = Some(base.join(p));
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be >= 1");
        }
        if self.network.n_devices == 0 {
            return bad("network.n_devices must be >= 1");
        }
        if self.model.dims.len() < 2 {
            return bad("model.dims needs at least two widths");
        }
        if self.model.samples < 2 * self.network.n_devices {
            return bad("model.samples must cover two shards per device");
        }
        if self.hyper.batch == 0 || !(self.hyper.gamma > 0.0) {
            return bad("hyper.batch and hyper.gamma must be positive");
        }
        if self.hyper.i_max == 0 || self.hyper.rma_max == 0 {
            return bad("hyper.i_max and hyper.rma_max must be >= 1");
        }
        if !(self.hyper.eps_scale > 0.0) {
            return bad("hyper.eps_scale must be positive");
        }
        if self.network.device_scale.iter().any(|d| d.device >= self.network.n_devices) {
            return bad("network.device_scale refers to a missing device");
        }
        let p = &self.profile;
        if [p.flops_scale, p.bits_per_value, p.act_scale, p.param_scale]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return bad("profile scales must be positive");
        }
        self.network.resources.validate()
    }
}

/// Profile of the toy model with the given per-layer statistics.
pub fn model_profile(model: &Mlp, section: &ProfileSection, sigma_sq: &[f64], g_sq: &[f64]) -> Result<ModelProfile> {
    if let Some(path) = &section.path {
        let p = ModelProfile::load(path)?;
        if p.num_layers() != model.num_layers() {
            return Err(Error::Config(format!(
                "profile has {} layers but the model has {}",
                p.num_layers(),
                model.num_layers()
            )));
        }
        return p.with_statistics(sigma_sq, g_sq);
    }
    let (mut fp, mut bp, mut par) = (0.0, 0.0, 0.0);
    let layers = model
        .costs()
        .iter()
        .zip(sigma_sq.iter().zip(g_sq))
        .map(|(c, (&s, &g))| {
            fp += c.fp_flops * section.flops_scale;
            bp += c.bp_flops * section.flops_scale;
            par += c.params as f64 * section.bits_per_value * section.param_scale;
            let act = c.outputs as f64 * section.bits_per_value * section.act_scale;
            LayerStats {
                fp_flops_cum: fp,
                bp_flops_cum: bp,
                act_bits: act,
                grad_bits: act,
                param_bits_cum: par,
                grad_var: s,
                grad_sq_moment: g.max(s),
            }
        })
        .collect();
    ModelProfile::new(layers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario_id: String,
    pub seed: u64,
    pub strategy: String,
    pub final_loss: Option<f64>,
    /// First round whose loss is at or below the target.
    pub rounds_to_target: Option<u64>,
    pub time_to_target: Option<f64>,
    /// Simulated time of the whole budget, seconds.
    pub total_time: Option<f64>,
    /// First round at which the smoothed loss stopped improving.
    pub converged_round: Option<u64>,
    pub converged_time: Option<f64>,
    pub mean_interval: Option<f64>,
    pub trace: String,
    pub error: Option<String>,
}

impl RunRecord {
    /// Time to target, or the whole budget's time when the target was not
    /// reached.
    pub fn censored_time(&self) -> Option<f64> {
        self.time_to_target.or(self.total_time)
    }

    fn failed(cfg: &ScenarioConfig, e: &Error) -> Self {
        Self {
            scenario_id: cfg.id.clone(),
            seed: cfg.seed,
            strategy: cfg.strategy.to_string(),
            final_loss: None,
            rounds_to_target: None,
            time_to_target: None,
            total_time: None,
            converged_round: None,
            converged_time: None,
            mean_interval: None,
            trace: String::new(),
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub round: u64,
    pub loss: f64,
    pub drift_max: f64,
    pub wallclock_model_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    /// First round of the cycle (1-based).
    pub round: u64,
    pub interval: u64,
    pub cuts: Vec<usize>,
    /// Predicted objective when the optimizer produced the decision.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub record: RunRecord,
    pub losses: Vec<LossRow>,
    pub timeline: Timeline,
    pub decisions: Vec<Decision>,
    /// `(re-optimization index, row)` for every optimizer iteration.
    pub trace: Vec<(usize, TraceRow)>,
}

/// First round (1-based) at which the 5-round moving average of the loss has
/// improved by less than 0.02% for 5 consecutive rounds.
pub fn converged_round(losses: &[f64]) -> Option<u64> {
    const WINDOW: usize = 5;
    const REL: f64 = 2e-4;
    const PATIENCE: usize = 5;
    if losses.len() < WINDOW + 1 {
        return None;
    }
    let smooth: Vec<f64> = losses.windows(WINDOW).map(|w| w.iter().sum::<f64>() / WINDOW as f64).collect();
    let mut streak = 0;
    for (k, w) in smooth.windows(2).enumerate() {
        let gain = (w[0] - w[1]) / w[0].abs().max(f64::MIN_POSITIVE);
        streak = if gain < REL { streak + 1 } else { 0 };
        if streak == PATIENCE {
            // smooth[k + 1] ends at round k + 1 + WINDOW.
            return Some((k + 1 + WINDOW) as u64);
        }
    }
    None
}

struct Plan {
    interval: u64,
    split: SplitDecision,
    objective: Option<f64>,
    trace: Vec<TraceRow>,
}

fn scale_snapshot(snapshot: &mut NetworkSnapshot, scales: &[DeviceScale]) {
    for s in scales {
        let d = &mut snapshot.devices[s.device];
        d.compute *= s.compute;
        d.up_edge *= s.up_edge;
        d.down_edge *= s.down_edge;
        d.up_fed *= s.up_fed;
        d.down_fed *= s.down_fed;
    }
}

fn snapshot(cfg: &ScenarioConfig, dist: &ResourceDistribution, round: u64) -> Result<NetworkSnapshot> {
    let mut s = sample_snapshot(dist, cfg.network.n_devices, round, cfg.seed)?;
    scale_snapshot(&mut s, &cfg.network.device_scale);
    Ok(s)
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    model: &'a Mlp,
    data: &'a Dataset,
    shards: &'a DataShards,
    rng: ChaCha8Rng,
    /// Latest estimate and the round it was taken at.
    constants: Option<(u64, Constants)>,
}

impl Runner<'_> {
    fn random_interval(&mut self) -> u64 {
        self.rng.random_range(1..=self.cfg.hyper.rma_max)
    }

    fn random_split(&mut self) -> Result<SplitDecision> {
        let l = self.model.num_layers();
        let cuts = (0..self.cfg.network.n_devices).map(|_| self.rng.random_range(1..=l)).collect();
        SplitDecision::new(cuts, l)
    }

    fn constants(&mut self, trainer: &Trainer, round: u64) -> Result<Constants> {
        let period = self.cfg.reestimate_period;
        match &self.constants {
            Some((at, c)) if period == 0 || round - at < period => Ok(c.clone()),
            _ => {
                let c = self.estimate(&trainer.state().global_model())?;
                self.constants = Some((round, c.clone()));
                Ok(c)
            }
        }
    }

    fn estimate(&self, w: &Params) -> Result<Constants> {
        let oracle = MlpOracle {
            model: self.model,
            data: self.data,
            shards: self.shards,
            batch: self.cfg.hyper.batch,
        };
        estimate_constants(&oracle, w, &self.cfg.estimate, self.cfg.seed)
    }

    /// Hyper-parameters for the bound given estimated constants.
    fn hyper(&self, c: &Constants, profile: &ModelProfile, loss: f64) -> Result<HyperParams> {
        let h = &self.cfg.hyper;
        let beta = h.beta.unwrap_or(c.beta).max(f64::MIN_POSITIVE);
        let n = self.cfg.network.n_devices;
        let floor = beta * h.gamma * profile.sigma_total() / n as f64;
        let full_drift = 4.0 * (beta * h.gamma).powi(2) * profile.g_cum()[profile.num_layers() - 1];
        let epsilon = h.eps.unwrap_or(floor + h.eps_scale * full_drift);
        let hp = HyperParams::new(h.gamma, beta, h.batch, n, h.vartheta.unwrap_or(loss), epsilon)?;
        if hp.check_step_size().is_err() {
            log::warn!("step size {} exceeds 1/beta = {}", h.gamma, 1.0 / beta);
        }
        Ok(hp)
    }

    fn plan(&mut self, trainer: &Trainer, round: u64) -> Result<Plan> {
        let strategy = self.cfg.strategy;
        if strategy == Strategy::RmaRms {
            return Ok(Plan {
                interval: self.random_interval(),
                split: self.random_split()?,
                objective: None,
                trace: Vec::new(),
            });
        }
        let constants = self.constants(trainer, round)?;
        let profile = model_profile(self.model, &self.cfg.profile, &constants.sigma_sq, &constants.g_sq)?;
        let h = self.hyper(&constants, &profile, trainer.loss())?;
        // Decisions see the noiseless resources; execution sees the noisy ones.
        let nominal = snapshot(self.cfg, &self.cfg.network.resources.nominal(), round)?;
        let problem = SplitProblem::new(&profile, &nominal, &h)?;
        let bcd_config = BcdConfig {
            tol: self.cfg.hyper.eps_b,
            dinkelbach_tol: self.cfg.hyper.eps_d,
            i_max: self.cfg.hyper.i_max,
            ..BcdConfig::default()
        };
        match strategy {
            Strategy::AdaptSfl => {
                let sol = bcd_on(&problem, &bcd_config)?;
                Ok(Plan {
                    interval: sol.interval,
                    split: sol.split,
                    objective: Some(sol.objective),
                    trace: sol.trace,
                })
            }
            Strategy::RmaMs => {
                let interval = self.random_interval();
                match dinkelbach(&problem, interval, &problem.shallowest(), self.cfg.hyper.eps_d) {
                    Ok(out) => Ok(Plan {
                        interval,
                        split: out.split,
                        objective: Some(out.lambda),
                        trace: Vec::new(),
                    }),
                    // No split reaches the target at this interval: fall back
                    // to the fastest one.
                    Err(e) if e.is_infeasible() => Ok(Plan {
                        interval,
                        split: inner_milp(&problem, interval, 0.0)?.split,
                        objective: None,
                        trace: Vec::new(),
                    }),
                    Err(e) => Err(e),
                }
            }
            Strategy::MaRms => {
                let split = self.random_split()?;
                let terms = problem.evaluate(split.cuts());
                let step = solve_interval(&problem.interval_coefficients(&terms), self.cfg.hyper.i_max);
                let (interval, objective) = match step {
                    Ok(s) if s.feasible => (s.i_star, Some(s.objective_at_star)),
                    Ok(_) => (1, None),
                    Err(e) if e.is_infeasible() => (1, None),
                    Err(e) => return Err(e),
                };
                Ok(Plan {
                    interval,
                    split,
                    objective,
                    trace: Vec::new(),
                })
            }
            Strategy::RmaRms => unreachable!(),
        }
    }
}

struct Setup {
    model: Mlp,
    data: Dataset,
    shards: DataShards,
    init: Params,
}

fn setup(cfg: &ScenarioConfig) -> Result<Setup> {
    cfg.validate()?;
    let model = Mlp::new(cfg.model.dims.clone())?;
    let data = Dataset::gaussian_mixture(
        cfg.model.samples,
        model.input_dim(),
        model.num_classes(),
        cfg.model.separation,
        cfg.seed,
    )?;
    let n = cfg.network.n_devices;
    let shards = if cfg.model.iid {
        DataShards::iid(&data, n, cfg.seed)?
    } else {
        DataShards::non_iid(&data, n, cfg.seed)?
    };
    let init = model.init(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    Ok(Setup {
        model,
        data,
        shards,
        init,
    })
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ScenarioConfig, s: &'a Setup) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::MAX);
        Runner {
            cfg,
            model: &s.model,
            data: &s.data,
            shards: &s.shards,
            rng,
            constants: None,
        }
    }
}

/// Optimizer inputs at a scenario's first decision: the profile with
/// statistics estimated at the initial model (or `profile`'s own statistics
/// when given), the nominal round-1 resources, and the hyper-parameters.
/// `eps` overrides the configured target accuracy.
pub fn initial_problem(
    cfg: &ScenarioConfig,
    profile: Option<&ModelProfile>,
    eps: Option<f64>,
) -> Result<(ModelProfile, NetworkSnapshot, HyperParams)> {
    let s = setup(cfg)?;
    let mut cfg = cfg.clone();
    cfg.hyper.eps = eps.or(cfg.hyper.eps);
    let runner = Runner::new(&cfg, &s);
    let constants = runner.estimate(&s.init)?;
    let profile = match profile {
        Some(p) => p.clone(),
        None => model_profile(&s.model, &cfg.profile, &constants.sigma_sq, &constants.g_sq)?,
    };
    let loss = s.model.loss(&crate::engine::model::layers(&s.init), &s.data, &s.data.all());
    let h = runner.hyper(&constants, &profile, loss)?;
    let nominal = snapshot(&cfg, &cfg.network.resources.nominal(), 1)?;
    Ok((profile, nominal, h))
}

/// Runs one scenario to its round budget.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let s = setup(cfg)?;
    let (model, data, shards, init) = (&s.model, &s.data, &s.shards, &s.init);
    // Costs do not depend on the gradient statistics.
    let zero = vec![0.0; model.num_layers()];
    let cost_profile = model_profile(model, &cfg.profile, &zero, &zero)?;

    let mut runner = Runner::new(cfg, &s);
    let mut trainer = Trainer::new(model, data, shards, init, 1, cfg.hyper.batch, cfg.hyper.gamma, cfg.seed)?;

    let mut timeline = Timeline::new();
    let mut losses = Vec::with_capacity(cfg.rounds as usize);
    let mut decisions = Vec::new();
    let mut trace = Vec::new();
    let mut plan: Option<Plan> = None;
    let mut last_opt = 0u64;
    let mut t = 0u64;
    while t < cfg.rounds {
        let due = plan.is_none() || cfg.reopt_period == 0 || t - last_opt >= cfg.reopt_period;
        if due {
            let p = runner.plan(&trainer, t + 1)?;
            last_opt = t;
            let k = decisions.len();
            trace.extend(p.trace.iter().map(|r| (k, *r)));
            plan = Some(p);
        }
        let p = plan.as_ref().expect("planned");
        decisions.push(Decision {
            round: t + 1,
            interval: p.interval,
            cuts: p.split.cuts().to_vec(),
            objective: if due { p.objective } else { None },
        });
        trainer.set_client_depth(p.split.client_depth())?;
        let end = (t + p.interval).min(cfg.rounds);
        while t < end {
            t += 1;
            let snap = snapshot(cfg, &cfg.network.resources, t)?;
            timeline.push_round(&cost_profile, &snap, &p.split, cfg.hyper.batch, t)?;
            let aggregate = t == end;
            if aggregate {
                timeline.push_aggregation(&cost_profile, &snap, &p.split, t)?;
            }
            let rec = trainer.round(aggregate)?;
            losses.push(LossRow {
                round: t,
                loss: rec.loss,
                drift_max: rec.drift,
                wallclock_model_seconds: timeline.total(),
            });
        }
    }

    let hit = losses.iter().find(|r| r.loss <= cfg.target_loss);
    let loss_values: Vec<f64> = losses.iter().map(|r| r.loss).collect();
    let conv = converged_round(&loss_values);
    let mean_interval = decisions.iter().map(|d| d.interval as f64).sum::<f64>() / decisions.len() as f64;
    let record = RunRecord {
        scenario_id: cfg.id.clone(),
        seed: cfg.seed,
        strategy: cfg.strategy.to_string(),
        final_loss: loss_values.last().copied(),
        rounds_to_target: hit.map(|r| r.round),
        time_to_target: hit.map(|r| r.wallclock_model_seconds),
        total_time: Some(timeline.total()),
        converged_round: conv,
        converged_time: conv.map(|r| losses[r as usize - 1].wallclock_model_seconds),
        mean_interval: Some(mean_interval),
        trace: "trace.csv".into(),
        error: None,
    };
    Ok(RunOutput {
        record,
        losses,
        timeline,
        decisions,
        trace,
    })
}

pub const LOSS_HEADER: [&str; 4] = ["round", "loss", "drift_max", "wallclock_model_seconds"];
pub const TRACE_HEADER: [&str; 5] = ["reopt", "iter", "interval", "objective", "lambda"];

pub fn write_trace(path: &Path, rows: &[(usize, TraceRow)]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(TRACE_HEADER)?;
    for (k, r) in rows {
        wtr.write_record([
            k.to_string(),
            r.iter.to_string(),
            r.interval.to_string(),
            r.objective.to_string(),
            r.lambda.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, ToString::to_string)
}

/// Writes `loss.csv`, `events.csv`, `trace.csv`, `decisions.csv`,
/// `record.csv` and the echoed `config.toml` into `dir`.
pub fn write_run(dir: &Path, cfg: &ScenarioConfig, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut echo = String::from("# loss-based convergence: target_loss and a 0.02% / 5-round plateau rule\n");
    echo.push_str(&cfg.to_toml()?);
    fs::write(dir.join("config.toml"), echo)?;

    let mut w = csv::Writer::from_path(dir.join("loss.csv"))?;
    w.write_record(LOSS_HEADER)?;
    for r in &out.losses {
        w.write_record([
            r.round.to_string(),
            r.loss.to_string(),
            r.drift_max.to_string(),
            r.wallclock_model_seconds.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("events.csv"))?;
    w.write_record(crate::engine::timing::EVENTS_HEADER)?;
    out.timeline.write_csv(&mut w)?;
    w.flush()?;

    write_trace(&dir.join("trace.csv"), &out.trace)?;

    let mut w = csv::Writer::from_path(dir.join("decisions.csv"))?;
    let n = cfg.network.n_devices;
    let mut header = vec!["round".to_string(), "interval".into(), "objective".into()];
    header.extend((1..=n).map(|i| format!("c_{i}")));
    w.write_record(&header)?;
    for d in &out.decisions {
        let mut row = vec![d.round.to_string(), d.interval.to_string(), opt(&d.objective)];
        row.extend(d.cuts.iter().map(ToString::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;

    write_records(&dir.join("record.csv"), std::slice::from_ref(&out.record))
}

pub const RECORD_HEADER: [&str; 12] = [
    "scenario_id",
    "seed",
    "strategy",
    "final_loss",
    "rounds_to_target",
    "time_to_target",
    "total_time",
    "converged_round",
    "converged_time",
    "mean_interval",
    "trace",
    "error",
];

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.scenario_id.clone(),
            r.seed.to_string(),
            r.strategy.clone(),
            opt(&r.final_loss),
            r.rounds_to_target.map_or_else(|| "not reached".into(), |v| v.to_string()),
            r.time_to_target.map_or_else(|| "not reached".into(), |v| v.to_string()),
            opt(&r.total_time),
            opt(&r.converged_round),
            opt(&r.converged_time),
            opt(&r.mean_interval),
            r.trace.clone(),
            opt(&r.error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-strategy statistics of the time to target. Runs that miss the target
/// count with their full budget time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub runs: usize,
    pub failed: usize,
    pub reached: usize,
    pub mean_time_to_target: f64,
    pub std_time_to_target: f64,
    pub mean_final_loss: f64,
}

pub fn summarize(records: &[RunRecord]) -> Vec<StrategySummary> {
    let mut groups: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.strategy.as_str()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(strategy, rs)| {
            let ok: Vec<&RunRecord> = rs.iter().copied().filter(|r| r.error.is_none()).collect();
            let times: Vec<f64> = ok.iter().filter_map(|r| r.censored_time()).collect();
            let (mean, std) = mean_std(&times);
            let losses: Vec<f64> = ok.iter().filter_map(|r| r.final_loss).collect();
            StrategySummary {
                strategy: strategy.to_string(),
                runs: rs.len(),
                failed: rs.len() - ok.len(),
                reached: ok.iter().filter(|r| r.time_to_target.is_some()).count(),
                mean_time_to_target: mean,
                std_time_to_target: std,
                mean_final_loss: mean_std(&losses).0,
            }
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

pub fn write_summary(path: &Path, summary: &[StrategySummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summary {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// A base scenario crossed with strategies and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub base: ScenarioConfig,
}

impl SweepConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: Self =
            toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// One scenario per (strategy, seed), ids `<base>-<strategy>-<seed>`.
    pub fn expand(&self) -> Result<Vec<ScenarioConfig>> {
        if self.strategies.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one strategy and one seed".into()));
        }
        let mut out = Vec::new();
        for &strategy in &self.strategies {
            for &seed in &self.seeds {
                let mut c = self.base.clone();
                c.id = format!("{}-{}-{seed:04}", self.base.id, strategy);
                c.strategy = strategy;
                c.seed = seed;
                c.validate()?;
                out.push(c);
            }
        }
        Ok(out)
    }
}

/// Runs every scenario in parallel. Failures become records with an error
/// message. Records come back sorted by scenario id, then seed.
pub fn sweep(cfgs: &[ScenarioConfig]) -> Result<Vec<RunRecord>> {
    if cfgs.is_empty() {
        return Err(Error::Config("sweep needs at least one scenario".into()));
    }
    let mut records: Vec<RunRecord> = cfgs
        .par_iter()
        .map(|c| match run_scenario(c) {
            Ok(out) => out.record,
            Err(e) => {
                log::warn!("scenario {} failed: {e}", c.id);
                RunRecord::failed(c, &e)
            }
        })
        .collect();
    records.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id).then(a.seed.cmp(&b.seed)));
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            rounds: 12,
            model: ModelSection {
                dims: vec![4, 6, 6, 3],
                samples: 120,
                ..ModelSection::default()
            },
            network: NetworkSection {
                n_devices: 3,
                ..NetworkSection::default()
            },
            hyper: HyperSection {
                gamma: 0.05,
                ..HyperSection::default()
            },
            estimate: EstimateConfig {
                probe_rounds: 2,
                samples: 2,
                ..EstimateConfig::default()
            },
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("ma".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = small();
        let back = ScenarioConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        let partial = ScenarioConfig::from_toml("strategy = \"rma+rms\"\n[network.resources]\ncv = 0.1\n").unwrap();
        assert_eq!(partial.strategy, Strategy::RmaRms);
        assert_eq!(partial.network.resources.cv, 0.1);
        assert!(ScenarioConfig::from_toml("nonsense = 1").is_err());
    }

    #[test]
    fn every_strategy_runs() {
        for s in Strategy::ALL {
            let cfg = ScenarioConfig {
                strategy: s,
                ..small()
            };
            let out = run_scenario(&cfg).unwrap();
            assert_eq!(out.losses.len(), 12);
            let mut covered = 0;
            for d in &out.decisions {
                assert!(d.interval >= 1);
                if matches!(s, Strategy::RmaMs | Strategy::RmaRms) {
                    assert!(d.interval <= 25);
                }
                covered += d.interval.min(12 - covered);
            }
            assert_eq!(covered, 12);
            assert!(out.record.total_time.unwrap() > 0.0);
        }
    }

    #[test]
    fn random_draws_are_reproducible() {
        let cfg = ScenarioConfig {
            strategy: Strategy::RmaRms,
            ..small()
        };
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.decisions, b.decisions);
        assert_eq!(a.record, b.record);
    }

    #[test]
    fn plateau_detection() {
        let falling: Vec<f64> = (0..50).map(|t| 1.0 / (1.0 + t as f64)).collect();
        assert_eq!(converged_round(&falling), None);
        let mut flat = falling[..10].to_vec();
        flat.extend(std::iter::repeat_n(0.1, 20));
        let r = converged_round(&flat).unwrap();
        assert!(r > 10 && r <= 30, "{r}");
        assert_eq!(converged_round(&[1.0, 0.9]), None);
    }

    #[test]
    fn empty_sweep_is_rejected() {
        assert!(sweep(&[]).is_err());
        let s = SweepConfig {
            strategies: vec![],
            seeds: vec![1],
            base: small(),
        };
        assert!(s.expand().is_err());
    }

    #[test]
    fn summary_uses_censored_time() {
        let mut a = RunRecord::failed(&small(), &Error::Config("x".into()));
        a.error = None;
        a.total_time = Some(10.0);
        a.final_loss = Some(1.0);
        let mut b = a.clone();
        b.time_to_target = Some(4.0);
        let s = summarize(&[a, b]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].reached, 1);
        assert_eq!(s[0].mean_time_to_target, 7.0);
        assert_eq!(s[0].std_time_to_target, 3.0);
    }
}
