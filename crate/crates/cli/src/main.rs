use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptsfl::bound::{convergence_terms, min_rounds, BoundInputs};
use adaptsfl::latency::SplitDecision;
use adaptsfl::optimizer::{bcd, BcdConfig};
use adaptsfl::profile::ModelProfile;
use adaptsfl::scenario::{
    initial_problem, run_scenario, summarize, sweep, write_records, write_run, write_summary, write_trace,
    ScenarioConfig, SweepConfig,
};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaptsfl", version, about = "Split federated learning experiments on simulated edge networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML (a sweep TOML for `sweep`); built-in defaults when absent.
    #[arg(long, alias = "scenario", global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, default_value = "out", global = true)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Jointly pick the aggregation interval and the cuts for the first round.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Layer profile CSV; defaults to the scenario's toy model.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Target accuracy.
        #[arg(long)]
        eps: Option<f64>,
        /// Trace CSV; defaults to `<out-dir>/trace.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one scenario and write its loss, event and decision logs.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Print the convergence-bound terms and the minimum round count.
    Bound {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        interval: u64,
        /// Client-side depth.
        #[arg(long, default_value_t = 1)]
        cut: usize,
        /// Rounds for the optimization term; defaults to the scenario budget.
        #[arg(long)]
        rounds: Option<u64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Run every (strategy, seed) pair of a sweep in parallel.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

fn scenario(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn optimize(common: &Common, profile: Option<&Path>, eps: Option<f64>, out: Option<&Path>) -> Result<()> {
    let cfg = scenario(common)?;
    let given = profile
        .map(|p| ModelProfile::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let (profile, snapshot, h) = initial_problem(&cfg, given.as_ref(), eps)?;
    let config = BcdConfig {
        tol: cfg.hyper.eps_b,
        dinkelbach_tol: cfg.hyper.eps_d,
        i_max: cfg.hyper.i_max,
        ..BcdConfig::default()
    };
    let sol = bcd(&profile, &snapshot, &h, &config)?;
    fs::create_dir_all(&common.out_dir)?;
    let trace_path = out.map_or_else(|| common.out_dir.join("trace.csv"), Path::to_path_buf);
    let rows: Vec<_> = sol.trace.iter().map(|r| (0, *r)).collect();
    write_trace(&trace_path, &rows)?;

    let n = sol.split.num_devices();
    let mut header = vec!["interval".to_string(), "objective".into()];
    header.extend((1..=n).map(|i| format!("c_{i}")));
    let mut row = vec![sol.interval.to_string(), sol.objective.to_string()];
    row.extend(sol.split.cuts().iter().map(ToString::to_string));
    let text = format!("{}\n{}\n", header.join(","), row.join(","));
    fs::write(common.out_dir.join("solution.csv"), &text)?;
    print!("{text}");
    Ok(())
}

fn simulate(common: &Common) -> Result<()> {
    let cfg = scenario(common)?;
    let out = run_scenario(&cfg)?;
    write_run(&common.out_dir, &cfg, &out)?;
    let r = &out.record;
    log::info!(
        "{}: final loss {:?}, time to target {:?}",
        r.scenario_id,
        r.final_loss,
        r.time_to_target
    );
    Ok(())
}

fn bound(common: &Common, interval: u64, cut: usize, rounds: Option<u64>, eps: Option<f64>) -> Result<()> {
    let cfg = scenario(common)?;
    let (profile, _, h) = initial_problem(&cfg, None, eps)?;
    let split = SplitDecision::uniform(cfg.network.n_devices, cut, profile.num_layers())?;
    let inputs = BoundInputs::from_split(&profile, &split, interval)?;
    let terms = convergence_terms(&h, &inputs, rounds.unwrap_or(cfg.rounds))?;
    let r = min_rounds(&h, &inputs)?;
    println!("term,value");
    println!("optimization,{}", terms.optimization);
    println!("noise,{}", terms.noise);
    println!("drift,{}", terms.drift);
    println!("total,{}", terms.total());
    println!("epsilon,{}", h.epsilon);
    println!("min_rounds,{r}");
    Ok(())
}

fn run_sweep(common: &Common) -> Result<()> {
    let path = common.config.as_ref().context("sweep needs --config <sweep.toml>")?;
    let mut cfg = SweepConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    let records = sweep(&cfg.expand()?)?;
    fs::create_dir_all(&common.out_dir)?;
    write_records(&common.out_dir.join("runs.csv"), &records)?;
    write_summary(&common.out_dir.join("summary.csv"), &summarize(&records))?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed", records.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Optimize {
            common,
            profile,
            eps,
            out,
        } => optimize(common, profile.as_deref(), *eps, out.as_deref()),
        Command::Simulate { common } => simulate(common),
        Command::Bound {
            common,
            interval,
            cut,
            rounds,
            eps,
        } => bound(common, *interval, *cut, *rounds, *eps),
        Command::Sweep { common } => run_sweep(common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let infeasible = e
                .chain()
                .any(|c| c.downcast_ref::<adaptsfl::Error>().is_some_and(adaptsfl::Error::is_infeasible));
            ExitCode::from(if infeasible { 2 } else { 1 })
        }
    }
}
