//! Block-coordinate descent over the interval and the split.

use serde::{Deserialize, Serialize};

use crate::bound::HyperParams;
use crate::error::{Error, Result};
use crate::latency::SplitDecision;
use crate::network::NetworkSnapshot;
use crate::profile::ModelProfile;

use super::{dinkelbach, solve_interval, AuxVars, SplitProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcdConfig {
    /// Stop once `|Theta'` change`| <= tol`; defaults to `1e-6` times the
    /// starting objective.
    pub tol: Option<f64>,
    /// Dinkelbach tolerance; defaults to `1e-9` times each starting numerator.
    pub dinkelbach_tol: Option<f64>,
    pub max_iterations: usize,
    /// Largest interval considered.
    pub i_max: u64,
}

impl Default for BcdConfig {
    fn default() -> Self {
        Self {
            tol: None,
            dinkelbach_tol: None,
            max_iterations: 50,
            i_max: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub interval: u64,
    pub objective: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSolution {
    pub interval: u64,
    pub split: SplitDecision,
    pub aux: AuxVars,
    /// `Theta'` at the returned point, seconds.
    pub objective: f64,
    pub trace: Vec<TraceRow>,
}

/// Alternates the exact interval step and the Dinkelbach split step from
/// `I = 1` with every device cut after the first layer.
pub fn bcd(
    profile: &ModelProfile,
    snapshot: &NetworkSnapshot,
    h: &HyperParams,
    config: &BcdConfig,
) -> Result<OptimizerSolution> {
    let problem = SplitProblem::new(profile, snapshot, h)?;
    bcd_on(&problem, config)
}

pub fn bcd_on(problem: &SplitProblem, config: &BcdConfig) -> Result<OptimizerSolution> {
    if config.i_max == 0 || config.max_iterations == 0 {
        return Err(Error::InvalidArgument("i_max and max_iterations must be >= 1".into()));
    }
    let mut split = problem.shallowest();
    let mut interval = 1;
    let mut terms = problem.evaluate(split.cuts());
    let infeasible = |interval, l_c| Error::InfeasibleAccuracy {
        epsilon: problem.epsilon(),
        interval,
        l_c,
    };
    let mut objective = problem
        .objective(interval, &terms)
        .ok_or_else(|| infeasible(interval, 1))?;
    let tol = config.tol.unwrap_or(1e-6 * objective);
    let mut trace = vec![TraceRow {
        iter: 0,
        interval,
        objective,
        lambda: objective,
    }];

    for iter in 1..=config.max_iterations {
        let step = solve_interval(&problem.interval_coefficients(&terms), config.i_max).map_err(|e| {
            if e.is_infeasible() {
                infeasible(interval, split.client_depth())
            } else {
                e
            }
        })?;
        // The current interval is feasible for the current split, so the
        // step never lands on a point without margin.
        let next_interval = if step.feasible && step.objective_at_star <= objective {
            step.i_star
        } else {
            interval
        };
        let out = dinkelbach(problem, next_interval, &split, config.dinkelbach_tol)?;
        let next = out.lambda;
        trace.push(TraceRow {
            iter,
            interval: next_interval,
            objective: next,
            lambda: out.lambda,
        });
        let change = objective - next;
        if next <= objective {
            interval = next_interval;
            split = out.split;
            terms = problem.evaluate(split.cuts());
            objective = next;
        }
        if change.abs() <= tol {
            break;
        }
        if iter == config.max_iterations {
            log::warn!("block-coordinate descent stopped at the iteration cap ({iter})");
        }
    }
    Ok(OptimizerSolution {
        interval,
        split,
        aux: terms.aux,
        objective,
        trace,
    })
}
