//! Dinkelbach iteration for the split block at a fixed interval.
//!
//! `min Q(mu)/P(mu)` is solved through the parametric problems
//! `min Q(mu) - lambda*P(mu)`: each exact inner solve yields a point whose
//! ratio becomes the next `lambda`, and the sequence stops once the optimal
//! residual is (numerically) zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::SplitDecision;

use super::{inner_milp, AuxVars, SplitProblem};

pub const MAX_ITERATIONS: usize = 100;
/// Default tolerance relative to the starting numerator.
pub const REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DinkelbachState {
    pub lambda: f64,
    pub iteration: usize,
    /// Optimal residual `min Q - lambda*P` at this `lambda`.
    pub residual: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DinkelbachOutcome {
    pub split: SplitDecision,
    pub aux: AuxVars,
    /// `Q/P` at the returned split.
    pub lambda: f64,
    pub q: f64,
    pub p: f64,
    pub history: Vec<DinkelbachState>,
}

/// Minimizes `Q/P` over splits at `interval`, starting from `start`.
///
/// `start` must have a positive denominator; its ratio is the initial
/// `lambda`. `tol` defaults to `1e-9` times the starting numerator.
pub fn dinkelbach(
    problem: &SplitProblem,
    interval: u64,
    start: &SplitDecision,
    tol: Option<f64>,
) -> Result<DinkelbachOutcome> {
    if start.num_devices() != problem.num_devices() {
        return Err(Error::DeviceCountMismatch {
            split: start.num_devices(),
            snapshot: problem.num_devices(),
        });
    }
    let terms = problem.evaluate(start.cuts());
    let mut q = problem.numerator(interval, &terms);
    let mut p = problem.denominator(interval, terms.aux.t1);
    if !(p > 0.0) {
        return Err(Error::InfeasibleAccuracy {
            epsilon: problem.epsilon(),
            interval,
            l_c: start.client_depth(),
        });
    }
    let tol = tol.unwrap_or(REL_TOL * q);
    let mut split = start.clone();
    let mut aux = terms.aux;
    let mut lambda = q / p;
    let mut history = Vec::new();

    for iteration in 1..=MAX_ITERATIONS {
        let sol = inner_milp(problem, interval, lambda)?;
        history.push(DinkelbachState {
            lambda,
            iteration,
            residual: sol.upsilon,
            tol,
        });
        if sol.upsilon.abs() <= tol || !(sol.p > 0.0) {
            break;
        }
        let next = sol.q / sol.p;
        // Rounding can stall the sequence just above the optimum.
        if next >= lambda {
            break;
        }
        lambda = next;
        split = sol.split;
        aux = sol.aux;
        q = sol.q;
        p = sol.p;
        if iteration == MAX_ITERATIONS {
            return Err(Error::NonConvergence { iterations: iteration });
        }
    }
    Ok(DinkelbachOutcome {
        split,
        aux,
        lambda,
        q,
        p,
        history,
    })
}
