//! Convergence bound of split federated training and the derived round
//! count needed to reach a target gradient-norm accuracy.
//!
//! For step size `gamma <= 1/beta` the average squared gradient norm over `R`
//! rounds is bounded by
//!
//! ```text
//! 2*vartheta/(gamma*R) + beta*gamma*sum(sigma^2)/N + 1{I>1}*4*beta^2*gamma^2*I^2*G~^2(L_c)
//! ```
//!
//! and reaching accuracy `epsilon` needs `R >= 2*vartheta / (gamma * D)` with
//! `D = epsilon - noise - drift`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::SplitDecision;
use crate::profile::ModelProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Learning rate.
    pub gamma: f64,
    /// Smoothness constant of the loss.
    pub beta: f64,
    pub batch: usize,
    pub n_devices: usize,
    /// Initial optimality gap `f(w0) - f*`.
    pub vartheta: f64,
    /// Target accuracy on the average squared gradient norm.
    pub epsilon: f64,
}

impl HyperParams {
    pub fn new(
        gamma: f64,
        beta: f64,
        batch: usize,
        n_devices: usize,
        vartheta: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let h = Self {
            gamma,
            beta,
            batch,
            n_devices,
            vartheta,
            epsilon,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidHyperParams(m));
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if self.batch == 0 || self.n_devices == 0 {
            return bad("batch and n_devices must be >= 1".into());
        }
        if !(self.vartheta.is_finite() && self.vartheta >= 0.0) {
            return bad(format!("vartheta must be >= 0, got {}", self.vartheta));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        Ok(())
    }

    /// The bound only holds for `gamma <= 1/beta`.
    pub fn check_step_size(&self) -> Result<()> {
        if self.gamma * self.beta > 1.0 {
            return Err(Error::InvalidHyperParams(format!(
                "step size {} exceeds 1/beta = {}",
                self.gamma,
                1.0 / self.beta
            )));
        }
        Ok(())
    }

    /// `beta * gamma * sigma_total / N`, the floor the bound cannot go below.
    pub fn noise_floor(&self, sigma_total: f64) -> f64 {
        self.beta * self.gamma * sigma_total / self.n_devices as f64
    }

    /// `epsilon - noise_floor`, the accuracy budget left for the drift term.
    pub fn accuracy_slack(&self, sigma_total: f64) -> f64 {
        self.epsilon - self.noise_floor(sigma_total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub interval: u64,
    /// Deepest client cut.
    pub l_c: usize,
    /// Sum of per-layer variances over the whole model.
    pub sigma_total: f64,
    /// Prefix sum of per-layer second moments up to `l_c`.
    pub g_cum_lc: f64,
}

impl BoundInputs {
    pub fn from_split(profile: &ModelProfile, split: &SplitDecision, interval: u64) -> Result<Self> {
        let l_c = split.client_depth();
        Ok(Self {
            interval,
            l_c,
            sigma_total: profile.sigma_total(),
            g_cum_lc: profile.cumulative_moment(l_c)?,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(Error::InvalidArgument("interval must be >= 1".into()));
        }
        if self.l_c == 0 {
            return Err(Error::InvalidArgument("client depth must be >= 1".into()));
        }
        if self.sigma_total < 0.0 || self.g_cum_lc < 0.0 {
            return Err(Error::InvalidArgument("gradient statistics must be >= 0".into()));
        }
        Ok(())
    }
}

/// The three additive terms of the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub optimization: f64,
    pub noise: f64,
    pub drift: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.optimization + self.noise + self.drift
    }
}

/// Bound on the expected squared distance between a device's client-specific
/// model and the aggregated one.
pub fn drift_bound(h: &HyperParams, inputs: &BoundInputs) -> f64 {
    if inputs.interval <= 1 {
        return 0.0;
    }
    let i = inputs.interval as f64;
    4.0 * h.gamma * h.gamma * i * i * inputs.g_cum_lc
}

/// Drift term of the convergence bound, `beta^2` times [`drift_bound`].
pub fn drift_term(h: &HyperParams, inputs: &BoundInputs) -> f64 {
    h.beta * h.beta * drift_bound(h, inputs)
}

pub fn convergence_terms(h: &HyperParams, inputs: &BoundInputs, rounds: u64) -> Result<BoundTerms> {
    h.validate()?;
    h.check_step_size()?;
    inputs.validate()?;
    if rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be >= 1".into()));
    }
    Ok(BoundTerms {
        optimization: 2.0 * h.vartheta / (h.gamma * rounds as f64),
        noise: h.noise_floor(inputs.sigma_total),
        drift: drift_term(h, inputs),
    })
}

pub fn convergence_bound(h: &HyperParams, inputs: &BoundInputs, rounds: u64) -> Result<f64> {
    Ok(convergence_terms(h, inputs, rounds)?.total())
}

/// Accuracy margin `D = epsilon - noise - drift`; rounds scale as `1/D`.
pub fn accuracy_margin(h: &HyperParams, inputs: &BoundInputs) -> f64 {
    h.accuracy_slack(inputs.sigma_total) - drift_term(h, inputs)
}

fn positive_margin(h: &HyperParams, inputs: &BoundInputs) -> Result<f64> {
    h.validate()?;
    inputs.validate()?;
    let d = accuracy_margin(h, inputs);
    if d <= 0.0 {
        return Err(Error::InfeasibleAccuracy {
            epsilon: h.epsilon,
            interval: inputs.interval,
            l_c: inputs.l_c,
        });
    }
    Ok(d)
}

/// Real-valued lower bound on the rounds needed to reach `epsilon`.
pub fn min_rounds(h: &HyperParams, inputs: &BoundInputs) -> Result<f64> {
    let d = positive_margin(h, inputs)?;
    Ok(2.0 * h.vartheta / (h.gamma * d))
}

pub fn min_rounds_ceil(h: &HyperParams, inputs: &BoundInputs) -> Result<u64> {
    Ok(min_rounds(h, inputs)?.ceil() as u64)
}

/// Time to reach `epsilon`: aggregation cycles needed times the latency of
/// one cycle.
pub fn weighted_objective(h: &HyperParams, inputs: &BoundInputs, cycle_latency: f64) -> Result<f64> {
    let d = positive_margin(h, inputs)?;
    let cycles = 2.0 * h.vartheta / (h.gamma * inputs.interval as f64 * d);
    Ok(cycles * cycle_latency)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(epsilon: f64) -> HyperParams {
        HyperParams::new(0.1, 1.0, 16, 2, 1.0, epsilon).unwrap()
    }

    fn inputs(interval: u64, g: f64) -> BoundInputs {
        BoundInputs {
            interval,
            l_c: 2,
            sigma_total: 1.0,
            g_cum_lc: g,
        }
    }

    #[test]
    fn drift_bound_values() {
        let h = hp(1.0);
        assert_eq!(drift_bound(&h, &inputs(1, 5.0)), 0.0);
        assert!((drift_bound(&h, &inputs(2, 5.0)) - 0.8).abs() < 1e-15);
        let d2 = drift_bound(&h, &inputs(2, 5.0));
        let d4 = drift_bound(&h, &inputs(4, 5.0));
        assert!((d4 - 4.0 * d2).abs() < 1e-14);
    }

    #[test]
    fn convergence_bound_worked_values() {
        let h = hp(1.0);
        let b1 = convergence_bound(&h, &inputs(1, 4.0), 10).unwrap();
        assert!((b1 - 2.05).abs() < 1e-12);
        let b2 = convergence_bound(&h, &inputs(2, 4.0), 10).unwrap();
        assert!((b2 - 2.69).abs() < 1e-12);
        let far = convergence_terms(&h, &inputs(2, 4.0), u64::MAX).unwrap();
        assert!(far.optimization < 1e-17);
        assert!((far.total() - (0.05 + 0.64)).abs() < 1e-12);
    }

    #[test]
    fn step_size_precondition() {
        let h = HyperParams::new(0.5, 4.0, 1, 1, 1.0, 1.0).unwrap();
        assert!(matches!(
            convergence_bound(&h, &inputs(1, 1.0), 1),
            Err(Error::InvalidHyperParams(_))
        ));
        assert!(HyperParams::new(0.0, 1.0, 1, 1, 1.0, 1.0).is_err());
        assert!(HyperParams::new(0.1, 1.0, 1, 1, 1.0, 0.0).is_err());
    }

    #[test]
    fn min_rounds_worked_value() {
        let h = hp(3.0);
        let r = min_rounds(&h, &inputs(2, 4.0)).unwrap();
        assert!((r - 2.0 / (0.1 * 2.31)).abs() < 1e-12);
        assert!((r - 8.658_008_658_008_658).abs() < 1e-12);
        assert_eq!(min_rounds_ceil(&h, &inputs(2, 4.0)).unwrap(), 9);
        let d = accuracy_margin(&h, &inputs(2, 4.0));
        assert!((r * h.gamma * d - 2.0 * h.vartheta).abs() < 1e-12);
        assert!(min_rounds(&h, &inputs(3, 4.0)).unwrap() > r);
    }

    #[test]
    fn unreachable_accuracy_is_reported() {
        let h = hp(0.05);
        assert!(matches!(
            min_rounds(&h, &inputs(1, 4.0)),
            Err(Error::InfeasibleAccuracy { interval: 1, l_c: 2, .. })
        ));
    }

    #[test]
    fn weighted_objective_is_cycles_times_latency() {
        // 2*vartheta/(gamma*I*D) = 10 with gamma=0.1, I=1, D=2 and vartheta=1.
        let h = HyperParams::new(0.1, 1.0, 16, 2, 1.0, 2.05).unwrap();
        let theta = weighted_objective(&h, &inputs(1, 4.0), 3.0).unwrap();
        assert!((theta - 30.0).abs() < 1e-12);
    }

    #[test]
    fn indicator_removes_drift_at_unit_interval() {
        let h = hp(3.0);
        let one = weighted_objective(&h, &inputs(1, 4.0), 1.0).unwrap();
        let two = weighted_objective(&h, &inputs(2, 4.0), 1.0).unwrap();
        let margin_one = h.accuracy_slack(1.0);
        assert!((one - 2.0 / (0.1 * margin_one)).abs() < 1e-12);
        // I=2 halves the cycle count but pays the drift term in D.
        assert!(two > one / 2.0);
    }
}
