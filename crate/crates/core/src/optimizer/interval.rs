//! Optimal aggregation interval for a fixed split.
//!
//! With the split fixed, `Theta'(I) = 2*vartheta*(a*I + b) / (gamma*I*(c - k*I^2))`
//! where `k = 4*beta^2*gamma^2*T1`. Its derivative has the sign of the cubic
//!
//! ```text
//! Xi(I) = 8*a*beta^2*gamma^2*T1*I^3 + 12*b*beta^2*gamma^2*T1*I^2 - b*c
//! ```
//!
//! which is strictly increasing on `I > 0` with `Xi(0) = -b*c < 0`, so
//! `Theta'` falls until the root `I'` and rises after it. The best integer
//! interval is `1` when `I' <= 1` and the better of `floor(I')` and
//! `ceil(I')` otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ROOT_ITERS: usize = 200;
const MIN_SLOPE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalCoefficients {
    /// Per-round latency `T3 + T_s^F + T_s^B + T4`.
    pub a: f64,
    /// Per-aggregation latency `T5 + T6`.
    pub b: f64,
    /// Accuracy slack `epsilon - beta*gamma*sum(sigma^2)/N`.
    pub c: f64,
    pub beta: f64,
    pub gamma: f64,
    pub t1: f64,
    pub vartheta: f64,
}

impl IntervalCoefficients {
    fn k(&self) -> f64 {
        self.beta * self.beta * self.gamma * self.gamma * self.t1
    }

    pub fn xi(&self, i: f64) -> f64 {
        xi(i, self.a, self.b, self.c, self.beta, self.gamma, self.t1)
    }

    pub fn xi_derivative(&self, i: f64) -> f64 {
        24.0 * self.k() * i * (self.a * i + self.b)
    }

    /// `c - 4*beta^2*gamma^2*I^2*T1`.
    pub fn margin(&self, interval: u64) -> f64 {
        let i = interval as f64;
        self.c - 4.0 * self.k() * i * i
    }

    /// `Theta'(I)`, or `None` when the margin is not positive.
    pub fn objective(&self, interval: u64) -> Option<f64> {
        let m = self.margin(interval);
        if interval == 0 || m <= 0.0 {
            return None;
        }
        let i = interval as f64;
        Some(2.0 * self.vartheta * (self.a * i + self.b) / (self.gamma * i * m))
    }
}

/// The cubic whose sign is the sign of `d Theta' / dI`.
pub fn xi(i: f64, a: f64, b: f64, c: f64, beta: f64, gamma: f64, t1: f64) -> f64 {
    let k = beta * beta * gamma * gamma * t1;
    8.0 * a * k * i * i * i + 12.0 * b * k * i * i - b * c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSolution {
    pub i_star: u64,
    /// Real root of `Xi`; `+inf` when `Xi` never turns positive and `0`
    /// when it is non-negative everywhere on `I > 0`.
    pub i_prime: f64,
    /// `Theta'(i_star)`; `+inf` if `i_star = 1` has no positive margin.
    pub objective_at_star: f64,
    pub feasible: bool,
}

/// Root of a strictly increasing function on `[lo, hi]` with
/// `f(lo) < 0 < f(hi)`: Newton steps, replaced by bisection whenever a step
/// leaves the bracket or the slope vanishes.
pub(crate) fn safeguarded_newton(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
) -> f64 {
    let mut x = hi;
    for _ in 0..MAX_ROOT_ITERS {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = df(x);
        let newton = x - fx / slope;
        let next = if slope.abs() < MIN_SLOPE || !(newton > lo && newton < hi) {
            0.5 * (lo + hi)
        } else {
            newton
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * next.abs() || hi - lo <= f64::EPSILON * hi {
            return next;
        }
        x = next;
    }
    x
}

fn scan(coeffs: &IntervalCoefficients, i_max: u64, i_prime: f64) -> Result<IntervalSolution> {
    let mut best: Option<(u64, f64)> = None;
    for i in 1..=i_max {
        match coeffs.objective(i) {
            Some(v) if best.is_none_or(|(_, b)| v < b) => best = Some((i, v)),
            Some(_) => {}
            // The feasible set is an initial segment of the integers.
            None => break,
        }
    }
    let (i_star, objective_at_star) = best.ok_or(Error::DenominatorNonpositive)?;
    Ok(IntervalSolution {
        i_star,
        i_prime,
        objective_at_star,
        feasible: true,
    })
}

/// Best integer interval in `1..=i_max` for fixed split coefficients.
pub fn solve_interval(coeffs: &IntervalCoefficients, i_max: u64) -> Result<IntervalSolution> {
    if !(coeffs.c > 0.0) {
        return Err(Error::InfeasibleSlack { slack: coeffs.c });
    }
    if i_max == 0 {
        return Err(Error::InvalidArgument("i_max must be >= 1".into()));
    }
    if !(coeffs.a >= 0.0 && coeffs.b >= 0.0 && coeffs.t1 >= 0.0) {
        return Err(Error::InvalidArgument(
            "interval coefficients a, b, T1 must be >= 0".into(),
        ));
    }
    // Degenerate shapes: Xi is constant negative (no drift penalty) or never
    // negative (free aggregation). Scan directly.
    if coeffs.k() <= 0.0 {
        return scan(coeffs, i_max, f64::INFINITY);
    }
    if coeffs.b <= 0.0 {
        return scan(coeffs, i_max, 0.0);
    }

    let mut hi = 1.0;
    while coeffs.xi(hi) <= 0.0 {
        hi *= 2.0;
    }
    let i_prime = safeguarded_newton(|i| coeffs.xi(i), |i| coeffs.xi_derivative(i), 0.0, hi);

    if i_prime <= 1.0 {
        return Ok(match coeffs.objective(1) {
            Some(v) => IntervalSolution {
                i_star: 1,
                i_prime,
                objective_at_star: v,
                feasible: true,
            },
            None => IntervalSolution {
                i_star: 1,
                i_prime,
                objective_at_star: f64::INFINITY,
                feasible: false,
            },
        });
    }

    let lo = (i_prime.floor() as u64).clamp(1, i_max);
    let up = (i_prime.ceil() as u64).clamp(1, i_max);
    let mut best: Option<(u64, f64)> = None;
    // Ascending order so ties keep the smaller interval.
    for cand in [lo, up] {
        if let Some(v) = coeffs.objective(cand) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((cand, v));
            }
        }
    }
    let (i_star, objective_at_star) = match best {
        Some(b) => b,
        None => match coeffs.objective(1) {
            Some(v) => (1, v),
            None => return Err(Error::DenominatorNonpositive),
        },
    };
    Ok(IntervalSolution {
        i_star,
        i_prime,
        objective_at_star,
        feasible: true,
    })
}
