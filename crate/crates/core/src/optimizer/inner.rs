//! Exact minimization of the parametric residual `Q - lambda*P` over the
//! split for a fixed interval.
//!
//! The search fixes the deepest cut `K` first. With `K` fixed, `T1` and `T2`
//! are constants and the residual is
//!
//! ```text
//! const(K) + A*(max u + max d + sum s) + B*(max(max mu, G/r_sf) + max(max md, G/r_fs))
//! ```
//!
//! with `A = 2*vartheta*I`, `B = 2*vartheta` and `G` the total non-common
//! size. Requiring only `c_i <= K` (instead of `max c_i = K`) never lowers
//! an assignment's value below its true residual, so the minimum over `K` of
//! the relaxed problems is exact. Each relaxed problem is a depth-first
//! branch and bound over devices.

use crate::error::{Error, Result};
use crate::latency::SplitDecision;

use super::{AuxVars, SplitProblem, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub split: SplitDecision,
    /// Caps set to the maxima they bound.
    pub aux: AuxVars,
    /// `Q - lambda*P` at the returned split.
    pub upsilon: f64,
    pub q: f64,
    pub p: f64,
}

/// Per-device candidate costs for one level `K`.
#[derive(Clone, Copy)]
struct Choice {
    cut: usize,
    up: f64,
    down: f64,
    /// `A * server latency`.
    server: f64,
    model_up: f64,
    model_down: f64,
    gap: f64,
}

#[derive(Clone, Copy)]
struct Partial {
    up: f64,
    down: f64,
    server: f64,
    model_up: f64,
    model_down: f64,
    gap: f64,
}

impl Partial {
    const EMPTY: Partial = Partial {
        up: 0.0,
        down: 0.0,
        server: 0.0,
        model_up: 0.0,
        model_down: 0.0,
        gap: 0.0,
    };

    fn with(&self, c: &Choice) -> Partial {
        Partial {
            up: self.up.max(c.up),
            down: self.down.max(c.down),
            server: self.server + c.server,
            model_up: self.model_up.max(c.model_up),
            model_down: self.model_down.max(c.model_down),
            gap: self.gap + c.gap,
        }
    }
}

struct Level {
    /// Devices in search order, each with its candidates.
    devices: Vec<(usize, Vec<Choice>)>,
    /// `sum_{j >= k} min_c server` over the search order.
    server_floor: Vec<f64>,
    offset: f64,
    a: f64,
    b: f64,
    r_sf: f64,
    r_fs: f64,
}

impl Level {
    fn value(&self, p: &Partial) -> f64 {
        self.offset
            + self.a * (p.up + p.down)
            + p.server
            + self.b * (p.model_up.max(p.gap / self.r_sf) + p.model_down.max(p.gap / self.r_fs))
    }

    /// Lower bound on every completion of `p` from position `k`.
    ///
    /// Each free device pays at least its cheapest server term; on top of
    /// that the total can rise by at least the largest single-device
    /// increase of the max terms.
    fn bound(&self, p: &Partial, k: usize) -> f64 {
        let here = self.value(p);
        let base = here + self.server_floor[k];
        let mut extra: f64 = 0.0;
        for (_, choices) in &self.devices[k..] {
            let mut best = f64::INFINITY;
            let mut floor = f64::INFINITY;
            for c in choices {
                best = best.min(self.value(&p.with(c)) - here);
                floor = floor.min(c.server);
            }
            extra = extra.max(best - floor);
        }
        base + extra
    }

    fn greedy(&self) -> (Vec<usize>, f64) {
        let n = self.devices.len();
        let mut pick = vec![0usize; n];
        let mut p = Partial::EMPTY;
        for (k, (_, choices)) in self.devices.iter().enumerate() {
            let (j, _) = choices
                .iter()
                .enumerate()
                .map(|(j, c)| (j, self.value(&p.with(c))))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            pick[k] = j;
            p = p.with(&choices[j]);
        }
        // Coordinate descent on the greedy assignment.
        let total = |pick: &[usize]| {
            let p = pick
                .iter()
                .enumerate()
                .fold(Partial::EMPTY, |p, (k, &j)| p.with(&self.devices[k].1[j]));
            self.value(&p)
        };
        let mut best = total(&pick);
        let mut improved = true;
        while improved {
            improved = false;
            for k in 0..n {
                for j in 0..self.devices[k].1.len() {
                    if j == pick[k] {
                        continue;
                    }
                    let old = pick[k];
                    pick[k] = j;
                    let v = total(&pick);
                    if v < best {
                        best = v;
                        improved = true;
                    } else {
                        pick[k] = old;
                    }
                }
            }
        }
        (pick, best)
    }

    fn search(&self, k: usize, p: Partial, pick: &mut Vec<usize>, incumbent: &mut (Vec<usize>, f64)) {
        if k == self.devices.len() {
            let v = self.value(&p);
            if v < incumbent.1 {
                *incumbent = (pick.clone(), v);
            }
            return;
        }
        let here = self.value(&p);
        let mut order: Vec<(usize, f64)> = self.devices[k]
            .1
            .iter()
            .enumerate()
            .map(|(j, c)| (j, self.value(&p.with(c)) - here))
            .collect();
        order.sort_by(|x, y| x.1.total_cmp(&y.1));
        for (j, _) in order {
            let child = p.with(&self.devices[k].1[j]);
            if self.bound(&child, k + 1) >= incumbent.1 {
                continue;
            }
            pick.push(j);
            self.search(k + 1, child, pick, incumbent);
            pick.pop();
        }
    }

    fn cuts(&self, pick: &[usize]) -> Vec<usize> {
        let mut cuts = vec![0; self.devices.len()];
        for (k, &j) in pick.iter().enumerate() {
            let (dev, choices) = &self.devices[k];
            cuts[*dev] = choices[j].cut;
        }
        cuts
    }
}

fn level(problem: &SplitProblem, interval: u64, lambda: f64, k: usize) -> Level {
    let vt = problem.vartheta();
    let a = 2.0 * vt * interval as f64;
    let b = 2.0 * vt;
    let (r_sf, r_fs) = problem.inter_server_rates();
    let bits = problem.model_bits();
    let mut devices: Vec<(usize, Vec<Choice>)> = (0..problem.num_devices())
        .map(|i| {
            let up = problem.table_row(Table::Upload, i);
            let down = problem.table_row(Table::Download, i);
            let server = problem.table_row(Table::Server, i);
            let mu = problem.table_row(Table::ModelUp, i);
            let md = problem.table_row(Table::ModelDown, i);
            let choices = (1..=k)
                .map(|c| Choice {
                    cut: c,
                    up: up[c - 1],
                    down: down[c - 1],
                    server: a * server[c - 1],
                    model_up: mu[c - 1],
                    model_down: md[c - 1],
                    gap: bits[k - 1] - bits[c - 1],
                })
                .collect();
            (i, choices)
        })
        .collect();
    // Devices whose cheapest round latency is largest fix the max terms early.
    let key = |c: &[Choice]| c.iter().map(|x| x.up + x.down).fold(f64::INFINITY, f64::min);
    devices.sort_by(|x, y| key(&y.1).total_cmp(&key(&x.1)).then(x.0.cmp(&y.0)));
    let mut server_floor = vec![0.0; devices.len() + 1];
    for k in (0..devices.len()).rev() {
        let m = devices[k].1.iter().map(|c| c.server).fold(f64::INFINITY, f64::min);
        server_floor[k] = server_floor[k + 1] + m;
    }
    Level {
        devices,
        server_floor,
        offset: -lambda * problem.denominator(interval, problem.g_cum()[k - 1]),
        a,
        b,
        r_sf,
        r_fs,
    }
}

/// Exact minimizer of `Q(mu) - lambda*P(mu)` over all splits at `interval`.
pub fn inner_milp(problem: &SplitProblem, interval: u64, lambda: f64) -> Result<InnerSolution> {
    if interval == 0 {
        return Err(Error::InvalidArgument("interval must be >= 1".into()));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let l = problem.num_layers();
    let levels: Vec<Level> = (1..=l).map(|k| level(problem, interval, lambda, k)).collect();

    let mut best: Option<(usize, Vec<usize>, f64)> = None;
    for (k, lv) in levels.iter().enumerate() {
        let (pick, v) = lv.greedy();
        if best.as_ref().is_none_or(|b| v < b.2) {
            best = Some((k, pick, v));
        }
    }
    let (mut best_k, pick, v) = best.expect("at least one layer");
    let mut best_cuts = levels[best_k].cuts(&pick);
    let mut best_v = v;

    let mut order: Vec<(usize, f64)> = levels
        .iter()
        .enumerate()
        .map(|(k, lv)| (k, lv.bound(&Partial::EMPTY, 0)))
        .collect();
    order.sort_by(|x, y| x.1.total_cmp(&y.1));
    for (k, root) in order {
        if root >= best_v {
            break;
        }
        let lv = &levels[k];
        let mut incumbent = (Vec::new(), best_v);
        lv.search(0, Partial::EMPTY, &mut Vec::with_capacity(lv.devices.len()), &mut incumbent);
        if incumbent.1 < best_v {
            best_v = incumbent.1;
            best_cuts = lv.cuts(&incumbent.0);
            best_k = k;
        }
    }
    log::trace!("inner solve: level {} value {best_v}", best_k + 1);

    let terms = problem.evaluate(&best_cuts);
    let q = problem.numerator(interval, &terms);
    let p = problem.denominator(interval, terms.aux.t1);
    Ok(InnerSolution {
        split: SplitDecision::new(best_cuts, l)?,
        aux: terms.aux,
        upsilon: q - lambda * p,
        q,
        p,
    })
}
