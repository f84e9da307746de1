//! Brute-force references for the per-slot solver and the second stage of
//! the unknown-channel program.
//!
//! Nothing here calls into `solver`: feasibility is judged by
//! [`phy::outcome`] alone and powers are found by exhaustive grids, a
//! bisection on the last free power (success is monotone in every power)
//! and a local zoom around the best grid points.

use rand::Rng;
use thiserror::Error;

use crate::dp::{DpProblem, Outcome};
use crate::phy::{self, Mode, PowerAllocation};
use crate::solver::{ControlAction, ModeCost, SolverInput};

pub const MAX_GRID_POINTS: f64 = 1e7;
pub const MAX_RELAYS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("the oracle handles at most {MAX_RELAYS} relays (got {0})")]
    TooManyRelays(usize),
    #[error("grid of {0:.3e} points exceeds the limit")]
    GridTooLarge(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Grid step as a fraction of each variable's peak power.
    pub step_fraction: f64,
    /// Zoom rounds around the best grid points (window shrinks 5x a round).
    pub refine_rounds: usize,
    /// Grid points kept for zooming.
    pub keep: usize,
    pub bisections: usize,
}

impl GridSpec {
    /// `1e-3 P^max` with at most two free powers, `1e-2` beyond.
    pub fn for_free_variables(n: usize) -> Self {
        let step_fraction = if n <= 2 { 1e-3 } else { 1e-2 };
        Self { step_fraction, refine_rounds: 6, keep: 8, bisections: 56 }
    }

    /// Grid only, no zoom.
    pub fn coarse(step_fraction: f64) -> Self {
        Self { step_fraction, refine_rounds: 0, keep: 1, bisections: 56 }
    }

    fn axis(&self, p_max: f64) -> Vec<f64> {
        let n = (1.0 / self.step_fraction).round().max(1.0) as usize;
        (0..=n).map(|k| p_max * k as f64 / n as f64).collect()
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    cost: f64,
    alloc: PowerAllocation,
}

struct Search<'s, 'a> {
    input: &'s SolverInput<'a>,
    mode: Mode,
    /// Relays the mode may power.
    pool: Vec<usize>,
    spec: GridSpec,
    best: Vec<Candidate>,
}

impl<'s, 'a> Search<'s, 'a> {
    fn new(input: &'s SolverInput<'a>, mode: Mode, pool: Vec<usize>, spec: GridSpec) -> Self {
        Self { input, mode, pool, spec, best: Vec::new() }
    }

    /// Worst kept cost; a candidate must beat it to enter the list.
    fn bar(&self) -> f64 {
        if self.best.len() < self.spec.keep.max(1) {
            f64::INFINITY
        } else {
            self.best.last().map_or(f64::INFINITY, |c| c.cost)
        }
    }

    fn offer(&mut self, cost: f64, alloc: PowerAllocation) {
        if cost >= self.bar() || self.best.iter().any(|c| c.alloc == alloc) {
            return;
        }
        let at = self.best.partition_point(|c| c.cost <= cost);
        self.best.insert(at, Candidate { cost, alloc });
        self.best.truncate(self.spec.keep.max(1));
    }

    fn delivers(&self, alloc: &PowerAllocation) -> bool {
        phy::outcome(self.mode, self.input.scheme, alloc, self.input.state, &self.input.budget).unwrap_or(false)
    }

    fn cost(&self, alloc: &PowerAllocation) -> f64 {
        self.input.source.weight * alloc.source
            + self.input.relays.iter().zip(&alloc.relays).map(|(c, p)| c.weight * p).sum::<f64>()
            - self.input.reward
    }

    /// Relays of the pool that can contribute at source power `p_s`.
    fn active(&self, p_s: f64) -> Vec<usize> {
        let decode_forward = self.mode == Mode::Multihop || self.input.scheme.is_decode_forward();
        if !decode_forward {
            return self.pool.clone();
        }
        let kappa = match self.mode {
            Mode::Multihop => 2.0,
            _ => match self.input.scheme.kappa(self.input.state.relay_count()) {
                Ok(k) => k,
                Err(_) => return Vec::new(),
            },
        };
        let decoded = phy::decode_set_with_kappa(p_s, self.input.state, &self.input.budget, kappa);
        self.pool.iter().copied().filter(|&j| decoded.contains(&self.input.state.relays[j].id)).collect()
    }

    /// Smallest value of variable `var` (`None` = source) in `[0, hi]` that
    /// delivers, other powers as in `alloc`.
    fn line_search(&self, alloc: &mut PowerAllocation, var: Option<usize>, hi: f64) -> bool {
        let set = |a: &mut PowerAllocation, v: f64| match var {
            None => a.source = v,
            Some(j) => a.relays[j] = v,
        };
        set(alloc, hi);
        if hi < 0.0 || !self.delivers(alloc) {
            return false;
        }
        set(alloc, 0.0);
        if self.delivers(alloc) {
            return true;
        }
        let (mut lo, mut up) = (0.0, hi);
        for _ in 0..self.spec.bisections {
            let mid = 0.5 * (lo + up);
            set(alloc, mid);
            if self.delivers(alloc) {
                up = mid;
            } else {
                lo = mid;
            }
        }
        set(alloc, up);
        true
    }

    /// Cheapest completion of (`p_s`, fixed relay powers): relays that
    /// cannot contribute are switched off and the last active relay is
    /// found by line search.
    fn complete(&mut self, p_s: f64, fixed: &[f64]) {
        let m = self.input.state.relay_count();
        let active = self.active(p_s);
        let mut alloc = PowerAllocation { source: p_s, relays: vec![0.0; m] };
        let Some((&last, rest)) = active.split_last() else {
            if self.delivers(&alloc) {
                let c = self.cost(&alloc);
                self.offer(c, alloc);
            }
            return;
        };
        for &j in rest {
            alloc.relays[j] = fixed[j];
        }
        let partial = self.cost(&alloc);
        let w = self.input.relays[last].weight;
        let mut hi = self.input.relays[last].p_max;
        let bar = self.bar();
        if w > 0.0 && bar.is_finite() {
            hi = hi.min((bar - partial) / w);
        }
        if self.line_search(&mut alloc, Some(last), hi) {
            let c = self.cost(&alloc);
            self.offer(c, alloc);
        }
    }

    fn source_axis(&self) -> Vec<f64> {
        let p_max = self.input.source.p_max;
        let mut axis = self.spec.axis(p_max);
        if self.mode == Mode::Multihop || self.input.scheme.is_decode_forward() {
            let kappa = if self.mode == Mode::Multihop { Ok(2.0) } else { self.input.scheme.kappa(self.input.state.relay_count()) };
            if let Ok(kappa) = kappa {
                let theta = self.input.budget.snr_threshold(kappa);
                for &j in &self.pool {
                    let h = self.input.state.relays[j].source_relay;
                    if h > 0.0 && theta / h <= p_max {
                        axis.push(theta / h);
                    }
                }
            }
        }
        axis.sort_by(f64::total_cmp);
        axis.dedup();
        axis
    }

    fn enumerate(&mut self, p_s: f64, active: &[usize], depth: usize, fixed: &mut Vec<f64>, partial: f64, axes: &[Vec<f64>]) {
        if depth + 1 >= active.len() {
            self.complete(p_s, fixed);
            return;
        }
        let j = active[depth];
        let w = self.input.relays[j].weight;
        for &v in &axes[j] {
            let next = partial + w * v;
            if next - self.input.reward >= self.bar() {
                break;
            }
            fixed[j] = v;
            self.enumerate(p_s, active, depth + 1, fixed, next, axes);
        }
        fixed[j] = 0.0;
    }

    fn run(mut self) -> Result<Option<Candidate>, OracleError> {
        let m = self.input.state.relay_count();
        let source_axis = self.source_axis();
        let axes: Vec<Vec<f64>> = self.input.relays.iter().map(|c| self.spec.axis(c.p_max)).collect();
        let enumerated = self.pool.len().saturating_sub(1) as i32;
        let points = source_axis.len() as f64 * (self.spec.axis(1.0).len() as f64).powi(enumerated);
        if points > MAX_GRID_POINTS {
            return Err(OracleError::GridTooLarge(points));
        }

        // Source alone, exactly.
        let mut alone = PowerAllocation { source: 0.0, relays: vec![0.0; m] };
        if self.line_search(&mut alone, None, self.input.source.p_max) {
            let c = self.cost(&alone);
            self.offer(c, alone);
        }

        let mut fixed = vec![0.0; m];
        for &p_s in &source_axis {
            let partial = self.input.source.weight * p_s;
            if partial - self.input.reward >= self.bar() {
                break;
            }
            let active = self.active(p_s);
            self.enumerate(p_s, &active, 0, &mut fixed, partial, &axes);
        }

        let step = self.spec.step_fraction;
        let seeds = self.best.clone();
        for seed in seeds {
            let mut center = seed.alloc.clone();
            let mut half = step;
            for _ in 0..self.spec.refine_rounds {
                let active = self.active(center.source);
                let dims: Vec<Option<usize>> =
                    std::iter::once(None).chain(active.iter().rev().skip(1).map(|&j| Some(j))).collect();
                let offsets: Vec<f64> = (0..=10).map(|k| half * (0.2 * k as f64 - 1.0)).collect();
                let total = offsets.len().pow(dims.len() as u32);
                for flat in 0..total {
                    let mut r = flat;
                    let mut p_s = center.source;
                    let mut fixed = center.relays.clone();
                    for d in &dims {
                        let o = offsets[r % offsets.len()];
                        r /= offsets.len();
                        match *d {
                            None => p_s = (center.source + o * self.input.source.p_max).clamp(0.0, self.input.source.p_max),
                            Some(j) => fixed[j] = (center.relays[j] + o * self.input.relays[j].p_max).clamp(0.0, self.input.relays[j].p_max),
                        }
                    }
                    self.complete(p_s, &fixed);
                }
                center = self.best[0].alloc.clone();
                half /= 5.0;
            }
        }
        Ok(self.best.into_iter().next())
    }
}

fn decode_target(input: &SolverInput<'_>, mode: Mode, alloc: &PowerAllocation) -> Vec<crate::channel::NodeId> {
    let kappa = match mode {
        Mode::Multihop => 2.0,
        Mode::Cooperative if input.scheme.is_decode_forward() => match input.scheme.kappa(input.state.relay_count()) {
            Ok(k) => k,
            Err(_) => return Vec::new(),
        },
        _ => return Vec::new(),
    };
    phy::decode_set_with_kappa(alloc.source, input.state, &input.budget, kappa)
}

fn to_mode_cost(input: &SolverInput<'_>, mode: Mode, found: Option<Candidate>) -> ModeCost {
    match found {
        None => ModeCost::infeasible(),
        Some(c) => {
            let scheme = (mode == Mode::Cooperative).then_some(input.scheme);
            let decode_target = decode_target(input, mode, &c.alloc);
            ModeCost { cost: c.cost, action: Some(ControlAction { mode, scheme, alloc: c.alloc, decode_target }) }
        }
    }
}

/// Free powers of a mode: the source plus every relay it may power.
pub fn free_variables(mode: Mode, relay_count: usize) -> usize {
    match mode {
        Mode::Idle => 0,
        Mode::Direct => 1,
        Mode::Multihop => 2.min(1 + relay_count),
        Mode::Cooperative => 1 + relay_count,
    }
}

/// Minimum cost of one mode by grid search. The cooperative mode of an
/// orthogonal scheme without relays is direct transmission.
pub fn grid_mode_cost(input: &SolverInput<'_>, mode: Mode, spec: Option<GridSpec>) -> Result<ModeCost, OracleError> {
    let m = input.state.relay_count();
    if m > MAX_RELAYS {
        return Err(OracleError::TooManyRelays(m));
    }
    let spec = spec.unwrap_or_else(|| GridSpec::for_free_variables(free_variables(mode, m)));
    match mode {
        Mode::Idle => Ok(ModeCost {
            cost: 0.0,
            action: Some(ControlAction { mode, scheme: None, alloc: PowerAllocation::zero(m), decode_target: Vec::new() }),
        }),
        Mode::Direct => {
            let found = Search::new(input, Mode::Direct, Vec::new(), spec).run()?;
            Ok(to_mode_cost(input, Mode::Direct, found))
        }
        Mode::Multihop => {
            let mut best = ModeCost::infeasible();
            for j in 0..m {
                let found = Search::new(input, Mode::Multihop, vec![j], spec).run()?;
                let c = to_mode_cost(input, Mode::Multihop, found);
                if c.cost < best.cost {
                    best = c;
                }
            }
            Ok(best)
        }
        Mode::Cooperative if m == 0 && input.scheme.is_orthogonal() => grid_mode_cost(input, Mode::Direct, Some(spec)),
        Mode::Cooperative => {
            let found = Search::new(input, Mode::Cooperative, (0..m).collect(), spec).run()?;
            Ok(to_mode_cost(input, Mode::Cooperative, found))
        }
    }
}

/// Minimum over all modes, ties broken in mode order.
pub fn grid_best_action(input: &SolverInput<'_>, spec: Option<GridSpec>) -> Result<ModeCost, OracleError> {
    let mut best = grid_mode_cost(input, Mode::Idle, spec)?;
    for mode in [Mode::Direct, Mode::Multihop, Mode::Cooperative] {
        let c = grid_mode_cost(input, mode, spec)?;
        if c.cost < best.cost {
            best = c;
        }
    }
    Ok(best)
}

/// Cheapest of `samples` random actions (mode and powers uniform in the
/// box) that deliver; idle is always included.
pub fn random_action_bound<R: Rng + ?Sized>(input: &SolverInput<'_>, samples: usize, rng: &mut R) -> f64 {
    let m = input.state.relay_count();
    let modes: &[Mode] = if m == 0 { &[Mode::Direct, Mode::Cooperative] } else { &Mode::ALL[1..] };
    let mut best = 0.0f64;
    for _ in 0..samples {
        let mode = modes[rng.random_range(0..modes.len())];
        let mut alloc = PowerAllocation { source: rng.random_range(0.0..=input.source.p_max), relays: vec![0.0; m] };
        match mode {
            Mode::Direct => {}
            Mode::Multihop => {
                let j = rng.random_range(0..m);
                alloc.relays[j] = rng.random_range(0.0..=input.relays[j].p_max);
            }
            _ => {
                for (p, c) in alloc.relays.iter_mut().zip(&input.relays) {
                    *p = rng.random_range(0.0..=c.p_max);
                }
            }
        }
        let (mode, scheme) = if mode == Mode::Cooperative && m == 0 && input.scheme.is_orthogonal() {
            (Mode::Direct, input.scheme)
        } else {
            (mode, input.scheme)
        };
        if phy::outcome(mode, scheme, &alloc, input.state, &input.budget).unwrap_or(false) {
            let cost = input.source.weight * alloc.source
                + input.relays.iter().zip(&alloc.relays).map(|(c, p)| c.weight * p).sum::<f64>()
                - input.reward;
            best = best.min(cost);
        }
    }
    best
}

/// Exhaustive minimum of the second-stage objective over a
/// `points`-per-relay grid of the decoded relays' powers.
pub fn grid_second_stage(problem: &DpProblem, outcome: Outcome, points: usize) -> Result<(f64, Vec<f64>), OracleError> {
    let m = problem.relays.len();
    if m > MAX_RELAYS {
        return Err(OracleError::TooManyRelays(m));
    }
    let active: Vec<usize> = (0..m).filter(|&i| outcome.decodes(i)).collect();
    let n = points.max(2);
    let total = (n as f64).powi(active.len() as i32);
    if total > MAX_GRID_POINTS {
        return Err(OracleError::GridTooLarge(total));
    }
    let mut p = vec![0.0; m];
    let mut best = (problem.second_stage_objective(&p, outcome), p.clone());
    for flat in 0..total as usize {
        let mut r = flat;
        for &i in &active {
            p[i] = problem.relays[i].p_max * (r % n) as f64 / (n - 1) as f64;
            r /= n;
        }
        let v = problem.second_stage_objective(&p, outcome);
        if v < best.0 {
            best = (v, p.clone());
        }
    }
    Ok(best)
}
