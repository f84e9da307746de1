//! Per-slot minimum-cost action for each transmission mode.
//!
//! Given queue-derived weights, every mode's cost is
//! `w_s P_s + sum_i w_i P_i - reward` for an allocation that delivers the
//! packet, or `+inf` when no allocation within the peak limits does. Idle
//! always costs zero.
//!
//! Decode-and-forward schemes are split into one subproblem per prefix
//! `U_k` of the relays sorted by source-relay gain. With the same codebook
//! each subproblem is a covering LP solved greedily; with independent
//! codebooks it is a water-filling problem solved by bisection on the water
//! level. Amplify-and-forward fixes the source power on a grid and solves
//! the remaining convex problem by bisection on its multiplier.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelState, NodeId};
use crate::phy::{self, LinkBudget, Mode, PowerAllocation, Scheme, BOUNDARY_SLACK};

/// Stop bisecting once the constraint residual is this small.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;
pub const MAX_BISECTIONS: usize = 200;

/// Cost weight (`X_i + V beta_i`) and peak power of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeCost {
    pub weight: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Number of uniformly spaced source powers tried by amplify-and-forward.
    pub af_grid_points: usize,
    /// Zoom in around the best grid point (and the feasibility edge).
    pub af_refine: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { af_grid_points: 100, af_refine: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverInput<'a> {
    pub state: &'a ChannelState,
    pub budget: LinkBudget,
    pub scheme: Scheme,
    pub source: NodeCost,
    /// One entry per `state.relays`, same order.
    pub relays: Vec<NodeCost>,
    /// `Z_s + V alpha_s`
    pub reward: f64,
    pub options: SolverOptions,
}

impl<'a> SolverInput<'a> {
    /// Unit weights, common peak power, zero reward.
    pub fn uniform(state: &'a ChannelState, budget: LinkBudget, scheme: Scheme, weight: f64, p_max: f64) -> Self {
        Self {
            state,
            budget,
            scheme,
            source: NodeCost { weight, p_max },
            relays: vec![NodeCost { weight, p_max }; state.relay_count()],
            reward: 0.0,
            options: SolverOptions::default(),
        }
    }

    fn relay_count(&self) -> usize {
        self.state.relay_count()
    }

    fn power_cost(&self, alloc: &PowerAllocation) -> f64 {
        self.source.weight * alloc.source
            + self.relays.iter().zip(&alloc.relays).map(|(c, p)| c.weight * p).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub mode: Mode,
    pub scheme: Option<Scheme>,
    pub alloc: PowerAllocation,
    /// Relays the source power is sized to reach (decode-and-forward and
    /// two-hop); empty otherwise.
    pub decode_target: Vec<NodeId>,
}

impl ControlAction {
    pub fn idle(relay_count: usize) -> Self {
        Self { mode: Mode::Idle, scheme: None, alloc: PowerAllocation::zero(relay_count), decode_target: Vec::new() }
    }

    /// Success indicator of this action on `state`.
    pub fn delivers(&self, state: &ChannelState, budget: &LinkBudget) -> bool {
        let scheme = self.scheme.unwrap_or(Scheme::RegdfOrtho);
        phy::outcome(self.mode, scheme, &self.alloc, state, budget).unwrap_or(false)
    }

    pub fn within_limits(&self, input: &SolverInput<'_>) -> bool {
        let ok = |p: f64, max: f64| (0.0..=max).contains(&p);
        ok(self.alloc.source, input.source.p_max)
            && self.alloc.relays.len() == input.relays.len()
            && self.alloc.relays.iter().zip(&input.relays).all(|(p, c)| ok(*p, c.p_max))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCost {
    pub cost: f64,
    pub action: Option<ControlAction>,
}

impl ModeCost {
    pub fn infeasible() -> Self {
        Self { cost: f64::INFINITY, action: None }
    }

    pub fn is_feasible(&self) -> bool {
        self.cost.is_finite()
    }

    fn from_alloc(input: &SolverInput<'_>, mode: Mode, alloc: PowerAllocation, decode_target: Vec<NodeId>) -> Self {
        let cost = input.power_cost(&alloc) - input.reward;
        let scheme = (mode == Mode::Cooperative).then_some(input.scheme);
        Self { cost, action: Some(ControlAction { mode, scheme, alloc, decode_target }) }
    }

    /// Keep `other` only if strictly cheaper, so earlier candidates win ties.
    fn keep_min(&mut self, other: ModeCost) {
        if other.cost < self.cost {
            *self = other;
        }
    }
}

/// Minimum cost per mode for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub idle: ModeCost,
    pub direct: ModeCost,
    pub multihop: ModeCost,
    pub cooperative: ModeCost,
}

impl CostTable {
    pub fn get(&self, mode: Mode) -> &ModeCost {
        match mode {
            Mode::Idle => &self.idle,
            Mode::Direct => &self.direct,
            Mode::Multihop => &self.multihop,
            Mode::Cooperative => &self.cooperative,
        }
    }
}

pub fn cost_idle(relay_count: usize) -> ModeCost {
    ModeCost { cost: 0.0, action: Some(ControlAction::idle(relay_count)) }
}

pub fn cost_direct(input: &SolverInput<'_>) -> ModeCost {
    let p = input.budget.direct_power(input.state.source_destination);
    if p > input.source.p_max {
        return ModeCost::infeasible();
    }
    let alloc = PowerAllocation { source: p, relays: vec![0.0; input.relay_count()] };
    ModeCost::from_alloc(input, Mode::Direct, alloc, Vec::new())
}

/// Relay indices sorted by decreasing `|h_si|^2`, ties by ascending id.
pub fn order_relays(state: &ChannelState) -> Vec<usize> {
    let mut order: Vec<usize> = (0..state.relay_count()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&state.relays[a], &state.relays[b]);
        rb.source_relay.total_cmp(&ra.source_relay).then(ra.id.cmp(&rb.id))
    });
    order
}

/// Smallest source power that lets every relay in `prefix` decode.
pub fn min_decode_power(prefix: &[usize], state: &ChannelState, budget: &LinkBudget, kappa: f64) -> f64 {
    if prefix.is_empty() {
        return 0.0;
    }
    let weakest = prefix.iter().map(|&j| state.relays[j].source_relay).fold(f64::INFINITY, f64::min);
    let theta = budget.snr_threshold(kappa);
    if theta == 0.0 {
        0.0
    } else if weakest > 0.0 {
        theta / weakest
    } else {
        f64::INFINITY
    }
}

/// One decision variable of a covering or water-filling subproblem.
#[derive(Debug, Clone, Copy)]
struct Var {
    gain: f64,
    weight: f64,
    lo: f64,
    hi: f64,
}

fn efficiency(v: &Var) -> f64 {
    if v.gain <= 0.0 {
        0.0
    } else if v.weight <= 0.0 {
        f64::INFINITY
    } else {
        v.gain / v.weight
    }
}

/// Greedy solution of `min sum w_j p_j` s.t. `sum g_j p_j >= target`,
/// `lo_j <= p_j <= hi_j`. An optional pool caps the total of the variables
/// flagged `pooled`.
fn greedy_cover(vars: &[Var], target: f64, pool: Option<(&[bool], f64)>) -> Option<Vec<f64>> {
    let mut p: Vec<f64> = vars.iter().map(|v| v.lo).collect();
    let mut residual = target - vars.iter().map(|v| v.gain * v.lo).sum::<f64>();
    if residual <= target * BOUNDARY_SLACK {
        return Some(p);
    }
    let mut order: Vec<usize> = (0..vars.len()).filter(|&j| vars[j].gain > 0.0).collect();
    order.sort_by(|&a, &b| efficiency(&vars[b]).total_cmp(&efficiency(&vars[a])).then(a.cmp(&b)));
    let mut pool_left = pool.map(|(_, cap)| cap);
    for j in order {
        let v = vars[j];
        let mut room = v.hi - v.lo;
        let pooled = pool.map(|(flags, _)| flags[j]).unwrap_or(false);
        if pooled {
            room = room.min(pool_left.unwrap_or(f64::INFINITY));
        }
        if room <= 0.0 {
            continue;
        }
        let need = residual / v.gain;
        let add = need.min(room);
        p[j] += add;
        if pooled {
            if let Some(left) = pool_left.as_mut() {
                *left -= add;
            }
        }
        if need <= room {
            return Some(p);
        }
        residual -= add * v.gain;
        if residual <= target * BOUNDARY_SLACK {
            return Some(p);
        }
    }
    None
}

fn kappa_or_direct(input: &SolverInput<'_>) -> Option<f64> {
    input.scheme.kappa(input.relay_count()).ok()
}

/// Covering-LP subproblem for decode set `prefix` with an explicit split
/// `kappa` and source-destination gain (zeroed for the two-hop mode).
fn regdf_prefix(input: &SolverInput<'_>, prefix: &[usize], kappa: f64, source_destination: f64, mode: Mode) -> ModeCost {
    let floor = min_decode_power(prefix, input.state, &input.budget, kappa);
    if floor > input.source.p_max {
        return ModeCost::infeasible();
    }
    let theta = input.budget.snr_threshold(kappa);
    let mut vars = Vec::with_capacity(prefix.len() + 1);
    vars.push(Var { gain: source_destination, weight: input.source.weight, lo: floor, hi: input.source.p_max });
    for &j in prefix {
        vars.push(Var {
            gain: input.state.relays[j].relay_destination,
            weight: input.relays[j].weight,
            lo: 0.0,
            hi: input.relays[j].p_max,
        });
    }
    let Some(p) = greedy_cover(&vars, theta, None) else {
        return ModeCost::infeasible();
    };
    let mut alloc = PowerAllocation { source: p[0], relays: vec![0.0; input.relay_count()] };
    for (k, &j) in prefix.iter().enumerate() {
        alloc.relays[j] = p[k + 1];
    }
    let target = prefix.iter().map(|&j| input.state.relays[j].id).collect();
    ModeCost::from_alloc(input, mode, alloc, target)
}

/// Same-codebook decode-and-forward subproblem for the first `k` relays of
/// `order_relays`.
pub fn solve_regdf_subproblem(k: usize, input: &SolverInput<'_>) -> ModeCost {
    let Some(kappa) = kappa_or_direct(input) else {
        return if k == 0 { cost_direct(input) } else { ModeCost::infeasible() };
    };
    let order = order_relays(input.state);
    regdf_prefix(input, &order[..k.min(order.len())], kappa, input.state.source_destination, Mode::Cooperative)
}

pub fn cost_regdf(input: &SolverInput<'_>) -> ModeCost {
    let Some(kappa) = kappa_or_direct(input) else {
        return cost_direct(input);
    };
    let order = order_relays(input.state);
    let mut best = ModeCost::infeasible();
    for k in 0..=order.len() {
        best.keep_min(regdf_prefix(input, &order[..k], kappa, input.state.source_destination, Mode::Cooperative));
    }
    best
}

/// Same-codebook subproblem when the relays share one total power budget
/// instead of individual peaks. Greedy filling then never uses more than
/// one relay.
pub fn solve_regdf_sum_power(k: usize, input: &SolverInput<'_>, relay_total: f64) -> ModeCost {
    let Some(kappa) = kappa_or_direct(input) else {
        return ModeCost::infeasible();
    };
    let order = order_relays(input.state);
    let prefix = &order[..k.min(order.len())];
    let floor = min_decode_power(prefix, input.state, &input.budget, kappa);
    if floor > input.source.p_max {
        return ModeCost::infeasible();
    }
    let mut vars = vec![Var {
        gain: input.state.source_destination,
        weight: input.source.weight,
        lo: floor,
        hi: input.source.p_max,
    }];
    let mut pooled = vec![false];
    for &j in prefix {
        vars.push(Var {
            gain: input.state.relays[j].relay_destination,
            weight: input.relays[j].weight,
            lo: 0.0,
            hi: f64::INFINITY,
        });
        pooled.push(true);
    }
    let theta = input.budget.snr_threshold(kappa);
    let Some(p) = greedy_cover(&vars, theta, Some((&pooled, relay_total))) else {
        return ModeCost::infeasible();
    };
    let mut alloc = PowerAllocation { source: p[0], relays: vec![0.0; input.relay_count()] };
    for (k, &j) in prefix.iter().enumerate() {
        alloc.relays[j] = p[k + 1];
    }
    let target = prefix.iter().map(|&j| input.state.relays[j].id).collect();
    ModeCost::from_alloc(input, Mode::Cooperative, alloc, target)
}

/// Water level allocation `clamp(mu / w - W / (kappa g), lo, hi)`.
fn water_level(v: &Var, mu: f64, noise: f64) -> f64 {
    if v.gain <= 0.0 || mu <= 0.0 {
        return v.lo;
    }
    if v.weight <= 0.0 {
        return v.hi;
    }
    (mu / v.weight - noise / v.gain).clamp(v.lo, v.hi)
}

/// Bisect `level` on `[0, inf)` until `residual(level) >= 0` and is within
/// tolerance. `residual` must be nondecreasing. Returns the feasible end.
fn bisect_level(residual: impl Fn(f64) -> f64, scale: f64) -> Option<f64> {
    let tol = RESIDUAL_TOLERANCE * scale.max(1.0);
    let mut hi = 1.0;
    let mut r_hi = residual(hi);
    let mut doublings = 0;
    while r_hi < 0.0 {
        hi *= 2.0;
        r_hi = residual(hi);
        doublings += 1;
        if doublings > 2100 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..MAX_BISECTIONS {
        if r_hi <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = residual(mid);
        if r >= 0.0 {
            hi = mid;
            r_hi = r;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Independent-codebook decode-and-forward subproblem for the first `k`
/// relays of `order_relays`.
pub fn solve_nonregdf_subproblem(k: usize, input: &SolverInput<'_>) -> ModeCost {
    let Some(kappa) = kappa_or_direct(input) else {
        return if k == 0 { cost_direct(input) } else { ModeCost::infeasible() };
    };
    let order = order_relays(input.state);
    nonregdf_prefix(input, &order[..k.min(order.len())], kappa)
}

fn nonregdf_prefix(input: &SolverInput<'_>, prefix: &[usize], kappa: f64) -> ModeCost {
    let floor = min_decode_power(prefix, input.state, &input.budget, kappa);
    if floor > input.source.p_max {
        return ModeCost::infeasible();
    }
    let budget = input.budget;
    let noise = budget.bandwidth / kappa;
    let mut vars = Vec::with_capacity(prefix.len() + 1);
    vars.push(Var { gain: input.state.source_destination, weight: input.source.weight, lo: floor, hi: input.source.p_max });
    for &j in prefix {
        vars.push(Var {
            gain: input.state.relays[j].relay_destination,
            weight: input.relays[j].weight,
            lo: 0.0,
            hi: input.relays[j].p_max,
        });
    }
    let mi = |p: &dyn Fn(&Var) -> f64| vars.iter().map(|v| budget.capacity(kappa, p(v) * v.gain)).sum::<f64>();
    let rate = budget.rate;
    let at_lo = mi(&|v| v.lo);
    let powers = if budget.meets_rate(at_lo) {
        vars.iter().map(|v| v.lo).collect::<Vec<_>>()
    } else {
        if !budget.meets_rate(mi(&|v| v.hi)) {
            return ModeCost::infeasible();
        }
        let Some(mu) = bisect_level(|mu| mi(&|v| water_level(v, mu, noise)) - rate, rate) else {
            return ModeCost::infeasible();
        };
        vars.iter().map(|v| water_level(v, mu, noise)).collect()
    };
    let mut alloc = PowerAllocation { source: powers[0], relays: vec![0.0; input.relay_count()] };
    for (k, &j) in prefix.iter().enumerate() {
        alloc.relays[j] = powers[k + 1];
    }
    let target = prefix.iter().map(|&j| input.state.relays[j].id).collect();
    ModeCost::from_alloc(input, Mode::Cooperative, alloc, target)
}

pub fn cost_nonregdf(input: &SolverInput<'_>) -> ModeCost {
    let Some(kappa) = kappa_or_direct(input) else {
        return cost_direct(input);
    };
    let order = order_relays(input.state);
    let mut best = ModeCost::infeasible();
    for k in 0..=order.len() {
        best.keep_min(nonregdf_prefix(input, &order[..k], kappa));
    }
    best
}

/// Amplify-and-forward relay powers for a fixed source power.
pub fn solve_af_inner(p_s: f64, input: &SolverInput<'_>) -> ModeCost {
    let Some(kappa) = kappa_or_direct(input) else {
        return ModeCost::infeasible();
    };
    af_inner(p_s, input, kappa)
}

fn af_inner(p_s: f64, input: &SolverInput<'_>, kappa: f64) -> ModeCost {
    if !(p_s > 0.0 && p_s <= input.source.p_max) {
        return ModeCost::infeasible();
    }
    let state = input.state;
    let noise = input.budget.bandwidth / kappa;
    let theta = input.budget.snr_threshold(kappa);
    // Constraint: sum_i a_i / (b_i + d_i P_i) <= theta'.
    let a: Vec<f64> = state.relays.iter().map(|r| p_s * r.source_relay * (p_s * r.source_relay + noise)).collect();
    let b: Vec<f64> = state.relays.iter().map(|r| p_s * r.source_relay + noise).collect();
    let d: Vec<f64> = state.relays.iter().map(|r| r.relay_destination).collect();
    let theta_p = p_s * (state.source_destination + state.relays.iter().map(|r| r.source_relay).sum::<f64>()) - theta;
    let lhs = |p: &[f64]| (0..a.len()).map(|i| a[i] / (b[i] + d[i] * p[i])).sum::<f64>();
    let slack = theta * BOUNDARY_SLACK;
    let m = state.relay_count();
    let mut relays = vec![0.0; m];
    if p_s * state.source_destination < theta - slack {
        let hi: Vec<f64> = input.relays.iter().map(|c| c.p_max).collect();
        if theta_p <= 0.0 || lhs(&hi) > theta_p + slack {
            return ModeCost::infeasible();
        }
        let level = |nu: f64, i: usize| -> f64 {
            if a[i] <= 0.0 || d[i] <= 0.0 || nu <= 0.0 {
                return 0.0;
            }
            let w = input.relays[i].weight;
            if w <= 0.0 {
                return hi[i];
            }
            ((nu * a[i] / (w * d[i])).sqrt() - b[i] / d[i]).clamp(0.0, hi[i])
        };
        let residual = |nu: f64| {
            let p: Vec<f64> = (0..m).map(|i| level(nu, i)).collect();
            theta_p - lhs(&p)
        };
        let Some(nu) = bisect_level(residual, theta) else {
            return ModeCost::infeasible();
        };
        for (i, p) in relays.iter_mut().enumerate() {
            *p = level(nu, i);
        }
    }
    let alloc = PowerAllocation { source: p_s, relays };
    ModeCost::from_alloc(input, Mode::Cooperative, alloc, Vec::new())
}

/// Uniform, endpoint-inclusive source power grid.
pub fn af_source_grid(p_max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![p_max],
        n => (0..n).map(|k| p_max * k as f64 / (n - 1) as f64).collect(),
    }
}

pub fn cost_af(input: &SolverInput<'_>) -> ModeCost {
    let Some(kappa) = kappa_or_direct(input) else {
        return cost_direct(input);
    };
    let grid = af_source_grid(input.source.p_max, input.options.af_grid_points);
    let mut best = ModeCost::infeasible();
    let mut best_p = f64::NAN;
    let mut first_feasible = None;
    for (k, &p) in grid.iter().enumerate() {
        let c = af_inner(p, input, kappa);
        if c.is_feasible() && first_feasible.is_none() {
            first_feasible = Some(k);
        }
        if c.cost < best.cost {
            best = c;
            best_p = p;
        }
    }
    if !input.options.af_refine || !best.is_feasible() || grid.len() < 2 {
        return best;
    }
    let step = grid[1] - grid[0];
    // Feasibility edge: the mutual information grows with the source power,
    // so the feasible powers form an interval ending at the peak.
    if let Some(k) = first_feasible.filter(|&k| k > 0) {
        let (mut lo, mut hi) = (grid[k - 1], grid[k]);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if af_inner(mid, input, kappa).is_feasible() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let c = af_inner(hi, input, kappa);
        if c.cost < best.cost {
            best = c;
            best_p = hi;
        }
    }
    let mut half = step;
    for _ in 0..4 {
        let lo = (best_p - half).max(0.0);
        let hi = (best_p + half).min(input.source.p_max);
        for k in 0..=20 {
            let p = lo + (hi - lo) * k as f64 / 20.0;
            let c = af_inner(p, input, kappa);
            if c.cost < best.cost {
                best = c;
                best_p = p;
            }
        }
        half /= 10.0;
    }
    best
}

/// Two-hop relaying: same-codebook subproblem with one relay, a two-piece
/// slot and the source-destination link ignored.
pub fn cost_multihop(input: &SolverInput<'_>) -> ModeCost {
    let mut best = ModeCost::infeasible();
    for j in 0..input.relay_count() {
        best.keep_min(regdf_prefix(input, &[j], 2.0, 0.0, Mode::Multihop));
    }
    best
}

/// Cooperative-mode cost under the input's scheme. Orthogonal schemes with
/// no available relay fall back to direct transmission over the full slot.
pub fn cost_cooperative(input: &SolverInput<'_>) -> ModeCost {
    match input.scheme {
        Scheme::RegdfOrtho | Scheme::DfDstc => cost_regdf(input),
        Scheme::NonregdfOrtho => cost_nonregdf(input),
        Scheme::AfOrtho | Scheme::AfDstc => cost_af(input),
    }
}

pub fn cost_table(input: &SolverInput<'_>) -> CostTable {
    CostTable {
        idle: cost_idle(input.relay_count()),
        direct: cost_direct(input),
        multihop: cost_multihop(input),
        cooperative: cost_cooperative(input),
    }
}

/// Cheapest action over all modes; ties go to idle, then direct, then
/// two-hop, then cooperative.
pub fn best_action(input: &SolverInput<'_>) -> (ModeCost, CostTable) {
    best_action_among(input, &Mode::ALL)
}

/// Cheapest action restricted to `allowed` (idle is always allowed).
pub fn best_action_among(input: &SolverInput<'_>, allowed: &[Mode]) -> (ModeCost, CostTable) {
    let m = input.relay_count();
    let skip = |mode: Mode| if allowed.contains(&mode) { None } else { Some(ModeCost::infeasible()) };
    let table = CostTable {
        idle: cost_idle(m),
        direct: skip(Mode::Direct).unwrap_or_else(|| cost_direct(input)),
        multihop: skip(Mode::Multihop).unwrap_or_else(|| cost_multihop(input)),
        cooperative: skip(Mode::Cooperative).unwrap_or_else(|| cost_cooperative(input)),
    };
    let mut best = table.idle.clone();
    for mode in [Mode::Direct, Mode::Multihop, Mode::Cooperative] {
        best.keep_min(table.get(mode).clone());
    }
    (best, table)
}
