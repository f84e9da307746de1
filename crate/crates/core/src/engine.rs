//! Slotted simulation and experiment drivers.
//!
//! Each slot: Bernoulli arrivals for every source, medium access, one step
//! of the relay random walk, channel sampling for the scheduled sources,
//! the controller decision, the realized outcome and the queue updates.
//! Packets not delivered in their arrival slot are dropped.
//!
//! Randomness comes from three independent ChaCha streams derived from the
//! seed (arrivals and access, mobility, fading) so that runs differing only
//! in control parameters see the same traffic and mobility.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{sample_links, CellGrid, CellIndex, ChannelError, ChannelState, FadingModel, MobilityModel, NodeId, RelayEligibility};
use crate::controller::{self, ControllerError, ControllerParams, NodeParams, SourceParams, SourceSlot, VirtualQueues};
use crate::phy::{LinkBudget, Mode, Scheme};
use crate::solver::SolverOptions;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("horizon must be at least one slot")]
    EmptyHorizon,
    #[error("at least one source is required")]
    NoSources,
    #[error("burn-in fraction {0} must lie in [0, 1)")]
    BurnIn(f64),
    #[error("relays.initial_cells lists {got} cells for {expected} relays")]
    InitialCells { expected: usize, got: usize },
    #[error("the V list is empty")]
    EmptySweep,
    #[error("link budget needs W > 0 and R > 0 (got W = {bandwidth}, R = {rate})")]
    Budget { bandwidth: f64, rate: f64 },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// Which modes the source may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Every mode, chosen per slot.
    #[default]
    Optimal,
    /// Direct transmission or idle.
    Direct,
    /// Cooperative transmission (optimized allocation) or idle.
    Cooperate,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Direct, Strategy::Cooperate, Strategy::Optimal];

    pub fn allowed_modes(self) -> &'static [Mode] {
        match self {
            Strategy::Optimal => &Mode::ALL,
            Strategy::Direct => &[Mode::Idle, Mode::Direct],
            Strategy::Cooperate => &[Mode::Idle, Mode::Cooperative],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Optimal => "optimal",
            Strategy::Direct => "direct",
            Strategy::Cooperate => "cooperate",
        }
    }
}

/// How sources share the medium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    /// Every source owns an orthogonal channel and may transmit each slot.
    #[default]
    Orthogonal,
    /// One source per slot, cycling in source order.
    TdmaRoundRobin,
    /// One source per slot, drawn uniformly.
    TdmaRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub base_station_cell: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { rows: 3, cols: 3, base_station_cell: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityConfig {
    pub stay_probability: f64,
    #[serde(default)]
    pub eligibility: RelayEligibility,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self { stay_probability: 0.8, eligibility: RelayEligibility::SameCell }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelayConfig {
    pub count: usize,
    #[serde(default = "default_p_avg")]
    pub p_avg: f64,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Starting cells; spread round-robin over the grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_cells: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub cell: usize,
    pub arrival_rate: f64,
    pub reliability: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_p_avg")]
    pub p_avg: f64,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
}

fn default_p_avg() -> f64 {
    1.0
}
fn default_p_max() -> f64 {
    10.0
}
fn default_beta() -> f64 {
    1.0
}
fn default_burn_in() -> f64 {
    0.5
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub slots: u64,
    /// Leading fraction of the horizon excluded from time averages.
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    pub v: f64,
    pub scheme: Scheme,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub access: Access,
    #[serde(default)]
    pub sources_as_relays: bool,
    #[serde(default)]
    pub link: LinkBudget,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub mobility: MobilityConfig,
    #[serde(default)]
    pub fading: FadingModel,
    pub relays: RelayConfig,
    pub sources: Vec<SourceConfig>,
}

impl SimConfig {
    /// Three stationary sources, one per cell of a 1x3 strip, seven mobile
    /// relays, same-codebook DF over orthogonal channels, minimum sum power
    /// at 98% reliability and half a packet per slot.
    pub fn reference() -> Self {
        let source = |cell| SourceConfig {
            cell,
            arrival_rate: 0.5,
            reliability: 0.98,
            alpha: 0.0,
            beta: 1.0,
            p_avg: 1.0,
            p_max: 10.0,
        };
        Self {
            seed: 1,
            slots: 500_000,
            burn_in_fraction: 0.5,
            v: 100.0,
            scheme: Scheme::RegdfOrtho,
            strategy: Strategy::Optimal,
            access: Access::Orthogonal,
            sources_as_relays: false,
            link: LinkBudget { bandwidth: 1.0, rate: 1.0 },
            solver: SolverOptions::default(),
            grid: GridConfig { rows: 1, cols: 3, base_station_cell: 1 },
            mobility: MobilityConfig::default(),
            fading: FadingModel::default(),
            relays: RelayConfig { count: 7, p_avg: 1.0, p_max: 10.0, beta: 1.0, initial_cells: None },
            sources: vec![source(0), source(1), source(2)],
        }
    }

    pub fn source_node(&self, index: usize) -> NodeId {
        NodeId(index as u32)
    }

    pub fn relay_node(&self, index: usize) -> NodeId {
        NodeId((self.sources.len() + index) as u32)
    }

    pub fn node_count(&self) -> usize {
        self.sources.len() + self.relays.count
    }

    pub fn controller_params(&self) -> ControllerParams {
        let mut nodes: Vec<NodeParams> =
            self.sources.iter().map(|s| NodeParams { p_avg: s.p_avg, p_max: s.p_max, beta: s.beta }).collect();
        nodes.extend(
            (0..self.relays.count).map(|_| NodeParams { p_avg: self.relays.p_avg, p_max: self.relays.p_max, beta: self.relays.beta }),
        );
        let sources = self
            .sources
            .iter()
            .enumerate()
            .map(|(i, s)| SourceParams {
                node: self.source_node(i),
                arrival_rate: s.arrival_rate,
                reliability: s.reliability,
                alpha: s.alpha,
            })
            .collect();
        ControllerParams { v: self.v, sources, nodes }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.slots == 0 {
            return Err(EngineError::EmptyHorizon);
        }
        if self.sources.is_empty() {
            return Err(EngineError::NoSources);
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(EngineError::BurnIn(self.burn_in_fraction));
        }
        if !(self.link.bandwidth > 0.0 && self.link.rate > 0.0) {
            return Err(EngineError::Budget { bandwidth: self.link.bandwidth, rate: self.link.rate });
        }
        let grid = self.cell_grid()?;
        for s in &self.sources {
            grid.check(CellIndex(s.cell))?;
        }
        if let Some(cells) = &self.relays.initial_cells {
            if cells.len() != self.relays.count {
                return Err(EngineError::InitialCells { expected: self.relays.count, got: cells.len() });
            }
        }
        self.fading.validate()?;
        self.controller_params().validate()?;
        Ok(())
    }

    fn cell_grid(&self) -> Result<CellGrid, ChannelError> {
        CellGrid::new(self.grid.rows, self.grid.cols, CellIndex(self.grid.base_station_cell))
    }

    fn window_start(&self) -> u64 {
        ((self.slots as f64) * self.burn_in_fraction).floor() as u64
    }
}

/// One source's view of one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotTrace {
    pub slot: u64,
    pub source: usize,
    pub arrival: bool,
    pub scheduled: bool,
    pub mode: Mode,
    pub delivered: bool,
    pub source_power: f64,
    pub relay_power: f64,
    pub relays_used: usize,
    pub relays_available: usize,
    pub cost: f64,
    pub reliability_queue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceMetrics {
    /// Measured arrivals per slot (measurement window).
    pub arrival_rate: f64,
    /// Delivered packets per slot (measurement window).
    pub delivered_rate: f64,
    pub reliability_target: f64,
    pub arrivals: u64,
    pub deliveries: u64,
    pub average_queue: f64,
    pub max_queue: f64,
    pub final_queue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeMetrics {
    pub node: NodeId,
    /// Power per slot (measurement window).
    pub average_power: f64,
    pub p_avg: f64,
    /// Energy over the whole horizon.
    pub energy: f64,
    pub average_queue: f64,
    pub max_queue: f64,
    pub final_queue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub slots: u64,
    pub window_slots: u64,
    pub v: f64,
    pub sources: Vec<SourceMetrics>,
    pub nodes: Vec<NodeMetrics>,
    /// Slots spent in each mode, summed over sources (idle, direct,
    /// multihop, cooperative).
    pub mode_counts: [u64; 4],
    pub trace: Option<Vec<SlotTrace>>,
}

impl Metrics {
    pub fn sum_power(&self) -> f64 {
        self.nodes.iter().map(|n| n.average_power).sum()
    }

    pub fn average_reliability_queue(&self) -> f64 {
        self.sources.iter().map(|s| s.average_queue).sum::<f64>() / self.sources.len() as f64
    }

    pub fn average_power_queue(&self) -> f64 {
        self.nodes.iter().map(|n| n.average_queue).sum::<f64>() / self.nodes.len().max(1) as f64
    }

    /// `sum_s alpha_s r_s - sum_i beta_i e_i` for the given weights.
    pub fn objective(&self, config: &SimConfig) -> f64 {
        let params = config.controller_params();
        let reward: f64 = self.sources.iter().zip(&params.sources).map(|(m, p)| p.alpha * m.delivered_rate).sum();
        let cost: f64 = self.nodes.iter().zip(&params.nodes).map(|(m, p)| p.beta * m.average_power).sum();
        reward - cost
    }

    pub fn max_queue(&self) -> f64 {
        let z = self.sources.iter().map(|s| s.max_queue).fold(0.0, f64::max);
        self.nodes.iter().map(|n| n.max_queue).fold(z, f64::max)
    }

    /// `(sum Phi)/T >= rho (sum A)/T - Z(T)/T` for every source, over the
    /// whole horizon.
    pub fn reliability_identity_gaps(&self) -> Vec<f64> {
        let t = self.slots as f64;
        self.sources
            .iter()
            .map(|s| s.deliveries as f64 / t - (s.reliability_target * s.arrivals as f64 / t - s.final_queue / t))
            .collect()
    }

    /// `P_avg + X(T)/T - (sum P)/T` for every node; must be nonnegative.
    pub fn power_identity_gaps(&self) -> Vec<f64> {
        let t = self.slots as f64;
        self.nodes.iter().map(|n| n.p_avg + n.final_queue / t - n.energy / t).collect()
    }
}

#[derive(Debug, Default, Clone)]
struct Tally {
    arrivals: u64,
    deliveries: u64,
    window_arrivals: u64,
    window_deliveries: u64,
    queue_sum: f64,
    queue_max: f64,
}

#[derive(Debug, Default, Clone)]
struct NodeTally {
    energy: f64,
    window_energy: f64,
    queue_sum: f64,
    queue_max: f64,
}

/// Mutable state of a running simulation.
pub struct World {
    config: SimConfig,
    params: ControllerParams,
    grid: CellGrid,
    mobility: MobilityModel,
    queues: VirtualQueues,
    traffic_rng: ChaCha8Rng,
    mobility_rng: ChaCha8Rng,
    fading_rng: ChaCha8Rng,
    slot: u64,
    window_start: u64,
    sources: Vec<Tally>,
    nodes: Vec<NodeTally>,
    mode_counts: [u64; 4],
    trace: Option<Vec<SlotTrace>>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl World {
    pub fn new(config: SimConfig, record_trace: bool) -> Result<Self, EngineError> {
        config.validate()?;
        let grid = config.cell_grid()?;
        let cells = grid.cell_count();
        let positions: BTreeMap<NodeId, CellIndex> = (0..config.relays.count)
            .map(|r| {
                let cell = match &config.relays.initial_cells {
                    Some(c) => c[r],
                    None => r % cells,
                };
                (config.relay_node(r), CellIndex(cell))
            })
            .collect();
        let mobility = MobilityModel::new(config.mobility.stay_probability, positions, &grid)?;
        let params = config.controller_params();
        let queues = VirtualQueues::zeros(&params);
        Ok(Self {
            traffic_rng: stream(config.seed, 1),
            mobility_rng: stream(config.seed, 2),
            fading_rng: stream(config.seed, 3),
            sources: vec![Tally::default(); config.sources.len()],
            nodes: vec![NodeTally::default(); config.node_count()],
            window_start: config.window_start(),
            trace: record_trace.then(Vec::new),
            mode_counts: [0; 4],
            slot: 0,
            config,
            params,
            grid,
            mobility,
            queues,
        })
    }

    pub fn queues(&self) -> &VirtualQueues {
        &self.queues
    }

    pub fn mobility(&self) -> &MobilityModel {
        &self.mobility
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Advance one slot and return the per-source trace records.
    pub fn run_slot(&mut self) -> Vec<SlotTrace> {
        self.run_slot_observed(&mut |_, _| {})
    }

    /// As [`World::run_slot`], calling `observer(source, state)` before
    /// every decision of a source holding a packet.
    pub fn run_slot_observed(&mut self, observer: &mut dyn FnMut(usize, &ChannelState)) -> Vec<SlotTrace> {
        let cfg = &self.config;
        let n_sources = cfg.sources.len();
        let t = self.slot;

        let arrivals: Vec<bool> = cfg.sources.iter().map(|s| self.traffic_rng.random_bool(s.arrival_rate)).collect();
        let scheduled: Vec<bool> = match cfg.access {
            Access::Orthogonal => vec![true; n_sources],
            Access::TdmaRoundRobin => (0..n_sources).map(|i| i as u64 == t % n_sources as u64).collect(),
            Access::TdmaRandom => {
                let pick = self.traffic_rng.random_range(0..n_sources);
                (0..n_sources).map(|i| i == pick).collect()
            }
        };

        self.mobility.step_in_place(&self.grid, &mut self.mobility_rng);

        let mut node_powers = vec![0.0; cfg.node_count()];
        let mut busy = vec![false; cfg.node_count()];
        for (i, (&a, &s)) in arrivals.iter().zip(&scheduled).enumerate() {
            if a && s {
                busy[i] = true;
            }
        }
        let mut outcomes = vec![SourceSlot::default(); n_sources];
        let mut records = Vec::with_capacity(n_sources);

        for i in 0..n_sources {
            let src_cell = CellIndex(cfg.sources[i].cell);
            let mut record = SlotTrace {
                slot: t,
                source: i,
                arrival: arrivals[i],
                scheduled: scheduled[i],
                mode: Mode::Idle,
                delivered: false,
                source_power: 0.0,
                relay_power: 0.0,
                relays_used: 0,
                relays_available: 0,
                cost: 0.0,
                reliability_queue: 0.0,
            };
            outcomes[i].arrival = arrivals[i];
            if !scheduled[i] {
                records.push(record);
                continue;
            }
            let mut candidates: Vec<(NodeId, bool)> = self
                .mobility
                .eligible_relays(&self.grid, src_cell, cfg.mobility.eligibility, None)
                .into_iter()
                .filter(|(id, _)| !busy[id.index()])
                .collect();
            if cfg.sources_as_relays {
                for (j, other) in cfg.sources.iter().enumerate() {
                    if j == i || busy[j] {
                        continue;
                    }
                    let cell = CellIndex(other.cell);
                    if cell == src_cell {
                        candidates.push((cfg.source_node(j), false));
                    } else if cfg.mobility.eligibility == RelayEligibility::SameOrAdjacent && self.grid.is_adjacent(cell, src_cell) {
                        candidates.push((cfg.source_node(j), true));
                    }
                }
                candidates.sort_by_key(|c| c.0);
            }
            let state = sample_links(t, &candidates, &cfg.fading, &mut self.fading_rng);
            record.relays_available = state.relay_count();
            if arrivals[i] {
                observer(i, &state);
            }

            let decision = controller::decide(
                &self.queues,
                i,
                arrivals[i],
                &state,
                &self.params,
                cfg.scheme,
                cfg.link,
                cfg.solver,
                cfg.strategy.allowed_modes(),
            );
            let action = decision.best.action.expect("idle is always feasible");
            let delivered = action.mode != Mode::Idle && action.delivers(&state, &cfg.link);
            outcomes[i].delivered = delivered;
            let src = cfg.source_node(i);
            node_powers[src.index()] += action.alloc.source;
            for (link, &p) in state.relays.iter().zip(&action.alloc.relays) {
                if p > 0.0 {
                    node_powers[link.id.index()] += p;
                    busy[link.id.index()] = true;
                    record.relays_used += 1;
                    record.relay_power += p;
                }
            }
            record.mode = action.mode;
            record.delivered = delivered;
            record.source_power = action.alloc.source;
            record.cost = decision.best.cost;
            self.mode_counts[action.mode as usize] += 1;
            records.push(record);
        }

        self.queues.update(&outcomes, &node_powers, &self.params);

        let in_window = t >= self.window_start;
        for (i, tally) in self.sources.iter_mut().enumerate() {
            let z = self.queues.reliability[i];
            tally.arrivals += outcomes[i].arrival as u64;
            tally.deliveries += outcomes[i].delivered as u64;
            tally.queue_max = tally.queue_max.max(z);
            if in_window {
                tally.window_arrivals += outcomes[i].arrival as u64;
                tally.window_deliveries += outcomes[i].delivered as u64;
                tally.queue_sum += z;
            }
            records[i].reliability_queue = z;
        }
        for (n, tally) in self.nodes.iter_mut().enumerate() {
            let x = self.queues.power[n];
            tally.energy += node_powers[n];
            tally.queue_max = tally.queue_max.max(x);
            if in_window {
                tally.window_energy += node_powers[n];
                tally.queue_sum += x;
            }
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.extend(records.iter().cloned());
        }
        self.slot += 1;
        records
    }

    pub fn finish(self) -> Metrics {
        let window = (self.slot - self.window_start.min(self.slot)).max(1) as f64;
        let sources = self
            .sources
            .iter()
            .enumerate()
            .map(|(i, t)| SourceMetrics {
                arrival_rate: t.window_arrivals as f64 / window,
                delivered_rate: t.window_deliveries as f64 / window,
                reliability_target: self.params.sources[i].reliability,
                arrivals: t.arrivals,
                deliveries: t.deliveries,
                average_queue: t.queue_sum / window,
                max_queue: t.queue_max,
                final_queue: self.queues.reliability[i],
            })
            .collect();
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(n, t)| NodeMetrics {
                node: NodeId(n as u32),
                average_power: t.window_energy / window,
                p_avg: self.params.nodes[n].p_avg,
                energy: t.energy,
                average_queue: t.queue_sum / window,
                max_queue: t.queue_max,
                final_queue: self.queues.power[n],
            })
            .collect();
        Metrics {
            slots: self.slot,
            window_slots: window as u64,
            v: self.params.v,
            sources,
            nodes,
            mode_counts: self.mode_counts,
            trace: self.trace,
        }
    }
}

/// Run a full horizon.
pub fn run(config: &SimConfig) -> Result<Metrics, EngineError> {
    run_with_trace(config, false)
}

pub fn run_with_trace(config: &SimConfig, trace: bool) -> Result<Metrics, EngineError> {
    let mut world = World::new(config.clone(), trace)?;
    for _ in 0..config.slots {
        world.run_slot();
    }
    Ok(world.finish())
}

/// Independent runs, one per `V`; run `k` uses seed `seed + k`.
pub fn sweep_v(config: &SimConfig, v_values: &[f64]) -> Result<Vec<Metrics>, EngineError> {
    if v_values.is_empty() {
        return Err(EngineError::EmptySweep);
    }
    v_values
        .par_iter()
        .enumerate()
        .map(|(k, &v)| {
            let mut c = config.clone();
            c.v = v;
            c.seed = config.seed.wrapping_add(k as u64);
            run(&c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityVerdict {
    pub feasible: bool,
    /// `r_s - (rho_s lambda_s - tol)` per source.
    pub reliability_margins: Vec<f64>,
    /// `P_avg + tol - e_i` per node.
    pub power_margins: Vec<f64>,
}

/// Time-average constraints judged on measured rates.
pub fn check_feasibility(metrics: &Metrics, tolerance: f64) -> FeasibilityVerdict {
    let reliability_margins: Vec<f64> = metrics
        .sources
        .iter()
        .map(|s| s.delivered_rate - (s.reliability_target * s.arrival_rate - tolerance))
        .collect();
    let power_margins: Vec<f64> = metrics.nodes.iter().map(|n| n.p_avg + tolerance - n.average_power).collect();
    let feasible = reliability_margins.iter().chain(&power_margins).all(|m| *m >= 0.0);
    FeasibilityVerdict { feasible, reliability_margins, power_margins }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityCell {
    pub arrival_rate: f64,
    pub reliability: f64,
    pub strategy: Strategy,
    pub verdict: FeasibilityVerdict,
    pub metrics: Metrics,
}

/// Pure feasibility runs (`alpha = beta = 0`) over rate-reliability pairs
/// and strategies.
pub fn feasibility_matrix(
    config: &SimConfig,
    pairs: &[(f64, f64)],
    strategies: &[Strategy],
    tolerance: f64,
) -> Result<Vec<FeasibilityCell>, EngineError> {
    let jobs: Vec<(f64, f64, Strategy)> =
        pairs.iter().flat_map(|&(l, r)| strategies.iter().map(move |&s| (l, r, s))).collect();
    jobs.par_iter()
        .map(|&(lambda, rho, strategy)| {
            let mut c = config.clone();
            c.strategy = strategy;
            for s in &mut c.sources {
                s.arrival_rate = lambda;
                s.reliability = rho;
                s.alpha = 0.0;
                s.beta = 0.0;
            }
            c.relays.beta = 0.0;
            let metrics = run(&c)?;
            let verdict = check_feasibility(&metrics, tolerance);
            Ok(FeasibilityCell { arrival_rate: lambda, reliability: rho, strategy, verdict, metrics })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        let mut c = SimConfig::reference();
        c.slots = 2_000;
        c.v = 10.0;
        c
    }

    #[test]
    fn zero_arrivals_stay_idle() {
        let mut c = small();
        for s in &mut c.sources {
            s.arrival_rate = 0.0;
        }
        let m = run_with_trace(&c, true).unwrap();
        assert!(m.trace.as_ref().unwrap().iter().all(|r| r.mode == Mode::Idle && !r.delivered));
        assert!(m.sources.iter().all(|s| s.final_queue == 0.0 && s.max_queue == 0.0));
        assert!(m.nodes.iter().all(|n| n.energy == 0.0 && n.max_queue == 0.0));
        assert!(check_feasibility(&m, 0.0).feasible);
    }

    #[test]
    fn same_seed_same_trace() {
        let c = small();
        let a = run_with_trace(&c, true).unwrap();
        let b = run_with_trace(&c, true).unwrap();
        assert_eq!(a, b);
        let mut d = c.clone();
        d.seed += 1;
        assert_ne!(a.trace, run_with_trace(&d, true).unwrap().trace);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = small();
        c.slots = 0;
        assert_eq!(run(&c).unwrap_err(), EngineError::EmptyHorizon);
        let mut c = small();
        c.sources[0].cell = 42;
        assert!(matches!(run(&c), Err(EngineError::Channel(_))));
        assert_eq!(sweep_v(&small(), &[]).unwrap_err(), EngineError::EmptySweep);
    }

    #[test]
    fn tdma_schedules_one_source_per_slot() {
        let mut c = small();
        c.access = Access::TdmaRoundRobin;
        let m = run_with_trace(&c, true).unwrap();
        let trace = m.trace.unwrap();
        for slot in trace.chunks(3) {
            assert_eq!(slot.iter().filter(|r| r.scheduled).count(), 1);
            assert!(slot.iter().filter(|r| !r.scheduled).all(|r| !r.delivered && r.source_power == 0.0));
        }
    }

    #[test]
    fn identities_hold_on_short_runs() {
        for access in [Access::Orthogonal, Access::TdmaRandom] {
            let mut c = small();
            c.access = access;
            c.sources_as_relays = true;
            let m = run(&c).unwrap();
            assert!(m.reliability_identity_gaps().iter().all(|g| *g >= -1e-12));
            assert!(m.power_identity_gaps().iter().all(|g| *g >= -1e-12));
        }
    }

    #[test]
    fn huge_gains_deliver() {
        let mut c = small();
        c.slots = 50;
        c.fading = FadingModel { source_destination_mean: 1e6, same_cell_mean: 1e6, adjacent_cell_mean: 1e6 };
        for s in &mut c.sources {
            s.arrival_rate = 1.0;
        }
        let m = run_with_trace(&c, true).unwrap();
        // Once Z exceeds the tiny power cost every packet goes through.
        let trace = m.trace.unwrap();
        assert!(trace.iter().skip(3 * 5).all(|r| r.delivered));
    }
}
