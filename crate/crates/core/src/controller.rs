//! Virtual queues and the drift-plus-penalty decision rule.
//!
//! The reliability queue of source `s` evolves as
//! `Z(t+1) = max(Z(t) - Phi(t), 0) + rho A(t)` and the power queue of node
//! `i` as `X(t+1) = max(X(t) - P_avg, 0) + P(t)`. Both are updated after the
//! end-of-slot ACK/NACK. Each slot the source picks the action minimizing
//! `(X_s + V beta_s) P_s + sum_i (X_i + V beta_i) P_i - (Z_s + V alpha_s) Phi`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelState, NodeId};
use crate::phy::{LinkBudget, Mode, Scheme};
use crate::solver::{self, CostTable, ModeCost, NodeCost, SolverInput, SolverOptions};

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("node {node}: average power {p_avg} must be positive and not exceed peak power {p_max}")]
    PowerLimits { node: usize, p_avg: f64, p_max: f64 },
    #[error("source {source_index}: {what} = {value} is outside [0, 1]")]
    Probability { source_index: usize, what: &'static str, value: f64 },
    #[error("{what} must be nonnegative (got {value})")]
    Negative { what: &'static str, value: f64 },
    #[error("source {source_index} refers to unknown node {node}")]
    UnknownNode { source_index: usize, node: NodeId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub node: NodeId,
    /// `lambda_s`
    pub arrival_rate: f64,
    /// `rho_s`
    pub reliability: f64,
    /// `alpha_s`
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub p_avg: f64,
    pub p_max: f64,
    pub beta: f64,
}

/// Controller configuration. `nodes` is indexed by `NodeId`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub v: f64,
    pub sources: Vec<SourceParams>,
    pub nodes: Vec<NodeParams>,
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.v >= 0.0) {
            return Err(ControllerError::Negative { what: "V", value: self.v });
        }
        for (node, p) in self.nodes.iter().enumerate() {
            if !(p.p_avg > 0.0 && p.p_avg <= p.p_max) {
                return Err(ControllerError::PowerLimits { node, p_avg: p.p_avg, p_max: p.p_max });
            }
            if !(p.beta >= 0.0) {
                return Err(ControllerError::Negative { what: "beta", value: p.beta });
            }
        }
        for (i, s) in self.sources.iter().enumerate() {
            for (what, value) in [("arrival_rate", s.arrival_rate), ("reliability", s.reliability)] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(ControllerError::Probability { source_index: i, what, value });
                }
            }
            if !(s.alpha >= 0.0) {
                return Err(ControllerError::Negative { what: "alpha", value: s.alpha });
            }
            if s.node.index() >= self.nodes.len() {
                return Err(ControllerError::UnknownNode { source_index: i, node: s.node });
            }
        }
        Ok(())
    }

    pub fn node(&self, id: NodeId) -> &NodeParams {
        &self.nodes[id.index()]
    }
}

/// `Z_s` per source (by source index) and `X_i` per node (by node id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualQueues {
    pub reliability: Vec<f64>,
    pub power: Vec<f64>,
}

/// What happened to one source during a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SourceSlot {
    pub arrival: bool,
    pub delivered: bool,
}

impl VirtualQueues {
    pub fn zeros(params: &ControllerParams) -> Self {
        Self { reliability: vec![0.0; params.sources.len()], power: vec![0.0; params.nodes.len()] }
    }

    /// End-of-slot update. `node_powers` is indexed by node id and holds
    /// zero for nodes that did not transmit.
    pub fn updated(&self, slots: &[SourceSlot], node_powers: &[f64], params: &ControllerParams) -> VirtualQueues {
        let mut next = self.clone();
        next.update(slots, node_powers, params);
        next
    }

    pub fn update(&mut self, slots: &[SourceSlot], node_powers: &[f64], params: &ControllerParams) {
        for ((z, s), p) in self.reliability.iter_mut().zip(slots).zip(&params.sources) {
            let served = if s.delivered { 1.0 } else { 0.0 };
            let arrived = if s.arrival { p.reliability } else { 0.0 };
            *z = (*z - served).max(0.0) + arrived;
        }
        for ((x, power), node) in self.power.iter_mut().zip(node_powers).zip(&params.nodes) {
            *x = (*x - node.p_avg).max(0.0) + power;
        }
    }

    pub fn reward_weight(&self, source_index: usize, params: &ControllerParams) -> f64 {
        self.reliability[source_index] + params.v * params.sources[source_index].alpha
    }

    pub fn cost_weight(&self, node: NodeId, params: &ControllerParams) -> f64 {
        self.power[node.index()] + params.v * params.node(node).beta
    }
}

/// Solver input seen by `source_index` on this slot.
pub fn solver_input<'a>(
    q: &VirtualQueues,
    source_index: usize,
    state: &'a ChannelState,
    params: &ControllerParams,
    scheme: Scheme,
    budget: LinkBudget,
    options: SolverOptions,
) -> SolverInput<'a> {
    let src = params.sources[source_index].node;
    let node_cost = |id: NodeId| NodeCost { weight: q.cost_weight(id, params), p_max: params.node(id).p_max };
    SolverInput {
        state,
        budget,
        scheme,
        source: node_cost(src),
        relays: state.relays.iter().map(|r| node_cost(r.id)).collect(),
        reward: q.reward_weight(source_index, params),
        options,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub best: ModeCost,
    /// Per-mode costs; absent when there was nothing to send.
    pub table: Option<CostTable>,
}

/// Per-slot decision for one source. Without an arrival the source stays
/// idle.
#[allow(clippy::too_many_arguments)]
pub fn decide(
    q: &VirtualQueues,
    source_index: usize,
    arrival: bool,
    state: &ChannelState,
    params: &ControllerParams,
    scheme: Scheme,
    budget: LinkBudget,
    options: SolverOptions,
    allowed: &[Mode],
) -> Decision {
    if !arrival {
        return Decision { best: solver::cost_idle(state.relay_count()), table: None };
    }
    let input = solver_input(q, source_index, state, params, scheme, budget, options);
    let (best, table) = solver::best_action_among(&input, allowed);
    Decision { best, table: Some(table) }
}

/// Constants of the performance bounds for one source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Constants {
    pub b: f64,
    pub v: f64,
    /// `B / V`: utility shortfall bound (`+inf` at `V = 0`).
    pub utility_gap: f64,
    /// `B + V (alpha_s + sum_i beta_i P_i^max)`; divide by the slack
    /// `epsilon` to get the time-average queue bound.
    pub queue_bound_numerator: f64,
}

impl Theorem1Constants {
    pub fn queue_bound(&self, epsilon: f64) -> f64 {
        self.queue_bound_numerator / epsilon
    }
}

/// `B = (1 + lambda^2 rho^2 + sum_i (P_avg_i^2 + P_max_i^2)) / 2`, the sum
/// running over every node of the network.
pub fn theorem1_constants(params: &ControllerParams, source_index: usize) -> Theorem1Constants {
    let s = &params.sources[source_index];
    let lr = s.arrival_rate * s.reliability;
    let powers: f64 = params.nodes.iter().map(|n| n.p_avg * n.p_avg + n.p_max * n.p_max).sum();
    let b = (1.0 + lr * lr + powers) / 2.0;
    let reward_scale = s.alpha + params.nodes.iter().map(|n| n.beta * n.p_max).sum::<f64>();
    Theorem1Constants {
        b,
        v: params.v,
        utility_gap: if params.v > 0.0 { b / params.v } else { f64::INFINITY },
        queue_bound_numerator: b + params.v * reward_scale,
    }
}
