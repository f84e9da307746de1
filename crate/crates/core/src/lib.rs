//! Opportunistic cooperation for delay-limited traffic.
//!
//! Every slot a source with a fresh packet chooses between direct
//! transmission, two-hop relaying, cooperative relaying and staying idle.
//! The choice minimizes a drift-plus-penalty metric driven by a virtual
//! reliability queue and one virtual power queue per node, so that time
//! average reliability and power targets are met without knowledge of the
//! traffic, channel or mobility statistics.
//!
//! Module map:
//!
//! * [`channel`]: cell grid, relay random walk, Rayleigh block fading.
//! * [`phy`]: mutual information and success indicator per scheme.
//! * [`solver`]: per-slot minimum-cost action for each transmission mode.
//! * [`controller`]: virtual queues and the per-slot decision rule.
//! * [`dp`]: two-stage dynamic program when only fading statistics are known.
//! * [`engine`]: slotted simulation and experiment drivers.
//! * [`oracle`]: brute-force references for the solver and the dynamic program.
//! * [`cli`]: configuration files, experiment orchestration, CSV output.

pub mod channel;
pub mod cli;
pub mod controller;
pub mod dp;
pub mod engine;
pub mod oracle;
pub mod phy;
pub mod solver;

pub use channel::{CellGrid, CellIndex, ChannelState, FadingModel, MobilityModel, NodeId, RelayLink};
pub use controller::{ControllerParams, VirtualQueues};
pub use phy::{LinkBudget, Mode, PowerAllocation, Scheme};
pub use solver::{ControlAction, ModeCost, SolverInput};
