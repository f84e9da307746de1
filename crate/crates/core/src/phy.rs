//! Mutual information and the per-slot success indicator.
//!
//! All gains are noise-normalized `|h|^2`, powers are in noise units, the
//! bandwidth `W` is in symbols per slot and the rate `R` in bits per slot.
//! Logarithms are base 2.
//!
//! A scheme that splits the slot into `kappa` equal pieces sees the
//! prefactor `W / kappa` and the SNR scaling `kappa / W`. Orthogonal schemes
//! use `kappa = m` (the number of available relays), DSTC schemes and the
//! two-hop mode use `kappa = 2`, and direct transmission uses `kappa = 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelState, NodeId};

/// Relative slack applied to every "meets the target" comparison so that a
/// constraint met with equality survives floating-point rounding.
pub const BOUNDARY_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PhyError {
    #[error("{0} needs at least one relay; use direct mode when none is available")]
    NoRelays(Scheme),
    #[error("allocation has {got} relay powers but the channel state lists {expected} relays")]
    AllocationLength { expected: usize, got: usize },
    #[error("relay {0} is not available in this slot")]
    UnknownRelay(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Decode-and-forward, same codebook, orthogonal mini-slots.
    RegdfOrtho,
    /// Decode-and-forward, independent codebooks, orthogonal mini-slots.
    NonregdfOrtho,
    /// Amplify-and-forward, orthogonal mini-slots.
    AfOrtho,
    /// Decode-and-forward with a distributed space-time code.
    DfDstc,
    /// Amplify-and-forward with a distributed space-time code.
    AfDstc,
}

impl Scheme {
    pub const ALL: [Scheme; 5] =
        [Scheme::RegdfOrtho, Scheme::NonregdfOrtho, Scheme::AfOrtho, Scheme::DfDstc, Scheme::AfDstc];

    pub fn is_orthogonal(self) -> bool {
        matches!(self, Scheme::RegdfOrtho | Scheme::NonregdfOrtho | Scheme::AfOrtho)
    }

    pub fn is_decode_forward(self) -> bool {
        matches!(self, Scheme::RegdfOrtho | Scheme::NonregdfOrtho | Scheme::DfDstc)
    }

    pub fn is_amplify_forward(self) -> bool {
        !self.is_decode_forward()
    }

    /// Slot split used by the cooperative mode under this scheme.
    pub fn kappa(self, relay_count: usize) -> Result<f64, PhyError> {
        if self.is_orthogonal() {
            if relay_count == 0 {
                return Err(PhyError::NoRelays(self));
            }
            Ok(relay_count as f64)
        } else {
            Ok(2.0)
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::RegdfOrtho => "regdf_ortho",
            Scheme::NonregdfOrtho => "nonregdf_ortho",
            Scheme::AfOrtho => "af_ortho",
            Scheme::DfDstc => "df_dstc",
            Scheme::AfDstc => "af_dstc",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        Scheme::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Transmission mode. The derived order is the tie-break order used when
/// two modes have the same cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Idle,
    Direct,
    Multihop,
    Cooperative,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Idle, Mode::Direct, Mode::Multihop, Mode::Cooperative];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Idle => "idle",
            Mode::Direct => "direct",
            Mode::Multihop => "multihop",
            Mode::Cooperative => "cooperative",
        }
    }
}

/// Powers chosen for one slot. `relays[j]` belongs to `state.relays[j]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub source: f64,
    pub relays: Vec<f64>,
}

impl PowerAllocation {
    pub fn zero(relay_count: usize) -> Self {
        Self { source: 0.0, relays: vec![0.0; relay_count] }
    }

    pub fn total(&self) -> f64 {
        self.source + self.relays.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBudget {
    /// `W`, symbols per slot.
    pub bandwidth: f64,
    /// `R`, bits per packet (one packet per slot).
    pub rate: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self { bandwidth: 1.0, rate: 1.0 }
    }
}

impl LinkBudget {
    /// Combined received SNR a `kappa`-split link needs to carry `R`:
    /// `(W / kappa) (2^(R kappa / W) - 1)`.
    pub fn snr_threshold(&self, kappa: f64) -> f64 {
        self.snr_threshold_for(kappa, self.rate)
    }

    /// SNR at which a `kappa`-split link reaches mutual information `mi`.
    pub fn snr_threshold_for(&self, kappa: f64, mi: f64) -> f64 {
        let w = self.bandwidth;
        (w / kappa) * ((mi * kappa / w).exp2() - 1.0)
    }

    /// `(W / kappa) log2(1 + kappa * snr / W)`.
    pub fn capacity(&self, kappa: f64, snr: f64) -> f64 {
        let w = self.bandwidth;
        (w / kappa) * (kappa * snr / w).ln_1p() / std::f64::consts::LN_2
    }

    /// Source power for successful direct transmission over the full slot.
    pub fn direct_power(&self, source_destination: f64) -> f64 {
        let theta = self.snr_threshold(1.0);
        if theta == 0.0 {
            0.0
        } else if source_destination > 0.0 {
            theta / source_destination
        } else {
            f64::INFINITY
        }
    }

    pub fn meets_rate(&self, mi: f64) -> bool {
        mi >= self.rate - BOUNDARY_SLACK * self.rate.max(1.0)
    }
}

/// `true` when `power * gain` reaches `threshold` up to rounding.
pub fn reaches(power: f64, gain: f64, threshold: f64) -> bool {
    power * gain >= threshold * (1.0 - BOUNDARY_SLACK)
}

/// Effective SNR a relay adds under amplify-and-forward.
pub fn af_psi(source_power: f64, relay_power: f64, source_relay: f64, relay_destination: f64, noise: f64) -> f64 {
    let num = relay_power * source_relay * relay_destination;
    if num == 0.0 {
        return 0.0;
    }
    num / (source_power * source_relay + relay_power * relay_destination + noise)
}

fn cooperative_kappa(mode: Mode, scheme: Scheme, state: &ChannelState) -> Result<f64, PhyError> {
    match mode {
        Mode::Multihop => Ok(2.0),
        Mode::Direct | Mode::Idle => Ok(1.0),
        Mode::Cooperative => scheme.kappa(state.relay_count()),
    }
}

/// Relays whose first-phase mutual information reaches `R` at source
/// power `p_s`, i.e. `|h_si|^2 >= theta / p_s`.
pub fn decode_set(p_s: f64, state: &ChannelState, budget: &LinkBudget, scheme: Scheme) -> Vec<NodeId> {
    match scheme.kappa(state.relay_count()) {
        Ok(kappa) => decode_set_with_kappa(p_s, state, budget, kappa),
        Err(_) => Vec::new(),
    }
}

pub fn decode_set_with_kappa(p_s: f64, state: &ChannelState, budget: &LinkBudget, kappa: f64) -> Vec<NodeId> {
    if p_s <= 0.0 {
        return Vec::new();
    }
    let theta = budget.snr_threshold(kappa);
    state.relays.iter().filter(|r| reaches(p_s, r.source_relay, theta)).map(|r| r.id).collect()
}

/// Total mutual information at the destination.
///
/// `decode_set` is honoured by the decode-and-forward schemes and the
/// two-hop mode (relays outside it contribute nothing); amplify-and-forward
/// ignores it.
pub fn mutual_information(
    mode: Mode,
    scheme: Scheme,
    alloc: &PowerAllocation,
    decode_set: &[NodeId],
    state: &ChannelState,
    budget: &LinkBudget,
) -> Result<f64, PhyError> {
    if alloc.relays.len() != state.relay_count() {
        return Err(PhyError::AllocationLength { expected: state.relay_count(), got: alloc.relays.len() });
    }
    for id in decode_set {
        if state.relay_index(*id).is_none() {
            return Err(PhyError::UnknownRelay(*id));
        }
    }
    let decoded = |j: usize| decode_set.contains(&state.relays[j].id);
    let p_s = alloc.source;
    let mi = match mode {
        Mode::Idle => 0.0,
        Mode::Direct => budget.capacity(1.0, p_s * state.source_destination),
        Mode::Multihop => {
            let snr: f64 = (0..state.relay_count())
                .filter(|&j| decoded(j))
                .map(|j| alloc.relays[j] * state.relays[j].relay_destination)
                .sum();
            budget.capacity(2.0, snr)
        }
        Mode::Cooperative => {
            let kappa = cooperative_kappa(mode, scheme, state)?;
            match scheme {
                Scheme::RegdfOrtho | Scheme::DfDstc => {
                    let relay: f64 = (0..state.relay_count())
                        .filter(|&j| decoded(j))
                        .map(|j| alloc.relays[j] * state.relays[j].relay_destination)
                        .sum();
                    budget.capacity(kappa, p_s * state.source_destination + relay)
                }
                Scheme::NonregdfOrtho => {
                    let mut mi = budget.capacity(kappa, p_s * state.source_destination);
                    for j in (0..state.relay_count()).filter(|&j| decoded(j)) {
                        mi += budget.capacity(kappa, alloc.relays[j] * state.relays[j].relay_destination);
                    }
                    mi
                }
                Scheme::AfOrtho | Scheme::AfDstc => {
                    let noise = budget.bandwidth / kappa;
                    let psi: f64 = state
                        .relays
                        .iter()
                        .zip(&alloc.relays)
                        .map(|(r, &p)| af_psi(p_s, p, r.source_relay, r.relay_destination, noise))
                        .sum();
                    budget.capacity(kappa, p_s * (state.source_destination + psi))
                }
            }
        }
    };
    Ok(mi)
}

/// Success indicator of an action under known channels. The decode set is
/// induced by the source power for decode-and-forward schemes and for the
/// two-hop mode.
pub fn outcome(
    mode: Mode,
    scheme: Scheme,
    alloc: &PowerAllocation,
    state: &ChannelState,
    budget: &LinkBudget,
) -> Result<bool, PhyError> {
    if mode == Mode::Idle {
        return Ok(false);
    }
    let decoded = match mode {
        Mode::Multihop => decode_set_with_kappa(alloc.source, state, budget, 2.0),
        Mode::Cooperative if scheme.is_decode_forward() => {
            let kappa = scheme.kappa(state.relay_count())?;
            decode_set_with_kappa(alloc.source, state, budget, kappa)
        }
        _ => Vec::new(),
    };
    let mi = mutual_information(mode, scheme, alloc, &decoded, state, budget)?;
    Ok(budget.meets_rate(mi))
}
