//! Cell-partitioned mobility and Rayleigh block fading.
//!
//! Nodes live on a rectangular grid of cells. Relays perform a lazy random
//! walk over 4-neighbor cells (no wraparound); sources are pinned. Within a
//! slot every link gain is fixed, and gains are redrawn independently each
//! slot from an exponential law on `|h|^2` (Rayleigh amplitude).

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("grid must have at least one row and one column (got {rows}x{cols})")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("cell {cell} lies outside a {rows}x{cols} grid")]
    CellOutOfRange { cell: usize, rows: usize, cols: usize },
    #[error("stay probability {0} is not in [0, 1]")]
    BadStayProbability(f64),
    #[error("fading mean {0} must be positive and finite")]
    BadFadingMean(f64),
}

/// Network-wide node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Row-major cell index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellIndex(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    rows: usize,
    cols: usize,
    base_station_cell: CellIndex,
}

impl CellGrid {
    pub fn new(rows: usize, cols: usize, base_station_cell: CellIndex) -> Result<Self, ChannelError> {
        if rows == 0 || cols == 0 {
            return Err(ChannelError::EmptyGrid { rows, cols });
        }
        let grid = Self { rows, cols, base_station_cell };
        grid.check(base_station_cell)?;
        Ok(grid)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn base_station_cell(&self) -> CellIndex {
        self.base_station_cell
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell.0 < self.cell_count()
    }

    pub fn check(&self, cell: CellIndex) -> Result<(), ChannelError> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(ChannelError::CellOutOfRange { cell: cell.0, rows: self.rows, cols: self.cols })
        }
    }

    /// 4-neighbors in the fixed order up, down, left, right.
    pub fn neighbors(&self, cell: CellIndex) -> Vec<CellIndex> {
        let (r, c) = (cell.0 / self.cols, cell.0 % self.cols);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(CellIndex(cell.0 - self.cols));
        }
        if r + 1 < self.rows {
            out.push(CellIndex(cell.0 + self.cols));
        }
        if c > 0 {
            out.push(CellIndex(cell.0 - 1));
        }
        if c + 1 < self.cols {
            out.push(CellIndex(cell.0 + 1));
        }
        out
    }

    pub fn is_adjacent(&self, a: CellIndex, b: CellIndex) -> bool {
        self.neighbors(a).contains(&b)
    }
}

/// Which relays a source may cooperate with in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayEligibility {
    #[default]
    SameCell,
    SameOrAdjacent,
}

/// Lazy random walk of the mobile nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityModel {
    stay_probability: f64,
    positions: BTreeMap<NodeId, CellIndex>,
}

impl MobilityModel {
    pub fn new(
        stay_probability: f64,
        positions: BTreeMap<NodeId, CellIndex>,
        grid: &CellGrid,
    ) -> Result<Self, ChannelError> {
        if !(0.0..=1.0).contains(&stay_probability) {
            return Err(ChannelError::BadStayProbability(stay_probability));
        }
        for cell in positions.values() {
            grid.check(*cell)?;
        }
        Ok(Self { stay_probability, positions })
    }

    pub fn stay_probability(&self) -> f64 {
        self.stay_probability
    }

    pub fn positions(&self) -> &BTreeMap<NodeId, CellIndex> {
        &self.positions
    }

    pub fn position(&self, node: NodeId) -> Option<CellIndex> {
        self.positions.get(&node).copied()
    }

    /// One slot of the walk. Each node independently stays with the stay
    /// probability and otherwise moves to a uniformly chosen neighbor.
    /// Nodes are visited in id order so a seeded source gives a fixed path.
    pub fn step<R: Rng + ?Sized>(&self, grid: &CellGrid, rng: &mut R) -> MobilityModel {
        let mut next = self.clone();
        next.step_in_place(grid, rng);
        next
    }

    pub fn step_in_place<R: Rng + ?Sized>(&mut self, grid: &CellGrid, rng: &mut R) {
        for cell in self.positions.values_mut() {
            let stay = rng.random_bool(self.stay_probability);
            if stay {
                continue;
            }
            let options = grid.neighbors(*cell);
            if options.is_empty() {
                continue;
            }
            *cell = options[rng.random_range(0..options.len())];
        }
    }

    /// Relays located in `source_cell`, excluding `exclude`.
    pub fn relay_set(&self, source_cell: CellIndex, exclude: Option<NodeId>) -> Vec<NodeId> {
        self.positions
            .iter()
            .filter(|(id, cell)| **cell == source_cell && Some(**id) != exclude)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Eligible relays with a flag telling whether they sit in an adjacent
    /// (rather than the same) cell.
    pub fn eligible_relays(
        &self,
        grid: &CellGrid,
        source_cell: CellIndex,
        eligibility: RelayEligibility,
        exclude: Option<NodeId>,
    ) -> Vec<(NodeId, bool)> {
        self.positions
            .iter()
            .filter(|(id, _)| Some(**id) != exclude)
            .filter_map(|(id, cell)| {
                if *cell == source_cell {
                    Some((*id, false))
                } else if eligibility == RelayEligibility::SameOrAdjacent && grid.is_adjacent(*cell, source_cell) {
                    Some((*id, true))
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Mean `|h|^2` per link class, noise-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingModel {
    #[serde(default = "one")]
    pub source_destination_mean: f64,
    #[serde(default = "one")]
    pub same_cell_mean: f64,
    #[serde(default = "one")]
    pub adjacent_cell_mean: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for FadingModel {
    fn default() -> Self {
        Self { source_destination_mean: 1.0, same_cell_mean: 1.0, adjacent_cell_mean: 1.0 }
    }
}

impl FadingModel {
    pub fn validate(&self) -> Result<(), ChannelError> {
        for m in [self.source_destination_mean, self.same_cell_mean, self.adjacent_cell_mean] {
            if !(m > 0.0 && m.is_finite()) {
                return Err(ChannelError::BadFadingMean(m));
            }
        }
        Ok(())
    }

    /// Draw one exponential `|h|^2` sample with the given mean.
    pub fn draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
        let unit: f64 = Exp1.sample(rng);
        unit * mean
    }
}

/// Gains of the links between one source, one relay and the destination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayLink {
    pub id: NodeId,
    /// `|h_si|^2`
    pub source_relay: f64,
    /// `|h_id|^2`
    pub relay_destination: f64,
}

/// Channel state observed by one source on one slot. Relays are kept in
/// ascending id order; allocation vectors elsewhere are indexed the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    #[serde(default)]
    pub slot: u64,
    /// `|h_sd|^2`
    pub source_destination: f64,
    #[serde(default)]
    pub relays: Vec<RelayLink>,
}

impl ChannelState {
    pub fn new(slot: u64, source_destination: f64, mut relays: Vec<RelayLink>) -> Self {
        relays.sort_by_key(|r| r.id);
        relays.dedup_by_key(|r| r.id);
        Self { slot, source_destination, relays }
    }

    pub fn available_relays(&self) -> Vec<NodeId> {
        self.relays.iter().map(|r| r.id).collect()
    }

    pub fn relay_count(&self) -> usize {
        self.relays.len()
    }

    pub fn relay_index(&self, id: NodeId) -> Option<usize> {
        self.relays.binary_search_by_key(&id, |r| r.id).ok()
    }
}

/// Sample the channel state of a source from the current relay positions.
///
/// Draw order is the source-destination gain first, then for every eligible
/// relay in id order its source-relay and relay-destination gains.
#[allow(clippy::too_many_arguments)]
pub fn sample_channel_state<R: Rng + ?Sized>(
    slot: u64,
    source: NodeId,
    source_cell: CellIndex,
    mobility: &MobilityModel,
    grid: &CellGrid,
    eligibility: RelayEligibility,
    fading: &FadingModel,
    rng: &mut R,
) -> ChannelState {
    let relays = mobility.eligible_relays(grid, source_cell, eligibility, Some(source));
    sample_links(slot, &relays, fading, rng)
}

/// Draw gains for an explicit relay list (`(id, adjacent)` pairs).
pub fn sample_links<R: Rng + ?Sized>(
    slot: u64,
    relays: &[(NodeId, bool)],
    fading: &FadingModel,
    rng: &mut R,
) -> ChannelState {
    let sd = FadingModel::draw(fading.source_destination_mean, rng);
    let links = relays
        .iter()
        .map(|&(id, adjacent)| {
            let mean = if adjacent { fading.adjacent_cell_mean } else { fading.same_cell_mean };
            RelayLink {
                id,
                source_relay: FadingModel::draw(mean, rng),
                relay_destination: FadingModel::draw(mean, rng),
            }
        })
        .collect();
    ChannelState::new(slot, sd, links)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid3() -> CellGrid {
        CellGrid::new(3, 3, CellIndex(4)).unwrap()
    }

    fn walkers(n: u32, cell: usize) -> BTreeMap<NodeId, CellIndex> {
        (0..n).map(|i| (NodeId(i), CellIndex(cell))).collect()
    }

    #[test]
    fn neighbors_do_not_wrap() {
        let g = grid3();
        assert_eq!(g.neighbors(CellIndex(0)), vec![CellIndex(3), CellIndex(1)]);
        assert_eq!(g.neighbors(CellIndex(4)).len(), 4);
        assert_eq!(g.neighbors(CellIndex(5)), vec![CellIndex(2), CellIndex(8), CellIndex(4)]);
        assert!(!g.is_adjacent(CellIndex(2), CellIndex(3)));
    }

    #[test]
    fn rejects_bad_grid_and_cells() {
        assert!(CellGrid::new(0, 3, CellIndex(0)).is_err());
        assert!(CellGrid::new(2, 2, CellIndex(4)).is_err());
        assert!(MobilityModel::new(0.8, walkers(1, 9), &grid3()).is_err());
        assert!(MobilityModel::new(1.2, walkers(1, 0), &grid3()).is_err());
    }

    #[test]
    fn stay_probability_one_never_moves() {
        let g = grid3();
        let m = MobilityModel::new(1.0, walkers(5, 2), &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cur = m.clone();
        for _ in 0..100 {
            cur = cur.step(&g, &mut rng);
        }
        assert_eq!(cur, m);
    }

    #[test]
    fn single_cell_grid_forces_stay() {
        let g = CellGrid::new(1, 1, CellIndex(0)).unwrap();
        let m = MobilityModel::new(0.8, walkers(3, 0), &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(m.step(&g, &mut rng), m);
    }

    #[test]
    fn empirical_stay_fraction_matches() {
        let g = grid3();
        let mut m = MobilityModel::new(0.8, walkers(1, 4), &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let steps = 100_000;
        let mut stays = 0usize;
        for _ in 0..steps {
            let before = m.position(NodeId(0)).unwrap();
            m.step_in_place(&g, &mut rng);
            let after = m.position(NodeId(0)).unwrap();
            if after == before {
                stays += 1;
            } else {
                assert!(g.is_adjacent(before, after));
            }
        }
        let frac = stays as f64 / steps as f64;
        assert!((frac - 0.8).abs() <= 0.01, "stay fraction {frac}");
    }

    #[test]
    fn relay_set_matches_scan() {
        let g = grid3();
        let positions: BTreeMap<_, _> =
            [(0, 1), (1, 4), (2, 1), (3, 7), (4, 1), (5, 0), (6, 1)].iter().map(|&(i, c)| (NodeId(i), CellIndex(c))).collect();
        let m = MobilityModel::new(0.8, positions.clone(), &g).unwrap();
        for cell in 0..9 {
            let expected: Vec<NodeId> =
                positions.iter().filter(|(_, c)| c.0 == cell).map(|(i, _)| *i).collect();
            assert_eq!(m.relay_set(CellIndex(cell), None), expected);
        }
        assert!(m.relay_set(CellIndex(8), None).is_empty());
        assert_eq!(m.relay_set(CellIndex(1), Some(NodeId(2))), vec![NodeId(0), NodeId(4), NodeId(6)]);

        let all = MobilityModel::new(0.8, walkers(7, 3), &g).unwrap();
        assert_eq!(all.relay_set(CellIndex(3), None).len(), 7);

        let adj = m.eligible_relays(&g, CellIndex(4), RelayEligibility::SameOrAdjacent, None);
        assert_eq!(
            adj,
            vec![(NodeId(0), true), (NodeId(1), false), (NodeId(2), true), (NodeId(3), true), (NodeId(4), true), (NodeId(6), true)]
        );
    }

    #[test]
    fn empty_relay_set_keeps_only_direct_link() {
        let g = grid3();
        let m = MobilityModel::new(0.8, walkers(4, 0), &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = sample_channel_state(0, NodeId(100), CellIndex(8), &m, &g, RelayEligibility::SameCell, &FadingModel::default(), &mut rng);
        assert!(s.relays.is_empty());
        assert!(s.source_destination >= 0.0);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let g = grid3();
        let m = MobilityModel::new(0.8, walkers(4, 0), &g).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_channel_state(7, NodeId(100), CellIndex(0), &m, &g, RelayEligibility::SameCell, &FadingModel::default(), &mut rng)
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn sample_mean_and_tail_match_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean = 2.5;
        let n = 1_000_000;
        let tau = 3.0;
        let mut sum = 0.0;
        let mut above = 0usize;
        for _ in 0..n {
            let x = FadingModel::draw(mean, &mut rng);
            assert!(x >= 0.0);
            sum += x;
            if x >= tau {
                above += 1;
            }
        }
        let sample_mean = sum / n as f64;
        assert!((sample_mean / mean - 1.0).abs() < 0.01);
        let p = (-tau / mean).exp();
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((above as f64 / n as f64 - p).abs() <= 3.0 * sigma);
    }
}
