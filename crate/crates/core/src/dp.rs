//! Two-stage program for unknown channels with known statistics.
//!
//! The source picks `P_s` without seeing the gains. The first phase then
//! reveals an outcome `omega`: which relays decoded and a quantized level of
//! the mutual information the destination already holds. Knowing `omega`,
//! the relays pick their powers. Stage values:
//!
//! ```text
//! J1(P_s, omega) = min_P  sum_i w_i P_i - r g(P, P_s, omega)
//! J0(P_s)        = w_s P_s + sum_omega f(P_s, omega) J1(P_s, omega)
//! ```
//!
//! `f` and `g` follow from exponential (Rayleigh power) gains. A degenerate
//! law with known gains is also supported, which recovers the known-channel
//! problem when the bins are fine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::FadingModel;
use crate::phy::{reaches, LinkBudget, Scheme};
use crate::solver::NodeCost;

/// Largest outcome space accepted by [`enumerate_outcomes`].
pub const MAX_OUTCOMES: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("outcome space with {relays} relays and {bins} bins is too large")]
    SpaceTooLarge { relays: usize, bins: usize },
    #[error("at least one destination bin is required")]
    NoBins,
    #[error("{0:?} is not supported under unknown channels")]
    Unsupported(Scheme),
    #[error("statistics describe {stats} relays but the outcome space has {space}")]
    RelayMismatch { stats: usize, space: usize },
    #[error("the orthogonal scheme needs at least one relay")]
    NoRelays,
}

/// One first-phase outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Outcome {
    /// Bit `i` set when relay `i` decoded.
    pub decoded: u32,
    /// Destination mutual-information bin.
    pub bin: usize,
}

impl Outcome {
    pub fn decodes(&self, relay: usize) -> bool {
        self.decoded >> relay & 1 == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpace {
    pub relay_count: usize,
    /// Lower edges of the destination bins; the last bin is `[R, inf)`.
    pub bin_edges: Vec<f64>,
    pub outcomes: Vec<Outcome>,
}

impl OutcomeSpace {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn bins(&self) -> usize {
        self.bin_edges.len()
    }

    pub fn index(&self, outcome: Outcome) -> usize {
        outcome.decoded as usize * self.bins() + outcome.bin
    }
}

/// `2^m` decode subsets times `bins` destination levels. With one bin every
/// level collapses to zero; otherwise the edges are `0, R/(b-1), ..., R`.
pub fn enumerate_outcomes(relay_count: usize, bins: usize, rate: f64) -> Result<OutcomeSpace, DpError> {
    if bins == 0 {
        return Err(DpError::NoBins);
    }
    let too_large = DpError::SpaceTooLarge { relays: relay_count, bins };
    if relay_count >= 31 {
        return Err(too_large);
    }
    let subsets = 1usize << relay_count;
    if subsets.checked_mul(bins).is_none_or(|n| n > MAX_OUTCOMES) {
        return Err(too_large);
    }
    let bin_edges = if bins == 1 {
        vec![0.0]
    } else {
        (0..bins).map(|k| rate * k as f64 / (bins - 1) as f64).collect()
    };
    let outcomes =
        (0..subsets).flat_map(|mask| (0..bins).map(move |bin| Outcome { decoded: mask as u32, bin })).collect();
    Ok(OutcomeSpace { relay_count, bin_edges, outcomes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainLaw {
    /// Exponential power gains with the given means.
    #[default]
    Exponential,
    /// The "means" are the realized gains.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayStatistics {
    pub source_relay: f64,
    pub relay_destination: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStatistics {
    pub law: GainLaw,
    pub source_destination: f64,
    pub relays: Vec<RelayStatistics>,
}

impl LinkStatistics {
    /// `relay_count` same-cell relays under `fading`.
    pub fn from_fading(fading: &FadingModel, relay_count: usize) -> Self {
        let r = RelayStatistics { source_relay: fading.same_cell_mean, relay_destination: fading.same_cell_mean };
        Self { law: GainLaw::Exponential, source_destination: fading.source_destination_mean, relays: vec![r; relay_count] }
    }
}

fn kappa(scheme: Scheme, relay_count: usize) -> Result<f64, DpError> {
    if scheme.is_amplify_forward() {
        return Err(DpError::Unsupported(scheme));
    }
    scheme.kappa(relay_count).map_err(|_| DpError::NoRelays)
}

/// Probability that a gain of the given law and mean is at least `x`.
fn tail(law: GainLaw, mean: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    match law {
        GainLaw::Exponential if mean > 0.0 => (-x / mean).exp(),
        GainLaw::Exponential => 0.0,
        GainLaw::Deterministic => {
            if mean >= x * (1.0 - crate::phy::BOUNDARY_SLACK) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// `f(P_s, .)` as a vector parallel to `space.outcomes`.
pub fn first_stage_dist(
    p_s: f64,
    stats: &LinkStatistics,
    space: &OutcomeSpace,
    budget: &LinkBudget,
    scheme: Scheme,
) -> Result<Vec<f64>, DpError> {
    if stats.relays.len() != space.relay_count {
        return Err(DpError::RelayMismatch { stats: stats.relays.len(), space: space.relay_count });
    }
    let k = kappa(scheme, space.relay_count)?;
    let theta = budget.snr_threshold(k);
    let decode: Vec<f64> = stats
        .relays
        .iter()
        .map(|r| match stats.law {
            GainLaw::Deterministic => (p_s > 0.0 && reaches(p_s, r.source_relay, theta)) as u8 as f64,
            GainLaw::Exponential if p_s > 0.0 => tail(stats.law, r.source_relay, theta / p_s),
            GainLaw::Exponential => 0.0,
        })
        .collect();

    // P[first-phase destination MI >= edge] for each bin edge.
    let reach_edge = |edge: f64| -> f64 {
        if edge <= 0.0 {
            return 1.0;
        }
        if p_s <= 0.0 {
            return 0.0;
        }
        let snr = budget.snr_threshold_for(k, edge);
        match stats.law {
            GainLaw::Exponential => tail(stats.law, stats.source_destination, snr / p_s),
            GainLaw::Deterministic => reaches(p_s, stats.source_destination, snr) as u8 as f64,
        }
    };
    let above: Vec<f64> = space.bin_edges.iter().map(|&e| reach_edge(e)).collect();
    let bins = space.bins();
    let bin_mass: Vec<f64> =
        (0..bins).map(|b| (above[b] - if b + 1 < bins { above[b + 1] } else { 0.0 }).max(0.0)).collect();

    Ok(space
        .outcomes
        .iter()
        .map(|o| {
            let subset: f64 =
                decode.iter().enumerate().map(|(i, &q)| if o.decodes(i) { q } else { 1.0 - q }).product();
            subset * bin_mass[o.bin]
        })
        .collect())
}

/// Evaluation of `g` for a fixed problem.
#[derive(Debug, Clone)]
pub struct SuccessModel {
    law: GainLaw,
    scheme: Scheme,
    kappa: f64,
    budget: LinkBudget,
    relay_destination: Vec<f64>,
    /// Common Exp(1) draws, `samples x relays`, row-major.
    draws: Vec<f64>,
    samples: usize,
}

impl SuccessModel {
    pub fn new(stats: &LinkStatistics, budget: LinkBudget, scheme: Scheme, samples: usize, seed: u64) -> Result<Self, DpError> {
        let kappa = kappa(scheme, stats.relays.len())?;
        let m = stats.relays.len();
        let (samples, draws) = if stats.law == GainLaw::Exponential {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples = samples.max(1);
            (samples, (0..samples * m).map(|_| rng.sample::<f64, _>(Exp1)).collect())
        } else {
            (0, Vec::new())
        };
        Ok(Self {
            law: stats.law,
            scheme,
            kappa,
            budget,
            relay_destination: stats.relays.iter().map(|r| r.relay_destination).collect(),
            draws,
            samples,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Success probability. `level` is the destination's first-phase mutual
    /// information and `powers` the relay powers (relays outside the decode
    /// set are ignored).
    pub fn probability(&self, powers: &[f64], outcome: Outcome, level: f64) -> f64 {
        if self.budget.meets_rate(level) {
            return 1.0;
        }
        let active: Vec<usize> =
            (0..powers.len()).filter(|&i| outcome.decodes(i) && powers[i] > 0.0 && self.relay_destination[i] > 0.0).collect();
        if active.is_empty() {
            return 0.0;
        }
        let regenerative = matches!(self.scheme, Scheme::RegdfOrtho | Scheme::DfDstc);
        match self.law {
            GainLaw::Deterministic => {
                let gains: Vec<f64> = active.iter().map(|&i| powers[i] * self.relay_destination[i]).collect();
                self.succeeds(regenerative, level, &gains) as u8 as f64
            }
            GainLaw::Exponential if regenerative && active.len() <= 2 => {
                let need = self.budget.snr_threshold(self.kappa) - self.budget.snr_threshold_for(self.kappa, level);
                let means: Vec<f64> = active.iter().map(|&i| powers[i] * self.relay_destination[i]).collect();
                exponential_sum_tail(&means, need)
            }
            GainLaw::Exponential => {
                let m = self.relay_destination.len();
                let mut gains = vec![0.0; active.len()];
                let hits = (0..self.samples)
                    .filter(|&n| {
                        for (g, &i) in gains.iter_mut().zip(&active) {
                            *g = powers[i] * self.relay_destination[i] * self.draws[n * m + i];
                        }
                        self.succeeds(regenerative, level, &gains)
                    })
                    .count();
                hits as f64 / self.samples as f64
            }
        }
    }

    fn succeeds(&self, regenerative: bool, level: f64, snrs: &[f64]) -> bool {
        let mi = if regenerative {
            let base = self.budget.snr_threshold_for(self.kappa, level);
            self.budget.capacity(self.kappa, base + snrs.iter().sum::<f64>())
        } else {
            level + snrs.iter().map(|&s| self.budget.capacity(self.kappa, s)).sum::<f64>()
        };
        self.budget.meets_rate(mi)
    }
}

/// `P[sum_i Y_i >= c]` for independent exponentials with the given means
/// (at most two).
pub fn exponential_sum_tail(means: &[f64], c: f64) -> f64 {
    if c <= 0.0 {
        return 1.0;
    }
    match means {
        [] => 0.0,
        [a] => (-c / a).exp(),
        [a, b] => {
            let (l1, l2) = (1.0 / a, 1.0 / b);
            if (l1 - l2).abs() <= 1e-6 * l1.max(l2) {
                let l = 0.5 * (l1 + l2);
                (-l * c).exp() * (1.0 + l * c)
            } else {
                ((l2 * (-l1 * c).exp() - l1 * (-l2 * c).exp()) / (l2 - l1)).clamp(0.0, 1.0)
            }
        }
        _ => panic!("closed form covers at most two terms"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpOptions {
    /// Grid points per relay in the second stage.
    pub relay_grid_points: usize,
    /// Zoom rounds around the best second-stage grid point.
    pub refine_rounds: usize,
    /// Source powers tried in the first stage (uniform on `[0, P^max]`).
    pub source_grid_points: usize,
    pub mc_samples: usize,
    pub mc_seed: u64,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self { relay_grid_points: 50, refine_rounds: 4, source_grid_points: 100, mc_samples: 10_000, mc_seed: 7 }
    }
}

/// Everything the two-stage program needs for one slot.
#[derive(Debug, Clone)]
pub struct DpProblem {
    pub stats: LinkStatistics,
    pub budget: LinkBudget,
    pub scheme: Scheme,
    pub source: NodeCost,
    pub relays: Vec<NodeCost>,
    /// `Z_s + V alpha_s`
    pub reward: f64,
    pub space: OutcomeSpace,
    pub success: SuccessModel,
    pub options: DpOptions,
}

impl DpProblem {
    pub fn new(
        stats: LinkStatistics,
        budget: LinkBudget,
        scheme: Scheme,
        source: NodeCost,
        relays: Vec<NodeCost>,
        reward: f64,
        bins: usize,
        options: DpOptions,
    ) -> Result<Self, DpError> {
        let space = enumerate_outcomes(stats.relays.len(), bins, budget.rate)?;
        if relays.len() != stats.relays.len() {
            return Err(DpError::RelayMismatch { stats: stats.relays.len(), space: relays.len() });
        }
        let success = SuccessModel::new(&stats, budget, scheme, options.mc_samples, options.mc_seed)?;
        Ok(Self { stats, budget, scheme, source, relays, reward, space, success, options })
    }

    pub fn distribution(&self, p_s: f64) -> Vec<f64> {
        first_stage_dist(p_s, &self.stats, &self.space, &self.budget, self.scheme)
            .expect("validated at construction")
    }

    pub fn second_stage_objective(&self, powers: &[f64], outcome: Outcome) -> f64 {
        let level = self.space.bin_edges[outcome.bin];
        let cost: f64 = powers.iter().zip(&self.relays).map(|(p, c)| p * c.weight).sum();
        cost - self.reward * self.success.probability(powers, outcome, level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondStage {
    pub value: f64,
    pub powers: Vec<f64>,
}

fn axis(p_max: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n).map(|k| p_max * k as f64 / (n - 1) as f64).collect()
}

/// `J1(P_s, omega)` and its relay powers. The first-phase outcome already
/// fixes everything `P_s` influences, so only `omega` enters.
pub fn second_stage_value(problem: &DpProblem, outcome: Outcome) -> SecondStage {
    let m = problem.relays.len();
    let zero = vec![0.0; m];
    let base = problem.second_stage_objective(&zero, outcome);
    let active: Vec<usize> = (0..m).filter(|&i| outcome.decodes(i)).collect();
    if problem.reward == 0.0 || active.is_empty() || base <= -problem.reward {
        return SecondStage { value: base, powers: zero };
    }
    let opts = &problem.options;
    let mut best = (base, zero.clone());
    let consider = |p: &[f64], best: &mut (f64, Vec<f64>)| {
        let v = problem.second_stage_objective(p, outcome);
        if v < best.0 {
            *best = (v, p.to_vec());
        }
    };

    if active.len() <= 2 {
        let axes: Vec<Vec<f64>> = active.iter().map(|&i| axis(problem.relays[i].p_max, opts.relay_grid_points)).collect();
        let mut p = zero.clone();
        let count: usize = axes.iter().map(Vec::len).product();
        for flat in 0..count {
            let mut r = flat;
            for (a, &i) in axes.iter().zip(&active) {
                p[i] = a[r % a.len()];
                r /= a.len();
            }
            consider(&p, &mut best);
        }
    } else {
        for _sweep in 0..20 {
            let before = best.0;
            for &i in &active {
                let mut p = best.1.clone();
                for v in axis(problem.relays[i].p_max, opts.relay_grid_points) {
                    p[i] = v;
                    consider(&p, &mut best);
                }
            }
            if best.0 >= before {
                break;
            }
        }
    }

    // Zoom: 11 points per active relay around the incumbent, one relay at a
    // time, shrinking the window each round.
    let mut half: Vec<f64> =
        problem.relays.iter().map(|c| c.p_max / (opts.relay_grid_points.max(2) - 1) as f64).collect();
    for _ in 0..opts.refine_rounds {
        for &i in &active {
            let center = best.1[i];
            let mut p = best.1.clone();
            for k in 0..=10 {
                p[i] = (center - half[i] + 0.2 * half[i] * k as f64).clamp(0.0, problem.relays[i].p_max);
                consider(&p, &mut best);
            }
        }
        for h in &mut half {
            *h /= 5.0;
        }
    }
    SecondStage { value: best.0, powers: best.1 }
}

/// `J0(P_s)`.
pub fn exact_cost_to_go(problem: &DpProblem, p_s: f64) -> f64 {
    let f = problem.distribution(p_s);
    let expected: f64 = problem
        .space
        .outcomes
        .iter()
        .zip(&f)
        .filter(|(_, &q)| q > 0.0)
        .map(|(o, &q)| q * second_stage_value(problem, *o).value)
        .sum();
    problem.source.weight * p_s + expected
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactDp {
    pub source_power: f64,
    pub value: f64,
    /// `(P_s, J0(P_s))` over the grid.
    pub curve: Vec<(f64, f64)>,
}

/// Minimum of `J0` over a uniform source-power grid (including zero).
pub fn exact_dp(problem: &DpProblem) -> ExactDp {
    // J1 depends on omega only, so it is computed once per outcome.
    let j1: Vec<f64> = problem.space.outcomes.iter().map(|o| second_stage_value(problem, *o).value).collect();
    let curve: Vec<(f64, f64)> = axis(problem.source.p_max, problem.options.source_grid_points)
        .into_iter()
        .map(|p_s| {
            let f = problem.distribution(p_s);
            let e: f64 = f.iter().zip(&j1).filter(|(q, _)| **q > 0.0).map(|(q, v)| q * v).sum();
            (p_s, problem.source.weight * p_s + e)
        })
        .collect();
    let (source_power, value) = curve.iter().copied().fold((0.0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
    ExactDp { source_power, value, curve }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Unbiased sample variance of the sampled `J1` values.
    pub variance: f64,
    pub samples: usize,
}

/// Source term plus the sample mean of `j1` over `n` outcomes drawn from
/// `probabilities`.
pub fn mc_estimate_with<R: Rng + ?Sized>(
    source_term: f64,
    probabilities: &[f64],
    mut j1: impl FnMut(usize) -> f64,
    n: usize,
    rng: &mut R,
) -> Estimate {
    let n = n.max(1);
    let mut cumulative = Vec::with_capacity(probabilities.len());
    let mut acc = 0.0;
    for &p in probabilities {
        acc += p;
        cumulative.push(acc);
    }
    let mut cache: Vec<Option<f64>> = vec![None; probabilities.len()];
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let idx = cumulative.partition_point(|&c| c <= u).min(probabilities.len() - 1);
        let v = *cache[idx].get_or_insert_with(|| j1(idx));
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let variance = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    Estimate { value: source_term + mean, variance, samples: n }
}

/// `J0` estimate at `P_s` from `n` sampled outcomes.
pub fn mc_estimate<R: Rng + ?Sized>(problem: &DpProblem, p_s: f64, n: usize, rng: &mut R) -> Estimate {
    let f = problem.distribution(p_s);
    let outcomes = &problem.space.outcomes;
    mc_estimate_with(problem.source.weight * p_s, &f, |i| second_stage_value(problem, outcomes[i]).value, n, rng)
}

/// Chebyshev bound `sigma^2 / (n eps^2)` on `P[|estimate - J0| >= eps]`,
/// capped at one.
pub fn chebyshev_bound(variance: f64, n: usize, epsilon: f64) -> f64 {
    assert!(epsilon > 0.0 && n >= 1, "need eps > 0 and n >= 1");
    (variance / (n as f64 * epsilon * epsilon)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn unit() -> LinkBudget {
        LinkBudget { bandwidth: 1.0, rate: 1.0 }
    }

    fn stats(m: usize) -> LinkStatistics {
        LinkStatistics::from_fading(&FadingModel::default(), m)
    }

    fn problem(m: usize, bins: usize, reward: f64, scheme: Scheme) -> DpProblem {
        let c = NodeCost { weight: 1.0, p_max: 10.0 };
        DpProblem::new(stats(m), unit(), scheme, c, vec![c; m], reward, bins, DpOptions::default()).unwrap()
    }

    #[test]
    fn outcome_counts() {
        assert_eq!(enumerate_outcomes(0, 1, 1.0).unwrap().len(), 1);
        assert_eq!(enumerate_outcomes(2, 3, 1.0).unwrap().len(), 12);
        assert_eq!(enumerate_outcomes(2, 3, 1.0).unwrap().bin_edges, vec![0.0, 0.5, 1.0]);
        assert!(enumerate_outcomes(20, 2, 1.0).is_err());
        assert_eq!(enumerate_outcomes(1, 0, 1.0).unwrap_err(), DpError::NoBins);
    }

    #[test]
    fn zero_source_power_puts_mass_on_empty_lowest() {
        let space = enumerate_outcomes(2, 4, 1.0).unwrap();
        let f = first_stage_dist(0.0, &stats(2), &space, &unit(), Scheme::RegdfOrtho).unwrap();
        assert_eq!(f[space.index(Outcome { decoded: 0, bin: 0 })], 1.0);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn both_decode_at_unit_ratio() {
        // tau / mu = 1: theta(kappa = 2) = 1.5, so P_s = 1.5.
        let space = enumerate_outcomes(2, 1, 1.0).unwrap();
        let f = first_stage_dist(1.5, &stats(2), &space, &unit(), Scheme::RegdfOrtho).unwrap();
        let both = f[space.index(Outcome { decoded: 0b11, bin: 0 })];
        assert!((both - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn af_is_rejected() {
        let space = enumerate_outcomes(1, 1, 1.0).unwrap();
        assert_eq!(
            first_stage_dist(1.0, &stats(1), &space, &unit(), Scheme::AfOrtho).unwrap_err(),
            DpError::Unsupported(Scheme::AfOrtho)
        );
    }

    #[test]
    fn no_reward_gives_zero() {
        let p = problem(2, 3, 0.0, Scheme::RegdfOrtho);
        let s = second_stage_value(&p, Outcome { decoded: 0b11, bin: 0 });
        assert_eq!(s.value, 0.0);
        assert_eq!(s.powers, vec![0.0, 0.0]);
    }

    #[test]
    fn top_bin_is_already_successful() {
        let p = problem(2, 3, 4.0, Scheme::RegdfOrtho);
        let s = second_stage_value(&p, Outcome { decoded: 0, bin: 2 });
        assert_eq!(s.value, -4.0);
        assert_eq!(s.powers, vec![0.0, 0.0]);
    }

    #[test]
    fn single_relay_matches_fine_search() {
        let p = problem(1, 3, 20.0, Scheme::RegdfOrtho);
        let o = Outcome { decoded: 1, bin: 1 };
        let s = second_stage_value(&p, o);
        let fine = (0..=10_000)
            .map(|k| {
                let x = 10.0 * k as f64 / 10_000.0;
                p.second_stage_objective(&[x], o)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(s.value <= fine + 0.01 * fine.abs(), "{} vs {}", s.value, fine);
    }

    #[test]
    fn two_outcome_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let j1 = [0.0, -10.0];
        let e = mc_estimate_with(1.0, &[0.5, 0.5], |i| j1[i], 100_000, &mut rng);
        let sigma = 5.0;
        assert!((e.value + 4.0).abs() <= 3.0 * sigma / (1e5f64).sqrt());
        assert!((e.variance - 25.0).abs() < 0.5);
    }

    #[test]
    fn degenerate_distribution_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in [1, 7, 100] {
            let e = mc_estimate_with(2.0, &[1.0], |_| -3.0, n, &mut rng);
            assert_eq!(e.value, -1.0);
        }
    }

    #[test]
    fn seeded_estimates_repeat() {
        let p = problem(1, 2, 10.0, Scheme::RegdfOrtho);
        let a = mc_estimate(&p, 2.0, 500, &mut ChaCha8Rng::seed_from_u64(5));
        let b = mc_estimate(&p, 2.0, 500, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn chebyshev_hand_values() {
        assert_eq!(chebyshev_bound(0.0, 10, 0.1), 0.0);
        assert!((chebyshev_bound(1.0, 100, 0.5) - 0.04).abs() < 1e-15);
        assert_eq!(chebyshev_bound(100.0, 1, 0.1), 1.0);
    }

    #[test]
    fn exact_dp_is_grid_minimum() {
        let p = problem(2, 3, 8.0, Scheme::RegdfOrtho);
        let dp = exact_dp(&p);
        assert!(dp.curve.iter().all(|(_, v)| dp.value <= *v));
        let (ps, v) = dp.curve[17];
        assert!((exact_cost_to_go(&p, ps) - v).abs() < 1e-12);
    }

    #[test]
    fn hypoexponential_tail_against_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for means in [[1.0, 2.0], [1.5, 1.5]] {
            let n = 200_000;
            let hits = (0..n)
                .filter(|_| means[0] * rng.sample::<f64, _>(Exp1) + means[1] * rng.sample::<f64, _>(Exp1) >= 2.5)
                .count();
            let emp = hits as f64 / n as f64;
            assert!((exponential_sum_tail(&means, 2.5) - emp).abs() < 0.005);
        }
    }

    proptest! {
        #[test]
        fn distribution_is_normalized(p_s in 0.0f64..20.0, m in 0usize..4, bins in 1usize..6, mu in 0.1f64..4.0) {
            let mut s = stats(m);
            s.source_destination = mu;
            for r in &mut s.relays { r.source_relay = mu * 0.7; }
            let space = enumerate_outcomes(m, bins, 1.0).unwrap();
            let scheme = if m == 0 { Scheme::DfDstc } else { Scheme::RegdfOrtho };
            let f = first_stage_dist(p_s, &s, &space, &unit(), scheme).unwrap();
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(f.iter().all(|q| *q >= 0.0));
        }

        #[test]
        fn success_is_monotone_in_power(p1 in 0.0f64..10.0, p2 in 0.0f64..10.0, p3 in 0.0f64..10.0, bump in 0.0f64..3.0, which in 0usize..3, nonreg: bool) {
            let scheme = if nonreg { Scheme::NonregdfOrtho } else { Scheme::RegdfOrtho };
            let p = problem(3, 3, 1.0, scheme);
            let o = Outcome { decoded: 0b111, bin: 1 };
            let base = [p1, p2, p3];
            let mut more = base;
            more[which] += bump;
            let (a, b) = (p.success.probability(&base, o, 0.5), p.success.probability(&more, o, 0.5));
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b >= a - 1e-12);
        }
    }
}
