use dlcoop::channel::{ChannelState, NodeId, RelayLink};
use dlcoop::oracle;
use dlcoop::phy::{self, LinkBudget, Mode, Scheme};
use dlcoop::solver::{self, NodeCost, SolverInput, SolverOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gain() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 8 => 0.01f64..4.0]
}

fn state(max_relays: usize) -> impl Strategy<Value = ChannelState> {
    (gain(), prop::collection::vec((gain(), gain()), 0..=max_relays)).prop_map(|(sd, links)| {
        let relays = links
            .into_iter()
            .enumerate()
            .map(|(i, (sr, rd))| RelayLink { id: NodeId(i as u32 + 1), source_relay: sr, relay_destination: rd })
            .collect();
        ChannelState::new(0, sd, relays)
    })
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop::sample::select(Scheme::ALL.to_vec())
}

fn input<'a>(state: &'a ChannelState, scheme: Scheme, weights: &[f64], reward: f64) -> SolverInput<'a> {
    SolverInput {
        state,
        budget: LinkBudget::default(),
        scheme,
        source: NodeCost { weight: weights[0], p_max: 10.0 },
        relays: (0..state.relay_count()).map(|j| NodeCost { weight: weights[j + 1], p_max: 10.0 }).collect(),
        reward,
        options: SolverOptions::default(),
    }
}

fn node_power(cost: &dlcoop::ModeCost, node: usize) -> f64 {
    match &cost.action {
        None => 0.0,
        Some(a) if node == 0 => a.alloc.source,
        Some(a) => a.alloc.relays[node - 1],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn returned_actions_respect_limits_and_rate(
        s in state(3),
        scheme in scheme(),
        weights in prop::collection::vec(0.1f64..5.0, 4),
        reward in 0.0f64..50.0,
    ) {
        let input = input(&s, scheme, &weights, reward);
        let budget = input.budget;
        let (best, table) = solver::best_action(&input);
        for mode in Mode::ALL {
            let c = table.get(mode);
            prop_assert_eq!(c.is_feasible(), c.action.is_some(), "{:?}", mode);
            let Some(a) = &c.action else { continue };
            prop_assert!(a.within_limits(&input), "{:?} {:?}", mode, a.alloc);
            match a.mode {
                Mode::Idle => prop_assert_eq!(a.alloc.total(), 0.0),
                Mode::Direct => prop_assert!(a.alloc.relays.iter().all(|&p| p == 0.0)),
                Mode::Multihop => prop_assert!(a.alloc.relays.iter().filter(|&&p| p > 0.0).count() <= 1),
                Mode::Cooperative => {}
            }
            if a.mode != Mode::Idle {
                prop_assert!(a.delivers(&s, &budget), "{:?} does not deliver: {:?}", mode, a);
            }
        }
        let floor = Mode::ALL.iter().map(|&m| table.get(m).cost).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(best.cost, floor);
    }

    #[test]
    fn raising_a_node_weight_never_raises_its_power(
        s in state(3),
        scheme in prop::sample::select(vec![Scheme::RegdfOrtho, Scheme::NonregdfOrtho, Scheme::DfDstc]),
        weights in prop::collection::vec(0.1f64..5.0, 4),
        reward in 0.0f64..50.0,
        node in 0usize..4,
        factor in 1.0f64..4.0,
    ) {
        let node = node.min(s.relay_count());
        let before = solver::best_action(&input(&s, scheme, &weights, reward)).0;
        let mut raised = weights.clone();
        raised[node] *= factor;
        let after = solver::best_action(&input(&s, scheme, &raised, reward)).0;
        let (p0, p1) = (node_power(&before, node), node_power(&after, node));
        prop_assert!(p1 <= p0 + 1e-6 * (1.0 + p0), "node {} power {} -> {}", node, p0, p1);
    }

    #[test]
    fn source_power_between_prefix_floors_decodes_exactly_the_prefix(
        s in state(4),
        scheme in prop::sample::select(vec![Scheme::RegdfOrtho, Scheme::NonregdfOrtho, Scheme::DfDstc]),
        t in 0.01f64..0.99,
    ) {
        prop_assume!(s.relay_count() > 0);
        let budget = LinkBudget::default();
        let kappa = scheme.kappa(s.relay_count()).unwrap();
        let order = solver::order_relays(&s);
        for k in 0..order.len() {
            let lo = solver::min_decode_power(&order[..k], &s, &budget, kappa);
            let hi = solver::min_decode_power(&order[..k + 1], &s, &budget, kappa);
            prop_assert!(hi >= lo);
            if !(hi.is_finite() && hi > lo * (1.0 + 1e-9)) {
                continue;
            }
            let p_s = lo + t * (hi - lo);
            let mut got = phy::decode_set(p_s, &s, &budget, scheme);
            got.sort();
            let mut want: Vec<NodeId> = order[..k].iter().map(|&j| s.relays[j].id).collect();
            want.sort();
            prop_assert_eq!(got, want, "k {} p_s {}", k, p_s);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn best_action_beats_random_feasible_actions(
        s in state(3),
        scheme in scheme(),
        weights in prop::collection::vec(0.1f64..5.0, 4),
        reward in 0.0f64..50.0,
        seed in any::<u64>(),
    ) {
        let input = input(&s, scheme, &weights, reward);
        let (best, _) = solver::best_action(&input);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = oracle::random_action_bound(&input, 1000, &mut rng);
        prop_assert!(best.cost <= bound + 1e-9, "solver {} random {}", best.cost, bound);
    }
}

fn af_instances() -> Vec<ChannelState> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draw = |rng: &mut ChaCha8Rng| dlcoop::FadingModel::draw(1.0, rng);
    (0..200)
        .map(|k| {
            let relays = (0..1 + k % 2)
                .map(|j| RelayLink { id: NodeId(j as u32 + 1), source_relay: draw(&mut rng), relay_destination: draw(&mut rng) })
                .collect();
            ChannelState::new(0, draw(&mut rng), relays)
        })
        .collect()
}

/// Worst relative gap between `cost_af` under `options` and the reference
/// cost computed with `reference` options.
fn worst_af_gap(options: SolverOptions, reference: impl Fn(&SolverInput<'_>) -> dlcoop::ModeCost) -> f64 {
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for (k, s) in af_instances().iter().enumerate() {
        for scheme in [Scheme::AfOrtho, Scheme::AfDstc] {
            let mut input = SolverInput::uniform(s, LinkBudget::default(), scheme, 1.0, 10.0);
            input.options = options;
            let got = solver::cost_af(&input);
            let want = reference(&input);
            assert_eq!(got.is_feasible(), want.is_feasible(), "instance {k} {scheme}");
            if want.is_feasible() {
                compared += 1;
                worst = worst.max(((got.cost - want.cost) / want.cost).abs());
            }
        }
    }
    assert!(compared > 100);
    worst
}

#[test]
fn af_default_search_is_within_two_percent_of_the_oracle() {
    let worst = worst_af_gap(SolverOptions::default(), |i| oracle::grid_mode_cost(i, Mode::Cooperative, None).unwrap());
    assert!(worst <= 0.02, "worst relative gap {worst}");
}

#[test]
#[ignore = "fails: a bare 100-point source grid is off by up to ~50% when the optimum sits at low power"]
fn af_bare_hundred_point_grid_is_within_two_percent_of_a_fine_grid() {
    let worst = worst_af_gap(SolverOptions { af_grid_points: 100, af_refine: false }, |i| {
        let mut fine = i.clone();
        fine.options = SolverOptions { af_grid_points: 10_000, af_refine: false };
        solver::cost_af(&fine)
    });
    assert!(worst <= 0.02, "worst relative gap {worst}");
}

#[test]
fn huge_reward_on_a_good_direct_link_always_transmits() {
    let s = ChannelState::new(0, 2.0, vec![RelayLink { id: NodeId(1), source_relay: 1.0, relay_destination: 1.0 }]);
    for scheme in Scheme::ALL {
        let mut input = SolverInput::uniform(&s, LinkBudget::default(), scheme, 1.0, 10.0);
        input.reward = 1e6;
        let (best, _) = solver::best_action(&input);
        let a = best.action.unwrap();
        assert_ne!(a.mode, Mode::Idle);
        assert!(a.delivers(&s, &input.budget));
    }
}
