use std::collections::BTreeMap;

use dlcoop::channel::{CellGrid, CellIndex, MobilityModel, NodeId};
use dlcoop::controller::{theorem1_constants, ControllerParams, NodeParams, SourceParams, SourceSlot, VirtualQueues};
use dlcoop::engine::{self, Access, SimConfig, Strategy as Policy};
use dlcoop::phy::{Mode, Scheme};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn walkers_stay_or_step_to_a_neighbor(
        rows in 1usize..5,
        cols in 1usize..5,
        stay in 0.0f64..1.0,
        nodes in 1usize..8,
        seed in any::<u64>(),
    ) {
        let grid = CellGrid::new(rows, cols, CellIndex(0)).unwrap();
        let start: BTreeMap<NodeId, CellIndex> =
            (0..nodes).map(|i| (NodeId(i as u32), CellIndex(i % grid.cell_count()))).collect();
        let mut walk = MobilityModel::new(stay, start, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let next = walk.step(&grid, &mut rng);
            for (id, &from) in walk.positions() {
                let to = next.position(*id).unwrap();
                prop_assert!(to == from || grid.is_adjacent(from, to), "{:?} -> {:?}", from, to);
                let (dr, dc) = ((from.0 / cols).abs_diff(to.0 / cols), (from.0 % cols).abs_diff(to.0 % cols));
                prop_assert!(dr + dc <= 1);
            }
            walk = next;
        }
    }

    #[test]
    fn queue_updates_stay_nonnegative_and_follow_the_recursion(
        z in prop::collection::vec(0.0f64..20.0, 3),
        x in prop::collection::vec(0.0f64..20.0, 5),
        events in prop::collection::vec((any::<bool>(), any::<bool>()), 3),
        powers in prop::collection::vec(0.0f64..10.0, 5),
        rho in prop::collection::vec(0.0f64..1.0, 3),
        p_avg in prop::collection::vec(0.1f64..5.0, 5),
    ) {
        let params = ControllerParams {
            v: 1.0,
            sources: (0..3).map(|i| SourceParams { node: NodeId(i as u32), arrival_rate: 0.5, reliability: rho[i], alpha: 0.0 }).collect(),
            nodes: p_avg.iter().map(|&p| NodeParams { p_avg: p, p_max: 10.0, beta: 1.0 }).collect(),
        };
        let q = VirtualQueues { reliability: z.clone(), power: x.clone() };
        let slots: Vec<SourceSlot> = events.iter().map(|&(arrival, delivered)| SourceSlot { arrival, delivered }).collect();
        let next = q.updated(&slots, &powers, &params);
        for i in 0..3 {
            let served = if slots[i].delivered { 1.0 } else { 0.0 };
            let arrived = if slots[i].arrival { rho[i] } else { 0.0 };
            prop_assert!(next.reliability[i] >= 0.0);
            prop_assert_eq!(next.reliability[i], (z[i] - served).max(0.0) + arrived);
        }
        for i in 0..5 {
            prop_assert!(next.power[i] >= 0.0);
            prop_assert_eq!(next.power[i], (x[i] - p_avg[i]).max(0.0) + powers[i]);
        }
    }
}

fn access() -> impl Strategy<Value = Access> {
    prop::sample::select(vec![Access::Orthogonal, Access::TdmaRoundRobin, Access::TdmaRandom])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn short_runs_keep_identities_and_packet_rules(
        seed in any::<u64>(),
        v in 0.0f64..50.0,
        lambda in 0.0f64..1.0,
        rho in 0.5f64..1.0,
        scheme in prop::sample::select(Scheme::ALL.to_vec()),
        policy in prop::sample::select(Policy::ALL.to_vec()),
        access in access(),
    ) {
        let mut config = SimConfig::reference();
        config.seed = seed;
        config.slots = 1000;
        config.v = v;
        config.scheme = scheme;
        config.strategy = policy;
        config.access = access;
        for s in &mut config.sources {
            s.arrival_rate = lambda;
            s.reliability = rho;
        }
        let m = engine::run_with_trace(&config, true).unwrap();
        for g in m.reliability_identity_gaps().into_iter().chain(m.power_identity_gaps()) {
            prop_assert!(g >= -1e-9, "identity gap {}", g);
        }
        let trace = m.trace.as_ref().unwrap();
        for r in trace {
            prop_assert!(r.reliability_queue >= 0.0);
            prop_assert!(!r.delivered || (r.arrival && r.scheduled && r.mode != Mode::Idle));
            // Orthogonal cooperation without relays reduces to the direct link.
            let reduced = r.mode == Mode::Direct && r.relays_available == 0 && scheme.is_orthogonal();
            prop_assert!(policy.allowed_modes().contains(&r.mode) || reduced, "{:?} under {:?}", r.mode, policy);
        }
        if access != Access::Orthogonal {
            for slot in 0..config.slots {
                let scheduled = trace.iter().filter(|r| r.slot == slot && r.scheduled).count();
                prop_assert_eq!(scheduled, 1, "slot {}", slot);
            }
        }
        let again = engine::run_with_trace(&config, true).unwrap();
        prop_assert_eq!(&m, &again);
    }
}

#[test]
fn reference_run_stays_stable_and_reliable_over_a_million_slots() {
    let mut config = SimConfig::reference();
    config.slots = 1_000_000;
    let m = engine::run(&config).unwrap();
    let params = config.controller_params();
    for (i, s) in m.sources.iter().enumerate() {
        let bound = theorem1_constants(&params, i).queue_bound_numerator;
        assert!(s.max_queue < bound, "source {i} max queue {} vs {bound}", s.max_queue);
        assert!(s.final_queue <= 1.25 * s.average_queue + 10.0, "source {i} drifting: final {} avg {}", s.final_queue, s.average_queue);
        assert!(
            s.delivered_rate >= s.reliability_target * s.arrival_rate - 1e-3,
            "source {i} delivered {} target {}",
            s.delivered_rate,
            s.reliability_target * s.arrival_rate
        );
    }
    for n in &m.nodes {
        assert!(n.final_queue <= 1.25 * n.average_queue + 10.0, "node {} drifting: final {} avg {}", n.node, n.final_queue, n.average_queue);
        assert!(n.average_power <= n.p_avg + 1e-3, "node {} power {}", n.node, n.average_power);
    }
}
