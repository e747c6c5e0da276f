mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use midmile::config::{derive_seed, RoutingStrategy};
use midmile::dynamics::{build_instance, select_next, Environment, RouteSpan};
use midmile::features::resistance_matrix;
use midmile::graph::{
    deserialize_state, encode_edge_features, serialize_state, validate_state, EdgeKind, ParcelStatus, CAPACITY_EPS,
};
use midmile::netgen::{expand, gen_static};
use midmile::parcelgen::populate;
use midmile::pruning::skip_prune;

use common::{min_truck_capacity, small};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_states_are_well_formed(seed in any::<u64>(), hubs in 4usize..9, horizon in 8u32..25, parcels in 1usize..40) {
        let inst = build_instance(&small(hubs, horizon, parcels, seed)).unwrap();
        let state = &inst.state;
        prop_assert!(validate_state(state).is_empty(), "{:?}", validate_state(state));

        let fwd = state.edges().filter(|e| e.kind.is_forward()).count();
        let bwd = state.edges().filter(|e| !e.kind.is_forward()).count();
        prop_assert_eq!(fwd, bwd);
        for e in state.edges() {
            let twin = state.edge(e.id.twin()).expect("twin present");
            prop_assert_eq!(twin.id.twin(), e.id);
            prop_assert_eq!(twin.kind, e.kind.reversed());
            prop_assert_eq!((twin.sender, twin.receiver), (e.receiver, e.sender));
            if e.kind.is_forward() {
                prop_assert!(e.receiver.time > e.sender.time);
            }
            let x = encode_edge_features(e);
            prop_assert_eq!(x[..6].iter().sum::<f64>(), 1.0);
        }

        let bytes = serialize_state(state);
        let back = deserialize_state(&bytes).unwrap();
        prop_assert_eq!(&back, state);
        prop_assert_eq!(serialize_state(&back), bytes);

        let again = build_instance(&small(hubs, horizon, parcels, seed)).unwrap();
        prop_assert_eq!(&again.state, state);
    }

    #[test]
    fn parcels_are_placed_within_capacity(seed in any::<u64>(), parcels in 1usize..60) {
        let cfg = small(6, 20, parcels, seed);
        let ng = &cfg.netgen;
        let network = gen_static(ng.hubs, ng.m, ng.p, ng.q, derive_seed(seed, 0)).unwrap();
        let mut state = expand(&network, ng, derive_seed(seed, 1)).unwrap();
        skip_prune(&mut state);
        let resistance = resistance_matrix(&network, ng.beta1).unwrap();
        let report = populate(&mut state, &resistance, &cfg.parcelgen, derive_seed(seed, 2)).unwrap();

        let mut load: BTreeMap<_, f64> = BTreeMap::new();
        for (pid, route) in &report.routes {
            let p = state.parcel(*pid).unwrap();
            prop_assert!(p.goal.time > p.current.time);
            for e in route {
                *load.entry(*e).or_default() += p.weight;
            }
        }
        for e in state.edges().filter(|e| e.kind == EdgeKind::TruckFwd) {
            let used = load.get(&e.id).copied().unwrap_or(0.0);
            let shadow = report.shadow.get(e.id).unwrap();
            prop_assert!((shadow - (e.capacity - used)).abs() < 1e-9);
            prop_assert!(shadow >= -CAPACITY_EPS);
        }
    }

    #[test]
    fn random_episodes_keep_the_books(seed in any::<u64>(), strategy in 0usize..3, pruned in any::<bool>()) {
        let mut cfg = small(5, 20, 30, seed);
        cfg.strategy = [RoutingStrategy::OneStep, RoutingStrategy::AllStep, RoutingStrategy::LastParcel][strategy];
        cfg.parcel_prune_actions = pruned;
        let mut env = Environment::reset(&cfg).unwrap();
        let n = env.state().parcel_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ret = 0.0;
        while let Some((parcel, span)) = env.select_next() {
            loop {
                if span == RouteSpan::UntilTerminal {
                    let latest = env.state().live_parcels().map(|p| p.current.time).max().unwrap();
                    prop_assert_eq!(env.state().parcel(parcel).unwrap().current.time, latest);
                    prop_assert_eq!(select_next(env.state(), cfg.strategy).unwrap().0, parcel);
                }
                let actions = env.actions(parcel).unwrap();
                let t = if actions.is_empty() {
                    env.fail(parcel).unwrap()
                } else {
                    let a = actions[rng.gen_range(0..actions.len())];
                    env.step(parcel, a).unwrap()
                };
                prop_assert!(t.reward == 0.0 || t.reward == 1.0);
                ret += t.reward;
                prop_assert!(min_truck_capacity(env.state()) >= -CAPACITY_EPS);
                let count = |s: ParcelStatus| env.state().parcels().filter(|p| p.status == s).count();
                prop_assert_eq!(
                    count(ParcelStatus::Delivered) + count(ParcelStatus::Failed) + count(ParcelStatus::InTransit),
                    n
                );
                if t.removed || span == RouteSpan::OneStep {
                    break;
                }
            }
        }
        let delivered = env.state().parcels().filter(|p| p.status == ParcelStatus::Delivered).count();
        prop_assert_eq!(ret, delivered as f64);
        prop_assert!(env.is_done());
    }
}

#[test]
fn identical_seeds_give_identical_instances() {
    let cfg = small(10, 30, 50, 11);
    let a = build_instance(&cfg).unwrap();
    let b = build_instance(&cfg).unwrap();
    assert_eq!(serialize_state(&a.state), serialize_state(&b.state));
    let c = build_instance(&cfg.clone().with_seed(12)).unwrap();
    assert_ne!(a.state, c.state);
}
