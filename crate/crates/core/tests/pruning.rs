mod common;

use std::collections::{BTreeSet, VecDeque};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use midmile::config::{derive_seed, EnvConfig};
use midmile::dynamics::{build_instance, fail_parcel, get_actions, step, Environment};
use midmile::features::resistance_matrix;
use midmile::graph::{EdgeId, MdpState, NodeRef, ParcelRecord};
use midmile::netgen::{expand, gen_static};
use midmile::parcelgen::populate;
use midmile::pruning::{parcel_prune, prune_all, skip_prune};

use common::{replay, small, structure};

/// Feasible forward edges of a node for a parcel of `weight`.
fn feasible_out(state: &MdpState, u: NodeRef, weight: f64) -> Vec<(EdgeId, NodeRef)> {
    state
        .transport_out(u)
        .filter(|e| e.admits(weight))
        .map(|e| (e.id, e.receiver))
        .collect()
}

/// Nodes and edges on capacity-feasible current-to-goal paths, by plain
/// forward and backward breadth-first search.
fn brute_force_reach(state: &MdpState, p: &ParcelRecord) -> (BTreeSet<NodeRef>, BTreeSet<EdgeId>, bool) {
    let mut fwd = BTreeSet::from([p.current]);
    let mut queue = VecDeque::from([p.current]);
    while let Some(u) = queue.pop_front() {
        if u == p.goal {
            continue;
        }
        for (_, v) in feasible_out(state, u, p.weight) {
            if fwd.insert(v) {
                queue.push_back(v);
            }
        }
    }
    if !fwd.contains(&p.goal) {
        return (BTreeSet::from([p.current, p.goal]), BTreeSet::new(), false);
    }
    let mut bwd = BTreeSet::from([p.goal]);
    let mut queue = VecDeque::from([p.goal]);
    while let Some(v) = queue.pop_front() {
        for e in state.transport_in(v) {
            if e.admits(p.weight) && e.sender != p.goal && bwd.insert(e.sender) {
                queue.push_back(e.sender);
            }
        }
    }
    let nodes: BTreeSet<NodeRef> = fwd.intersection(&bwd).copied().collect();
    let edges = nodes
        .iter()
        .filter(|&&u| u != p.goal)
        .flat_map(|&u| feasible_out(state, u, p.weight))
        .filter(|(_, v)| nodes.contains(v))
        .map(|(id, _)| id)
        .collect();
    (nodes, edges, true)
}

/// Every simple path by depth-first enumeration; only for small instances.
fn enumerate_paths(state: &MdpState, p: &ParcelRecord) -> BTreeSet<NodeRef> {
    fn walk(state: &MdpState, p: &ParcelRecord, path: &mut Vec<NodeRef>, on_paths: &mut BTreeSet<NodeRef>) {
        let u = *path.last().unwrap();
        if u == p.goal {
            on_paths.extend(path.iter().copied());
            return;
        }
        for (_, v) in feasible_out(state, u, p.weight) {
            path.push(v);
            walk(state, p, path, on_paths);
            path.pop();
        }
    }
    let mut on_paths = BTreeSet::new();
    walk(state, p, &mut vec![p.current], &mut on_paths);
    on_paths
}

/// A populated but unpruned instance, so reach sets have something to cut.
fn populated(cfg: &EnvConfig) -> MdpState {
    let ng = &cfg.netgen;
    let net = gen_static(ng.hubs, ng.m, ng.p, ng.q, derive_seed(cfg.seed, 0)).unwrap();
    let mut state = expand(&net, ng, derive_seed(cfg.seed, 1)).unwrap();
    skip_prune(&mut state);
    let r = resistance_matrix(&net, ng.beta1).unwrap();
    populate(&mut state, &r, &cfg.parcelgen, derive_seed(cfg.seed, 2)).unwrap();
    state
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reach_sets_match_brute_force(seed in any::<u64>(), parcels in 1usize..15) {
        let state = populated(&small(5, 12, parcels, seed));
        prop_assume!(state.node_count() <= 200);
        for p in state.live_parcels() {
            let reach = parcel_prune(&state, p);
            let (nodes, edges, deliverable) = brute_force_reach(&state, p);
            prop_assert_eq!(reach.deliverable, deliverable);
            prop_assert_eq!(&reach.nodes, &nodes);
            prop_assert_eq!(&reach.edges, &edges);
            if deliverable {
                let on_paths = enumerate_paths(&state, p);
                prop_assert!(on_paths.is_subset(&reach.nodes));
                prop_assert_eq!(on_paths, nodes);
            }
        }
    }

    #[test]
    fn skip_prune_is_idempotent(seed in any::<u64>(), hubs in 3usize..9) {
        let mut cfg = small(hubs, 15, 10, seed);
        cfg.netgen.trucks_per_step = Some(2);
        let ng = &cfg.netgen;
        let net = gen_static(ng.hubs, ng.m, ng.p, ng.q, seed).unwrap();
        let mut state = expand(&net, ng, seed).unwrap();
        skip_prune(&mut state);
        let once = state.clone();
        let report = skip_prune(&mut state);
        prop_assert_eq!(report.removed_nodes, 0);
        prop_assert!(report.merged.is_empty());
        prop_assert_eq!(state, once);
    }
}

#[test]
fn replay_survives_pruning_at_every_stage() {
    for seed in 0..50 {
        let cfg = EnvConfig::default().with_seed(seed);
        let inst = build_instance(&cfg).unwrap();
        let mut state = inst.state.clone();
        let report = skip_prune(&mut state);
        assert!(report.merged.is_empty(), "seed {seed}: final state is not a skip fixpoint");
        assert_eq!(state, inst.state);

        let mut plain = Environment::from_state(cfg.clone(), inst.state.clone(), inst.resistance.clone().into());
        let (stats, min, missing) = replay(&mut plain).unwrap();
        assert_eq!((stats.delivered, missing), (stats.parcels, 0), "seed {seed}");
        assert!(min >= -1e-12);

    }
}

#[test]
fn replay_survives_step_pruning() {
    for seed in 0..50 {
        let mut cfg = EnvConfig::default().with_parcels(40).with_seed(seed);
        cfg.netgen.horizon = 30;
        cfg.prune_on_step = true;
        let mut env = Environment::reset(&cfg).unwrap();
        let (stats, min, missing) = replay(&mut env).unwrap();
        assert_eq!((stats.delivered, missing), (stats.parcels, 0), "seed {seed}");
        assert!(min >= -1e-12);
    }
}

#[test]
fn step_prune_equals_pruning_from_scratch() {
    for seed in 0..20 {
        let mut cfg = small(3, 5, 5, seed);
        cfg.netgen.trucks_per_step = Some(2);
        cfg.parcelgen.mean_route_length = 2;
        cfg.prune_on_step = true;
        let mut env = Environment::reset(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut steps = 0;
        while let Some((parcel, _)) = env.select_next() {
            let actions = get_actions(env.state(), parcel, false).unwrap();
            let mut scratch = env.state().clone();
            if actions.is_empty() {
                fail_parcel(&mut scratch, parcel).unwrap();
                env.fail(parcel).unwrap();
            } else {
                let action = actions[rng.gen_range(0..actions.len())];
                step(&mut scratch, parcel, action, false).unwrap();
                env.step(parcel, action).unwrap();
            }
            prune_all(&mut scratch);
            assert_eq!(structure(env.state()), structure(&scratch), "seed {seed}, step {steps}");
            steps += 1;
        }
    }
}

#[test]
fn final_pruning_shrinks_populated_instances() {
    for seed in 0..20 {
        let mut cfg = EnvConfig::default().with_parcels(50).with_seed(seed);
        cfg.netgen.horizon = 20;
        let mut state = populated(&cfg);
        let before = state.node_count();
        prune_all(&mut state);
        assert!(state.node_count() < before, "seed {seed}");
    }
}

#[test]
fn single_parcels_are_always_delivered_within_their_reach_set() {
    for seed in 0..100 {
        let mut cfg = EnvConfig::default().with_parcels(1).with_seed(seed);
        cfg.parcel_prune_actions = true;
        let mut env = Environment::reset(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = midmile::policies::RandomPolicy;
        let stats = midmile::dynamics::run_episode(&mut env, &mut policy, &mut rng).unwrap();
        assert_eq!(stats.delivered, 1, "seed {seed}");
    }
}
