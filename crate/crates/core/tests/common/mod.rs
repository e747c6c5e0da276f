#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use midmile::config::EnvConfig;
use midmile::dynamics::{get_actions, run_episode, Environment, EpisodeStats};
use midmile::features::{extract_feature_graph, FeatureGraph, FeatureOptions};
use midmile::gnn::{GraphNetParams, GraphNetShape};
use midmile::graph::{EdgeKind, MdpState, NodeRef};
use midmile::policies::{replay_choice, Decision, Policy};
use midmile::Result;

/// A scaled-down configuration with one truck per hub per step.
pub fn small(hubs: usize, horizon: u32, parcels: usize, seed: u64) -> EnvConfig {
    let mut cfg = EnvConfig::default().with_parcels(parcels).with_seed(seed);
    cfg.netgen.hubs = hubs;
    cfg.netgen.horizon = horizon;
    cfg.parcelgen.mean_route_length = (horizon / 2).clamp(1, 10);
    cfg
}

pub fn min_truck_capacity(state: &MdpState) -> f64 {
    state
        .edges()
        .filter(|e| e.kind.is_truck())
        .map(|e| e.capacity)
        .fold(f64::INFINITY, f64::min)
}

/// Follows the sampled routes and tracks the lowest truck capacity seen.
#[derive(Default)]
pub struct ReplayWatch {
    pub min_capacity: f64,
    pub missing: usize,
}

impl Policy for ReplayWatch {
    fn choose(&mut self, d: &Decision<'_>, _rng: &mut dyn RngCore) -> Result<usize> {
        self.min_capacity = self.min_capacity.min(min_truck_capacity(d.state));
        match replay_choice(d) {
            Some(i) => Ok(i),
            None => {
                self.missing += 1;
                Ok(0)
            }
        }
    }
}

/// Replays every sampled route; returns the episode statistics, the lowest
/// truck capacity observed and the number of decisions without a route action.
pub fn replay(env: &mut Environment) -> Result<(EpisodeStats, f64, usize)> {
    let mut watch = ReplayWatch {
        min_capacity: f64::INFINITY,
        missing: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stats = run_episode(env, &mut watch, &mut rng)?;
    let min = watch.min_capacity.min(min_truck_capacity(env.state()));
    Ok((stats, min, watch.missing))
}

/// Structural content of a state, independent of edge ids.
pub fn structure(state: &MdpState) -> (BTreeSet<NodeRef>, Vec<(EdgeKind, NodeRef, NodeRef, u64, u64)>) {
    let nodes = state.nodes().collect();
    let mut edges: Vec<_> = state
        .edges()
        .map(|e| (e.kind, e.sender, e.receiver, e.capacity.to_bits(), e.weight.to_bits()))
        .collect();
    edges.sort();
    (nodes, edges)
}

/// A random connected graph: a random spanning tree plus extra links, with
/// conductances in [0.1, 5).
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize, f64)> {
    let mut links = BTreeMap::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        links.insert((u, v), rng.gen_range(0.1..5.0));
    }
    for _ in 0..rng.gen_range(0..=n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            links.insert((a.min(b), a.max(b)), rng.gen_range(0.1..5.0));
        }
    }
    links.into_iter().map(|((a, b), c)| (a, b, c)).collect()
}

/// Nodal analysis: inject a unit current at `i`, ground `j`, solve the
/// conductance equations by Gaussian elimination and read the potential at `i`.
pub fn nodal_resistance(n: usize, links: &[(usize, usize, f64)], i: usize, j: usize) -> f64 {
    if i == j {
        return 0.0;
    }
    let free: Vec<usize> = (0..n).filter(|&v| v != j).collect();
    let pos = |v: usize| free.iter().position(|&f| f == v);
    let m = free.len();
    let mut a = vec![vec![0.0; m + 1]; m];
    for &(u, v, c) in links {
        for (x, y) in [(u, v), (v, u)] {
            if let Some(px) = pos(x) {
                a[px][px] += c;
                if let Some(py) = pos(y) {
                    a[px][py] -= c;
                }
            }
        }
    }
    a[pos(i).unwrap()][m] = 1.0;
    for col in 0..m {
        let pivot = (col..m).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, pivot);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..=m {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    let pi = pos(i).unwrap();
    a[pi][m] / a[pi][pi]
}

/// Feature graphs with at least two actions from small random instances.
pub fn gnn_graphs(count: usize, seed: u64) -> Vec<FeatureGraph> {
    let mut out = Vec::new();
    let mut s = seed;
    while out.len() < count {
        let mut cfg = small(5, 12, 8, s);
        cfg.netgen.trucks_per_step = Some(2);
        s += 1;
        let env = Environment::reset(&cfg).unwrap();
        let state = env.state();
        for p in state.live_parcels() {
            let actions = get_actions(state, p.id, false).unwrap();
            if actions.len() >= 2 {
                let k = 1 + out.len() % 2;
                let fg = extract_feature_graph(state, p.id, k, &actions, env.resistance(), FeatureOptions { phantom: true })
                    .unwrap();
                out.push(fg);
                break;
            }
        }
    }
    out
}

/// Random weights and biases, so no hidden unit sits exactly at a kink.
pub fn random_gnn_params(shape: GraphNetShape, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p = GraphNetParams::init(shape, rng.gen()).data;
    for x in p.iter_mut() {
        *x += rng.gen_range(-0.1..0.1);
    }
    p
}
