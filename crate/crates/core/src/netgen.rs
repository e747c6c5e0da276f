//! Static hub network and its expansion in time.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::NetgenConfig;
use crate::error::{Error, Result};
use crate::graph::{EdgeKind, MdpState, NodeRef, StaticNetwork};

/// Extended Barabási–Albert graph (Albert & Barabási 2000), following the
/// NetworkX construction step for step:
///
/// 1. start from `m` isolated nodes, each listed once in the attachment pool;
/// 2. with probability `p`, add `m` edges between existing nodes, the source
///    uniform among unsaturated nodes and the target drawn from the pool;
/// 3. with probability `q`, rewire `m` edges, moving one end to a pool node;
/// 4. otherwise add a node joined to `m` distinct pool nodes.
///
/// Every endpoint of a new edge is appended to the pool, which is what makes
/// attachment preferential. With `q = 0` the result is always connected.
pub fn gen_static(hubs: usize, m: usize, p: f64, q: f64, seed: u64) -> Result<StaticNetwork> {
    if m < 1 || hubs < m + 1 {
        return Err(Error::param(format!("need H >= m + 1 and m >= 1, got H = {hubs}, m = {m}")));
    }
    if !(p >= 0.0 && q >= 0.0 && p + q < 1.0) {
        return Err(Error::param("need p, q >= 0 and p + q < 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Rewiring may disconnect the graph; redraw in that case.
    for _ in 0..1000 {
        let links = extended_ba(hubs, m, p, q, &mut rng);
        let net = StaticNetwork::from_links(hubs, &links)?;
        if net.is_connected() {
            return Ok(net);
        }
    }
    Err(Error::Generation("could not sample a connected static network".into()))
}

fn extended_ba(n: usize, m: usize, p: f64, q: f64, rng: &mut impl Rng) -> Vec<(u32, u32)> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); m];
    let mut size = 0usize;
    let mut pool: Vec<usize> = (0..m).collect();
    let mut new_node = m;

    while new_node < n {
        let draw: f64 = rng.gen();
        let order = adj.len();
        let clique_degree = order - 1;
        let clique_size = order * clique_degree / 2;

        if draw < p && size + m <= clique_size {
            let mut eligible: Vec<usize> = (0..order).filter(|&v| adj[v].len() < clique_degree).collect();
            for _ in 0..m {
                let src = eligible[rng.gen_range(0..eligible.len())];
                let candidates: Vec<usize> = pool
                    .iter()
                    .copied()
                    .filter(|&v| v != src && !adj[src].contains(&v))
                    .collect();
                let dst = candidates[rng.gen_range(0..candidates.len())];
                adj[src].insert(dst);
                adj[dst].insert(src);
                size += 1;
                pool.push(src);
                pool.push(dst);
                if adj[src].len() == clique_degree {
                    eligible.retain(|&v| v != src);
                }
                if adj[dst].len() == clique_degree {
                    eligible.retain(|&v| v != dst);
                }
            }
        } else if p <= draw && draw < p + q && m <= size && size < clique_size {
            let mut eligible: Vec<usize> = (0..order)
                .filter(|&v| !adj[v].is_empty() && adj[v].len() < clique_degree)
                .collect();
            for _ in 0..m {
                if eligible.is_empty() {
                    break;
                }
                let node = eligible[rng.gen_range(0..eligible.len())];
                let nbrs: Vec<usize> = adj[node].iter().copied().collect();
                let src = nbrs[rng.gen_range(0..nbrs.len())];
                let candidates: Vec<usize> = pool
                    .iter()
                    .copied()
                    .filter(|&v| v != node && !adj[node].contains(&v))
                    .collect();
                if candidates.is_empty() {
                    break;
                }
                let dst = candidates[rng.gen_range(0..candidates.len())];
                adj[node].remove(&src);
                adj[src].remove(&node);
                adj[node].insert(dst);
                adj[dst].insert(node);
                if let Some(pos) = pool.iter().position(|&v| v == src) {
                    pool.remove(pos);
                }
                pool.push(dst);
                if adj[src].is_empty() {
                    eligible.retain(|&v| v != src);
                }
                if eligible.contains(&dst) {
                    if adj[dst].len() == clique_degree {
                        eligible.retain(|&v| v != dst);
                    }
                } else if adj[dst].len() == 1 {
                    eligible.push(dst);
                }
            }
        } else {
            let mut targets = BTreeSet::new();
            while targets.len() < m {
                targets.insert(pool[rng.gen_range(0..pool.len())]);
            }
            adj.push(BTreeSet::new());
            for &t in &targets {
                adj[new_node].insert(t);
                adj[t].insert(new_node);
                size += 1;
            }
            pool.extend(targets.iter().copied());
            pool.extend(std::iter::repeat(new_node).take(m + 1));
            new_node += 1;
        }
    }

    let mut links = Vec::with_capacity(size);
    for (a, nbrs) in adj.iter().enumerate() {
        for &b in nbrs {
            if a < b {
                links.push((a as u32, b as u32));
            }
        }
    }
    links
}

/// Draws `n` items one after another from `p(i) ∝ exp(beta * score_i)`,
/// removing each pick and renormalizing over the rest.
pub fn boltzmann_sample_without_replacement<T: Clone, R: Rng + ?Sized>(
    items: &[T],
    scores: &[f64],
    beta: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    if items.len() != scores.len() {
        return Err(Error::param("items and scores differ in length"));
    }
    if n > items.len() {
        return Err(Error::param(format!("cannot draw {n} of {} items without replacement", items.len())));
    }
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pool: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| (i, (beta * (s - top)).exp()))
        .collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = sample_weighted(pool.iter().map(|(_, w)| *w), rng);
        let (idx, _) = pool.remove(pick);
        out.push(items[idx].clone());
    }
    Ok(out)
}

/// Index drawn proportionally to non-negative weights.
pub(crate) fn sample_weighted<R: Rng + ?Sized>(
    weights: impl Iterator<Item = f64> + Clone,
    rng: &mut R,
) -> usize {
    let total: f64 = weights.clone().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// Expands a static network over `T` steps. Every hub gets a node per time
/// step, joined by virtual trucks; at each launch step `t < T` a fixed number
/// of static links host a truck, drawn by degree-weighted Boltzmann sampling.
pub fn expand(network: &StaticNetwork, cfg: &NetgenConfig, seed: u64) -> Result<MdpState> {
    cfg.validate()?;
    let per_step = cfg.trucks_per_step();
    let links = network.links();
    if per_step > links.len() {
        return Err(Error::param(format!(
            "trucks_per_step = {per_step} exceeds the {} static links",
            links.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = cfg.horizon;
    let mut state = MdpState::new(network.clone(), horizon);
    let hubs = network.hub_count() as u32;

    for t in 1..=horizon {
        for h in 0..hubs {
            state.add_node(NodeRef::new(h, t));
        }
    }
    for t in 1..horizon {
        for h in 0..hubs {
            state.add_pair(EdgeKind::VirtualFwd, NodeRef::new(h, t), NodeRef::new(h, t + 1), 0.0, 0.0);
        }
    }

    let degrees = network.degrees();
    let scores: Vec<f64> = links
        .iter()
        .map(|&(a, b)| (degrees[a as usize] + degrees[b as usize]) as f64)
        .collect();
    let (lo, hi) = cfg.capacity_range;
    for t in 1..horizon {
        let chosen = boltzmann_sample_without_replacement(links, &scores, cfg.beta1, per_step, &mut rng)?;
        for (a, b) in chosen {
            let (from, to) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
            let longest = cfg.max_duration.min(horizon - t);
            let duration = rng.gen_range(1..=longest);
            let capacity = if cfg.unit_capacity {
                1.0
            } else {
                lo + (hi - lo) * rng.gen::<f64>()
            };
            state.add_pair(
                EdgeKind::TruckFwd,
                NodeRef::new(from, t),
                NodeRef::new(to, t + duration),
                capacity,
                0.0,
            );
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_state;

    #[test]
    fn three_hubs_is_a_path() {
        // Two isolated seeds; the edge-adding branch has no room yet, so the
        // third hub attaches to both.
        for seed in 0..20 {
            let net = gen_static(3, 2, 0.2, 0.0, seed).unwrap();
            assert_eq!(net.links(), &[(0, 2), (1, 2)]);
            assert!(net.is_connected());
        }
    }

    #[test]
    fn rejects_small_networks() {
        assert!(gen_static(2, 2, 0.2, 0.0, 0).is_err());
        assert!(gen_static(0, 2, 0.2, 0.0, 0).is_err());
        assert!(gen_static(10, 2, 0.6, 0.4, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gen_static(10, 2, 0.2, 0.0, 9).unwrap(), gen_static(10, 2, 0.2, 0.0, 9).unwrap());
    }

    #[test]
    fn rewiring_keeps_graph_simple_and_connected() {
        for seed in 0..50 {
            let net = gen_static(12, 2, 0.2, 0.3, seed).unwrap();
            assert!(net.is_connected());
        }
    }

    #[test]
    fn draw_count_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(boltzmann_sample_without_replacement(&[1, 2], &[0.0, 0.0], 1.0, 3, &mut rng).is_err());
    }

    #[test]
    fn full_draw_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let items: Vec<u32> = (0..7).collect();
        let mut got = boltzmann_sample_without_replacement(&items, &[1., 5., 2., 0., 3., 3., 9.], 0.7, 7, &mut rng).unwrap();
        got.sort();
        assert_eq!(got, items);
    }

    #[test]
    fn boltzmann_pair_probability() {
        // p(second) = e^{ln 3} / (1 + e^{ln 3}) = 3/4.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let hits = (0..draws)
            .filter(|_| {
                boltzmann_sample_without_replacement(&[0, 1], &[0.0, 3f64.ln()], 1.0, 1, &mut rng).unwrap()[0] == 1
            })
            .count() as f64;
        let expected = 0.75 * draws as f64;
        let chi2 = (hits - expected).powi(2) / expected
            + ((draws as f64 - hits) - 0.25 * draws as f64).powi(2) / (0.25 * draws as f64);
        // 1 degree of freedom, 99.9% quantile.
        assert!(chi2 < 10.83, "chi2 = {chi2}");
    }

    #[test]
    fn zero_beta_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            let pick = boltzmann_sample_without_replacement(&[0, 1, 2, 3], &[0., 10., 100., -4.], 0.0, 1, &mut rng).unwrap();
            counts[pick[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 4.0 * 86.6, "{counts:?}");
        }
    }

    #[test]
    fn two_step_horizon_has_unit_durations() {
        let net = gen_static(10, 2, 0.2, 0.0, 1).unwrap();
        let cfg = NetgenConfig {
            horizon: 2,
            ..NetgenConfig::default()
        };
        let state = expand(&net, &cfg, 1).unwrap();
        let trucks: Vec<_> = state.edges().filter(|e| e.kind == EdgeKind::TruckFwd).collect();
        assert_eq!(trucks.len(), 10);
        assert!(trucks.iter().all(|e| e.sender.time == 1 && e.receiver.time == 2));
    }

    #[test]
    fn expansion_invariants() {
        let net = gen_static(10, 2, 0.2, 0.0, 4).unwrap();
        let cfg = NetgenConfig {
            horizon: 20,
            ..NetgenConfig::default()
        };
        let state = expand(&net, &cfg, 4).unwrap();
        assert!(validate_state(&state).is_empty());
        for t in 1..20 {
            let launched = state
                .edges()
                .filter(|e| e.kind == EdgeKind::TruckFwd && e.sender.time == t)
                .count();
            assert_eq!(launched, 10);
            for h in 0..10 {
                let n = NodeRef::new(h, t);
                assert!(state
                    .outgoing(n)
                    .any(|e| e.kind == EdgeKind::VirtualFwd && e.receiver == NodeRef::new(h, t + 1)));
            }
        }
        for e in state.edges().filter(|e| e.kind == EdgeKind::TruckFwd) {
            assert!(e.receiver.time <= 20 && e.duration() >= 1 && e.duration() <= 5);
            assert!((0.0..=1.0).contains(&e.capacity));
        }
        assert_eq!(state, expand(&net, &cfg, 4).unwrap());
    }

    #[test]
    fn unit_capacity_trucks() {
        let net = gen_static(10, 2, 0.2, 0.0, 2).unwrap();
        let cfg = NetgenConfig {
            unit_capacity: true,
            ..NetgenConfig::default()
        };
        let state = expand(&net, &cfg, 2).unwrap();
        assert!(state.edges().filter(|e| e.kind.is_truck()).all(|e| e.capacity == 1.0));
    }

    #[test]
    fn too_many_trucks_per_step() {
        let net = gen_static(3, 2, 0.2, 0.0, 0).unwrap();
        let cfg = NetgenConfig {
            hubs: 3,
            horizon: 5,
            ..NetgenConfig::default()
        };
        assert!(expand(&net, &cfg, 0).is_err());
    }
}
