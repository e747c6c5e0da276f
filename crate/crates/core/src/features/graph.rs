use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::phantom::phantom_weights;
use super::{relative_time, ResistanceMatrix};
use crate::error::{Error, Result};
use crate::graph::{encode_edge_features, EdgeId, EdgeKind, EdgeRecord, MdpState, NodeRef, ParcelId, EDGE_FEATURES};

/// Edge features: the 8 base entries, then routed-parcel flag, available
/// action flag and phantom weight.
pub const FG_EDGE_FEATURES: usize = EDGE_FEATURES + 3;
/// Node features: resistance distance to the goal hub, relative time.
pub const FG_NODE_FEATURES: usize = 2;

pub const ROUTED_FLAG: usize = EDGE_FEATURES;
pub const ACTION_FLAG: usize = EDGE_FEATURES + 1;
pub const PHANTOM: usize = EDGE_FEATURES + 2;

/// Identity of a feature-graph edge, independent of storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EdgeKey {
    State(EdgeId),
    /// Reconnecting virtual link between consecutive nodes of one hub.
    Synthetic { sender: NodeRef, receiver: NodeRef },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureEdge {
    pub key: EdgeKey,
    pub kind: EdgeKind,
    pub sender: usize,
    pub receiver: usize,
    pub features: [f64; FG_EDGE_FEATURES],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FeatureOptions {
    pub phantom: bool,
}

/// The K-step neighborhood of a parcel's current and goal nodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureGraph {
    pub parcel: ParcelId,
    pub k: usize,
    pub nodes: Vec<NodeRef>,
    pub node_features: Vec<[f64; FG_NODE_FEATURES]>,
    pub edges: Vec<FeatureEdge>,
    /// Per available action, in action-list order: (edge index, action id).
    /// Empty for K = 0, where no action edge is part of the graph.
    pub action_map: Vec<(usize, EdgeId)>,
}

impl FeatureGraph {
    pub fn node_index(&self, node: NodeRef) -> Option<usize> {
        self.nodes.iter().position(|&n| n == node)
    }

    pub fn edge_index(&self, key: EdgeKey) -> Option<usize> {
        self.edges.iter().position(|e| e.key == key)
    }

    pub fn action_count(&self) -> usize {
        self.action_map.len()
    }

    /// Storage-order permutation: `node_order[i]` / `edge_order[i]` name the
    /// old index placed at position `i`.
    pub fn permuted(&self, node_order: &[usize], edge_order: &[usize]) -> FeatureGraph {
        let mut new_node = vec![0; node_order.len()];
        for (new, &old) in node_order.iter().enumerate() {
            new_node[old] = new;
        }
        let mut new_edge = vec![0; edge_order.len()];
        for (new, &old) in edge_order.iter().enumerate() {
            new_edge[old] = new;
        }
        FeatureGraph {
            parcel: self.parcel,
            k: self.k,
            nodes: node_order.iter().map(|&i| self.nodes[i]).collect(),
            node_features: node_order.iter().map(|&i| self.node_features[i]).collect(),
            edges: edge_order
                .iter()
                .map(|&i| {
                    let e = &self.edges[i];
                    FeatureEdge {
                        sender: new_node[e.sender],
                        receiver: new_node[e.receiver],
                        ..e.clone()
                    }
                })
                .collect(),
            action_map: self.action_map.iter().map(|&(i, a)| (new_edge[i], a)).collect(),
        }
    }
}

/// Collects the nodes within `k` expansion rounds of the parcel's current and
/// goal nodes. Each round adds every edge touching the frontier along with its
/// other endpoint; both frontiers grow together.
pub fn neighborhood(state: &MdpState, parcel: ParcelId, k: usize) -> Result<BTreeSet<NodeRef>> {
    let p = state
        .parcel(parcel)
        .filter(|p| p.in_transit())
        .ok_or(Error::ParcelNotInTransit(parcel))?;
    let mut nodes: BTreeSet<NodeRef> = BTreeSet::from([p.current, p.goal]);
    let mut frontier: Vec<NodeRef> = nodes.iter().copied().collect();
    for _ in 0..k {
        let mut next = Vec::new();
        for &u in &frontier {
            for e in state.outgoing(u) {
                if nodes.insert(e.receiver) {
                    next.push(e.receiver);
                }
            }
            for e in state.incoming(u) {
                if nodes.insert(e.sender) {
                    next.push(e.sender);
                }
            }
        }
        frontier = next;
    }
    Ok(nodes)
}

/// Builds the feature graph of a parcel. `actions` is the parcel's available
/// action list; the action map follows its order. Edges are every state edge
/// between collected nodes (for K = 0 only the parcel's own pair), plus
/// synthetic virtual links joining consecutive nodes of a hub that no virtual
/// edge joins.
pub fn extract_feature_graph(
    state: &MdpState,
    parcel: ParcelId,
    k: usize,
    actions: &[EdgeId],
    resistance: &ResistanceMatrix,
    options: FeatureOptions,
) -> Result<FeatureGraph> {
    let node_set = neighborhood(state, parcel, k)?;
    let p = state.parcel(parcel).expect("checked by neighborhood");
    let nodes: Vec<NodeRef> = node_set.iter().copied().collect();
    let index: BTreeMap<NodeRef, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    let records: Vec<&EdgeRecord> = if k == 0 {
        let fwd = p.edge.ok_or(Error::ParcelNotInTransit(parcel))?;
        [fwd, fwd.twin()].iter().filter_map(|&id| state.edge(id)).collect()
    } else {
        nodes
            .iter()
            .flat_map(|&u| state.outgoing(u))
            .filter(|e| node_set.contains(&e.receiver))
            .collect()
    };
    let routed = p.edge;
    let action_set: BTreeSet<EdgeId> = actions.iter().copied().collect();
    let mut edges: Vec<FeatureEdge> = records
        .iter()
        .map(|e| {
            let mut features = [0.0; FG_EDGE_FEATURES];
            features[..EDGE_FEATURES].copy_from_slice(&encode_edge_features(e));
            let fwd = if e.id.is_forward_slot() { e.id } else { e.id.twin() };
            if e.kind.is_parcel() && Some(fwd) == routed {
                features[ROUTED_FLAG] = 1.0;
            }
            if action_set.contains(&e.id) {
                features[ACTION_FLAG] = 1.0;
            }
            FeatureEdge {
                key: EdgeKey::State(e.id),
                kind: e.kind,
                sender: index[&e.sender],
                receiver: index[&e.receiver],
                features,
            }
        })
        .collect();

    let linked: BTreeSet<(NodeRef, NodeRef)> = records
        .iter()
        .filter(|e| e.kind == EdgeKind::VirtualFwd)
        .map(|e| (e.sender, e.receiver))
        .collect();
    let mut by_hub: BTreeMap<u32, Vec<NodeRef>> = BTreeMap::new();
    for &n in &nodes {
        by_hub.entry(n.hub.0).or_default().push(n);
    }
    for hub_nodes in by_hub.values_mut() {
        hub_nodes.sort_by_key(|n| n.time);
        for w in hub_nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            if linked.contains(&(a, b)) {
                continue;
            }
            for (kind, s, r) in [(EdgeKind::VirtualFwd, a, b), (EdgeKind::VirtualBwd, b, a)] {
                let mut features = [0.0; FG_EDGE_FEATURES];
                features[kind.one_hot_index()] = 1.0;
                edges.push(FeatureEdge {
                    key: EdgeKey::Synthetic { sender: s, receiver: r },
                    kind,
                    sender: index[&s],
                    receiver: index[&r],
                    features,
                });
            }
        }
    }
    edges.sort_by_key(|e| e.key);

    if options.phantom {
        let weights = phantom_weights(state, &node_set, &edges, parcel);
        for e in edges.iter_mut() {
            if let EdgeKey::State(id) = e.key {
                if e.kind.is_truck() {
                    let fwd = if id.is_forward_slot() { id } else { id.twin() };
                    e.features[PHANTOM] = weights.get(&fwd).copied().unwrap_or(0.0);
                }
            }
        }
    }

    let mut action_map = Vec::with_capacity(actions.len());
    if k > 0 {
        for &a in actions {
            let i = edges
                .binary_search_by_key(&EdgeKey::State(a), |e| e.key)
                .map_err(|_| Error::InvalidAction { parcel, action: a })?;
            action_map.push((i, a));
        }
    }

    let distances = resistance.row(p.goal.hub);
    let node_features = nodes
        .iter()
        .map(|n| {
            [
                distances[n.hub.index()],
                relative_time(n.time, p.current.time, p.goal.time),
            ]
        })
        .collect();

    Ok(FeatureGraph {
        parcel,
        k,
        nodes,
        node_features,
        edges,
        action_map,
    })
}
