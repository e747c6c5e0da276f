use std::collections::{BTreeMap, BTreeSet};

use super::graph::{EdgeKey, FeatureEdge};
use crate::graph::{EdgeId, EdgeKind, MdpState, NodeRef, ParcelId, ParcelRecord};
use crate::pruning::{parcel_prune, ReachSet};

/// Expected load a parcel puts on each edge of its reach set when it picks
/// uniformly among its reach-set edges at every node: weight `w` at the
/// current node, split `w / n` over the `n` outgoing edges, absorbed at the
/// goal. Keys are forward edge ids, virtual edges included.
pub fn phantom_flow(state: &MdpState, parcel: &ParcelRecord, reach: &ReachSet) -> BTreeMap<EdgeId, f64> {
    let mut flow = BTreeMap::new();
    if !reach.deliverable || reach.edges.is_empty() {
        return flow;
    }
    let mut inflow: BTreeMap<NodeRef, f64> = BTreeMap::from([(parcel.current, parcel.weight)]);
    // Node order is time-major, so every node is settled before it is split.
    for &u in &reach.nodes {
        if u == parcel.goal {
            continue;
        }
        let Some(&f) = inflow.get(&u) else {
            continue;
        };
        let out: Vec<(EdgeId, NodeRef)> = state
            .transport_out(u)
            .filter(|e| reach.edges.contains(&e.id))
            .map(|e| (e.id, e.receiver))
            .collect();
        if out.is_empty() {
            continue;
        }
        let share = f / out.len() as f64;
        for (id, v) in out {
            *flow.entry(id).or_insert(0.0) += share;
            *inflow.entry(v).or_insert(0.0) += share;
        }
    }
    flow
}

/// Summed phantom load on the feature graph's trucks from every live parcel
/// that is not itself part of the graph. Keys are forward truck ids.
pub fn phantom_weights(
    state: &MdpState,
    nodes: &BTreeSet<NodeRef>,
    edges: &[FeatureEdge],
    routed: ParcelId,
) -> BTreeMap<EdgeId, f64> {
    let in_graph: BTreeSet<EdgeId> = edges
        .iter()
        .filter_map(|e| match e.key {
            EdgeKey::State(id) => Some(id),
            EdgeKey::Synthetic { .. } => None,
        })
        .collect();
    let trucks: BTreeSet<EdgeId> = edges
        .iter()
        .filter(|e| e.kind == EdgeKind::TruckFwd)
        .filter_map(|e| match e.key {
            EdgeKey::State(id) => Some(id),
            EdgeKey::Synthetic { .. } => None,
        })
        .collect();
    let mut out = BTreeMap::new();
    let (Some(first), Some(last)) = (nodes.first(), nodes.last()) else {
        return out;
    };
    let (t_min, t_max) = (first.time, last.time);
    for q in state.live_parcels() {
        if q.id == routed || q.edge.is_some_and(|e| in_graph.contains(&e)) {
            continue;
        }
        if q.goal.time < t_min || q.current.time > t_max {
            continue;
        }
        let reach = parcel_prune(state, q);
        if !reach.edges.iter().any(|e| trucks.contains(e)) {
            continue;
        }
        for (id, w) in phantom_flow(state, q, &reach) {
            if trucks.contains(&id) {
                *out.entry(id).or_insert(0.0) += w;
            }
        }
    }
    out
}
