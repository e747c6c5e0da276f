//! Skip pruning, per-parcel reachability, whole-state and incremental pruning.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;

use crate::graph::{EdgeId, EdgeKind, MdpState, NodeRef, ParcelId, ParcelRecord, SkipHop};

/// Nodes and forward transport edges lying on some capacity-feasible path
/// from a parcel's current node to its goal.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReachSet {
    pub nodes: BTreeSet<NodeRef>,
    pub edges: BTreeSet<EdgeId>,
    /// False when no feasible path exists; the set then holds only the
    /// current and goal nodes.
    pub deliverable: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PruneReport {
    pub removed_nodes: usize,
    pub removed_pairs: usize,
    /// Forward ids of the merged edges created by skip pruning.
    pub merged: Vec<EdgeId>,
}

impl PruneReport {
    fn absorb(&mut self, other: PruneReport) {
        self.removed_nodes += other.removed_nodes;
        self.removed_pairs += other.removed_pairs;
        self.merged.extend(other.merged);
    }
}

fn skippable(state: &MdpState, anchors: &BTreeSet<NodeRef>, node: NodeRef) -> bool {
    !anchors.contains(&node) && state.transport_in(node).count() == 1 && state.transport_out(node).count() == 1
}

/// Replaces every chain through nodes with a single incoming and a single
/// outgoing transport edge (and no parcel anchored there) by one merged edge.
/// The merged edge is virtual only if the whole chain is virtual; otherwise it
/// is a truck holding the smallest truck capacity of the chain.
pub fn skip_prune(state: &mut MdpState) -> PruneReport {
    let anchors = state.parcel_anchors();
    let mut report = PruneReport::default();
    let starts: Vec<NodeRef> = state.nodes().filter(|&n| !skippable(state, &anchors, n)).collect();
    for start in starts {
        let heads: Vec<EdgeId> = state.transport_out(start).map(|e| e.id).collect();
        for head in heads {
            let mut chain = vec![head];
            let mut inner = Vec::new();
            let mut node = state.edge(head).expect("edge listed as outgoing").receiver;
            while skippable(state, &anchors, node) {
                inner.push(node);
                let next = state.transport_out(node).next().expect("skippable node has one child");
                chain.push(next.id);
                node = next.receiver;
            }
            if inner.is_empty() {
                continue;
            }
            let mut hops: Vec<SkipHop> = Vec::new();
            let mut all_virtual = true;
            let mut capacity = f64::INFINITY;
            for &id in &chain {
                let e = state.edge(id).expect("chain edge");
                if e.kind == EdgeKind::TruckFwd {
                    all_virtual = false;
                    capacity = capacity.min(e.capacity);
                }
                hops.extend(state.expand_edge(id));
            }
            for &id in &chain {
                state.remove_pair(id);
            }
            for &n in &inner {
                state.remove_node(n);
            }
            let merged = if all_virtual {
                state.add_pair(EdgeKind::VirtualFwd, start, node, 0.0, 0.0)
            } else {
                state.add_pair(EdgeKind::TruckFwd, start, node, capacity, 0.0)
            };
            state.skip_map_mut().insert(merged, hops);
            report.removed_nodes += inner.len();
            report.removed_pairs += chain.len();
            report.merged.push(merged);
        }
    }
    report
}

/// Reachability for one live parcel, searched from both ends: forward from the
/// current node through steps before the midpoint `ceil((t_cur + t_goal) / 2)`,
/// backward from the goal through steps at or after it. Only nodes reachable
/// from both ends are kept.
pub fn parcel_prune(state: &MdpState, parcel: &ParcelRecord) -> ReachSet {
    let trivial = |deliverable| ReachSet {
        nodes: [parcel.current, parcel.goal].into_iter().collect(),
        edges: BTreeSet::new(),
        deliverable,
    };
    let (current, goal, weight) = (parcel.current, parcel.goal, parcel.weight);
    if goal.time <= current.time || !state.contains_node(current) || !state.contains_node(goal) {
        return trivial(current == goal);
    }
    let mid = (current.time + goal.time).div_ceil(2);

    // Forward half: nodes before the midpoint reachable from the current node.
    let mut upper: BTreeSet<NodeRef> = BTreeSet::from([current]);
    let mut crossing: Vec<(NodeRef, NodeRef, EdgeId)> = Vec::new();
    let mut queue = VecDeque::from([current]);
    while let Some(u) = queue.pop_front() {
        for e in state.transport_out(u).filter(|e| e.admits(weight)) {
            let v = e.receiver;
            if v.time > goal.time {
                continue;
            }
            if v.time < mid {
                if upper.insert(v) {
                    queue.push_back(v);
                }
            } else {
                crossing.push((u, v, e.id));
            }
        }
    }

    // Backward half: nodes at or after the midpoint that reach the goal.
    let mut lower: BTreeSet<NodeRef> = BTreeSet::from([goal]);
    let mut queue = VecDeque::from([goal]);
    while let Some(v) = queue.pop_front() {
        for e in state.transport_in(v).filter(|e| e.admits(weight)) {
            let u = e.sender;
            if u.time >= mid && u.time >= current.time && lower.insert(u) {
                queue.push_back(u);
            }
        }
    }

    let meeting: Vec<(NodeRef, NodeRef, EdgeId)> = crossing
        .into_iter()
        .filter(|(_, v, _)| lower.contains(v))
        .collect();
    if meeting.is_empty() {
        return trivial(false);
    }

    // Keep the upper nodes that lead to a meeting edge and the lower nodes
    // reached from one.
    let mut nodes: BTreeSet<NodeRef> = BTreeSet::new();
    let mut queue: VecDeque<NodeRef> = VecDeque::new();
    for &(u, _, _) in &meeting {
        if nodes.insert(u) {
            queue.push_back(u);
        }
    }
    while let Some(v) = queue.pop_front() {
        for e in state.transport_in(v).filter(|e| e.admits(weight)) {
            if upper.contains(&e.sender) && nodes.insert(e.sender) {
                queue.push_back(e.sender);
            }
        }
    }
    let mut down: BTreeSet<NodeRef> = BTreeSet::new();
    for &(_, v, _) in &meeting {
        if down.insert(v) {
            queue.push_back(v);
        }
    }
    while let Some(u) = queue.pop_front() {
        for e in state.transport_out(u).filter(|e| e.admits(weight)) {
            if lower.contains(&e.receiver) && down.insert(e.receiver) {
                queue.push_back(e.receiver);
            }
        }
    }
    nodes.extend(down);

    let edges = nodes
        .iter()
        .flat_map(|&u| state.transport_out(u))
        .filter(|e| e.admits(weight) && nodes.contains(&e.receiver))
        .map(|e| e.id)
        .collect();
    ReachSet {
        nodes,
        edges,
        deliverable: true,
    }
}

/// Reach sets of every live parcel.
pub fn reach_sets(state: &MdpState) -> BTreeMap<ParcelId, ReachSet> {
    let live: Vec<&ParcelRecord> = state.live_parcels().collect();
    live.par_iter().map(|p| (p.id, parcel_prune(state, p))).collect()
}

/// Everything some live parcel still needs: union of the reach sets plus the
/// parcel edges themselves.
fn needed(state: &MdpState) -> (BTreeSet<NodeRef>, BTreeSet<EdgeId>) {
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for reach in reach_sets(state).into_values() {
        nodes.extend(reach.nodes);
        edges.extend(reach.edges);
    }
    for p in state.live_parcels() {
        nodes.insert(p.current);
        nodes.insert(p.goal);
        edges.extend(p.edge);
    }
    (nodes, edges)
}

fn remove_unneeded(
    state: &mut MdpState,
    nodes: &BTreeSet<NodeRef>,
    edges: &BTreeSet<EdgeId>,
    scope: Option<&BTreeSet<NodeRef>>,
) -> PruneReport {
    let in_scope = |n: &NodeRef| scope.is_none_or(|s| s.contains(n));
    let drop_edges: Vec<EdgeId> = state
        .edges()
        .filter(|e| e.kind.is_forward() && !edges.contains(&e.id))
        .filter(|e| in_scope(&e.sender) || in_scope(&e.receiver))
        .map(|e| e.id)
        .collect();
    let drop_nodes: Vec<NodeRef> = state
        .nodes()
        .filter(|n| in_scope(n) && !nodes.contains(n))
        .collect();
    for &id in &drop_edges {
        state.remove_pair(id);
    }
    for &n in &drop_nodes {
        state.remove_node(n);
    }
    PruneReport {
        removed_nodes: drop_nodes.len(),
        removed_pairs: drop_edges.len(),
        merged: Vec::new(),
    }
}

/// Keeps only the union of all live parcels' reach sets, then skip prunes.
pub fn prune_all(state: &mut MdpState) -> PruneReport {
    let (nodes, edges) = needed(state);
    let mut report = remove_unneeded(state, &nodes, &edges, None);
    report.absorb(skip_prune(state));
    report
}

/// Nodes structurally reachable forward (through transport edges) from `start`.
pub fn forward_cone(state: &MdpState, start: NodeRef) -> BTreeSet<NodeRef> {
    cone(state, start, true)
}

/// Nodes from which `start` is structurally reachable.
pub fn backward_cone(state: &MdpState, start: NodeRef) -> BTreeSet<NodeRef> {
    cone(state, start, false)
}

fn cone(state: &MdpState, start: NodeRef, forward: bool) -> BTreeSet<NodeRef> {
    let mut seen = BTreeSet::new();
    if !state.contains_node(start) {
        return seen;
    }
    seen.insert(start);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let next: Vec<NodeRef> = if forward {
            state.transport_out(u).map(|e| e.receiver).collect()
        } else {
            state.transport_in(u).map(|e| e.sender).collect()
        };
        for v in next {
            if seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Incremental pruning after a transition. `released` holds the nodes a
/// transition may have made obsolete (the vacated node, and the goal of a
/// parcel that just finished). Only their forward and backward cones are
/// candidates for removal; reach sets are recomputed on demand. On a state
/// that was fully pruned before the transition this matches [`prune_all`].
pub fn step_prune(state: &mut MdpState, released: &[NodeRef]) -> PruneReport {
    let mut scope = BTreeSet::new();
    for &n in released {
        scope.extend(forward_cone(state, n));
        scope.extend(backward_cone(state, n));
    }
    if scope.is_empty() {
        return skip_prune(state);
    }
    let (nodes, edges) = needed(state);
    let mut report = remove_unneeded(state, &nodes, &edges, Some(&scope));
    report.absorb(skip_prune(state));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{validate_state, StaticNetwork};

    fn n(h: u32, t: u32) -> NodeRef {
        NodeRef::new(h, t)
    }

    fn line_state(hubs: usize, horizon: u32) -> MdpState {
        let links: Vec<(u32, u32)> = (1..hubs as u32).map(|h| (h - 1, h)).collect();
        let net = StaticNetwork::from_links(hubs, &links).unwrap();
        let mut s = MdpState::new(net, horizon);
        for h in 0..hubs as u32 {
            for t in 1..=horizon {
                s.add_node(n(h, t));
                if t > 1 {
                    s.add_pair(EdgeKind::VirtualFwd, n(h, t - 1), n(h, t), 0.0, 0.0);
                }
            }
        }
        s
    }

    #[test]
    fn virtual_chain_collapses() {
        let mut s = line_state(1, 3);
        let report = skip_prune(&mut s);
        assert_eq!(report.removed_nodes, 1);
        assert_eq!(s.node_count(), 2);
        let e: Vec<_> = s.edges().filter(|e| e.kind.is_forward()).collect();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].kind, EdgeKind::VirtualFwd);
        assert_eq!((e[0].sender, e[0].receiver), (n(0, 1), n(0, 3)));
        assert_eq!(s.skip_map()[&e[0].id].len(), 2);
        assert!(validate_state(&s).is_empty());
    }

    #[test]
    fn merged_truck_takes_minimum_capacity() {
        // Hub 0: 1 -> truck -> hub 1 at 2 -> virtual -> hub 1 at 3 -> truck -> hub 0 at 4.
        let net = StaticNetwork::from_links(2, &[(0, 1)]).unwrap();
        let mut s = MdpState::new(net, 4);
        for node in [n(0, 1), n(1, 2), n(1, 3), n(0, 4)] {
            s.add_node(node);
        }
        s.add_pair(EdgeKind::TruckFwd, n(0, 1), n(1, 2), 0.3, 0.0);
        s.add_pair(EdgeKind::VirtualFwd, n(1, 2), n(1, 3), 0.0, 0.0);
        s.add_pair(EdgeKind::TruckFwd, n(1, 3), n(0, 4), 0.7, 0.0);
        skip_prune(&mut s);
        let e: Vec<_> = s.edges().filter(|e| e.kind.is_forward()).collect();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].kind, EdgeKind::TruckFwd);
        assert_eq!(e[0].capacity, 0.3);
        assert_eq!(s.edge(e[0].id.twin()).unwrap().capacity, 0.3);
    }

    #[test]
    fn parcel_goal_is_kept() {
        let mut s = line_state(1, 3);
        s.add_parcel(0.5, n(0, 1), n(0, 2), vec![]);
        skip_prune(&mut s);
        assert!(s.contains_node(n(0, 2)));
        assert_eq!(s.node_count(), 3);
    }

    #[test]
    fn skip_prune_is_a_fixpoint() {
        let mut s = line_state(3, 6);
        s.add_pair(EdgeKind::TruckFwd, n(0, 2), n(1, 4), 0.5, 0.0);
        s.add_pair(EdgeKind::TruckFwd, n(1, 1), n(2, 3), 0.5, 0.0);
        skip_prune(&mut s);
        let once = s.clone();
        let report = skip_prune(&mut s);
        assert!(report.merged.is_empty());
        assert_eq!(s, once);
    }

    #[test]
    fn one_virtual_hop_to_goal() {
        let mut s = line_state(2, 3);
        s.add_pair(EdgeKind::TruckFwd, n(0, 1), n(1, 3), 1.0, 0.0);
        let id = s.add_parcel(0.5, n(0, 1), n(0, 2), vec![]);
        let reach = parcel_prune(&s, s.parcel(id).unwrap());
        assert!(reach.deliverable);
        assert_eq!(reach.nodes, BTreeSet::from([n(0, 1), n(0, 2)]));
        assert_eq!(reach.edges.len(), 1);
        let e = s.edge(*reach.edges.first().unwrap()).unwrap();
        assert_eq!((e.kind, e.sender, e.receiver), (EdgeKind::VirtualFwd, n(0, 1), n(0, 2)));
    }

    #[test]
    fn capacity_blocks_reachability() {
        let mut s = line_state(2, 3);
        s.add_pair(EdgeKind::TruckFwd, n(0, 1), n(1, 2), 0.4, 0.0);
        let id = s.add_parcel(0.5, n(0, 1), n(1, 3), vec![]);
        let reach = parcel_prune(&s, s.parcel(id).unwrap());
        assert!(!reach.deliverable);
        assert_eq!(reach.nodes, BTreeSet::from([n(0, 1), n(1, 3)]));
        assert!(reach.edges.is_empty());
    }

    #[test]
    fn empty_parcel_set_prunes_everything() {
        let mut s = line_state(2, 4);
        prune_all(&mut s);
        assert_eq!(s.node_count(), 0);
        assert_eq!(s.edge_count(), 0);
    }

    #[test]
    fn cones() {
        let mut s = line_state(2, 3);
        s.add_pair(EdgeKind::TruckFwd, n(0, 1), n(1, 2), 1.0, 0.0);
        assert_eq!(forward_cone(&s, n(0, 1)).len(), 5);
        assert_eq!(backward_cone(&s, n(1, 2)), BTreeSet::from([n(0, 1), n(1, 1), n(1, 2)]));
    }
}
