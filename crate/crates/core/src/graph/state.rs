use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{EdgeId, EdgeKind, EdgeRecord, HubId, NodeRef, ParcelId, ParcelRecord, ParcelStatus};
use crate::error::{Error, Result};

/// Undirected, simple hub graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StaticNetwork {
    hubs: usize,
    links: Vec<(u32, u32)>,
    degree: Vec<u32>,
    neighbors: Vec<Vec<u32>>,
}

impl StaticNetwork {
    /// Builds the network from unordered hub pairs. Rejects self-loops,
    /// duplicate links and out-of-range hubs.
    pub fn from_links(hubs: usize, links: &[(u32, u32)]) -> Result<Self> {
        let mut canonical = BTreeSet::new();
        for &(a, b) in links {
            if a as usize >= hubs || b as usize >= hubs {
                return Err(Error::param(format!("link ({a}, {b}) out of range for {hubs} hubs")));
            }
            if a == b {
                return Err(Error::param(format!("self-loop at hub {a}")));
            }
            if !canonical.insert((a.min(b), a.max(b))) {
                return Err(Error::param(format!("duplicate link ({a}, {b})")));
            }
        }
        let links: Vec<(u32, u32)> = canonical.into_iter().collect();
        let mut degree = vec![0; hubs];
        let mut neighbors = vec![Vec::new(); hubs];
        for &(a, b) in &links {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
            neighbors[a as usize].push(b);
            neighbors[b as usize].push(a);
        }
        Ok(StaticNetwork {
            hubs,
            links,
            degree,
            neighbors,
        })
    }

    pub fn hub_count(&self) -> usize {
        self.hubs
    }

    /// Sorted `(a, b)` pairs with `a < b`.
    pub fn links(&self) -> &[(u32, u32)] {
        &self.links
    }

    pub fn degree(&self, hub: HubId) -> u32 {
        self.degree[hub.index()]
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degree
    }

    pub fn neighbors(&self, hub: HubId) -> &[u32] {
        &self.neighbors[hub.index()]
    }

    pub fn is_connected(&self) -> bool {
        if self.hubs == 0 {
            return true;
        }
        let mut seen = vec![false; self.hubs];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(h) = queue.pop_front() {
            for &n in &self.neighbors[h] {
                if !seen[n as usize] {
                    seen[n as usize] = true;
                    queue.push_back(n as usize);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// One original forward edge hidden inside a merged edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipHop {
    pub edge: EdgeId,
    pub kind: EdgeKind,
    pub sender: NodeRef,
    pub receiver: NodeRef,
}

/// Merged forward edge id to the original hops it replaces, in time order.
pub type SkipMap = BTreeMap<EdgeId, Vec<SkipHop>>;

/// The time-expanded graph with its parcels.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpState {
    network: StaticNetwork,
    horizon: u32,
    nodes: BTreeSet<NodeRef>,
    edges: BTreeMap<EdgeId, EdgeRecord>,
    parcels: BTreeMap<ParcelId, ParcelRecord>,
    skip_map: SkipMap,
    next_edge: u32,
    outgoing: BTreeMap<NodeRef, BTreeSet<EdgeId>>,
    incoming: BTreeMap<NodeRef, BTreeSet<EdgeId>>,
}

impl MdpState {
    pub fn new(network: StaticNetwork, horizon: u32) -> Self {
        MdpState {
            network,
            horizon,
            nodes: BTreeSet::new(),
            edges: BTreeMap::new(),
            parcels: BTreeMap::new(),
            skip_map: SkipMap::new(),
            next_edge: 0,
            outgoing: BTreeMap::new(),
            incoming: BTreeMap::new(),
        }
    }

    pub fn network(&self) -> &StaticNetwork {
        &self.network
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl DoubleEndedIterator<Item = NodeRef> + '_ {
        self.nodes.iter().copied()
    }

    pub fn contains_node(&self, node: NodeRef) -> bool {
        self.nodes.contains(&node)
    }

    pub fn edges(&self) -> impl Iterator<Item = &EdgeRecord> {
        self.edges.values()
    }

    pub fn edge(&self, id: EdgeId) -> Option<&EdgeRecord> {
        self.edges.get(&id)
    }

    pub fn contains_edge(&self, id: EdgeId) -> bool {
        self.edges.contains_key(&id)
    }

    pub fn next_edge_id(&self) -> u32 {
        self.next_edge
    }

    pub fn skip_map(&self) -> &SkipMap {
        &self.skip_map
    }

    pub fn parcels(&self) -> impl Iterator<Item = &ParcelRecord> {
        self.parcels.values()
    }

    pub fn parcel_count(&self) -> usize {
        self.parcels.len()
    }

    pub fn parcel(&self, id: ParcelId) -> Option<&ParcelRecord> {
        self.parcels.get(&id)
    }

    pub fn live_parcels(&self) -> impl Iterator<Item = &ParcelRecord> {
        self.parcels.values().filter(|p| p.in_transit())
    }

    pub fn live_parcel_count(&self) -> usize {
        self.live_parcels().count()
    }

    /// Nodes that are the current location or the goal of a live parcel.
    pub fn parcel_anchors(&self) -> BTreeSet<NodeRef> {
        self.live_parcels()
            .flat_map(|p| [p.current, p.goal])
            .collect()
    }

    /// All edges leaving `node`, in id order.
    pub fn outgoing(&self, node: NodeRef) -> impl Iterator<Item = &EdgeRecord> {
        self.outgoing
            .get(&node)
            .into_iter()
            .flatten()
            .map(move |id| &self.edges[id])
    }

    /// All edges entering `node`, in id order.
    pub fn incoming(&self, node: NodeRef) -> impl Iterator<Item = &EdgeRecord> {
        self.incoming
            .get(&node)
            .into_iter()
            .flatten()
            .map(move |id| &self.edges[id])
    }

    /// Forward truck and virtual edges leaving `node`.
    pub fn transport_out(&self, node: NodeRef) -> impl Iterator<Item = &EdgeRecord> {
        self.outgoing(node).filter(|e| e.kind.is_transport_fwd())
    }

    /// Forward truck and virtual edges entering `node`.
    pub fn transport_in(&self, node: NodeRef) -> impl Iterator<Item = &EdgeRecord> {
        self.incoming(node).filter(|e| e.kind.is_transport_fwd())
    }

    /// Nodes of a hub in time order.
    pub fn hub_nodes(&self, hub: HubId) -> impl Iterator<Item = NodeRef> + '_ {
        self.nodes.iter().copied().filter(move |n| n.hub == hub)
    }

    pub fn add_node(&mut self, node: NodeRef) {
        if self.nodes.insert(node) {
            self.outgoing.entry(node).or_default();
            self.incoming.entry(node).or_default();
        }
    }

    /// Removes a node together with every edge touching it.
    pub fn remove_node(&mut self, node: NodeRef) {
        let touching: BTreeSet<EdgeId> = self
            .outgoing
            .get(&node)
            .into_iter()
            .chain(self.incoming.get(&node))
            .flatten()
            .copied()
            .collect();
        for id in touching {
            if self.edges.contains_key(&id) {
                self.remove_pair(id);
            }
        }
        self.nodes.remove(&node);
        self.outgoing.remove(&node);
        self.incoming.remove(&node);
    }

    /// Adds a forward edge and its backward twin; returns the forward id.
    pub fn add_pair(
        &mut self,
        kind: EdgeKind,
        sender: NodeRef,
        receiver: NodeRef,
        capacity: f64,
        weight: f64,
    ) -> EdgeId {
        debug_assert!(kind.is_forward());
        if self.next_edge % 2 == 1 {
            self.next_edge += 1;
        }
        let fwd = EdgeId(self.next_edge);
        self.next_edge += 2;
        self.insert_edge(EdgeRecord {
            id: fwd,
            kind,
            sender,
            receiver,
            capacity,
            weight,
        });
        self.insert_edge(EdgeRecord {
            id: fwd.twin(),
            kind: kind.reversed(),
            sender: receiver,
            receiver: sender,
            capacity,
            weight,
        });
        fwd
    }

    /// Removes an edge and its twin; also drops any skip-map entry.
    pub fn remove_pair(&mut self, id: EdgeId) {
        for e in [id, id.twin()] {
            if let Some(rec) = self.edges.remove(&e) {
                if let Some(s) = self.outgoing.get_mut(&rec.sender) {
                    s.remove(&e);
                }
                if let Some(s) = self.incoming.get_mut(&rec.receiver) {
                    s.remove(&e);
                }
            }
        }
        let fwd = if id.is_forward_slot() { id } else { id.twin() };
        self.skip_map.remove(&fwd);
    }

    pub(crate) fn insert_edge(&mut self, rec: EdgeRecord) {
        self.outgoing.entry(rec.sender).or_default().insert(rec.id);
        self.incoming.entry(rec.receiver).or_default().insert(rec.id);
        self.next_edge = self.next_edge.max(rec.id.0 + 1);
        self.edges.insert(rec.id, rec);
    }

    pub(crate) fn set_next_edge(&mut self, next: u32) {
        self.next_edge = self.next_edge.max(next);
    }

    /// Sets the remaining capacity on both edges of a truck pair.
    pub fn set_pair_capacity(&mut self, id: EdgeId, capacity: f64) -> Result<()> {
        for e in [id, id.twin()] {
            self.edges
                .get_mut(&e)
                .ok_or(Error::MissingEdge(e))?
                .capacity = capacity;
        }
        Ok(())
    }

    pub(crate) fn skip_map_mut(&mut self) -> &mut SkipMap {
        &mut self.skip_map
    }

    /// The original forward hops behind an edge: its skip-map expansion for a
    /// merged edge, otherwise the edge itself.
    pub fn expand_edge(&self, id: EdgeId) -> Vec<SkipHop> {
        let fwd = if id.is_forward_slot() { id } else { id.twin() };
        if let Some(hops) = self.skip_map.get(&fwd) {
            return hops.clone();
        }
        match self.edges.get(&fwd) {
            Some(e) => vec![SkipHop {
                edge: e.id,
                kind: e.kind,
                sender: e.sender,
                receiver: e.receiver,
            }],
            None => Vec::new(),
        }
    }

    /// Id of the first original hop of a forward edge.
    pub fn first_original(&self, id: EdgeId) -> EdgeId {
        self.skip_map
            .get(&id)
            .and_then(|hops| hops.first())
            .map(|h| h.edge)
            .unwrap_or(id)
    }

    /// Places a parcel with its forward/backward parcel edge pair.
    pub fn add_parcel(
        &mut self,
        weight: f64,
        current: NodeRef,
        goal: NodeRef,
        route: Vec<EdgeId>,
    ) -> ParcelId {
        let id = ParcelId(self.parcels.len() as u32);
        let edge = self.add_pair(EdgeKind::ParcelFwd, current, goal, 0.0, weight);
        self.parcels.insert(
            id,
            ParcelRecord {
                id,
                weight,
                current,
                goal,
                route,
                status: ParcelStatus::InTransit,
                edge: Some(edge),
            },
        );
        id
    }

    pub(crate) fn insert_parcel(&mut self, rec: ParcelRecord) {
        self.parcels.insert(rec.id, rec);
    }

    /// Moves a live parcel and re-anchors its parcel edges at the new location.
    pub(crate) fn relocate_parcel(&mut self, id: ParcelId, to: NodeRef) -> Result<()> {
        let parcel = self.parcels.get_mut(&id).ok_or(Error::ParcelNotInTransit(id))?;
        parcel.current = to;
        let Some(fwd) = parcel.edge else {
            return Ok(());
        };
        let bwd = fwd.twin();
        let old = self.edges.get(&fwd).ok_or(Error::MissingEdge(fwd))?.sender;
        if let Some(s) = self.outgoing.get_mut(&old) {
            s.remove(&fwd);
        }
        if let Some(s) = self.incoming.get_mut(&old) {
            s.remove(&bwd);
        }
        self.edges.get_mut(&fwd).expect("checked above").sender = to;
        if let Some(b) = self.edges.get_mut(&bwd) {
            b.receiver = to;
        }
        self.outgoing.entry(to).or_default().insert(fwd);
        self.incoming.entry(to).or_default().insert(bwd);
        Ok(())
    }

    /// Marks a parcel delivered or failed and removes its parcel edges.
    pub(crate) fn finish_parcel(&mut self, id: ParcelId, status: ParcelStatus) {
        let edge = match self.parcels.get_mut(&id) {
            Some(p) => {
                p.status = status;
                p.edge.take()
            }
            None => None,
        };
        if let Some(e) = edge {
            self.remove_pair(e);
        }
    }

    /// Parcel owning a parcel edge (either direction).
    pub fn parcel_of_edge(&self, id: EdgeId) -> Option<ParcelId> {
        let fwd = if id.is_forward_slot() { id } else { id.twin() };
        self.live_parcels()
            .find(|p| p.edge == Some(fwd))
            .map(|p| p.id)
    }
}
