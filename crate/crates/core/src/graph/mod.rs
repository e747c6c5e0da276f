//! Time-expanded state model.
//!
//! A state is a directed multigraph whose nodes are `(hub, time)` pairs. Every
//! connection (truck, virtual truck or parcel) is stored as a pair of edges, one
//! forward in time and one backward. Forward edges get even ids and their
//! backward twin the following odd id, so `twin(id) == id ^ 1`.

mod encode;
mod io;
mod state;
mod validate;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use encode::{encode_edge_features, encode_node_features, EDGE_FEATURES, NODE_FEATURES};
pub use io::{deserialize_state, serialize_state, FORMAT_TAG};
pub use state::{MdpState, SkipHop, SkipMap, StaticNetwork};
pub use validate::{validate_state, Violation};

/// Floating point slack used for every capacity comparison.
pub const CAPACITY_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HubId(pub u32);

impl HubId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A node of the time-expanded graph. Orders by time first, so iterating a
/// sorted node set is a topological order of the forward edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub hub: HubId,
    pub time: u32,
}

impl NodeRef {
    pub fn new(hub: u32, time: u32) -> Self {
        NodeRef {
            hub: HubId(hub),
            time,
        }
    }
}

impl Ord for NodeRef {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.hub).cmp(&(other.time, other.hub))
    }
}

impl PartialOrd for NodeRef {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.hub.0, self.time)
    }
}

// Serialized as a `[hub, time]` pair.
impl Serialize for NodeRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        (self.hub.0, self.time).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NodeRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (hub, time) = <(u32, u32)>::deserialize(deserializer)?;
        Ok(NodeRef::new(hub, time))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

impl EdgeId {
    /// The paired edge going the other way in time.
    pub fn twin(self) -> EdgeId {
        EdgeId(self.0 ^ 1)
    }

    pub fn is_forward_slot(self) -> bool {
        self.0 % 2 == 0
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParcelId(pub u32);

impl fmt::Display for ParcelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    TruckFwd,
    TruckBwd,
    ParcelFwd,
    ParcelBwd,
    VirtualFwd,
    VirtualBwd,
}

impl EdgeKind {
    pub fn is_forward(self) -> bool {
        matches!(
            self,
            EdgeKind::TruckFwd | EdgeKind::ParcelFwd | EdgeKind::VirtualFwd
        )
    }

    pub fn is_truck(self) -> bool {
        matches!(self, EdgeKind::TruckFwd | EdgeKind::TruckBwd)
    }

    pub fn is_virtual(self) -> bool {
        matches!(self, EdgeKind::VirtualFwd | EdgeKind::VirtualBwd)
    }

    pub fn is_parcel(self) -> bool {
        matches!(self, EdgeKind::ParcelFwd | EdgeKind::ParcelBwd)
    }

    /// Truck or virtual truck going forward in time: the edges a parcel can ride.
    pub fn is_transport_fwd(self) -> bool {
        matches!(self, EdgeKind::TruckFwd | EdgeKind::VirtualFwd)
    }

    pub fn reversed(self) -> EdgeKind {
        match self {
            EdgeKind::TruckFwd => EdgeKind::TruckBwd,
            EdgeKind::TruckBwd => EdgeKind::TruckFwd,
            EdgeKind::ParcelFwd => EdgeKind::ParcelBwd,
            EdgeKind::ParcelBwd => EdgeKind::ParcelFwd,
            EdgeKind::VirtualFwd => EdgeKind::VirtualBwd,
            EdgeKind::VirtualBwd => EdgeKind::VirtualFwd,
        }
    }

    /// Position in the one-hot block of the edge feature vector.
    pub fn one_hot_index(self) -> usize {
        match self {
            EdgeKind::TruckFwd => 0,
            EdgeKind::TruckBwd => 1,
            EdgeKind::ParcelFwd => 2,
            EdgeKind::ParcelBwd => 3,
            EdgeKind::VirtualFwd => 4,
            EdgeKind::VirtualBwd => 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub id: EdgeId,
    pub kind: EdgeKind,
    pub sender: NodeRef,
    pub receiver: NodeRef,
    /// Remaining capacity; trucks only.
    pub capacity: f64,
    /// Parcel weight; parcel edges only.
    pub weight: f64,
}

impl EdgeRecord {
    pub fn duration(&self) -> u32 {
        self.receiver.time.abs_diff(self.sender.time)
    }

    /// Whether a parcel of `weight` fits. Virtual trucks always fit.
    pub fn admits(&self, weight: f64) -> bool {
        match self.kind {
            EdgeKind::VirtualFwd | EdgeKind::VirtualBwd => true,
            EdgeKind::TruckFwd | EdgeKind::TruckBwd => self.capacity >= weight - CAPACITY_EPS,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParcelStatus {
    InTransit,
    Delivered,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParcelRecord {
    pub id: ParcelId,
    pub weight: f64,
    pub current: NodeRef,
    pub goal: NodeRef,
    /// Sampled route as original (fully expanded) forward edge ids.
    pub route: Vec<EdgeId>,
    pub status: ParcelStatus,
    /// Forward parcel edge while in transit.
    #[serde(default)]
    pub edge: Option<EdgeId>,
}

impl ParcelRecord {
    pub fn in_transit(&self) -> bool {
        self.status == ParcelStatus::InTransit
    }
}
