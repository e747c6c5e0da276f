use super::{EdgeRecord, MdpState, NodeRef};
use crate::error::{Error, Result};

/// Length of the base edge feature vector.
pub const EDGE_FEATURES: usize = 8;
/// Length of the base node feature vector.
pub const NODE_FEATURES: usize = 2;

/// One-hot edge type (truck, parcel, virtual; each forward/backward) followed by
/// truck capacity and parcel weight. Payload slots are zero when not applicable.
pub fn encode_edge_features(edge: &EdgeRecord) -> [f64; EDGE_FEATURES] {
    let mut out = [0.0; EDGE_FEATURES];
    out[edge.kind.one_hot_index()] = 1.0;
    if edge.kind.is_truck() {
        out[6] = edge.capacity;
    }
    if edge.kind.is_parcel() {
        out[7] = edge.weight;
    }
    out
}

pub fn encode_node_features(state: &MdpState, node: NodeRef) -> Result<[f64; NODE_FEATURES]> {
    if !state.contains_node(node) {
        return Err(Error::MissingNode(node));
    }
    Ok([node.hub.0 as f64, node.time as f64])
}
