//! `midmile-v1` JSON instance format.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EdgeId, EdgeRecord, MdpState, NodeRef, ParcelId, ParcelRecord, SkipHop, StaticNetwork};
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "midmile-v1";

#[derive(Serialize, Deserialize)]
struct HubsDoc {
    count: usize,
    links: Vec<(u32, u32)>,
}

#[derive(Serialize, Deserialize)]
struct SkipEntry {
    edge: EdgeId,
    hops: Vec<SkipHop>,
}

#[derive(Serialize, Deserialize)]
struct StateDoc {
    format: String,
    hubs: HubsDoc,
    horizon: u32,
    next_edge_id: u32,
    nodes: Vec<NodeRef>,
    edges: Vec<EdgeRecord>,
    parcels: Vec<ParcelRecord>,
    skip_map: Vec<SkipEntry>,
}

/// Canonical JSON: sorted keys, arrays in id order.
pub fn serialize_state(state: &MdpState) -> Vec<u8> {
    let doc = StateDoc {
        format: FORMAT_TAG.to_string(),
        hubs: HubsDoc {
            count: state.network().hub_count(),
            links: state.network().links().to_vec(),
        },
        horizon: state.horizon(),
        next_edge_id: state.next_edge_id(),
        nodes: state.nodes().collect(),
        edges: state.edges().cloned().collect(),
        parcels: state.parcels().cloned().collect(),
        skip_map: state
            .skip_map()
            .iter()
            .map(|(edge, hops)| SkipEntry {
                edge: *edge,
                hops: hops.clone(),
            })
            .collect(),
    };
    // Going through `Value` sorts object keys.
    let value = serde_json::to_value(&doc).expect("state document is always representable");
    serde_json::to_vec(&value).expect("value serialization cannot fail")
}

pub fn deserialize_state(bytes: &[u8]) -> Result<MdpState> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let doc: StateDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::parse(field, e.into_inner().to_string())
    })?;
    if doc.format != FORMAT_TAG {
        return Err(Error::parse("format", format!("expected {FORMAT_TAG}, got {}", doc.format)));
    }
    let network = StaticNetwork::from_links(doc.hubs.count, &doc.hubs.links)
        .map_err(|e| Error::parse("hubs.links", e.to_string()))?;
    let mut state = MdpState::new(network, doc.horizon);

    let mut seen_nodes = BTreeSet::new();
    for (i, node) in doc.nodes.iter().enumerate() {
        if !seen_nodes.insert(*node) {
            return Err(Error::parse(format!("nodes[{i}]"), format!("duplicate node {node}")));
        }
        state.add_node(*node);
    }
    let mut seen_edges = BTreeSet::new();
    for (i, edge) in doc.edges.into_iter().enumerate() {
        if !seen_edges.insert(edge.id) {
            return Err(Error::parse(format!("edges[{i}].id"), format!("duplicate edge id {}", edge.id.0)));
        }
        if edge.id.is_forward_slot() != edge.kind.is_forward() {
            return Err(Error::parse(
                format!("edges[{i}].kind"),
                format!("{:?} does not match the parity of id {}", edge.kind, edge.id.0),
            ));
        }
        state.insert_edge(edge);
    }
    let mut seen_parcels: BTreeSet<ParcelId> = BTreeSet::new();
    for (i, parcel) in doc.parcels.into_iter().enumerate() {
        if !seen_parcels.insert(parcel.id) {
            return Err(Error::parse(format!("parcels[{i}].id"), format!("duplicate parcel id {}", parcel.id.0)));
        }
        state.insert_parcel(parcel);
    }
    let mut seen_skips = BTreeSet::new();
    for (i, entry) in doc.skip_map.into_iter().enumerate() {
        if !seen_skips.insert(entry.edge) {
            return Err(Error::parse(format!("skip_map[{i}].edge"), format!("duplicate entry {}", entry.edge.0)));
        }
        state.skip_map_mut().insert(entry.edge, entry.hops);
    }
    state.set_next_edge(doc.next_edge_id);
    Ok(state)
}
