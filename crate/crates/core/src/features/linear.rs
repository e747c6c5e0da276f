use super::graph::{extract_feature_graph, FeatureOptions, ACTION_FLAG, FG_EDGE_FEATURES, FG_NODE_FEATURES};
use super::{relative_time, ResistanceMatrix};
use crate::error::{Error, Result};
use crate::graph::{encode_edge_features, EdgeId, MdpState, ParcelId, EDGE_FEATURES};

/// Length of a state-action vector: action edge features then receiver node features.
pub const LINEAR_FEATURES: usize = FG_EDGE_FEATURES + FG_NODE_FEATURES;

/// State-action vectors for every action, read off the 1-step feature graph.
pub fn linear_features(
    state: &MdpState,
    parcel: ParcelId,
    actions: &[EdgeId],
    resistance: &ResistanceMatrix,
    options: FeatureOptions,
) -> Result<Vec<[f64; LINEAR_FEATURES]>> {
    if options.phantom {
        let fg = extract_feature_graph(state, parcel, 1, actions, resistance, options)?;
        return Ok(fg
            .action_map
            .iter()
            .map(|&(i, _)| {
                let e = &fg.edges[i];
                let mut x = [0.0; LINEAR_FEATURES];
                x[..FG_EDGE_FEATURES].copy_from_slice(&e.features);
                x[FG_EDGE_FEATURES..].copy_from_slice(&fg.node_features[e.receiver]);
                x
            })
            .collect());
    }
    // Without phantom weights an action edge's features depend only on the
    // edge itself, so the graph need not be built.
    let p = state
        .parcel(parcel)
        .filter(|p| p.in_transit())
        .ok_or(Error::ParcelNotInTransit(parcel))?;
    actions
        .iter()
        .map(|&a| {
            let e = state
                .edge(a)
                .filter(|e| e.kind.is_transport_fwd() && e.sender == p.current)
                .ok_or(Error::InvalidAction { parcel, action: a })?;
            let mut x = [0.0; LINEAR_FEATURES];
            x[..EDGE_FEATURES].copy_from_slice(&encode_edge_features(e));
            x[ACTION_FLAG] = 1.0;
            x[FG_EDGE_FEATURES] = resistance.get(e.receiver.hub, p.goal.hub);
            x[FG_EDGE_FEATURES + 1] = relative_time(e.receiver.time, p.current.time, p.goal.time);
            Ok(x)
        })
        .collect()
}
