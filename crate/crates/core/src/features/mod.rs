//! Node, edge and graph features for routing decisions.

mod graph;
mod linear;
mod phantom;
mod resistance;

pub use graph::{
    extract_feature_graph, neighborhood, EdgeKey, FeatureEdge, FeatureGraph, FeatureOptions, ACTION_FLAG,
    FG_EDGE_FEATURES, FG_NODE_FEATURES, PHANTOM, ROUTED_FLAG,
};
pub use linear::{linear_features, LINEAR_FEATURES};
pub use phantom::{phantom_flow, phantom_weights};
pub use resistance::{resistance_from_conductances, resistance_matrix, ResistanceMatrix};

/// Time scaled so the parcel's current step is 0 and its goal step is 1.
pub fn relative_time(t: u32, start: u32, goal: u32) -> f64 {
    if goal > start {
        (t as f64 - start as f64) / (goal - start) as f64
    } else {
        0.0
    }
}
