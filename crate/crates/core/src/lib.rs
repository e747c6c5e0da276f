//! Time-expanded middle-mile parcel routing: instance generation, pruning,
//! the routing MDP, feature extraction and learned routing policies.

pub mod binding;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod features;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod netgen;
pub mod parcelgen;
pub mod policies;
pub mod pruning;
pub mod training;

pub use error::{Error, Result};
