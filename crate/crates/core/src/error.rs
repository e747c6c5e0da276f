use thiserror::Error;

use crate::graph::{EdgeId, NodeRef, ParcelId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("node {0} is not part of the state")]
    MissingNode(NodeRef),

    #[error("edge {0} is not part of the state")]
    MissingEdge(EdgeId),

    #[error("parcel {0} is not in transit")]
    ParcelNotInTransit(ParcelId),

    #[error("edge {action} is not an available action for parcel {parcel}")]
    InvalidAction { parcel: ParcelId, action: EdgeId },

    #[error("static network is disconnected")]
    Disconnected,

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("csv schema mismatch in {path}: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::Parameter(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
