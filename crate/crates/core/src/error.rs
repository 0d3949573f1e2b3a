use thiserror::Error;

use crate::topo::{LinkId, NodeId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("link {tx}->{rx}: {reason}")]
    InvalidLink {
        tx: NodeId,
        rx: NodeId,
        reason: String,
    },

    #[error("flow {flow}: {reason}")]
    InvalidFlow { flow: String, reason: String },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("unknown builtin topology `{0}` (expected `fim` or `chain_cross`)")]
    UnknownTopology(String),

    #[error("could not route flow between {src} and {dst} after {attempts} attempts")]
    Disconnected {
        src: NodeId,
        dst: NodeId,
        attempts: usize,
    },

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("LIR undefined: solo throughputs sum to zero")]
    ZeroLirDenominator,

    #[error("invalid MAC configuration: {0}")]
    InvalidMac(String),

    #[error("invalid load: {0}")]
    InvalidLoad(String),

    #[error("link {0} has no service-time measurement")]
    NoMeasurement(LinkId),

    #[error("allocator: {0}")]
    Allocator(String),

    #[error("flow weight must be positive, got {0}")]
    NonPositiveWeight(f64),

    #[error("missing mean airtime for link {0} while airtimes differ")]
    MissingAirtime(LinkId),

    #[error("model domain: {0}")]
    ModelDomain(String),

    #[error("arrival rate {lambda} overloads the model (attempt rate would reach 1)")]
    Overload { lambda: f64 },

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("simulation truncated at {at_us} us before quotas were met")]
    Truncated { at_us: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
