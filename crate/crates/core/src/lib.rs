//! Measurement-based link capacity estimation for CSMA/CA multi-hop networks.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod fixedpoint;
pub mod macsim;
pub mod oracle;
pub mod scenario;
pub mod topo;

pub use allocator::{AllocationState, AllocatorConfig, Fairness};
pub use error::{Error, Result};
pub use estimator::{LossAccounting, ResidualEstimate, ServiceEstimator};
pub use experiment::{run_capest, CapEstConfig, RunReport};
pub use fixedpoint::WlanModel;
pub use macsim::{AccessPolicy, MacConfig};
pub use oracle::{FeasibilityOptions, MaxMinSolution, OracleOptions};
pub use scenario::Scenario;
pub use topo::{BuiltinTopology, Flow, Link, LinkId, NodeId, Topology};
