//! Growing minimal DAG networks from gradient conflicts, and continual
//! learning by validating predictions of internal node states.

pub mod config;
pub mod data;
pub mod error;
pub mod forward;
pub mod grad;
pub mod growth;
pub mod harness;
pub mod network;
pub mod preval;

pub use error::{Error, Result};
pub use forward::{forward_pass, Activations};
pub use grad::{backward_pass, trace_batch, BatchTrace, Directional, NetGradients};
pub use growth::{adaptation_step, GenerativeEvent, GrowthConfig, StepReport};
pub use network::{Edge, EdgeId, Network, Node, NodeId, NodeKind, Term};
