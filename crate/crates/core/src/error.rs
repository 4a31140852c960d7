use crate::network::{EdgeId, NodeId, Term};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input width mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("target shape mismatch: expected {expected:?}, got {got:?}")]
    TargetShape {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),

    #[error("edge {src} -> {dst} would create a cycle")]
    Cycle { src: NodeId, dst: NodeId },

    #[error("edge {src} -> {dst} (term {term}) already exists")]
    DuplicateEdge { src: NodeId, dst: NodeId, term: Term },

    #[error("invalid edge {src} -> {dst}: {reason}")]
    InvalidEdge {
        src: NodeId,
        dst: NodeId,
        reason: &'static str,
    },

    #[error("node {0} still has out-edges")]
    NodeHasOutEdges(NodeId),

    #[error("node {0} is an input or output and cannot be removed")]
    ProtectedNode(NodeId),

    #[error("non-finite state at node {0}")]
    NonFiniteNode(NodeId),

    #[error("non-finite gradient at edge {0}")]
    NonFiniteEdge(EdgeId),

    #[error("edge {0} has zero weight")]
    ZeroWeight(EdgeId),

    #[error("edge {0} is in refraction")]
    InRefraction(EdgeId),

    #[error("malformed IDX data: {0}")]
    Idx(String),

    #[error("unsupported document: {0}")]
    Document(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model is not stabilized")]
    NotStabilized,

    #[error("no models registered")]
    EmptySystem,

    #[error("dataset: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
