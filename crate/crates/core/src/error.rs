use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node} out of range for a graph with {node_count} nodes")]
    NodeOutOfRange { node: usize, node_count: usize },

    #[error("duplicate edge ({from}, {to})")]
    DuplicateEdge { from: usize, to: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    Asymmetric { asymmetry: f64 },

    #[error("graph at round {round} is not symmetric; edge ({from}, {to}) has no reverse")]
    AsymmetricGraph { round: usize, from: usize, to: usize },

    #[error("graph is not connected")]
    Disconnected,

    #[error("graph sequence is time-varying, a fixed graph is required")]
    TimeVarying,

    #[error("constraint is satisfied at this point, no subgradient step applies")]
    Satisfied,

    #[error("oracle returned a zero subgradient with positive violation {violation:e}")]
    ZeroSubgradient { violation: f64 },

    #[error("missing state for neighbor {neighbor} with nonzero weight")]
    MissingNeighbor { neighbor: usize },

    #[error("weights row sums to {sum}, expected 1")]
    NotStochastic { sum: f64 },

    #[error("power iteration did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("too many free parameters for a grid search ({points} grid points)")]
    TooManyParameters { points: u128 },

    #[error("assumption check failed: {}", .0.join("; "))]
    AssumptionsFailed(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
