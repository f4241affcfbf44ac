//! Labelled stochastic block model inference: exact complete-data
//! likelihood, belief propagation, and EM parameter learning. Both the
//! plain and the degree-corrected model are supported; the latter scales
//! each affinity by the endpoints' label-specific degrees.

mod bp;
mod em;
mod likelihood;
mod params;
mod spectral;

pub use bp::{
    bethe_free_energy, bp_sweep, cavity_predictive, converge, edge_two_point, BpState, MessageInit,
};
pub use em::{argmax, m_step, run_em, FitExport, FitOptions, FitResult, VertexAssignment};
pub use likelihood::log_likelihood;
pub use params::BlockModelParams;

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("vertex {vertex} has label {label}, outside 0..{q}")]
    InvalidLabel { vertex: usize, label: usize, q: usize },
    #[error("expected {expected} labels, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("edge probability {p} between vertices {i} and {j} exceeds 1")]
    ProbabilityOutOfRange { i: usize, j: usize, p: f64 },
    #[error("q = {q} exceeds the vertex count {n}")]
    TooManyGroups { q: usize, n: usize },
    #[error("graph has no signed edges to fit more than one group")]
    NoSignedEdges,
    #[error("edge {0} is neutral and carries no factor")]
    NeutralEdge(usize),
    #[error("edge {0} does not exist")]
    UnknownEdge(usize),
}
