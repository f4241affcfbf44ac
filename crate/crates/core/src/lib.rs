//! Opinion-graph analysis: signed similarity graphs collected from survey
//! respondents, classified by fitting a labelled stochastic block model.
//!
//! * [`graph`]: the opinion graph, its file formats and preprocessing.
//! * [`inference`]: likelihood, belief propagation and EM fitting.
//! * [`selection`]: cross-validation errors and alluvial flows across q.
//! * [`metrics`]: partition comparison and agreement with signed edges.
//! * [`synthetic`]: planted-partition generator and recovery experiments.

pub mod graph;
pub mod inference;
pub mod metrics;
pub mod selection;
pub mod synthetic;

pub use graph::{EdgeLabel, GraphError, OpinionGraph};
pub use inference::{BlockModelParams, FitOptions, FitResult, InferenceError};
pub use selection::{ErrorEstimates, FlowRecord, Recommendation, SweepResult};
