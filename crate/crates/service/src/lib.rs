//! Survey service for the two-step collection protocol: respondents write
//! an opinion (or skip), then mark which of a sample of other opinions are
//! similar. Each question's judgments export as an opinion graph.

pub mod http;
pub mod model;
pub mod store;

pub use model::*;
pub use store::{StoreConfig, SurveyStore};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("expired: {0}")]
    Expired(String),
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error("corrupt data: {0}")]
    Corrupt(String),
}
