use serde::{Deserialize, Serialize};

pub const DEFAULT_SAMPLE_SIZE: usize = 6;
/// Seconds a sampling ticket stays valid.
pub const TICKET_LIFETIME: u64 = 24 * 60 * 60;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyDefinition {
    pub id: String,
    pub title: String,
    pub questions: Vec<QuestionDefinition>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionDefinition {
    pub id: String,
    pub prompt: String,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default)]
    pub seeds: Vec<String>,
}

fn default_sample_size() -> usize {
    DEFAULT_SAMPLE_SIZE
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Survey {
    pub id: String,
    pub title: String,
    pub questions: Vec<Question>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub prompt: String,
    pub sample_size: usize,
    pub seed_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub question: String,
    /// `None` for seed responses.
    pub respondent: Option<String>,
    pub text: String,
    pub is_seed: bool,
    pub created_at: u64,
    pub text_key: String,
}

/// Outcome of Step 1 for one respondent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SubmitOutcome {
    Recorded { response: ResponseRecord },
    /// Step 1 skipped; the vertex text is taken from the first response the
    /// respondent marks as similar.
    Deferred { respondent: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShownItem {
    pub id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: String,
    pub survey: String,
    pub question: String,
    pub respondent: String,
    pub served: Vec<String>,
    pub issued_at: u64,
    pub used: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub ticket: String,
    pub items: Vec<ShownItem>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub id: String,
    pub similar: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub id: String,
    pub question: String,
    pub respondent: String,
    /// `None` when the respondent skipped Step 1 and selected nothing.
    pub own_response: Option<String>,
    /// Every served response in display order, with the respondent's choice.
    pub shown: Vec<Selection>,
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentOutcome {
    pub judgment: JudgmentRecord,
    pub positive: usize,
    pub negative: usize,
    /// Set when this judgment created the respondent's vertex.
    pub materialized: Option<ResponseRecord>,
}
