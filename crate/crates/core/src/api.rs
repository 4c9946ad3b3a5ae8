//! JSON bodies of the `/v1` HTTP API, shared by server and client.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decoder::{Source, Suggestion};
use crate::session::Stage;

pub use crate::store::{FeedbackAction, FeedbackEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    WordBoundary,
    Char,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuggestRequest {
    pub user_id: String,
    /// Full current text of the editor.
    pub text: String,
    pub trigger: Trigger,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub normalized_score: f64,
    pub source: Source,
    pub gated: bool,
}

impl From<&Suggestion> for Candidate {
    fn from(s: &Suggestion) -> Self {
        Self {
            text: s.text(),
            normalized_score: s.normalized_score,
            source: s.source,
            gated: s.gated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    /// Text to show ahead of the caret, if anything.
    pub display: Option<String>,
    /// Cascade stage that produced `display`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_source: Option<Source>,
    /// Word-level candidates at the last word boundary, best first.
    pub candidates: Vec<Candidate>,
    pub latency_ms: f64,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub user_id: String,
    pub notes: usize,
    pub tokens: u64,
    /// Distinct full-length contexts in the model.
    pub contexts: usize,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HealthStatus {
    Ok,
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: HealthStatus,
    /// Active version per model key (`global`, `char`, `users/<id>`).
    pub model_versions: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
}

/// Header set on feedback responses for events with an unknown request id.
pub const FEEDBACK_FLAG_HEADER: &str = "x-feedback-flag";
pub const FLAG_UNKNOWN_REQUEST: &str = "unknown-request-id";

/// One line of the cache-conformance fixture: a cache state, the typed
/// partial word and the expected decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformanceCase {
    pub candidates: Vec<Candidate>,
    pub typed: String,
    /// Index into `candidates` of the matched candidate, if any.
    pub expected_index: Option<usize>,
    pub expected_remainder: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let r: SuggestRequest =
            serde_json::from_str(r#"{"user_id":"u","text":"thank you ","trigger":"word_boundary"}"#).unwrap();
        assert_eq!(r.trigger, Trigger::WordBoundary);
        assert_eq!(r.n, None);
        assert!(serde_json::from_str::<SuggestRequest>(r#"{"user_id":"u","text":"x","trigger":"key"}"#).is_err());
        assert!(
            serde_json::from_str::<SuggestRequest>(r#"{"user_id":"u","text":"x","trigger":"char","extra":1}"#).is_err()
        );
    }

    #[test]
    fn response_has_null_display() {
        let r = SuggestResponse {
            display: None,
            stage: None,
            display_source: None,
            candidates: vec![],
            latency_ms: 0.5,
            request_id: "r".into(),
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert!(v["display"].is_null());
        assert!(v.get("stage").is_none());
    }
}
