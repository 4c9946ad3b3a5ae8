//! Async client for the typeahead `/v1` HTTP API.

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use typeahead_core::api::{
    ApiError, FeedbackEvent, Health, SuggestRequest, SuggestResponse, TrainSummary, FEEDBACK_FLAG_HEADER,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {message}")]
    Status { status: u16, message: String },
    #[error("malformed response: {0}")]
    Decode(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// Outcome of posting a feedback event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackReceipt {
    /// Set when the server did not recognise the event's request id.
    pub flag: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TypeaheadClient {
    base_url: String,
    http: reqwest::Client,
}

impl TypeaheadClient {
    /// `base_url` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_client(base_url, reqwest::Client::new())
    }

    pub fn with_client(base_url: impl Into<String>, http: reqwest::Client) -> Self {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        Self { base_url, http }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }

    pub async fn suggest(&self, request: &SuggestRequest) -> Result<SuggestResponse> {
        let resp = self.http.post(self.url("/v1/suggest")).json(request).send().await?;
        decode(resp).await
    }

    pub async fn feedback(&self, event: &FeedbackEvent) -> Result<FeedbackReceipt> {
        let resp = self.http.post(self.url("/v1/feedback")).json(event).send().await?;
        let flag = resp
            .headers()
            .get(FEEDBACK_FLAG_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        if !resp.status().is_success() {
            return Err(status_error(resp).await);
        }
        Ok(FeedbackReceipt { flag })
    }

    /// Retrains one user's model. A user with no notes in the window is
    /// not an error here: the server answers 404 with a zero-count summary,
    /// which is returned as is.
    pub async fn train_user(&self, user_id: &str) -> Result<TrainSummary> {
        let resp = self
            .http
            .post(self.url(&format!("/v1/users/{user_id}/train")))
            .send()
            .await?;
        if resp.status() == StatusCode::NOT_FOUND {
            let bytes = resp.bytes().await?;
            if let Ok(summary) = serde_json::from_slice::<TrainSummary>(&bytes) {
                return Ok(summary);
            }
            return Err(ClientError::Status {
                status: 404,
                message: error_message(&bytes),
            });
        }
        decode(resp).await
    }

    pub async fn health(&self) -> Result<Health> {
        let resp = self.http.get(self.url("/v1/health")).send().await?;
        decode(resp).await
    }
}

async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
    if !resp.status().is_success() {
        return Err(status_error(resp).await);
    }
    let bytes = resp.bytes().await?;
    Ok(serde_json::from_slice(&bytes)?)
}

async fn status_error(resp: reqwest::Response) -> ClientError {
    let status = resp.status().as_u16();
    let message = match resp.bytes().await {
        Ok(b) => error_message(&b),
        Err(e) => e.to_string(),
    };
    ClientError::Status { status, message }
}

fn error_message(bytes: &[u8]) -> String {
    serde_json::from_slice::<ApiError>(bytes)
        .map(|e| e.error)
        .unwrap_or_else(|_| String::from_utf8_lossy(bytes).into_owned())
}
