use std::sync::Arc;

use chrono::Utc;
use typeahead_client::{ClientError, TypeaheadClient};
use typeahead_core::api::{FeedbackAction, FeedbackEvent, HealthStatus, SuggestRequest, Trigger};
use typeahead_core::config::Config;
use typeahead_core::decoder::Source;
use typeahead_core::store::{context_hash, ModelKey};
use typeahead_core::training::{train_all, TrainOptions};
use typeahead_service::AppState;

const CORPUS: &str = r#"{"user_id":"alice","created_at":"2024-05-01T10:00:00Z","text":"thank you for the update"}
{"user_id":"bob","created_at":"2024-05-03T10:00:00Z","text":"thank you for the report"}
"#;

async fn spawn(dir: &std::path::Path, train: bool) -> (TypeaheadClient, tokio::sync::oneshot::Sender<()>) {
    let corpus = dir.join("corpus.ndjson");
    std::fs::write(&corpus, CORPUS).unwrap();
    let config = Config {
        corpus: Some(corpus.clone()),
        store_root: dir.join("store"),
        threshold: f64::NEG_INFINITY,
        ..Config::default()
    };
    let state: Arc<AppState> = AppState::new(config).unwrap();
    if train {
        let notes = typeahead_core::corpus::read_corpus(&corpus).unwrap();
        let models = train_all(&notes, &TrainOptions::default()).unwrap();
        state.store().save_model(&ModelKey::Global, &models.global).unwrap();
        state.store().save_model(&ModelKey::Char, models.char.markov()).unwrap();
        state.load_models().unwrap();
    }
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(typeahead_service::serve(listener, state, async {
        rx.await.ok();
    }));
    (TypeaheadClient::new(format!("http://{addr}/")), tx)
}

#[tokio::test]
async fn full_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (client, _stop) = spawn(dir.path(), true).await;

    let health = client.health().await.unwrap();
    assert_eq!(health.status, HealthStatus::Ok);

    let resp = client
        .suggest(&SuggestRequest {
            user_id: "alice".into(),
            text: "thank you for ".into(),
            trigger: Trigger::WordBoundary,
            n: Some(2),
        })
        .await
        .unwrap();
    assert!(resp.display.is_some());
    assert!(resp.candidates.len() <= 2);

    let event = FeedbackEvent {
        user_id: "alice".into(),
        timestamp: Utc::now(),
        context_hash: context_hash("thank you for "),
        suggestion: resp.display.clone().unwrap(),
        action: FeedbackAction::Accepted,
        source: Source::Ensemble,
        request_id: Some(resp.request_id.clone()),
        session_id: None,
        context: Some("thank you for ".into()),
        flagged: false,
    };
    assert_eq!(client.feedback(&event).await.unwrap().flag, None);
    let unknown = FeedbackEvent {
        request_id: Some("missing".into()),
        ..event
    };
    assert_eq!(
        client.feedback(&unknown).await.unwrap().flag.as_deref(),
        Some("unknown-request-id")
    );

    let summary = client.train_user("alice").await.unwrap();
    assert_eq!(summary.notes, 1);
    assert_eq!(summary.version, 1);
    let empty = client.train_user("nobody").await.unwrap();
    assert_eq!((empty.notes, empty.tokens, empty.contexts), (0, 0, 0));
    assert_eq!(client.health().await.unwrap().model_versions["users/alice"], 1);
}

#[tokio::test]
async fn server_errors_surface_with_status() {
    let dir = tempfile::tempdir().unwrap();
    let (client, _stop) = spawn(dir.path(), false).await;
    assert_eq!(client.health().await.unwrap().status, HealthStatus::Degraded);
    let err = client
        .suggest(&SuggestRequest {
            user_id: "alice".into(),
            text: "x ".into(),
            trigger: Trigger::WordBoundary,
            n: None,
        })
        .await
        .unwrap_err();
    assert!(matches!(err, ClientError::Status { status: 503, .. }), "{err}");
}

#[tokio::test]
async fn connection_refused_is_transport_error() {
    let client = TypeaheadClient::new("http://127.0.0.1:9");
    assert!(matches!(client.health().await, Err(ClientError::Transport(_))));
}
