use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::Request;
use axum::routing::post;
use axum::{Json, Router};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use typeahead_core::config::Config;
use typeahead_core::store::ModelKey;
use typeahead_core::training::{train_all, TrainOptions};
use typeahead_service::{router, AppState};

const CORPUS: &str = r#"{"user_id":"alice","created_at":"2024-05-01T10:00:00Z","text":"thank you for the update"}
"#;

async fn fake_upstream(delay: Duration, hits: Arc<AtomicUsize>) -> String {
    let app = Router::new().route(
        "/next",
        post(move |Json(body): Json<Value>| {
            let hits = hits.clone();
            async move {
                hits.fetch_add(1, Ordering::SeqCst);
                tokio::time::sleep(delay).await;
                assert!(body["context"].is_array());
                Json(json!({"distribution": {"teapot": 0.9, "kettle": 0.1}}))
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/next")
}

fn state(dir: &Path, url: String) -> Arc<AppState> {
    let corpus = dir.join("corpus.ndjson");
    std::fs::write(&corpus, CORPUS).unwrap();
    let config = Config {
        corpus: Some(corpus.clone()),
        store_root: dir.join("store"),
        threshold: f64::NEG_INFINITY,
        max_words: 1,
        upstream_lm_url: Some(url),
        ..Config::default()
    };
    let state = AppState::new(config).unwrap();
    let notes = typeahead_core::corpus::read_corpus(&corpus).unwrap();
    let models = train_all(&notes, &TrainOptions::default()).unwrap();
    state.store().save_model(&ModelKey::Global, &models.global).unwrap();
    state.store().save_model(&ModelKey::Char, models.char.markov()).unwrap();
    state.load_models().unwrap();
    state
}

async fn suggest(state: &Arc<AppState>) -> Value {
    let req = Request::builder()
        .method("POST")
        .uri("/v1/suggest")
        .header("content-type", "application/json")
        .body(Body::from(
            json!({"user_id": "nobody", "text": "thank you for ", "trigger": "word_boundary"}).to_string(),
        ))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn remote_distribution_replaces_global_model() {
    let hits = Arc::new(AtomicUsize::new(0));
    let url = fake_upstream(Duration::ZERO, hits.clone()).await;
    let dir = tempfile::tempdir().unwrap();
    let state = state(dir.path(), url.clone());
    assert_eq!(state.health().upstream.as_deref(), Some(url.as_str()));
    let body = suggest(&state).await;
    assert_eq!(body["display"], "teapot");
    assert!(hits.load(Ordering::SeqCst) > 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_remote_falls_back_and_trips_breaker() {
    let hits = Arc::new(AtomicUsize::new(0));
    let url = fake_upstream(Duration::from_millis(500), hits.clone()).await;
    let dir = tempfile::tempdir().unwrap();
    let state = state(dir.path(), url);
    for _ in 0..3 {
        let body = suggest(&state).await;
        assert_eq!(body["display"], "the");
        assert!(body["latency_ms"].as_f64().unwrap() < 400.0);
    }
    tokio::time::sleep(Duration::from_millis(50)).await;
    let tripped = hits.load(Ordering::SeqCst);
    assert_eq!(tripped, 3);
    let body = suggest(&state).await;
    assert_eq!(body["display"], "the");
    // breaker is open: no further remote calls, answer within local budget
    tokio::time::sleep(Duration::from_millis(50)).await;
    assert_eq!(hits.load(Ordering::SeqCst), tripped);
    assert!(body["latency_ms"].as_f64().unwrap() < 50.0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unreachable_remote_falls_back() {
    let dir = tempfile::tempdir().unwrap();
    let state = state(dir.path(), "http://127.0.0.1:9/next".into());
    let body = suggest(&state).await;
    assert_eq!(body["display"], "the");
}
