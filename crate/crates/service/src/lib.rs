//! HTTP/JSON suggestion service.
//!
//! Endpoints live under `/v1`. Model snapshots are immutable and swapped
//! atomically; model work runs on blocking threads so the async workers
//! stay responsive.

mod upstream;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::future::Future;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use typeahead_core::api::{
    ApiError, Candidate, FeedbackAction, FeedbackEvent, Health, HealthStatus, SuggestRequest, SuggestResponse,
    TrainSummary, Trigger, FEEDBACK_FLAG_HEADER, FLAG_UNKNOWN_REQUEST,
};
use typeahead_core::charlm::CharModel;
use typeahead_core::config::Config;
use typeahead_core::corpus::{read_corpus, RawNote};
use typeahead_core::decoder::{LanguageModel, Suggestion};
use typeahead_core::ensemble::{Ensemble, UserProfile};
use typeahead_core::markov::WordModel;
use typeahead_core::session::{Completion, Session, UserSuggester, WordSuggester};
use typeahead_core::store::{apply_accepted, validate_user_id, FeedbackLog, ModelKey, ModelStore};
use typeahead_core::training::{latest_timestamp, train_user};

pub use upstream::UpstreamLm;

const RECENT_REQUESTS: usize = 100_000;
const MAX_N: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("text has {0} characters, limit is {1}")]
    TooLong(usize, usize),
    #[error("models are not loaded")]
    NotReady,
    #[error("{0}")]
    NotFound(String),
    #[error(transparent)]
    Core(#[from] typeahead_core::Error),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::TooLong(..) => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::NotReady => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Core(typeahead_core::Error::InvalidEvent(_))
            | ServiceError::Core(typeahead_core::Error::InvalidParameter(_)) => StatusCode::BAD_REQUEST,
            ServiceError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (
            status,
            Json(ApiError {
                error: self.to_string(),
            }),
        )
            .into_response()
    }
}

/// Global and character models of one published version.
pub struct Snapshot {
    pub ensemble: Ensemble,
    pub char: CharModel,
    pub global_version: u64,
    pub char_version: u64,
}

/// Bounded set of recently issued request ids.
#[derive(Default)]
struct RecentIds {
    order: VecDeque<String>,
    set: HashSet<String>,
}

impl RecentIds {
    fn insert(&mut self, id: String) {
        if self.order.len() == RECENT_REQUESTS {
            if let Some(old) = self.order.pop_front() {
                self.set.remove(&old);
            }
        }
        self.set.insert(id.clone());
        self.order.push_back(id);
    }
}

pub struct AppState {
    pub config: Config,
    store: Arc<ModelStore>,
    feedback: Arc<FeedbackLog>,
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    users: RwLock<HashMap<String, Arc<UserProfile>>>,
    train_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    recent: Mutex<RecentIds>,
    upstream_url: Option<String>,
}

impl AppState {
    /// Opens the store without loading models; health reports degraded
    /// until [`AppState::load_models`] succeeds.
    pub fn new(config: Config) -> Result<Arc<Self>, ServiceError> {
        config.validate()?;
        let store = Arc::new(ModelStore::open(&config.store_root)?);
        let feedback = Arc::new(store.feedback_log()?);
        Ok(Arc::new(Self {
            upstream_url: config.upstream_lm_url.clone(),
            config,
            store,
            feedback,
            snapshot: RwLock::new(None),
            users: RwLock::new(HashMap::new()),
            train_locks: Mutex::new(HashMap::new()),
            recent: Mutex::new(RecentIds::default()),
        }))
    }

    pub fn store(&self) -> &ModelStore {
        &self.store
    }

    /// Whether the global and character models exist in the store.
    pub fn models_present(&self) -> bool {
        self.store.has_model(&ModelKey::Global) && self.store.has_model(&ModelKey::Char)
    }

    /// Loads the global and character models and publishes them. With an
    /// upstream URL configured this must run inside a tokio runtime.
    pub fn load_models(&self) -> Result<(), ServiceError> {
        let global: WordModel = self.store.load_model(&ModelKey::Global)?;
        let char_markov = self.store.load_model(&ModelKey::Char)?;
        let char = CharModel::from_markov(char_markov, self.config.char_params())?;
        let global = Arc::new(global);
        let lm: Arc<dyn LanguageModel> = match &self.upstream_url {
            Some(url) => Arc::new(UpstreamLm::new(
                url.clone(),
                Duration::from_millis(self.config.upstream_timeout_ms),
                global,
            )),
            None => global,
        };
        let snapshot = Snapshot {
            ensemble: Ensemble::new(lm, self.config.ensemble())?,
            char,
            global_version: self.store.version(&ModelKey::Global)?,
            char_version: self.store.version(&ModelKey::Char)?,
        };
        *self.snapshot.write().unwrap() = Some(Arc::new(snapshot));
        self.users.write().unwrap().clear();
        Ok(())
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().unwrap().clone()
    }

    /// The user's profile: cached, else loaded from the store, else empty.
    fn user(&self, user_id: &str) -> Result<Arc<UserProfile>, ServiceError> {
        if let Some(p) = self.users.read().unwrap().get(user_id) {
            return Ok(p.clone());
        }
        let key = ModelKey::user(user_id)?;
        let profile = if self.store.has_model(&key) {
            UserProfile::new(user_id, self.store.load_model(&key)?)
        } else {
            UserProfile::empty(user_id, self.config.markov_order)?
        };
        let profile = Arc::new(profile);
        self.users
            .write()
            .unwrap()
            .entry(user_id.to_string())
            .or_insert(profile.clone());
        Ok(profile)
    }

    fn publish_user(&self, profile: UserProfile) {
        self.users
            .write()
            .unwrap()
            .insert(profile.user_id.clone(), Arc::new(profile));
    }

    pub fn health(&self) -> Health {
        let snapshot = self.snapshot();
        let mut model_versions = BTreeMap::new();
        if let Some(s) = &snapshot {
            model_versions.insert("global".to_string(), s.global_version);
            model_versions.insert("char".to_string(), s.char_version);
        }
        for id in self.users.read().unwrap().keys() {
            if let Ok(key) = ModelKey::user(id.as_str()) {
                if let Ok(v) = self.store.version(&key) {
                    model_versions.insert(key.to_string(), v);
                }
            }
        }
        Health {
            status: if snapshot.is_some() {
                HealthStatus::Ok
            } else {
                HealthStatus::Degraded
            },
            model_versions,
            upstream: self.upstream_url.clone(),
        }
    }

    fn train_lock(&self, user_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.train_locks
            .lock()
            .unwrap()
            .entry(user_id.to_string())
            .or_default()
            .clone()
    }
}

/// Suggester with a per-request `n` that remembers its last answer.
struct Recording<'a> {
    inner: UserSuggester<'a>,
    n: usize,
    last: Mutex<Option<Vec<Suggestion>>>,
}

impl WordSuggester for Recording<'_> {
    fn suggest(&self, prefix: &[String], n: usize) -> Vec<Suggestion> {
        let out = self.inner.suggest(prefix, n.max(self.n));
        *self.last.lock().unwrap() = Some(out.clone());
        out
    }

    fn top_n(&self) -> usize {
        self.n
    }
}

/// Runs one suggest request against a snapshot. Pure apart from timing.
pub fn run_suggest(
    snapshot: &Snapshot,
    user: &UserProfile,
    req: &SuggestRequest,
    n: usize,
) -> (Option<Completion>, Vec<Candidate>) {
    let suggester = Recording {
        inner: UserSuggester {
            ensemble: &snapshot.ensemble,
            user,
        },
        n,
        last: Mutex::new(None),
    };
    let mut session = Session::new(req.user_id.clone());
    session.set_text(req.text.clone());
    let display = match req.trigger {
        Trigger::WordBoundary => session.on_word_boundary(&suggester),
        Trigger::Char => session.on_char(&suggester, &snapshot.char),
    };
    let candidates = suggester
        .last
        .into_inner()
        .unwrap()
        .unwrap_or_default()
        .iter()
        .take(n)
        .map(Candidate::from)
        .collect();
    (display, candidates)
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("malformed body: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Core(typeahead_core::Error::Config(format!("worker failed: {e}"))))?
}

async fn suggest(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<SuggestResponse>, ServiceError> {
    let started = Instant::now();
    let req: SuggestRequest = parse_json(&body)?;
    let chars = req.text.chars().count();
    if chars > app.config.max_text_chars {
        return Err(ServiceError::TooLong(chars, app.config.max_text_chars));
    }
    validate_user_id(&req.user_id).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let n = req.n.unwrap_or(app.config.top_n);
    if !(1..=MAX_N).contains(&n) {
        return Err(ServiceError::BadRequest(format!("n must be in 1..={MAX_N}")));
    }
    let snapshot = app.snapshot().ok_or(ServiceError::NotReady)?;
    let state = app.clone();
    let (display, candidates) = blocking(move || {
        let user = state.user(&req.user_id)?;
        Ok(run_suggest(&snapshot, &user, &req, n))
    })
    .await?;
    let request_id = uuid::Uuid::new_v4().to_string();
    app.recent.lock().unwrap().insert(request_id.clone());
    Ok(Json(SuggestResponse {
        stage: display.as_ref().map(|d| d.stage),
        display_source: display.as_ref().map(|d| d.suggestion.source),
        display: display.map(|d| d.remainder),
        candidates,
        latency_ms: started.elapsed().as_secs_f64() * 1000.0,
        request_id,
    }))
}

async fn feedback(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ServiceError> {
    let mut event: FeedbackEvent = parse_json(&body)?;
    let known = event
        .request_id
        .as_ref()
        .is_some_and(|id| app.recent.lock().unwrap().set.contains(id));
    event.flagged = !known;
    let state = app.clone();
    blocking(move || {
        state.feedback.append(&event)?;
        if event.action == FeedbackAction::Accepted && event.context.is_some() {
            let current = state.user(&event.user_id)?;
            let mut local = (*current.local).clone();
            if apply_accepted(&mut local, &event.user_id, [&event]) > 0 {
                state.publish_user(UserProfile {
                    local: Arc::new(local),
                    ..(*current).clone()
                });
            }
        }
        Ok(())
    })
    .await?;
    let mut response = StatusCode::NO_CONTENT.into_response();
    if !known {
        response
            .headers_mut()
            .insert(FEEDBACK_FLAG_HEADER, HeaderValue::from_static(FLAG_UNKNOWN_REQUEST));
    }
    Ok(response)
}

/// Rebuilds one user's local model from their recent notes.
pub fn train_user_blocking(app: &AppState, user_id: &str, notes: &[RawNote]) -> Result<TrainSummary, ServiceError> {
    let key = ModelKey::user(user_id).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let now = latest_timestamp(notes).unwrap_or(chrono::DateTime::UNIX_EPOCH);
    let profile = train_user(notes, user_id, app.config.markov_order, app.config.window_days, now)?;
    let version = app.store.save_model(&key, &profile.local)?;
    let summary = TrainSummary {
        user_id: user_id.to_string(),
        notes: profile.notes,
        tokens: profile.local.token_count(),
        contexts: profile.local.full_context_count(),
        version,
    };
    app.publish_user(profile);
    Ok(summary)
}

async fn train(State(app): State<Arc<AppState>>, Path(user_id): Path<String>) -> Result<Response, ServiceError> {
    validate_user_id(&user_id).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let corpus = app
        .config
        .corpus
        .clone()
        .ok_or_else(|| ServiceError::BadRequest("no corpus configured".into()))?;
    let lock = app.train_lock(&user_id);
    let _guard = lock.lock().await;
    let state = app.clone();
    let summary = blocking(move || {
        let notes = read_corpus(&corpus)?;
        train_user_blocking(&state, &user_id, &notes)
    })
    .await?;
    let status = if summary.notes == 0 {
        StatusCode::NOT_FOUND
    } else {
        StatusCode::OK
    };
    Ok((status, Json(summary)).into_response())
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Health> {
    Json(app.health())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/suggest", post(suggest))
        .route("/v1/feedback", post(feedback))
        .route("/v1/users/{id}/train", post(train))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
