//! File-backed model store and feedback log.
//!
//! ```text
//! <root>/models/global.json          active global word model
//! <root>/models/char.json            active character model
//! <root>/models/users/<id>.json      active per-user local models
//! <root>/models/history/<key>/       every saved version plus HEAD.json
//! <root>/feedback/events.ndjson      append-only feedback log
//! ```
//!
//! A save writes the versioned copy, then commits HEAD, then replaces the
//! active file. Every step is a write to a temporary file followed by a
//! rename, so readers only ever see complete files. If a crash lands
//! between the HEAD commit and the active-file rename, the next load
//! notices the stale active file and restores it from history.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{context_tokens, tokenize_words, END_TOKEN};
use crate::decoder::Source;
use crate::error::{Error, Result};
use crate::markov::{MarkovModel, Symbol};

const MAX_USER_ID_LEN: usize = 128;

/// Rejects ids that could escape the users directory.
pub fn validate_user_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= MAX_USER_ID_LEN
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '@'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("invalid user id {id:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "user_id", rename_all = "lowercase")]
pub enum ModelKey {
    Global,
    Char,
    User(String),
}

impl ModelKey {
    pub fn user(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        validate_user_id(&id)?;
        Ok(ModelKey::User(id))
    }

    fn relative(&self) -> PathBuf {
        match self {
            ModelKey::Global => PathBuf::from("global"),
            ModelKey::Char => PathBuf::from("char"),
            ModelKey::User(id) => Path::new("users").join(id),
        }
    }
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKey::Global => f.write_str("global"),
            ModelKey::Char => f.write_str("char"),
            ModelKey::User(id) => write!(f, "users/{id}"),
        }
    }
}

/// Committed state of one key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Head {
    pub version: u64,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_sha256: Option<String>,
    pub saved_at: DateTime<Utc>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Where a save may be interrupted in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// After the temporary active file is written, before HEAD is committed.
    BeforeCommit,
    /// After HEAD is committed, before the active file is replaced.
    BeforeActivate,
}

pub struct ModelStore {
    root: PathBuf,
    locks: Mutex<HashMap<ModelKey, std::sync::Arc<Mutex<()>>>>,
    fault: Mutex<Option<FaultPoint>>,
}

impl fmt::Debug for ModelStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelStore").field("root", &self.root).finish()
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().expect("store paths have a parent");
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = temp_path(path);
    write_temp(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}

fn write_temp(tmp: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(tmp).map_err(|e| Error::io(tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(tmp, e))?;
    f.sync_all().map_err(|e| Error::io(tmp, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => Error::io(path, e),
    })
}

impl ModelStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for dir in [root.join("models/users"), root.join("feedback")] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(Self {
            root,
            locks: Mutex::new(HashMap::new()),
            fault: Mutex::new(None),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn active_path(&self, key: &ModelKey) -> PathBuf {
        let mut p = self.root.join("models").join(key.relative());
        p.set_extension("json");
        p
    }

    fn history_dir(&self, key: &ModelKey) -> PathBuf {
        self.root.join("models/history").join(key.relative())
    }

    fn version_path(&self, key: &ModelKey, version: u64) -> PathBuf {
        self.history_dir(key).join(format!("v{version:06}.json"))
    }

    fn head_path(&self, key: &ModelKey) -> PathBuf {
        self.history_dir(key).join("HEAD.json")
    }

    pub fn feedback_path(&self) -> PathBuf {
        self.root.join("feedback/events.ndjson")
    }

    /// Makes the next save stop at `point`, as if the process died there.
    pub fn inject_fault(&self, point: FaultPoint) {
        *self.fault.lock().unwrap() = Some(point);
    }

    fn fault_at(&self, point: FaultPoint) -> Result<()> {
        let mut fault = self.fault.lock().unwrap();
        if *fault == Some(point) {
            *fault = None;
            return Err(Error::io(
                &self.root,
                std::io::Error::other(format!("injected fault at {point:?}")),
            ));
        }
        Ok(())
    }

    fn key_lock(&self, key: &ModelKey) -> std::sync::Arc<Mutex<()>> {
        self.locks.lock().unwrap().entry(key.clone()).or_default().clone()
    }

    pub fn head(&self, key: &ModelKey) -> Result<Option<Head>> {
        let path = self.head_path(key);
        match read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| Error::Integrity {
                path,
                message: e.to_string(),
            }),
            Err(Error::NotFound(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Saved versions of `key`, oldest first.
    pub fn versions(&self, key: &ModelKey) -> Result<Vec<u64>> {
        let dir = self.history_dir(key);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&dir, e)),
        };
        let mut versions: Vec<u64> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_prefix('v')?.strip_suffix(".json")?.parse().ok()
            })
            .collect();
        versions.sort_unstable();
        Ok(versions)
    }

    /// Stores `bytes` as the next version of `key` and activates it.
    pub fn save_bytes(&self, key: &ModelKey, bytes: &[u8]) -> Result<u64> {
        let lock = self.key_lock(key);
        let _guard = lock.lock().unwrap();
        let head = self.head(key)?;
        let last = self.versions(key)?.last().copied().unwrap_or(0);
        let version = last.max(head.as_ref().map_or(0, |h| h.version)) + 1;
        let sha = sha256_hex(bytes);

        write_atomic(&self.version_path(key, version), bytes)?;
        let active = self.active_path(key);
        let tmp = temp_path(&active);
        fs::create_dir_all(active.parent().unwrap()).map_err(|e| Error::io(&active, e))?;
        write_temp(&tmp, bytes)?;
        self.fault_at(FaultPoint::BeforeCommit)?;

        let new_head = Head {
            version,
            sha256: sha,
            previous_sha256: head.map(|h| h.sha256),
            saved_at: Utc::now(),
        };
        let head_json = serde_json::to_vec_pretty(&new_head).expect("serializable");
        write_atomic(&self.head_path(key), &head_json)?;
        self.fault_at(FaultPoint::BeforeActivate)?;

        fs::rename(&tmp, &active).map_err(|e| Error::io(&active, e))?;
        Ok(version)
    }

    /// Bytes of the active version, verified against HEAD.
    pub fn load_bytes(&self, key: &ModelKey) -> Result<Vec<u8>> {
        let active = self.active_path(key);
        let head = self.head(key)?;
        let bytes = match read(&active) {
            Ok(b) => Some(b),
            Err(Error::NotFound(_)) if head.is_some() => None,
            Err(e) => return Err(e),
        };
        let Some(head) = head else {
            // written by something other than this store; trust the file
            return bytes.ok_or_else(|| Error::NotFound(active.display().to_string()));
        };
        let sha = bytes.as_deref().map(sha256_hex);
        if sha.as_deref() == Some(head.sha256.as_str()) {
            return Ok(bytes.unwrap());
        }
        let interrupted = sha.is_none() || sha == head.previous_sha256;
        if interrupted {
            let versioned_path = self.version_path(key, head.version);
            let versioned = read(&versioned_path)?;
            if sha256_hex(&versioned) != head.sha256 {
                return Err(Error::Integrity {
                    path: versioned_path,
                    message: "checksum does not match HEAD".into(),
                });
            }
            write_atomic(&active, &versioned)?;
            return Ok(versioned);
        }
        Err(Error::Integrity {
            path: active,
            message: format!("checksum does not match version {}", head.version),
        })
    }

    pub fn save_model<S: Symbol>(&self, key: &ModelKey, model: &MarkovModel<S>) -> Result<u64> {
        self.save_bytes(key, model.to_json().as_bytes())
    }

    pub fn load_model<S: Symbol>(&self, key: &ModelKey) -> Result<MarkovModel<S>> {
        let bytes = self.load_bytes(key)?;
        let path = self.active_path(key);
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Integrity {
            path: path.clone(),
            message: e.to_string(),
        })?;
        MarkovModel::from_json(text).map_err(|message| Error::Integrity { path, message })
    }

    pub fn has_model(&self, key: &ModelKey) -> bool {
        self.active_path(key).exists()
    }

    /// Current version number, 0 for files without history.
    pub fn version(&self, key: &ModelKey) -> Result<u64> {
        Ok(self.head(key)?.map_or(0, |h| h.version))
    }

    /// Users that have an active local model, sorted.
    pub fn user_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("models/users");
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_string)
            })
            .filter(|id| validate_user_id(id).is_ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Deletes all but the newest `keep` versions (never the active one).
    pub fn prune(&self, key: &ModelKey, keep: usize) -> Result<usize> {
        let lock = self.key_lock(key);
        let _guard = lock.lock().unwrap();
        let active = self.head(key)?.map(|h| h.version);
        let versions = self.versions(key)?;
        let cut = versions.len().saturating_sub(keep.max(1));
        let mut removed = 0;
        for v in versions[..cut].iter().filter(|v| Some(**v) != active) {
            let p = self.version_path(key, *v);
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            removed += 1;
        }
        Ok(removed)
    }

    pub fn feedback_log(&self) -> Result<FeedbackLog> {
        FeedbackLog::open(self.feedback_path())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackAction {
    Accepted,
    Rejected,
    Ignored,
}

/// One user reaction to a displayed suggestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackEvent {
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    /// Hex SHA-256 of the text before the suggestion.
    pub context_hash: String,
    pub suggestion: String,
    pub action: FeedbackAction,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    /// The text before the suggestion. Optional, but needed to learn from
    /// accepted suggestions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// Set when the event references an unknown request.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}

pub fn context_hash(context: &str) -> String {
    sha256_hex(context.as_bytes())
}

impl FeedbackEvent {
    pub fn validate(&self) -> Result<()> {
        validate_user_id(&self.user_id).map_err(|e| Error::InvalidEvent(e.to_string()))?;
        if self.suggestion.trim().is_empty() {
            return Err(Error::InvalidEvent("empty suggestion".into()));
        }
        let hash_ok = self.context_hash.len() == 64
            && self
                .context_hash
                .chars()
                .all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c));
        if !hash_ok {
            return Err(Error::InvalidEvent(
                "context_hash must be 64 lowercase hex chars".into(),
            ));
        }
        if let Some(ctx) = &self.context {
            if context_hash(ctx) != self.context_hash {
                return Err(Error::InvalidEvent("context does not match context_hash".into()));
            }
        }
        Ok(())
    }
}

/// Append-only NDJSON log. Appends are serialized and synced to disk.
#[derive(Debug)]
pub struct FeedbackLog {
    path: PathBuf,
    state: Mutex<LogState>,
}

#[derive(Debug, Default)]
struct LogState {
    last_by_session: HashMap<String, DateTime<Utc>>,
}

impl FeedbackLog {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut state = LogState::default();
        if path.exists() {
            for event in read_feedback(&path)? {
                if let Some(s) = event.session_id {
                    let last = state.last_by_session.entry(s).or_insert(event.timestamp);
                    *last = (*last).max(event.timestamp);
                }
            }
        }
        Ok(Self {
            path,
            state: Mutex::new(state),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &FeedbackEvent) -> Result<()> {
        event.validate()?;
        let mut state = self.state.lock().unwrap();
        if let Some(session) = &event.session_id {
            if let Some(last) = state.last_by_session.get(session) {
                if event.timestamp < *last {
                    return Err(Error::InvalidEvent(format!(
                        "timestamp {} precedes {} in session {session}",
                        event.timestamp, last
                    )));
                }
            }
        }
        let mut line = serde_json::to_string(event).expect("serializable");
        line.push('\n');
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))?;
        if let Some(session) = &event.session_id {
            state.last_by_session.insert(session.clone(), event.timestamp);
        }
        Ok(())
    }
}

pub fn read_feedback(path: impl AsRef<Path>) -> Result<Vec<FeedbackEvent>> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| Error::Integrity {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Adds every accepted suggestion that carries its context to `local`.
/// Returns how many events were applied.
pub fn apply_accepted<'a>(
    local: &mut MarkovModel<String>,
    user_id: &str,
    events: impl IntoIterator<Item = &'a FeedbackEvent>,
) -> usize {
    let mut applied = 0;
    for e in events {
        if e.user_id != user_id || e.action != FeedbackAction::Accepted {
            continue;
        }
        let Some(ctx) = &e.context else { continue };
        let context = context_tokens(ctx);
        let suggestion: Vec<String> = tokenize_words(&e.suggestion)
            .words()
            .iter()
            .filter(|t| t.as_str() != END_TOKEN)
            .cloned()
            .collect();
        if suggestion.is_empty() {
            continue;
        }
        local.observe_continuation(&context, &suggestion);
        applied += 1;
    }
    applied
}
