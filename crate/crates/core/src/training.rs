//! Builds the global, character and per-user models from a note corpus.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charlm::{train_char, CharModel};
use crate::corpus::{build_user_window, normalize_text, tokenize_words, user_ids, RawNote};
use crate::ensemble::UserProfile;
use crate::error::Result;
use crate::markov::WordModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub markov_order: usize,
    pub char_order: usize,
    pub window_days: i64,
    /// End of the local-model window; defaults to the newest note.
    pub now: Option<DateTime<Utc>>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            markov_order: 2,
            char_order: 6,
            window_days: 90,
            now: None,
        }
    }
}

pub struct TrainedModels {
    pub global: WordModel,
    pub char: CharModel,
    pub users: BTreeMap<String, UserProfile>,
}

pub fn latest_timestamp(notes: &[RawNote]) -> Option<DateTime<Utc>> {
    notes.iter().map(|n| n.created_at).max()
}

/// Word model over every note, regardless of age.
pub fn train_global(notes: &[RawNote], order: usize) -> Result<WordModel> {
    let seqs: Vec<_> = notes
        .par_iter()
        .map(|n| tokenize_words(&normalize_text(&n.text)))
        .collect();
    WordModel::train(seqs.iter().map(|s| s.tokens()), order)
}

pub fn train_char_model(notes: &[RawNote], order: usize) -> Result<CharModel> {
    let texts: Vec<String> = notes.par_iter().map(|n| normalize_text(&n.text)).collect();
    train_char(&texts, order)
}

/// Local model from the user's notes inside the window ending at `now`.
pub fn train_user(
    notes: &[RawNote],
    user_id: &str,
    order: usize,
    window_days: i64,
    now: DateTime<Utc>,
) -> Result<UserProfile> {
    let window = build_user_window(notes, user_id, window_days, now)?;
    let local = WordModel::train(window.iter().map(|s| s.tokens()), order)?;
    Ok(UserProfile {
        window_days,
        trained_at: Some(now),
        notes: window.len(),
        ..UserProfile::new(user_id, local)
    })
}

pub fn train_all(notes: &[RawNote], opts: &TrainOptions) -> Result<TrainedModels> {
    let now = opts
        .now
        .or_else(|| latest_timestamp(notes))
        .unwrap_or(DateTime::UNIX_EPOCH);
    let global = train_global(notes, opts.markov_order)?;
    let char = train_char_model(notes, opts.char_order)?;
    let users = user_ids(notes)
        .into_par_iter()
        .map(|id| {
            let profile = train_user(notes, &id, opts.markov_order, opts.window_days, now)?;
            Ok((id, profile))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(TrainedModels { global, char, users })
}
