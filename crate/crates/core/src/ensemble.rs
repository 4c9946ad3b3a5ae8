//! Global + per-user interpolation.
//!
//! At every decoding step the global next-word distribution and the user's
//! local Markov distribution are mixed as
//! `alpha * p_global + (1 - alpha) * p_local`. When one side has nothing
//! for the context, the other side is used as is.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::decoder::{self, DecodeParams, LanguageModel, Source, Step, Suggestion};
use crate::error::{Error, Result};
use crate::markov::{Distribution, WordModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub alpha_ensemble: f64,
    pub alpha_norm: f64,
    pub threshold: f64,
    pub top_n: usize,
    pub max_words: usize,
    pub markov_order: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            alpha_ensemble: 0.6,
            alpha_norm: 0.4,
            threshold: -1.0,
            top_n: 3,
            max_words: 3,
            markov_order: 2,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha_ensemble)?;
        if self.top_n < 1 {
            return Err(Error::invalid("top_n must be >= 1"));
        }
        if self.markov_order < 1 {
            return Err(Error::invalid("markov_order must be >= 1"));
        }
        if self.threshold.is_nan() {
            return Err(Error::invalid("threshold is NaN"));
        }
        self.decode_params().validate()
    }

    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            max_words: self.max_words,
            alpha_norm: self.alpha_norm,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must be in [0, 1], got {alpha}")))
    }
}

fn mix(global: &Distribution<String>, local: &Distribution<String>, alpha: f64) -> Distribution<String> {
    let mut entries: BTreeMap<String, f64> = BTreeMap::new();
    for (s, p) in global.iter() {
        *entries.entry(s.clone()).or_insert(0.0) += alpha * p;
    }
    for (s, p) in local.iter() {
        *entries.entry(s.clone()).or_insert(0.0) += (1.0 - alpha) * p;
    }
    Distribution::from_probabilities(entries)
}

/// Mixes one step's distributions. A missing side falls back to the other
/// side unscaled.
pub fn combine_step(
    global: &Distribution<String>,
    local: &Distribution<String>,
    alpha: f64,
) -> Result<Distribution<String>> {
    check_alpha(alpha)?;
    Ok(match (global.is_empty(), local.is_empty()) {
        (true, true) => Distribution::empty(),
        (false, true) => global.clone(),
        (true, false) => local.clone(),
        (false, false) => mix(global, local, alpha),
    })
}

/// A user's local model together with how it was built.
#[derive(Debug, Clone)]
pub struct UserProfile {
    pub user_id: String,
    pub local: Arc<WordModel>,
    pub window_days: i64,
    pub trained_at: Option<DateTime<Utc>>,
    pub notes: usize,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>, local: WordModel) -> Self {
        Self {
            user_id: user_id.into(),
            local: Arc::new(local),
            window_days: 90,
            trained_at: None,
            notes: 0,
        }
    }

    /// A user with no history.
    pub fn empty(user_id: impl Into<String>, order: usize) -> Result<Self> {
        Ok(Self::new(user_id, WordModel::new(order)?))
    }
}

/// Step model combining a global model with one user's local model.
pub struct Interpolated<'a> {
    pub global: &'a dyn LanguageModel,
    pub local: &'a WordModel,
    alpha: f64,
}

impl<'a> Interpolated<'a> {
    pub fn new(global: &'a dyn LanguageModel, local: &'a WordModel, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { global, local, alpha })
    }
}

impl LanguageModel for Interpolated<'_> {
    fn next_distribution(&self, context: &[String]) -> Distribution<String> {
        self.next_step(context).distribution
    }

    fn source(&self) -> Source {
        Source::Ensemble
    }

    fn next_step(&self, context: &[String]) -> Step {
        let global = self.global.next_distribution(context);
        let local = self.local.next_distribution(context);
        match (global.is_empty(), local.is_empty()) {
            (_, true) => Step {
                distribution: global,
                source: Source::Global,
            },
            (true, false) => Step {
                distribution: local,
                source: Source::Local,
            },
            (false, false) => Step {
                distribution: mix(&global, &local, self.alpha),
                source: Source::Ensemble,
            },
        }
    }
}

/// Word-level suggestion engine: a shared global model plus configuration.
#[derive(Clone)]
pub struct Ensemble {
    pub global: Arc<dyn LanguageModel>,
    pub config: EnsembleConfig,
}

impl Ensemble {
    pub fn new(global: Arc<dyn LanguageModel>, config: EnsembleConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { global, config })
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        let config = EnsembleConfig {
            alpha_ensemble: alpha,
            ..self.config
        };
        Self::new(self.global.clone(), config)
    }

    pub fn with_threshold(&self, threshold: f64) -> Self {
        Self {
            global: self.global.clone(),
            config: EnsembleConfig {
                threshold,
                ..self.config
            },
        }
    }

    pub fn suggest_after_word(&self, prefix: &[String], user: &UserProfile) -> Vec<Suggestion> {
        self.suggest_n(prefix, user, self.config.top_n)
    }

    /// Top `n` continuations, best first, each flagged with whether it
    /// passes the threshold.
    pub fn suggest_n(&self, prefix: &[String], user: &UserProfile, n: usize) -> Vec<Suggestion> {
        let lm = Interpolated {
            global: self.global.as_ref(),
            local: &user.local,
            alpha: self.config.alpha_ensemble,
        };
        let mut out = decoder::top_n(&lm, prefix, n, self.config.decode_params());
        for s in &mut out {
            s.gated = decoder::gate(s, self.config.threshold);
        }
        out
    }

    /// Which model carried a suggestion: single-source suggestions keep
    /// their tag, mixed ones go to the side with the larger summed weighted
    /// probability of the chosen words (ties to global).
    pub fn attribute(&self, prefix: &[String], user: &UserProfile, suggestion: &Suggestion) -> Source {
        match suggestion.source {
            Source::Ensemble => {}
            other => return other,
        }
        let alpha = self.config.alpha_ensemble;
        let mut context = prefix.to_vec();
        let (mut g, mut l) = (0.0, 0.0);
        for tok in &suggestion.tokens {
            g += alpha * self.global.next_distribution(&context).get(tok);
            l += (1.0 - alpha) * user.local.next_distribution(&context).get(tok);
            context.push(tok.clone());
        }
        if l > g {
            Source::Local
        } else {
            Source::Global
        }
    }
}

/// Suggestion counts by source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub global: u64,
    pub local: u64,
    pub ensemble: u64,
    pub char: u64,
}

impl SourceCounts {
    pub fn record(&mut self, source: Source) {
        match source {
            Source::Global => self.global += 1,
            Source::Local => self.local += 1,
            Source::Ensemble => self.ensemble += 1,
            Source::Char => self.char += 1,
        }
    }

    pub fn merge(&mut self, other: &SourceCounts) {
        self.global += other.global;
        self.local += other.local;
        self.ensemble += other.ensemble;
        self.char += other.char;
    }

    pub fn total(&self) -> u64 {
        self.global + self.local + self.ensemble + self.char
    }
}
