//! Character-level word completion.
//!
//! A character n-gram with stupid backoff: the longest context suffix seen
//! in training is used, and every level dropped multiplies the probability
//! by `backoff_factor`. Decoding is greedy and stops at a word boundary.

use serde::{Deserialize, Serialize};

use crate::decoder::{Source, Suggestion};
use crate::error::{Error, Result};
use crate::markov::{MarkovModel, Symbol, CHAR_END, CHAR_START};

/// Word boundary symbol in character sequences.
pub const BOUNDARY: char = '\u{2420}';

/// Completes a partially typed word.
pub trait WordCompleter: Send + Sync {
    /// `context` is the text before the current word; `typed` is the
    /// current partial word. Returns the untyped remainder, if any.
    fn complete_word(&self, context: &str, typed: &str) -> Option<Suggestion>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CharParams {
    pub backoff_factor: f64,
    pub max_completion_chars: usize,
    /// Minimum completion score (log scale) to return a completion.
    pub threshold: f64,
}

impl Default for CharParams {
    fn default() -> Self {
        Self {
            backoff_factor: 0.4,
            max_completion_chars: 15,
            threshold: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharModel {
    inner: MarkovModel<char>,
    params: CharParams,
}

/// Maps text to its character sequence with boundaries.
pub fn char_symbols(text: &str) -> impl Iterator<Item = char> + '_ {
    text.chars().map(|c| if c.is_whitespace() { BOUNDARY } else { c })
}

/// Training sequence for one normalized text.
pub fn char_sequence(text: &str) -> Vec<char> {
    let mut seq = Vec::with_capacity(text.len() + 2);
    seq.push(CHAR_START);
    seq.extend(char_symbols(text));
    seq.push(CHAR_END);
    seq
}

pub fn train_char<I, T>(texts: I, order: usize) -> Result<CharModel>
where
    I: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    let mut inner = MarkovModel::new(order)?;
    for text in texts {
        inner.observe(&char_sequence(text.as_ref()));
    }
    Ok(CharModel {
        inner,
        params: CharParams::default(),
    })
}

impl CharModel {
    pub fn from_markov(inner: MarkovModel<char>, params: CharParams) -> Result<Self> {
        let model = Self { inner, params };
        model.validate()?;
        Ok(model)
    }

    pub fn with_params(mut self, params: CharParams) -> Result<Self> {
        self.params = params;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let f = self.params.backoff_factor;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::invalid(format!("backoff_factor must be in (0, 1], got {f}")));
        }
        Ok(())
    }

    pub fn markov(&self) -> &MarkovModel<char> {
        &self.inner
    }

    pub fn params(&self) -> CharParams {
        self.params
    }

    pub fn order(&self) -> usize {
        self.inner.order()
    }

    /// Best next character after `history`, with its backed-off probability.
    fn next_char(&self, history: &[char]) -> Option<(char, f64)> {
        let order = self.inner.order();
        let longest = history.len().min(order);
        for len in (1..=longest).rev() {
            let ctx = &history[history.len() - len..];
            if let Some(counts) = self.inner.context(ctx) {
                let dist = counts.distribution();
                let (c, p) = dist.argmax()?;
                let penalty = self.params.backoff_factor.powi((order - len) as i32);
                return Some((*c, p * penalty));
            }
        }
        None
    }

    /// Character history as seen in training: start padding, the context,
    /// a boundary, then the typed part of the word.
    fn history(&self, context: &str, typed: &str) -> Vec<char> {
        let pad = self.inner.order().max(1);
        let mut history = vec![CHAR_START; pad];
        history.extend(char_symbols(context));
        if history.len() > pad && history.last() != Some(&BOUNDARY) {
            history.push(BOUNDARY);
        }
        history.extend(char_symbols(typed));
        history
    }
}

impl WordCompleter for CharModel {
    fn complete_word(&self, context: &str, typed: &str) -> Option<Suggestion> {
        let mut history = self.history(context, typed);
        let mut remainder = String::new();
        let mut logprob = 0.0;
        while remainder.chars().count() < self.params.max_completion_chars {
            let Some((c, p)) = self.next_char(&history) else {
                break;
            };
            if c == BOUNDARY || c == CHAR_END || c == <char as Symbol>::start() {
                break;
            }
            logprob += p.ln();
            remainder.push(c);
            history.push(c);
        }
        if remainder.is_empty() {
            return None;
        }
        let s = Suggestion::new(vec![remainder], logprob, 0.0, Source::Char);
        (s.normalized_score >= self.params.threshold).then_some(Suggestion { gated: true, ..s })
    }
}
