//! Greedy multi-word generation over any next-word model.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::END_TOKEN;
use crate::error::{Error, Result};
use crate::markov::{Distribution, WordModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Global,
    Local,
    Ensemble,
    Char,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Global => "global",
            Source::Local => "local",
            Source::Ensemble => "ensemble",
            Source::Char => "char",
        }
    }
}

/// One decoding step: the next-word distribution and which model produced it.
#[derive(Debug, Clone)]
pub struct Step {
    pub distribution: Distribution<String>,
    pub source: Source,
}

/// Anything that can score the next word given the words so far.
pub trait LanguageModel: Send + Sync {
    fn next_distribution(&self, context: &[String]) -> Distribution<String>;

    fn source(&self) -> Source {
        Source::Global
    }

    fn next_step(&self, context: &[String]) -> Step {
        Step {
            distribution: self.next_distribution(context),
            source: self.source(),
        }
    }
}

impl LanguageModel for WordModel {
    fn next_distribution(&self, context: &[String]) -> Distribution<String> {
        WordModel::next_distribution(self, context)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Arc<T> {
    fn next_distribution(&self, context: &[String]) -> Distribution<String> {
        (**self).next_distribution(context)
    }

    fn source(&self) -> Source {
        (**self).source()
    }

    fn next_step(&self, context: &[String]) -> Step {
        (**self).next_step(context)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn next_distribution(&self, context: &[String]) -> Distribution<String> {
        (**self).next_distribution(context)
    }

    fn source(&self) -> Source {
        (**self).source()
    }

    fn next_step(&self, context: &[String]) -> Step {
        (**self).next_step(context)
    }
}

/// Wraps a model and reports a fixed source tag.
pub struct Tagged<L> {
    pub inner: L,
    pub source: Source,
}

impl<L: LanguageModel> LanguageModel for Tagged<L> {
    fn next_distribution(&self, context: &[String]) -> Distribution<String> {
        self.inner.next_distribution(context)
    }

    fn source(&self) -> Source {
        self.source
    }
}

/// A scored continuation. `normalized_score` is `raw_logprob` divided by
/// [`length_normalizer`] of the token count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub tokens: Vec<String>,
    pub raw_logprob: f64,
    pub normalized_score: f64,
    pub source: Source,
    /// Whether the suggestion passed the display threshold.
    #[serde(default)]
    pub gated: bool,
}

impl Suggestion {
    pub fn new(tokens: Vec<String>, raw_logprob: f64, alpha_norm: f64, source: Source) -> Self {
        debug_assert!(!tokens.is_empty());
        let normalized_score = raw_logprob / normalizer(tokens.len(), alpha_norm);
        Self {
            tokens,
            raw_logprob,
            normalized_score,
            source,
            gated: false,
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn char_len(&self) -> usize {
        self.text().chars().count()
    }

    pub fn first_word(&self) -> &str {
        &self.tokens[0]
    }
}

/// Score order: normalized score descending, then text ascending.
pub fn rank(a: &Suggestion, b: &Suggestion) -> std::cmp::Ordering {
    b.normalized_score
        .total_cmp(&a.normalized_score)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn normalizer(len_seq: usize, alpha_norm: f64) -> f64 {
    ((5.0 + len_seq as f64).powf(alpha_norm)) / 6f64.powf(alpha_norm)
}

/// `((5 + len_seq)^alpha_norm) / (6^alpha_norm)`, with `len_seq` in tokens.
pub fn length_normalizer(len_seq: usize, alpha_norm: f64) -> Result<f64> {
    if len_seq < 1 {
        return Err(Error::invalid("len_seq must be >= 1"));
    }
    if alpha_norm.is_nan() || alpha_norm < 0.0 {
        return Err(Error::invalid(format!("alpha_norm must be >= 0, got {alpha_norm}")));
    }
    Ok(normalizer(len_seq, alpha_norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub max_words: usize,
    pub alpha_norm: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            max_words: 3,
            alpha_norm: 0.4,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_words < 1 {
            return Err(Error::invalid("max_words must be >= 1"));
        }
        length_normalizer(1, self.alpha_norm).map(|_| ())
    }
}

fn merge_source(acc: Option<Source>, next: Source) -> Source {
    match acc {
        None => next,
        Some(s) if s == next => s,
        Some(_) => Source::Ensemble,
    }
}

/// Continues greedily from a partial hypothesis until `max_words`, the end
/// marker, or an empty distribution.
fn extend_greedy<L: LanguageModel + ?Sized>(
    lm: &L,
    context: &mut Vec<String>,
    tokens: &mut Vec<String>,
    logprob: &mut f64,
    source: &mut Option<Source>,
    max_words: usize,
) {
    while tokens.len() < max_words {
        let step = lm.next_step(context);
        let Some((word, p)) = step.distribution.argmax() else {
            break;
        };
        if word == END_TOKEN {
            break;
        }
        *logprob += p.ln();
        *source = Some(merge_source(*source, step.source));
        tokens.push(word.clone());
        context.push(word.clone());
    }
}

/// Appends the most probable word until a stop condition. `None` when the
/// first step has nothing to offer.
pub fn greedy_decode<L: LanguageModel + ?Sized>(lm: &L, prefix: &[String], params: DecodeParams) -> Option<Suggestion> {
    let mut context = prefix.to_vec();
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    let mut source = None;
    extend_greedy(
        lm,
        &mut context,
        &mut tokens,
        &mut logprob,
        &mut source,
        params.max_words,
    );
    if tokens.is_empty() {
        return None;
    }
    Some(Suggestion::new(
        tokens,
        logprob,
        params.alpha_norm,
        source.unwrap_or(Source::Global),
    ))
}

/// Branches on the `n` best first words, continues each greedily, and
/// returns them best first. Branches that start with the end marker are
/// dropped, so the result can be shorter than `n`.
pub fn top_n<L: LanguageModel + ?Sized>(lm: &L, prefix: &[String], n: usize, params: DecodeParams) -> Vec<Suggestion> {
    let first = lm.next_step(prefix);
    let mut out = Vec::with_capacity(n);
    for (word, p) in first.distribution.top(n.max(1)) {
        if word == END_TOKEN {
            continue;
        }
        let mut context = prefix.to_vec();
        context.push(word.clone());
        let mut tokens = vec![word.clone()];
        let mut logprob = p.ln();
        let mut source = Some(first.source);
        extend_greedy(
            lm,
            &mut context,
            &mut tokens,
            &mut logprob,
            &mut source,
            params.max_words,
        );
        out.push(Suggestion::new(
            tokens,
            logprob,
            params.alpha_norm,
            source.unwrap_or(Source::Global),
        ));
    }
    out.sort_by(rank);
    out
}

/// Display gate; inclusive.
pub fn gate(suggestion: &Suggestion, threshold: f64) -> bool {
    suggestion.normalized_score >= threshold
}
