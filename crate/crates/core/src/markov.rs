//! Order-k Markov (n-gram) model with maximum-likelihood transitions.
//!
//! The same counting structure backs the global word model, the per-user
//! word models and the character model. `order` is the number of
//! conditioning symbols, so order 2 keeps trigram counts. Counts are kept
//! for every context length `1..=order`; word-level prediction only reads
//! the full-length context while the character model backs off through
//! the shorter ones.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Debug;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{END_TOKEN, START_TOKEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolKind {
    Word,
    Char,
}

pub trait Symbol: Clone + Eq + Hash + Ord + Debug + Send + Sync + 'static {
    const KIND: SymbolKind;

    fn start() -> Self;
    fn end() -> Self;
    fn encode(&self) -> String;
    fn decode(raw: &str) -> Option<Self>;
}

impl Symbol for String {
    const KIND: SymbolKind = SymbolKind::Word;

    fn start() -> Self {
        START_TOKEN.to_string()
    }

    fn end() -> Self {
        END_TOKEN.to_string()
    }

    fn encode(&self) -> String {
        self.clone()
    }

    fn decode(raw: &str) -> Option<Self> {
        (!raw.is_empty() && !raw.chars().any(char::is_whitespace)).then(|| raw.to_string())
    }
}

/// Start and end of text for character sequences.
pub const CHAR_START: char = '\u{2}';
pub const CHAR_END: char = '\u{3}';

impl Symbol for char {
    const KIND: SymbolKind = SymbolKind::Char;

    fn start() -> Self {
        CHAR_START
    }

    fn end() -> Self {
        CHAR_END
    }

    fn encode(&self) -> String {
        self.to_string()
    }

    fn decode(raw: &str) -> Option<Self> {
        let mut chars = raw.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }
}

/// Probabilities of the next symbol. Empty when the context was never seen.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<S: Ord> {
    entries: BTreeMap<S, f64>,
}

impl<S: Ord + Clone> Default for Distribution<S> {
    fn default() -> Self {
        Self::empty()
    }
}

impl<S: Ord + Clone> Distribution<S> {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn from_counts<'a>(counts: impl IntoIterator<Item = (&'a S, &'a u64)>, total: u64) -> Self
    where
        S: 'a,
    {
        let total = total as f64;
        Self {
            entries: counts
                .into_iter()
                .map(|(s, &c)| (s.clone(), c as f64 / total))
                .collect(),
        }
    }

    /// Builds a distribution from raw probabilities. Entries that are not in
    /// `(0, 1]` are dropped.
    pub fn from_probabilities(entries: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self {
            entries: entries.into_iter().filter(|(_, p)| *p > 0.0 && *p <= 1.0).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, symbol: &S) -> f64 {
        self.entries.get(symbol).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&S, f64)> {
        self.entries.iter().map(|(s, p)| (s, *p))
    }

    pub fn sum(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Most probable symbol; ties go to the smallest symbol.
    pub fn argmax(&self) -> Option<(&S, f64)> {
        let mut best: Option<(&S, f64)> = None;
        for (s, &p) in &self.entries {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((s, p));
            }
        }
        best
    }

    /// The `n` most probable symbols, probability descending then symbol ascending.
    pub fn top(&self, n: usize) -> Vec<(&S, f64)> {
        let mut all: Vec<(&S, f64)> = self.iter().collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        all.truncate(n);
        all
    }

    pub fn into_entries(self) -> BTreeMap<S, f64> {
        self.entries
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextCounts<S: Hash + Eq> {
    total: u64,
    next: HashMap<S, u64>,
}

impl<S: Symbol> ContextCounts<S> {
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, symbol: &S) -> u64 {
        self.next.get(symbol).copied().unwrap_or(0)
    }

    pub fn distribution(&self) -> Distribution<S> {
        Distribution::from_counts(&self.next, self.total)
    }

    pub fn next(&self) -> impl Iterator<Item = (&S, u64)> {
        self.next.iter().map(|(s, c)| (s, *c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkovModel<S: Symbol> {
    order: usize,
    contexts: HashMap<Vec<S>, ContextCounts<S>>,
}

impl<S: Symbol> MarkovModel<S> {
    pub fn new(order: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::invalid(format!("order must be >= 1, got {order}")));
        }
        Ok(Self {
            order,
            contexts: HashMap::new(),
        })
    }

    pub fn train<I, T>(sequences: I, order: usize) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[S]>,
    {
        let mut model = Self::new(order)?;
        for seq in sequences {
            model.observe(seq.as_ref());
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Adds the sliding-window tallies of one sequence. A sequence that
    /// begins with the start symbol is left-padded so that its first real
    /// symbol already has a full-length context.
    pub fn observe(&mut self, sequence: &[S]) {
        if sequence.is_empty() {
            return;
        }
        let pad = if sequence[0] == S::start() { self.order - 1 } else { 0 };
        let padded: Vec<S> = std::iter::repeat_n(S::start(), pad)
            .chain(sequence.iter().cloned())
            .collect();
        for i in (pad + 1)..padded.len() {
            self.tally(&padded, i);
        }
    }

    /// Tallies only the `continuation` symbols as targets, conditioned on
    /// `context` (padded like [`Self::key_for`]). Used for incremental
    /// updates where the context itself was already counted.
    pub fn observe_continuation(&mut self, context: &[S], continuation: &[S]) {
        let mut window = self.key_for(context);
        let first = window.len();
        window.extend_from_slice(continuation);
        for i in first..window.len() {
            self.tally(&window, i);
        }
    }

    fn tally(&mut self, window: &[S], i: usize) {
        let target = &window[i];
        for len in 1..=self.order.min(i) {
            let ctx = &window[i - len..i];
            let entry = match self.contexts.get_mut(ctx) {
                Some(e) => e,
                None => self.contexts.entry(ctx.to_vec()).or_insert_with(|| ContextCounts {
                    total: 0,
                    next: HashMap::new(),
                }),
            };
            entry.total += 1;
            *entry.next.entry(target.clone()).or_insert(0) += 1;
        }
    }

    /// New snapshot with `sequence` added; equal to retraining on the
    /// previous corpus plus `sequence`.
    pub fn updated(&self, sequence: &[S]) -> Self {
        let mut next = self.clone();
        next.observe(sequence);
        next
    }

    /// Last `order` symbols of `context`, left-padded with the start symbol.
    pub fn key_for(&self, context: &[S]) -> Vec<S> {
        let take = context.len().min(self.order);
        let mut key = Vec::with_capacity(self.order);
        key.extend(std::iter::repeat_n(S::start(), self.order - take));
        key.extend_from_slice(&context[context.len() - take..]);
        key
    }

    /// MLE distribution for the full-length context ending `context`.
    /// No backoff: an unseen context gives an empty distribution.
    pub fn next_distribution(&self, context: &[S]) -> Distribution<S> {
        let key = self.key_for(context);
        self.contexts
            .get(key.as_slice())
            .map(ContextCounts::distribution)
            .unwrap_or_default()
    }

    /// Counts for an exact context of any length `1..=order`.
    pub fn context(&self, ctx: &[S]) -> Option<&ContextCounts<S>> {
        self.contexts.get(ctx)
    }

    pub fn context_count(&self, ctx: &[S]) -> u64 {
        self.context(ctx).map_or(0, |c| c.total)
    }

    pub fn transition_count(&self, ctx: &[S], symbol: &S) -> u64 {
        self.context(ctx).map_or(0, |c| c.count(symbol))
    }

    pub fn contexts(&self) -> impl Iterator<Item = (&[S], &ContextCounts<S>)> {
        self.contexts.iter().map(|(k, v)| (k.as_slice(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    /// Number of predicted positions seen in training.
    pub fn token_count(&self) -> u64 {
        self.contexts
            .iter()
            .filter(|(k, _)| k.len() == 1)
            .map(|(_, v)| v.total)
            .sum()
    }

    /// Number of distinct full-length contexts.
    pub fn full_context_count(&self) -> usize {
        self.contexts.keys().filter(|k| k.len() == self.order).count()
    }

    pub fn vocab(&self) -> std::collections::BTreeSet<S> {
        let mut vocab = std::collections::BTreeSet::new();
        for (ctx, counts) in &self.contexts {
            vocab.extend(ctx.iter().cloned());
            vocab.extend(counts.next.keys().cloned());
        }
        vocab
    }

    /// Checks that every context total equals the sum of its transitions.
    pub fn counts_consistent(&self) -> bool {
        self.contexts.iter().all(|(k, v)| {
            !k.is_empty()
                && k.len() <= self.order
                && v.next.values().all(|&c| c >= 1)
                && v.next.values().sum::<u64>() == v.total
        })
    }

    pub fn to_file(&self) -> ModelFile {
        let mut contexts: Vec<ContextRecord> = self
            .contexts
            .iter()
            .map(|(ctx, counts)| ContextRecord {
                ctx: ctx.iter().map(Symbol::encode).collect(),
                count: counts.total,
                next: counts.next.iter().map(|(s, c)| (s.encode(), *c)).collect(),
            })
            .collect();
        contexts.sort_by(|a, b| a.ctx.cmp(&b.ctx));
        ModelFile {
            k: self.order,
            symbol_kind: S::KIND,
            contexts,
        }
    }

    pub fn from_file(file: ModelFile) -> std::result::Result<Self, String> {
        if file.symbol_kind != S::KIND {
            return Err(format!(
                "expected symbol_kind {:?}, found {:?}",
                S::KIND,
                file.symbol_kind
            ));
        }
        let mut model = Self::new(file.k).map_err(|e| e.to_string())?;
        for rec in file.contexts {
            if rec.ctx.is_empty() || rec.ctx.len() > file.k {
                return Err(format!("context {:?} has invalid length", rec.ctx));
            }
            let ctx = rec
                .ctx
                .iter()
                .map(|s| S::decode(s).ok_or_else(|| format!("bad symbol {s:?}")))
                .collect::<std::result::Result<Vec<S>, String>>()?;
            let mut next = HashMap::with_capacity(rec.next.len());
            let mut sum = 0u64;
            for (s, c) in rec.next {
                if c == 0 {
                    return Err(format!("zero count after context {:?}", rec.ctx));
                }
                sum += c;
                next.insert(S::decode(&s).ok_or_else(|| format!("bad symbol {s:?}"))?, c);
            }
            if sum != rec.count {
                return Err(format!(
                    "context {:?}: count {} but transitions sum to {sum}",
                    rec.ctx, rec.count
                ));
            }
            if model.contexts.insert(ctx, ContextCounts { total: sum, next }).is_some() {
                return Err(format!("duplicate context {:?}", rec.ctx));
            }
        }
        Ok(model)
    }

    /// Pretty JSON with sorted contexts and sorted successor keys.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.to_file()).expect("model serializes");
        out.push('\n');
        out
    }

    pub fn from_json(json: &str) -> std::result::Result<Self, String> {
        let file: ModelFile = serde_json::from_str(json).map_err(|e| e.to_string())?;
        Self::from_file(file)
    }
}

/// On-disk model format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub k: usize,
    pub symbol_kind: SymbolKind,
    pub contexts: Vec<ContextRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub ctx: Vec<String>,
    pub count: u64,
    pub next: BTreeMap<String, u64>,
}

pub type WordModel = MarkovModel<String>;
