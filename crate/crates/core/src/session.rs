//! Per-session typing cascade.
//!
//! After a word separator the word-level engine is queried and its top-n
//! candidates are cached. After any other character the cascade runs:
//!
//! 1. prefix match of the partial word against the cached candidates;
//! 2. with at least two typed characters, a fresh top-3 query at the last
//!    word boundary, prefix-matched the same way;
//! 3. with at least two typed characters, the character model.
//!
//! The first stage that produces something wins.

use serde::{Deserialize, Serialize};

use crate::charlm::WordCompleter;
use crate::corpus::{context_tokens, normalize_text};
use crate::decoder::Suggestion;
use crate::ensemble::{Ensemble, UserProfile};

/// Partial-word length at which stages 2 and 3 become eligible.
pub const MIN_PARTIAL_CHARS: usize = 2;
/// Candidates requested by the trimmed-input rematch.
pub const REMATCH_N: usize = 3;

/// Word-level continuation source as seen by a session.
pub trait WordSuggester: Send + Sync {
    /// Up to `n` candidates after `prefix`, best first, with gate flags set.
    fn suggest(&self, prefix: &[String], n: usize) -> Vec<Suggestion>;

    fn top_n(&self) -> usize;
}

/// An [`Ensemble`] bound to one user.
pub struct UserSuggester<'a> {
    pub ensemble: &'a Ensemble,
    pub user: &'a UserProfile,
}

impl WordSuggester for UserSuggester<'_> {
    fn suggest(&self, prefix: &[String], n: usize) -> Vec<Suggestion> {
        self.ensemble.suggest_n(prefix, self.user, n)
    }

    fn top_n(&self) -> usize {
        self.ensemble.config.top_n
    }
}

pub fn is_separator(c: char) -> bool {
    c.is_whitespace()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    WordBoundary,
    Cache,
    Rematch,
    Char,
}

/// What to show ahead of the caret.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    /// Text to insert if accepted.
    pub remainder: String,
    pub stage: Stage,
    pub suggestion: Suggestion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionCache {
    pub anchor_prefix: Vec<String>,
    pub candidates: Vec<Suggestion>,
    pub created_at_keystroke: u64,
}

/// Index and remainder of the first candidate whose first word starts
/// with `typed` (case-sensitive) and leaves something to show.
pub fn match_candidates(candidates: &[Suggestion], typed: &str) -> Option<(usize, String)> {
    if typed.is_empty() {
        return None;
    }
    candidates.iter().enumerate().find_map(|(i, s)| {
        if !s.first_word().starts_with(typed) {
            return None;
        }
        let remainder = s.text()[typed.len()..].to_string();
        (!remainder.is_empty()).then_some((i, remainder))
    })
}

pub fn prefix_match(cache: &SuggestionCache, typed: &str) -> Option<Completion> {
    let (i, remainder) = match_candidates(&cache.candidates, typed)?;
    Some(Completion {
        remainder,
        stage: Stage::Cache,
        suggestion: cache.candidates[i].clone(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TypingState {
    pub full_text: String,
    pub user_id: String,
    pub cache: Option<SuggestionCache>,
    pub keystrokes: u64,
}

impl TypingState {
    fn split_at_anchor(&self) -> usize {
        self.full_text
            .char_indices()
            .rev()
            .find(|(_, c)| is_separator(*c))
            .map_or(0, |(i, c)| i + c.len_utf8())
    }

    /// Text up to and including the last separator.
    pub fn anchor_text(&self) -> &str {
        &self.full_text[..self.split_at_anchor()]
    }

    pub fn current_partial_word(&self) -> &str {
        &self.full_text[self.split_at_anchor()..]
    }

    pub fn anchor_prefix(&self) -> Vec<String> {
        context_tokens(self.anchor_text())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Session {
    pub state: TypingState,
}

impl Session {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            state: TypingState {
                user_id: user_id.into(),
                ..Default::default()
            },
        }
    }

    /// Replaces the text wholesale (paste, delete); the cache is dropped.
    pub fn set_text(&mut self, text: impl Into<String>) {
        self.state.full_text = text.into();
        self.state.cache = None;
    }

    /// Appends one keystroke and runs the matching trigger.
    pub fn type_char(
        &mut self,
        c: char,
        suggester: &dyn WordSuggester,
        completer: &dyn WordCompleter,
    ) -> Option<Completion> {
        self.state.full_text.push(c);
        self.state.keystrokes += 1;
        if is_separator(c) {
            self.on_word_boundary(suggester)
        } else {
            self.on_char(suggester, completer)
        }
    }

    /// Inserts an accepted completion.
    pub fn accept(&mut self, completion: &Completion) {
        self.state.full_text.push_str(&completion.remainder);
    }

    /// Queries the word-level engine at the current boundary and refreshes
    /// the cache with every candidate, gated or not. The top candidate is
    /// shown only if it passes the gate.
    pub fn on_word_boundary(&mut self, suggester: &dyn WordSuggester) -> Option<Completion> {
        let anchor_prefix = self.state.anchor_prefix();
        let candidates = suggester.suggest(&anchor_prefix, suggester.top_n());
        let display = candidates.first().filter(|s| s.gated).map(|s| Completion {
            remainder: s.text(),
            stage: Stage::WordBoundary,
            suggestion: s.clone(),
        });
        self.state.cache = Some(SuggestionCache {
            anchor_prefix,
            candidates,
            created_at_keystroke: self.state.keystrokes,
        });
        display
    }

    /// Stage 2: re-query at the last boundary and prefix-match.
    pub fn trimmed_rematch(&self, suggester: &dyn WordSuggester) -> Option<Completion> {
        let partial = self.state.current_partial_word();
        if partial.chars().count() < MIN_PARTIAL_CHARS {
            return None;
        }
        let candidates = suggester.suggest(&self.state.anchor_prefix(), REMATCH_N);
        let (i, remainder) = match_candidates(&candidates, partial)?;
        Some(Completion {
            remainder,
            stage: Stage::Rematch,
            suggestion: candidates[i].clone(),
        })
    }

    pub fn on_char(&mut self, suggester: &dyn WordSuggester, completer: &dyn WordCompleter) -> Option<Completion> {
        let anchor_prefix = self.state.anchor_prefix();
        if self
            .state
            .cache
            .as_ref()
            .is_some_and(|c| c.anchor_prefix != anchor_prefix)
        {
            self.state.cache = None;
        }
        let partial = self.state.current_partial_word();
        if let Some(hit) = self.state.cache.as_ref().and_then(|cache| prefix_match(cache, partial)) {
            return Some(hit);
        }
        if partial.chars().count() < MIN_PARTIAL_CHARS {
            return None;
        }
        if let Some(hit) = self.trimmed_rematch(suggester) {
            return Some(hit);
        }
        let context = normalize_text(self.state.anchor_text());
        completer.complete_word(&context, partial).map(|s| Completion {
            remainder: s.text(),
            stage: Stage::Char,
            suggestion: s,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::Source;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn sugg(text: &str, score: f64, gated: bool) -> Suggestion {
        Suggestion {
            tokens: text.split(' ').map(str::to_string).collect(),
            raw_logprob: score,
            normalized_score: score,
            source: Source::Ensemble,
            gated,
        }
    }

    struct FixedSuggester {
        out: Vec<Suggestion>,
        calls: AtomicUsize,
    }

    impl WordSuggester for FixedSuggester {
        fn suggest(&self, _prefix: &[String], n: usize) -> Vec<Suggestion> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.out.iter().take(n).cloned().collect()
        }
        fn top_n(&self) -> usize {
            3
        }
    }

    struct FixedCompleter {
        out: Option<&'static str>,
        calls: AtomicUsize,
    }

    impl WordCompleter for FixedCompleter {
        fn complete_word(&self, _context: &str, _typed: &str) -> Option<Suggestion> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.out.map(|t| sugg(t, -1.0, true))
        }
    }

    fn suggester(out: Vec<Suggestion>) -> FixedSuggester {
        FixedSuggester {
            out,
            calls: AtomicUsize::new(0),
        }
    }

    fn completer(out: Option<&'static str>) -> FixedCompleter {
        FixedCompleter {
            out,
            calls: AtomicUsize::new(0),
        }
    }

    fn cache(cands: Vec<Suggestion>) -> SuggestionCache {
        SuggestionCache {
            anchor_prefix: vec!["<s>".into()],
            candidates: cands,
            created_at_keystroke: 0,
        }
    }

    #[test]
    fn prefix_match_examples() {
        let c = cache(vec![
            sugg("uploading the documents", -0.5, true),
            sugg("the update", -0.7, false),
        ]);
        assert_eq!(prefix_match(&c, "up").unwrap().remainder, "loading the documents");
        assert!(prefix_match(&c, "zz").is_none());
        assert_eq!(prefix_match(&c, "uploading").unwrap().remainder, " the documents");
        assert_eq!(prefix_match(&c, "th").unwrap().remainder, "e update");
        assert!(prefix_match(&c, "Up").is_none());
    }

    #[test]
    fn boundary_displays_gated_top() {
        let s = suggester(vec![sugg("for the update", -0.3, true), sugg("so much", -0.9, false)]);
        let c = completer(None);
        let mut session = Session::new("u");
        session.set_text("thank you");
        let shown = session.type_char(' ', &s, &c).unwrap();
        assert_eq!(shown.remainder, "for the update");
        assert_eq!(shown.stage, Stage::WordBoundary);
        let cache = session.state.cache.as_ref().unwrap();
        assert_eq!(cache.candidates.len(), 2);
        assert_eq!(cache.anchor_prefix, ["<s>", "thank", "you"]);
    }

    #[test]
    fn boundary_keeps_ungated_candidates() {
        let s = suggester(vec![sugg("uploading the documents", -3.0, false)]);
        let c = completer(None);
        let mut session = Session::new("u");
        session.set_text("thank you for");
        assert!(session.type_char(' ', &s, &c).is_none());
        assert_eq!(session.state.cache.as_ref().unwrap().candidates.len(), 1);
        let hit = session.type_char('u', &s, &c).unwrap();
        assert_eq!(hit.stage, Stage::Cache);
        assert_eq!(hit.remainder, "ploading the documents");
    }

    #[test]
    fn empty_models_give_nothing() {
        let s = suggester(vec![]);
        let c = completer(None);
        let mut session = Session::new("u");
        assert!(session.type_char(' ', &s, &c).is_none());
        assert!(session.state.cache.as_ref().unwrap().candidates.is_empty());
    }

    #[test]
    fn cache_hit_short_circuits_later_stages() {
        let s = suggester(vec![sugg("uploading the documents", -0.5, true)]);
        let c = completer(Some("zzz"));
        let mut session = Session::new("u");
        session.set_text("thanks for");
        session.type_char(' ', &s, &c);
        assert_eq!(s.calls.load(Ordering::SeqCst), 1);
        session.type_char('u', &s, &c).unwrap();
        let hit = session.type_char('p', &s, &c).unwrap();
        assert_eq!(hit.stage, Stage::Cache);
        assert_eq!(s.calls.load(Ordering::SeqCst), 1);
        assert_eq!(c.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn falls_through_to_char_model() {
        let s = suggester(vec![sugg("the update", -0.5, true)]);
        let c = completer(Some("cuments"));
        let mut session = Session::new("u");
        session.set_text("the ");
        session.state.cache = None;
        assert!(session.type_char('d', &s, &c).is_none());
        assert_eq!(s.calls.load(Ordering::SeqCst), 0);
        assert_eq!(c.calls.load(Ordering::SeqCst), 0);
        let hit = session.type_char('o', &s, &c).unwrap();
        assert_eq!(hit.stage, Stage::Char);
        assert_eq!(hit.remainder, "cuments");
        assert_eq!(s.calls.load(Ordering::SeqCst), 1);
        assert_eq!(c.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn rematch_finds_top3_candidate() {
        let s = suggester(vec![
            sugg("the update", -0.4, true),
            sugg("uploading the documents", -0.6, false),
        ]);
        let c = completer(None);
        let mut session = Session::new("u");
        session.set_text("thank you for upl");
        let hit = session.on_char(&s, &c).unwrap();
        assert_eq!(hit.stage, Stage::Rematch);
        assert_eq!(hit.remainder, "oading the documents");
        assert_eq!(c.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn short_partial_skips_models() {
        let s = suggester(vec![sugg("upload", -0.4, true)]);
        let c = completer(Some("x"));
        let mut session = Session::new("u");
        session.set_text("hello u");
        assert!(session.on_char(&s, &c).is_none());
        assert!(session.trimmed_rematch(&s).is_none());
        assert_eq!(s.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn stale_cache_is_dropped() {
        let s = suggester(vec![sugg("uploading", -0.4, true)]);
        let c = completer(None);
        let mut session = Session::new("u");
        session.set_text("a ");
        session.on_word_boundary(&s);
        session.state.full_text = "a b u".into();
        assert!(session.on_char(&s, &c).is_none());
        assert!(session.state.cache.is_none());
    }

    #[test]
    fn accept_keeps_state_consistent() {
        let s = suggester(vec![sugg("for the update", -0.3, true)]);
        let c = completer(None);
        let mut session = Session::new("u");
        session.set_text("thank you");
        let shown = session.type_char(' ', &s, &c).unwrap();
        session.accept(&shown);
        assert_eq!(session.state.full_text, "thank you for the update");
        assert_eq!(session.state.anchor_text(), "thank you for the ");
        assert_eq!(session.state.current_partial_word(), "update");
        assert_eq!(
            format!(
                "{}{}",
                session.state.anchor_text(),
                session.state.current_partial_word()
            ),
            session.state.full_text
        );
    }

    fn oracle(cands: &[Suggestion], typed: &str) -> Option<String> {
        for s in cands {
            let text = s.tokens.join(" ");
            let first = s.tokens[0].as_str();
            if first.len() >= typed.len() && &first[..typed.len()] == typed && text.len() > typed.len() {
                return Some(text[typed.len()..].to_string());
            }
        }
        None
    }

    proptest! {
        #[test]
        fn prefix_match_equals_linear_scan(
            cands in prop::collection::vec(prop::collection::vec("[ab]{1,4}", 1..4), 0..5),
            typed in "[ab]{1,3}",
        ) {
            let cands: Vec<Suggestion> = cands.into_iter().enumerate()
                .map(|(i, t)| sugg(&t.join(" "), -(i as f64), true))
                .collect();
            let got = prefix_match(&cache(cands.clone()), &typed).map(|c| c.remainder);
            prop_assert_eq!(got, oracle(&cands, &typed));
        }
    }
}
