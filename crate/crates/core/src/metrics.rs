//! Offline evaluation.
//!
//! Held-out notes are sliced at word boundaries; each slice asks the engine
//! for its best continuation and compares it with the next words the user
//! actually wrote. A suggestion counts as accepted in replay exactly when it
//! equals the same-length prefix of that ground truth.
//!
//! Coverage is gated suggestions per character of full text, times 100.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charlm::WordCompleter;
use crate::corpus::{context_tokens, normalize_text, RawNote};
use crate::decoder::{Source, Suggestion};
use crate::ensemble::{Ensemble, SourceCounts, UserProfile};
use crate::error::{Error, Result};
use crate::session::{is_separator, Completion, Session, Stage, UserSuggester};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEvent {
    pub context: Vec<String>,
    pub suggestion: Option<Suggestion>,
    pub ground_truth: Vec<String>,
    pub accepted: bool,
    pub gated: bool,
    /// Model credited with the suggestion (global or local for word
    /// suggestions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributed_to: Option<Source>,
}

/// True when the suggestion equals the ground truth's prefix of equal length.
pub fn exact_match(suggestion: &Suggestion, ground_truth: &[String]) -> bool {
    suggestion.tokens.len() <= ground_truth.len() && suggestion.tokens[..] == ground_truth[..suggestion.tokens.len()]
}

fn gated_suggestions(events: &[EvalEvent]) -> impl Iterator<Item = &Suggestion> {
    events.iter().filter(|e| e.gated).filter_map(|e| e.suggestion.as_ref())
}

fn check_chars(total_chars: usize) -> Result<()> {
    if total_chars == 0 {
        return Err(Error::invalid("total_chars must be > 0"));
    }
    Ok(())
}

pub fn exact_match_rate(events: &[EvalEvent]) -> Result<f64> {
    let (mut gated, mut matched) = (0usize, 0usize);
    for e in events.iter().filter(|e| e.gated) {
        if let Some(s) = &e.suggestion {
            gated += 1;
            if exact_match(s, &e.ground_truth) {
                matched += 1;
            }
        }
    }
    if gated == 0 {
        return Err(Error::UndefinedMetric("exact match rate needs a gated suggestion"));
    }
    Ok(100.0 * matched as f64 / gated as f64)
}

pub fn effort_saved(events: &[EvalEvent], total_chars: usize) -> Result<f64> {
    check_chars(total_chars)?;
    let accepted: usize = events
        .iter()
        .filter(|e| e.accepted)
        .filter_map(|e| e.suggestion.as_ref())
        .map(Suggestion::char_len)
        .sum();
    Ok(100.0 * accepted as f64 / total_chars as f64)
}

pub fn coverage(events: &[EvalEvent], total_chars: usize) -> Result<f64> {
    check_chars(total_chars)?;
    Ok(100.0 * gated_suggestions(events).count() as f64 / total_chars as f64)
}

pub fn avg_suggestion_length(events: &[EvalEvent]) -> Result<f64> {
    let (mut n, mut chars) = (0usize, 0usize);
    for s in gated_suggestions(events) {
        n += 1;
        chars += s.char_len();
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("average length needs a gated suggestion"));
    }
    Ok(chars as f64 / n as f64)
}

/// Streaming counterpart of the metric functions; partial accumulators
/// merge in any order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricAccumulator {
    pub events: u64,
    pub gated: u64,
    pub matched: u64,
    pub gated_chars: u64,
    pub accepted_chars: u64,
    pub total_chars: u64,
    pub sources: SourceCounts,
}

impl MetricAccumulator {
    pub fn push(&mut self, event: &EvalEvent) {
        self.events += 1;
        let Some(s) = &event.suggestion else {
            return;
        };
        if event.gated {
            self.gated += 1;
            self.gated_chars += s.char_len() as u64;
            if exact_match(s, &event.ground_truth) {
                self.matched += 1;
            }
            self.sources.record(event.attributed_to.unwrap_or(s.source));
        }
        if event.accepted {
            self.accepted_chars += s.char_len() as u64;
        }
    }

    pub fn add_chars(&mut self, chars: usize) {
        self.total_chars += chars as u64;
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.events += other.events;
        self.gated += other.gated;
        self.matched += other.matched;
        self.gated_chars += other.gated_chars;
        self.accepted_chars += other.accepted_chars;
        self.total_chars += other.total_chars;
        self.sources.merge(&other.sources);
    }

    pub fn exact_match_rate(&self) -> Result<f64> {
        if self.gated == 0 {
            return Err(Error::UndefinedMetric("exact match rate needs a gated suggestion"));
        }
        Ok(100.0 * self.matched as f64 / self.gated as f64)
    }

    pub fn report(&self, label: impl Into<String>, alpha: Option<f64>, threshold: f64) -> Result<EvalReport> {
        if self.total_chars == 0 {
            return Err(Error::invalid("total_chars must be > 0"));
        }
        let exact_match_rate = self.exact_match_rate()?;
        let chars = self.total_chars as f64;
        let pct = |n: u64| 100.0 * n as f64 / self.gated as f64;
        Ok(EvalReport {
            label: label.into(),
            alpha,
            threshold,
            exact_match_rate,
            effort_saved: 100.0 * self.accepted_chars as f64 / chars,
            coverage: 100.0 * self.gated as f64 / chars,
            avg_suggestion_length: self.gated_chars as f64 / self.gated as f64,
            source_mix: SourceMix {
                global: pct(self.sources.global + self.sources.ensemble),
                local: pct(self.sources.local),
                char: pct(self.sources.char),
            },
            events: self.events,
            gated: self.gated,
            total_chars: self.total_chars,
        })
    }
}

/// Share of gated suggestions credited to each model, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceMix {
    pub global: f64,
    pub local: f64,
    pub char: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub threshold: f64,
    pub exact_match_rate: f64,
    pub effort_saved: f64,
    pub coverage: f64,
    pub avg_suggestion_length: f64,
    pub source_mix: SourceMix,
    pub events: u64,
    pub gated: u64,
    pub total_chars: u64,
}

/// Aligned text table with one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let headers = [
        "Model",
        "Exact-Match-Rate",
        "Coverage",
        "Avg suggestion length",
        "Effort-saved",
    ];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                format!("{:.2}", r.exact_match_rate),
                format!("{:.2}", r.coverage),
                format!("{:.2}", r.avg_suggestion_length),
                format!("{:.2}", r.effort_saved),
            ]
        })
        .collect();
    let mut widths = headers.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
    };
    line(&mut out, &headers);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("-+-"));
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    out
}

/// Where held-out notes are sliced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicePolicy {
    /// Words that must be typed before the first slice.
    pub min_prefix_words: usize,
    /// Ground-truth words kept per slice.
    pub horizon: usize,
}

impl Default for SlicePolicy {
    fn default() -> Self {
        Self {
            min_prefix_words: 1,
            horizon: 3,
        }
    }
}

/// A note reserved for evaluation, already normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutNote {
    pub user_id: String,
    pub text: String,
}

impl HeldOutNote {
    pub fn from_raw(note: &RawNote) -> Self {
        Self {
            user_id: note.user_id.clone(),
            text: normalize_text(&note.text),
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Everything a replay needs: the engine, the users' local models, and
/// the notes to replay.
#[derive(Clone)]
pub struct EvalSetup {
    pub ensemble: Ensemble,
    pub users: HashMap<String, UserProfile>,
    pub notes: Vec<HeldOutNote>,
    pub policy: SlicePolicy,
}

impl EvalSetup {
    pub fn user(&self, user_id: &str) -> UserProfile {
        self.users.get(user_id).cloned().unwrap_or_else(|| {
            UserProfile::empty(user_id, self.ensemble.config.markov_order).expect("order validated with the config")
        })
    }
}

/// Threshold-independent replay output: every slice with its best
/// suggestion, before gating.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub events: Vec<EvalEvent>,
    pub total_chars: usize,
}

/// Replays every note through `ensemble`, notes in parallel, output in
/// note order.
pub fn replay(setup: &EvalSetup, ensemble: &Ensemble) -> Replay {
    let per_note: Vec<Vec<EvalEvent>> = setup
        .notes
        .par_iter()
        .map(|note| {
            let user = setup.user(&note.user_id);
            let words: Vec<String> = note.text.split_whitespace().map(str::to_string).collect();
            let mut events = Vec::new();
            for cut in setup.policy.min_prefix_words..words.len() {
                let mut context = vec![crate::corpus::START_TOKEN.to_string()];
                context.extend_from_slice(&words[..cut]);
                let end = (cut + setup.policy.horizon).min(words.len());
                let ground_truth = words[cut..end].to_vec();
                let suggestion = ensemble.suggest_after_word(&context, &user).into_iter().next();
                let attributed_to = suggestion.as_ref().map(|s| ensemble.attribute(&context, &user, s));
                events.push(EvalEvent {
                    context,
                    suggestion,
                    ground_truth,
                    accepted: false,
                    gated: false,
                    attributed_to,
                });
            }
            events
        })
        .collect();
    Replay {
        events: per_note.into_iter().flatten().collect(),
        total_chars: setup.notes.iter().map(HeldOutNote::char_len).sum(),
    }
}

impl Replay {
    pub fn scores(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter_map(|e| e.suggestion.as_ref().map(|s| s.normalized_score))
            .collect()
    }

    /// Events with gate and acceptance decided at `threshold`.
    pub fn at_threshold(&self, threshold: f64) -> Vec<EvalEvent> {
        self.events
            .iter()
            .map(|e| {
                let gated = e.suggestion.as_ref().is_some_and(|s| s.normalized_score >= threshold);
                let accepted = gated && e.suggestion.as_ref().is_some_and(|s| exact_match(s, &e.ground_truth));
                EvalEvent {
                    gated,
                    accepted,
                    ..e.clone()
                }
            })
            .collect()
    }

    pub fn coverage_at(&self, threshold: f64) -> f64 {
        let n = self.scores().iter().filter(|&&s| s >= threshold).count();
        100.0 * n as f64 / self.total_chars.max(1) as f64
    }

    pub fn calibrate(&self, target_coverage: f64, tolerance: f64) -> Result<f64> {
        calibrate_threshold(&self.scores(), self.total_chars, target_coverage, tolerance)
    }

    pub fn report(&self, label: impl Into<String>, alpha: Option<f64>, threshold: f64) -> Result<EvalReport> {
        let mut acc = MetricAccumulator::default();
        for e in self.at_threshold(threshold) {
            acc.push(&e);
        }
        acc.add_chars(self.total_chars);
        acc.report(label, alpha, threshold)
    }
}

/// Finds a threshold whose coverage is within `tolerance` of `target`.
///
/// Candidate thresholds are the distinct observed scores plus one value
/// just above the maximum; coverage is monotone over them, so the search is
/// a binary search for the first candidate reaching the target, followed by
/// a comparison with its neighbour.
pub fn calibrate_threshold(scores: &[f64], total_chars: usize, target_coverage: f64, tolerance: f64) -> Result<f64> {
    check_chars(total_chars)?;
    let mut sorted: Vec<f64> = scores.iter().copied().filter(|s| !s.is_nan()).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let cov = |count: usize| 100.0 * count as f64 / total_chars as f64;

    // (threshold, coverage) with thresholds descending and coverage ascending
    let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(sorted.len() + 1);
    let above = sorted.first().map_or(f64::MAX, |m| m.next_up());
    candidates.push((above, 0.0));
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i];
        while i < sorted.len() && sorted[i] == value {
            i += 1;
        }
        candidates.push((value, cov(i)));
    }

    let max_achievable = candidates.last().map_or(0.0, |c| c.1);
    let first_reaching = candidates.partition_point(|&(_, c)| c < target_coverage);
    let mut best: Option<(f64, f64)> = None;
    for idx in [first_reaching.checked_sub(1), Some(first_reaching)]
        .into_iter()
        .flatten()
    {
        if let Some(&(thr, c)) = candidates.get(idx) {
            let diff = (c - target_coverage).abs();
            if best.is_none_or(|(_, bc)| diff < (bc - target_coverage).abs()) {
                best = Some((thr, c));
            }
        }
    }
    match best {
        Some((thr, c)) if (c - target_coverage).abs() <= tolerance => Ok(thr),
        other => Err(Error::CalibrationFailed {
            target: target_coverage,
            tolerance,
            max_achievable,
            closest: other.map_or(0.0, |b| b.1),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best_alpha: f64,
    pub reports: Vec<EvalReport>,
}

/// Calibrates each alpha to the same coverage and keeps the one with the
/// highest exact match rate (ties to the smaller alpha).
pub fn alpha_grid_search(
    setup: &EvalSetup,
    alphas: &[f64],
    target_coverage: f64,
    tolerance: f64,
) -> Result<GridSearch> {
    if alphas.is_empty() {
        return Err(Error::invalid("alpha grid is empty"));
    }
    let mut reports = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let ensemble = setup.ensemble.with_alpha(alpha)?;
        let replayed = replay(setup, &ensemble);
        let threshold = replayed.calibrate(target_coverage, tolerance)?;
        reports.push(replayed.report(format!("alpha={alpha}"), Some(alpha), threshold)?);
    }
    let best = reports
        .iter()
        .max_by(|a, b| {
            a.exact_match_rate
                .total_cmp(&b.exact_match_rate)
                .then_with(|| b.alpha.unwrap().total_cmp(&a.alpha.unwrap()))
        })
        .expect("non-empty");
    Ok(GridSearch {
        best_alpha: best.alpha.unwrap(),
        reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeMode {
    /// Suggestions only after word separators.
    WordOnly,
    /// Word suggestions plus the per-character cascade.
    Full,
}

/// One shown completion during simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub note: usize,
    pub user_id: String,
    /// Characters of the note typed or inserted so far.
    pub position: usize,
    pub stage: Stage,
    pub source: Source,
    pub remainder: String,
    pub score: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub mode: CascadeMode,
    pub notes: usize,
    pub total_chars: u64,
    pub shown: u64,
    pub accepted: u64,
    pub accepted_chars: u64,
    pub effort_saved: f64,
    pub keystrokes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub transcript: Vec<TranscriptLine>,
    pub summary: SimulationSummary,
}

impl Simulation {
    pub fn transcript_ndjson(&self) -> String {
        let mut out = String::new();
        for line in &self.transcript {
            out.push_str(&serde_json::to_string(line).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

/// Accepted iff the upcoming text starts with the remainder and the
/// remainder ends at a word end.
fn oracle_accepts(upcoming: &[char], remainder: &str) -> bool {
    let rem: Vec<char> = remainder.chars().collect();
    upcoming.len() >= rem.len()
        && upcoming[..rem.len()] == rem[..]
        && upcoming.get(rem.len()).is_none_or(|c| is_separator(*c))
}

/// Types every note character by character. Whenever something is shown
/// and it matches what the user goes on to write, it is accepted and its
/// characters are skipped.
pub fn simulate(setup: &EvalSetup, completer: &dyn WordCompleter, mode: CascadeMode) -> Simulation {
    let per_note: Vec<(Vec<TranscriptLine>, SimulationSummary)> = setup
        .notes
        .par_iter()
        .enumerate()
        .map(|(idx, note)| simulate_note(setup, completer, mode, idx, note))
        .collect();
    let mut transcript = Vec::new();
    let mut summary = SimulationSummary {
        mode,
        notes: 0,
        total_chars: 0,
        shown: 0,
        accepted: 0,
        accepted_chars: 0,
        effort_saved: 0.0,
        keystrokes: 0,
    };
    for (lines, s) in per_note {
        transcript.extend(lines);
        summary.notes += s.notes;
        summary.total_chars += s.total_chars;
        summary.shown += s.shown;
        summary.accepted += s.accepted;
        summary.accepted_chars += s.accepted_chars;
        summary.keystrokes += s.keystrokes;
    }
    if summary.total_chars > 0 {
        summary.effort_saved = 100.0 * summary.accepted_chars as f64 / summary.total_chars as f64;
    }
    Simulation { transcript, summary }
}

fn simulate_note(
    setup: &EvalSetup,
    completer: &dyn WordCompleter,
    mode: CascadeMode,
    idx: usize,
    note: &HeldOutNote,
) -> (Vec<TranscriptLine>, SimulationSummary) {
    let chars: Vec<char> = note.text.chars().collect();
    let mut summary = SimulationSummary {
        mode,
        notes: 0,
        total_chars: 0,
        shown: 0,
        accepted: 0,
        accepted_chars: 0,
        effort_saved: 0.0,
        keystrokes: 0,
    };
    let mut lines = Vec::new();
    if chars.is_empty() {
        return (lines, summary);
    }
    summary.notes = 1;
    summary.total_chars = chars.len() as u64;

    let user = setup.user(&note.user_id);
    let suggester = UserSuggester {
        ensemble: &setup.ensemble,
        user: &user,
    };
    let mut session = Session::new(note.user_id.clone());
    let mut pos = 0;
    while pos < chars.len() {
        let c = chars[pos];
        pos += 1;
        summary.keystrokes += 1;
        let shown: Option<Completion> = match mode {
            CascadeMode::Full => session.type_char(c, &suggester, completer),
            CascadeMode::WordOnly => {
                session.state.full_text.push(c);
                session.state.keystrokes += 1;
                if is_separator(c) {
                    session.on_word_boundary(&suggester)
                } else {
                    None
                }
            }
        };
        let Some(shown) = shown else {
            continue;
        };
        summary.shown += 1;
        let accepted = oracle_accepts(&chars[pos..], &shown.remainder);
        lines.push(TranscriptLine {
            note: idx,
            user_id: note.user_id.clone(),
            position: pos,
            stage: shown.stage,
            source: shown.suggestion.source,
            remainder: shown.remainder.clone(),
            score: shown.suggestion.normalized_score,
            accepted,
        });
        if accepted {
            let n = shown.remainder.chars().count();
            session.accept(&shown);
            pos += n;
            summary.accepted += 1;
            summary.accepted_chars += n as u64;
        }
    }
    debug_assert_eq!(context_tokens(&session.state.full_text), context_tokens(&note.text));
    (lines, summary)
}
