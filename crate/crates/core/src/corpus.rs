//! Note ingestion, normalization and word tokenization.
//!
//! Raw notes go through a fixed pipeline before any model sees them:
//! HTML tags are stripped, URLs, e-mail addresses, mentions, long digit runs
//! and dates are replaced by mask tokens, and contractions are expanded from
//! a fixed table. Word tokens are whitespace separated and casing is kept.

use std::io::BufRead;
use std::path::Path;
use std::sync::LazyLock;

use chrono::{DateTime, Duration, Utc};
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const START_TOKEN: &str = "<s>";
pub const END_TOKEN: &str = "</s>";

pub const DATE_MASK: &str = "<date>";
pub const URL_MASK: &str = "<url>";
pub const USER_MASK: &str = "<user>";
pub const NUM_MASK: &str = "<num>";

pub const MASK_TOKENS: [&str; 4] = [DATE_MASK, URL_MASK, USER_MASK, NUM_MASK];

/// Contractions and their expansions. Keys are lowercase; a leading capital
/// in the input is carried over to the expansion.
pub const DECONTRACTIONS: &[(&str, &str)] = &[
    ("ain't", "is not"),
    ("aren't", "are not"),
    ("can't've", "cannot have"),
    ("can't", "cannot"),
    ("could've", "could have"),
    ("couldn't've", "could not have"),
    ("couldn't", "could not"),
    ("didn't", "did not"),
    ("doesn't", "does not"),
    ("don't", "do not"),
    ("hadn't", "had not"),
    ("hasn't", "has not"),
    ("haven't", "have not"),
    ("he'd", "he would"),
    ("he'll", "he will"),
    ("he's", "he is"),
    ("here's", "here is"),
    ("how'd", "how did"),
    ("how'll", "how will"),
    ("how's", "how is"),
    ("i'd", "i would"),
    ("i'll", "i will"),
    ("i'm", "i am"),
    ("i've", "i have"),
    ("isn't", "is not"),
    ("it'd", "it would"),
    ("it'll", "it will"),
    ("it's", "it is"),
    ("let's", "let us"),
    ("ma'am", "madam"),
    ("mightn't", "might not"),
    ("might've", "might have"),
    ("mustn't", "must not"),
    ("must've", "must have"),
    ("needn't", "need not"),
    ("o'clock", "of the clock"),
    ("shan't", "shall not"),
    ("she'd", "she would"),
    ("she'll", "she will"),
    ("she's", "she is"),
    ("should've", "should have"),
    ("shouldn't", "should not"),
    ("that's", "that is"),
    ("there's", "there is"),
    ("they'd", "they would"),
    ("they'll", "they will"),
    ("they're", "they are"),
    ("they've", "they have"),
    ("wasn't", "was not"),
    ("we'd", "we would"),
    ("we'll", "we will"),
    ("we're", "we are"),
    ("we've", "we have"),
    ("weren't", "were not"),
    ("what're", "what are"),
    ("what's", "what is"),
    ("where's", "where is"),
    ("who'll", "who will"),
    ("who's", "who is"),
    ("won't", "will not"),
    ("would've", "would have"),
    ("wouldn't", "would not"),
    ("y'all", "you all"),
    ("you'd", "you would"),
    ("you'll", "you will"),
    ("you're", "you are"),
    ("you've", "you have"),
];

const MONTH: &str = r"(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)\.?";

static HTML_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"</?[A-Za-z][A-Za-z0-9]*(?:\s[^<>]*)?/?>").unwrap());
static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)[^\s<>]+").unwrap());
static EMAIL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}").unwrap());
static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\B@[A-Za-z0-9_]+").unwrap());
static LONG_DIGITS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d{12,}").unwrap());

/// Date patterns, applied in order.
static DATES: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    let ordinal = r"\d{1,2}(?:st|nd|rd|th)?";
    [
        // 2023-01-05, 2023/01/05
        r"\b\d{4}[-/.]\d{1,2}[-/.]\d{1,2}\b".to_string(),
        // 01/05/2023, 05-01-2023, 1.5.23
        r"\b\d{1,2}[-/.]\d{1,2}[-/.](?:\d{4}|\d{2})\b".to_string(),
        // 5th January 2023, 5 jan
        format!(r"(?i)\b{ordinal}\s+{MONTH}(?:,?\s+\d{{4}})?\b"),
        // January 5, 2023 / jan 5th
        format!(r"(?i)\b{MONTH}\s+{ordinal}(?:,?\s+\d{{4}})?\b"),
        // January 2023
        format!(r"(?i)\b{MONTH},?\s+\d{{4}}\b"),
        // bare full month names; "may" is left alone
        r"(?i)\b(?:january|february|march|april|june|july|august|september|october|november|december)\b".to_string(),
    ]
    .iter()
    .map(|p| Regex::new(p).unwrap())
    .collect()
});

static DECONTRACT: LazyLock<Regex> = LazyLock::new(|| {
    let mut keys: Vec<&str> = DECONTRACTIONS.iter().map(|(k, _)| *k).collect();
    keys.sort_by_key(|k| std::cmp::Reverse(k.len()));
    let alt = keys.iter().map(|k| regex::escape(k)).collect::<Vec<_>>().join("|");
    Regex::new(&format!(r"(?i)\b(?:{alt})\b")).unwrap()
});

/// Regexes that must never match normalized text.
pub fn date_patterns() -> &'static [Regex] {
    &DATES
}

pub fn url_pattern() -> &'static Regex {
    &URL
}

fn padded(mask: &str) -> String {
    format!(" {mask} ")
}

fn expand_contraction(word: &str) -> String {
    let lower = word.to_lowercase();
    let expansion = DECONTRACTIONS
        .iter()
        .find(|(k, _)| *k == lower)
        .map(|(_, v)| *v)
        .unwrap_or(word);
    match word.chars().next() {
        Some(c) if c.is_uppercase() => {
            let mut out = String::with_capacity(expansion.len());
            let mut chars = expansion.chars();
            if let Some(first) = chars.next() {
                out.extend(first.to_uppercase());
            }
            out.extend(chars);
            out
        }
        _ => expansion.to_string(),
    }
}

/// Applies the normalization pipeline. Total and idempotent.
pub fn normalize_text(raw: &str) -> String {
    if raw.trim().is_empty() {
        return String::new();
    }
    let text = raw.replace(['\u{2019}', '\u{2018}'], "'");

    let text = HTML_TAG.replace_all(&text, |caps: &Captures| {
        let tag = &caps[0];
        if MASK_TOKENS.contains(&tag) {
            tag.to_string()
        } else {
            " ".to_string()
        }
    });
    let text = URL.replace_all(&text, padded(URL_MASK).as_str());
    let text = EMAIL.replace_all(&text, padded(USER_MASK).as_str());
    let text = MENTION.replace_all(&text, padded(USER_MASK).as_str());
    let text = LONG_DIGITS.replace_all(&text, padded(NUM_MASK).as_str());
    let mut text = text.into_owned();
    for re in DATES.iter() {
        text = re.replace_all(&text, padded(DATE_MASK).as_str()).into_owned();
    }
    let text = DECONTRACT.replace_all(&text, |caps: &Captures| expand_contraction(&caps[0]));

    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Word tokens of one note, bracketed by [`START_TOKEN`] and [`END_TOKEN`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    /// Tokens between the boundary markers.
    pub fn words(&self) -> &[String] {
        &self.0[1..self.0.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn tokenize_words(text: &str) -> TokenSequence {
    let mut tokens = Vec::with_capacity(text.len() / 4 + 2);
    tokens.push(START_TOKEN.to_string());
    tokens.extend(text.split_whitespace().map(str::to_string));
    tokens.push(END_TOKEN.to_string());
    TokenSequence(tokens)
}

/// Decoding context for text typed so far: normalized, tokenized, with a
/// leading start marker and no end marker.
pub fn context_tokens(text: &str) -> Vec<String> {
    let mut tokens = tokenize_words(&normalize_text(text)).into_tokens();
    tokens.pop();
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawNote {
    pub user_id: String,
    pub created_at: DateTime<Utc>,
    pub text: String,
}

impl RawNote {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.user_id.is_empty() {
            return Err("empty user_id".into());
        }
        if self.text.trim().is_empty() {
            return Err("empty text".into());
        }
        Ok(())
    }

    pub fn normalized(&self) -> NormalizedNote {
        NormalizedNote {
            user_id: self.user_id.clone(),
            created_at: self.created_at,
            text: normalize_text(&self.text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedNote {
    pub user_id: String,
    pub created_at: DateTime<Utc>,
    pub text: String,
}

impl NormalizedNote {
    pub fn tokens(&self) -> TokenSequence {
        tokenize_words(&self.text)
    }
}

/// Parses newline-delimited JSON notes. Blank lines are skipped.
pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<RawNote>> {
    let mut notes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Corpus {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let note: RawNote = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            line: line_no,
            message: e.to_string(),
        })?;
        note.validate()
            .map_err(|message| Error::Corpus { line: line_no, message })?;
        notes.push(note);
    }
    Ok(notes)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<RawNote>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(std::io::BufReader::new(file))
}

/// Normalized, tokenized notes of `user_id` created within
/// `[now - window_days, now]` (both ends inclusive), oldest first.
pub fn build_user_window(
    notes: &[RawNote],
    user_id: &str,
    window_days: i64,
    now: DateTime<Utc>,
) -> Result<Vec<TokenSequence>> {
    if window_days <= 0 {
        return Err(Error::invalid(format!(
            "window_days must be positive, got {window_days}"
        )));
    }
    let from = now - Duration::days(window_days);
    let mut selected: Vec<&RawNote> = notes
        .iter()
        .filter(|n| n.user_id == user_id && n.created_at >= from && n.created_at <= now)
        .collect();
    selected.sort_by_key(|n| n.created_at);
    Ok(selected
        .into_iter()
        .map(|n| tokenize_words(&normalize_text(&n.text)))
        .collect())
}

/// Distinct user ids in first-seen order.
pub fn user_ids(notes: &[RawNote]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    notes
        .iter()
        .filter(|n| seen.insert(n.user_id.as_str()))
        .map(|n| n.user_id.clone())
        .collect()
}
