//! Seeded synthetic corpora for evaluation and load testing.
//!
//! [`blended`] builds notes from a shared phrase inventory (the population
//! style) mixed with per-user idiolect phrases; [`english_like`] produces a
//! large Zipfian word stream for latency runs.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RawNote;

const WORDS: &[&str] = &[
    "account",
    "action",
    "address",
    "agenda",
    "agreement",
    "amount",
    "answer",
    "approval",
    "archive",
    "audit",
    "balance",
    "batch",
    "billing",
    "board",
    "booking",
    "branch",
    "brief",
    "budget",
    "calendar",
    "call",
    "case",
    "change",
    "chart",
    "check",
    "claim",
    "client",
    "code",
    "comment",
    "contract",
    "copy",
    "cost",
    "credit",
    "customer",
    "data",
    "deadline",
    "deal",
    "delivery",
    "deposit",
    "design",
    "detail",
    "draft",
    "email",
    "entry",
    "estimate",
    "event",
    "expense",
    "feedback",
    "fee",
    "file",
    "filing",
    "folder",
    "form",
    "forecast",
    "fund",
    "goal",
    "grant",
    "guide",
    "invoice",
    "issue",
    "item",
    "ledger",
    "letter",
    "limit",
    "list",
    "loan",
    "log",
    "meeting",
    "memo",
    "message",
    "method",
    "model",
    "note",
    "notice",
    "offer",
    "order",
    "owner",
    "packet",
    "page",
    "partner",
    "payment",
    "payroll",
    "period",
    "plan",
    "policy",
    "portal",
    "price",
    "process",
    "profile",
    "project",
    "proposal",
    "quarter",
    "quote",
    "rate",
    "receipt",
    "record",
    "refund",
    "region",
    "release",
    "renewal",
    "report",
    "request",
    "review",
    "risk",
    "rule",
    "sample",
    "schedule",
    "score",
    "section",
    "service",
    "setup",
    "sheet",
    "signature",
    "slide",
    "statement",
    "status",
    "summary",
    "survey",
    "system",
    "table",
    "target",
    "task",
    "team",
    "template",
    "term",
    "ticket",
    "timeline",
    "total",
    "transfer",
    "trial",
    "update",
    "upload",
    "value",
    "vendor",
    "version",
    "visit",
    "volume",
    "warranty",
    "workflow",
];

const VERBS: &[&str] = &[
    "send", "check", "review", "confirm", "share", "update", "approve", "verify", "prepare", "submit", "attach",
    "forward", "schedule", "finish", "close", "open", "track", "sign", "print", "file", "collect", "compare",
    "discuss", "draft", "explain", "fix", "hold", "list", "mark", "note", "plan", "post", "read", "renew", "request",
    "resolve", "save", "scan", "sort", "start", "test", "tidy", "trace", "transfer", "upload", "validate", "watch",
    "write",
];

const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "to", "of", "and", "for", "in", "on", "with", "by", "at", "from", "is", "was", "be", "we", "you", "it",
    "this", "that", "please", "will", "can", "our", "your", "new", "all", "as", "not", "have",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendConfig {
    pub seed: u64,
    pub users: usize,
    /// Two-word openers per user that the user completes in their own way.
    pub owned_openers: usize,
    /// Openers nobody owns.
    pub shared_openers: usize,
    /// Population continuations per opener, most popular first.
    pub options: Vec<f64>,
    /// How much more often an owner writes their own opener than any other.
    pub idiolect_weight: f64,
    pub train_notes_per_user: usize,
    pub heldout_notes_per_user: usize,
    pub max_clauses: usize,
    /// Timestamp of the newest training note.
    pub now: DateTime<Utc>,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            users: 16,
            owned_openers: 1,
            shared_openers: 4,
            options: vec![0.8, 0.2],
            idiolect_weight: 9.0,
            train_notes_per_user: 16,
            heldout_notes_per_user: 7,
            max_clauses: 2,
            now: Utc.with_ymd_and_hms(2024, 6, 30, 12, 0, 0).unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendedCorpus {
    pub train: Vec<RawNote>,
    pub heldout: Vec<RawNote>,
}

struct Opener {
    words: [String; 2],
    options: Vec<String>,
    owner: Option<(usize, String)>,
}

fn phrase(rng: &mut ChaCha8Rng, nouns: &[&str]) -> String {
    let verb = VERBS.choose(rng).unwrap();
    let det = ["the", "our", "your", "this"].choose(rng).unwrap();
    let noun = nouns.choose(rng).unwrap();
    format!("{verb} {det} {noun}")
}

fn unique_phrase(rng: &mut ChaCha8Rng, nouns: &[&str], taken: &mut Vec<String>) -> String {
    loop {
        let p = phrase(rng, nouns);
        if !taken.contains(&p) {
            taken.push(p.clone());
            return p;
        }
    }
}

fn sample_option(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let mut x: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Notes built from two-word openers and three-word continuations.
///
/// Every user follows the population's continuation choices, except on the
/// openers they own: those they write far more often and always finish with
/// their own phrase.
pub fn blended(cfg: &BlendConfig) -> BlendedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut nouns: Vec<&str> = WORDS.to_vec();
    nouns.shuffle(&mut rng);
    let owned = cfg.users * cfg.owned_openers;
    let count = (owned + cfg.shared_openers).clamp(1, nouns.len() / 4);
    // opener words are reserved so an opener is always followed by its
    // second word
    let (reserved, pool) = nouns.split_at(2 * count);
    let mut taken = Vec::new();
    let openers: Vec<Opener> = (0..count)
        .map(|i| {
            let options = cfg
                .options
                .iter()
                .map(|_| unique_phrase(&mut rng, pool, &mut taken))
                .collect();
            let owner = (i < owned).then(|| (i % cfg.users, unique_phrase(&mut rng, pool, &mut taken)));
            Opener {
                words: [reserved[2 * i].to_string(), reserved[2 * i + 1].to_string()],
                options,
                owner,
            }
        })
        .collect();
    let weights: Vec<Vec<f64>> = (0..cfg.users)
        .map(|user| {
            openers
                .iter()
                .map(|o| match &o.owner {
                    Some((u, _)) if *u == user => cfg.idiolect_weight,
                    _ => 1.0,
                })
                .collect()
        })
        .collect();

    let note = |rng: &mut ChaCha8Rng, user: usize| -> String {
        let clauses = rng.random_range(1..=cfg.max_clauses.max(1));
        let parts: Vec<String> = (0..clauses)
            .map(|_| {
                let opener = &openers[sample_option(rng, &weights[user])];
                let cont = match &opener.owner {
                    Some((u, own)) if *u == user => own.clone(),
                    _ => opener.options[sample_option(rng, &cfg.options)].clone(),
                };
                format!("{} {} {cont}", opener.words[0], opener.words[1])
            })
            .collect();
        parts.join(" and ")
    };

    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for user in 0..cfg.users {
        let user_id = format!("user{user:02}");
        for i in 0..cfg.train_notes_per_user {
            let age = Duration::hours((i as i64 * 61) % (80 * 24));
            train.push(RawNote {
                user_id: user_id.clone(),
                created_at: cfg.now - age,
                text: note(&mut rng, user),
            });
        }
        for i in 0..cfg.heldout_notes_per_user {
            heldout.push(RawNote {
                user_id: user_id.clone(),
                created_at: cfg.now + Duration::hours(i as i64 + 1),
                text: note(&mut rng, user),
            });
        }
    }
    BlendedCorpus { train, heldout }
}

/// Plain text of at least `min_bytes`, one sentence per line, drawn from a
/// first-order chain with Zipfian successor choice.
pub fn english_like(seed: u64, min_bytes: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab: Vec<String> = FUNCTION_WORDS
        .iter()
        .chain(VERBS)
        .chain(WORDS)
        .map(|w| w.to_string())
        .collect();
    let syllables = [
        "ka", "lo", "mi", "ter", "son", "ra", "vel", "en", "dor", "ith", "an", "ul",
    ];
    while vocab.len() < 2000 {
        let n = rng.random_range(2..=3);
        let w: String = (0..n).map(|_| *syllables.choose(&mut rng).unwrap()).collect();
        if !vocab.contains(&w) {
            vocab.push(w);
        }
    }
    // zipf weights over vocabulary ranks
    let weights: Vec<f64> = (1..=vocab.len()).map(|r| 1.0 / r as f64).collect();
    let successors: Vec<Vec<usize>> = (0..vocab.len())
        .map(|_| (0..12).map(|_| sample_option(&mut rng, &weights)).collect())
        .collect();
    let succ_weights: Vec<f64> = (1..=12).map(|r| 1.0 / r as f64).collect();

    let mut out = String::with_capacity(min_bytes + 256);
    while out.len() < min_bytes {
        let len = rng.random_range(6..=18);
        let mut w = sample_option(&mut rng, &weights);
        for i in 0..len {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&vocab[w]);
            w = if rng.random::<f64>() < 0.85 {
                successors[w][sample_option(&mut rng, &succ_weights)]
            } else {
                sample_option(&mut rng, &weights)
            };
        }
        out.push_str(" .\n");
    }
    out
}
