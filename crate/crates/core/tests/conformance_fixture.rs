//! The cache-conformance fixture shared with UI clients. Each line holds a
//! cached candidate list, a typed partial word and the decision the core
//! makes. Set `TYPEAHEAD_REGEN_FIXTURES=1` to rewrite it.

use std::path::PathBuf;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use typeahead_core::api::{Candidate, ConformanceCase};
use typeahead_core::decoder::{Source, Suggestion};
use typeahead_core::session::match_candidates;

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/cache_conformance.ndjson")
}

fn to_suggestion(c: &Candidate) -> Suggestion {
    Suggestion {
        tokens: c.text.split(' ').map(str::to_string).collect(),
        raw_logprob: c.normalized_score,
        normalized_score: c.normalized_score,
        source: c.source,
        gated: c.gated,
    }
}

fn generate() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let words = [
        "the", "then", "there", "report", "review", "reviewed", "résumé", "rés", "thank", "you", "Thank", "update",
        "up", "u",
    ];
    let sources = [Source::Global, Source::Local, Source::Ensemble];
    let mut out = String::new();
    for _ in 0..300 {
        let candidates: Vec<Candidate> = (0..rng.random_range(0..=3))
            .map(|_| {
                let n = rng.random_range(1..=3);
                let text: Vec<&str> = (0..n).map(|_| *words.choose(&mut rng).unwrap()).collect();
                let score = -(rng.random_range(0..400) as f64) / 100.0;
                Candidate {
                    text: text.join(" "),
                    normalized_score: score,
                    source: *sources.choose(&mut rng).unwrap(),
                    gated: score >= -1.0,
                }
            })
            .collect();
        let mut candidates = candidates;
        candidates.sort_by(|a, b| b.normalized_score.total_cmp(&a.normalized_score));
        let typed = match rng.random_range(0..10) {
            0 => String::new(),
            1..=6 => {
                let source = match candidates.choose(&mut rng) {
                    Some(c) => c.text.split(' ').next().unwrap(),
                    None => *words.choose(&mut rng).unwrap(),
                };
                let w: Vec<char> = source.chars().collect();
                w[..rng.random_range(1..=w.len())].iter().collect()
            }
            _ => ["x", "TH", "revi", "rés", "thanks", "upd"]
                .choose(&mut rng)
                .unwrap()
                .to_string(),
        };
        let suggestions: Vec<Suggestion> = candidates.iter().map(to_suggestion).collect();
        let decision = match_candidates(&suggestions, &typed);
        let case = ConformanceCase {
            candidates,
            typed,
            expected_index: decision.as_ref().map(|d| d.0),
            expected_remainder: decision.map(|d| d.1),
        };
        out.push_str(&serde_json::to_string(&case).unwrap());
        out.push('\n');
    }
    out
}

#[test]
fn fixture_is_current_and_consistent() {
    let path = fixture_path();
    let fresh = generate();
    if std::env::var_os("TYPEAHEAD_REGEN_FIXTURES").is_some() {
        std::fs::write(&path, &fresh).unwrap();
    }
    let on_disk = std::fs::read_to_string(&path).expect("fixture present; regenerate with TYPEAHEAD_REGEN_FIXTURES=1");
    assert_eq!(
        on_disk, fresh,
        "fixture is stale; regenerate with TYPEAHEAD_REGEN_FIXTURES=1"
    );

    let mut hits = 0;
    for line in on_disk.lines() {
        let case: ConformanceCase = serde_json::from_str(line).unwrap();
        let suggestions: Vec<Suggestion> = case.candidates.iter().map(to_suggestion).collect();
        let got = match_candidates(&suggestions, &case.typed);
        assert_eq!(got.as_ref().map(|d| d.0), case.expected_index, "{line}");
        assert_eq!(got.map(|d| d.1), case.expected_remainder, "{line}");
        hits += case.expected_index.is_some() as usize;
    }
    // both outcomes are well represented
    assert!(hits > 60 && hits < 240, "{hits}");
}
