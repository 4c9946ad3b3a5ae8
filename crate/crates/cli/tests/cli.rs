use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use typeahead_core::corpus::RawNote;
use typeahead_core::markov::WordModel;
use typeahead_core::store::{ModelKey, ModelStore};
use typeahead_core::synth::{blended, BlendConfig};

const TINY: &str = r#"{"user_id":"alice","created_at":"2024-05-01T10:00:00Z","text":"thank you for the update"}
{"user_id":"alice","created_at":"2024-05-02T10:00:00Z","text":"thank you for uploading the documents"}
{"user_id":"bob","created_at":"2024-05-03T10:00:00Z","text":"please review the payroll report"}
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_typeahead"));
    for (k, _) in std::env::vars() {
        if k.starts_with("TYPEAHEAD_") {
            c.env_remove(k);
        }
    }
    c.env("TYPEAHEAD_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn ndjson(notes: &[RawNote]) -> String {
    notes.iter().map(|n| serde_json::to_string(n).unwrap() + "\n").collect()
}

/// Distinct full-length windows and predicted targets, counted directly.
fn tally(texts: &[&str], order: usize) -> (usize, u64) {
    let mut windows = HashSet::new();
    let mut targets = 0;
    for t in texts {
        let mut seq: Vec<String> = vec!["<s>".into(); order];
        seq.extend(t.split_whitespace().map(str::to_string));
        seq.push("</s>".into());
        for i in order..seq.len() {
            windows.insert(seq[i - order..i].to_vec());
            targets += 1;
        }
    }
    (windows.len(), targets)
}

#[test]
fn train_writes_models_matching_tallies() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "c.ndjson", TINY);
    let store = dir.path().join("store");
    let out = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        store.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("users         2"));

    let store = ModelStore::open(&store).unwrap();
    let global: WordModel = store.load_model(&ModelKey::Global).unwrap();
    let all = [
        "thank you for the update",
        "thank you for uploading the documents",
        "please review the payroll report",
    ];
    assert_eq!((global.full_context_count(), global.token_count()), tally(&all, 2));
    let alice: WordModel = store.load_model(&ModelKey::user("alice").unwrap()).unwrap();
    assert_eq!((alice.full_context_count(), alice.token_count()), tally(&all[..2], 2));
    assert_eq!(store.user_ids().unwrap(), ["alice", "bob"]);
}

#[test]
fn flags_beat_env_beat_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "c.ndjson", TINY);
    let store = dir.path().join("from-file");
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("corpus = {:?}\nstore_root = {:?}\nmarkov_order = 3\n", corpus, store),
    );
    let load = |root: &Path| -> usize {
        let m: WordModel = ModelStore::open(root).unwrap().load_model(&ModelKey::Global).unwrap();
        m.order()
    };
    assert!(run(&["--config", cfg.to_str().unwrap(), "train"]).status.success());
    assert_eq!(load(&store), 3);

    let out = bin()
        .args(["--config", cfg.to_str().unwrap(), "train"])
        .env("TYPEAHEAD_MARKOV_ORDER", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(load(&store), 1);

    let out = bin()
        .args(["--config", cfg.to_str().unwrap(), "train", "--order", "2"])
        .env("TYPEAHEAD_MARKOV_ORDER", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(load(&store), 2);
}

#[test]
fn empty_corpus_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "empty.ndjson", "");
    let store = dir.path().join("store");
    let out = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        store.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("empty"));
    let global: WordModel = ModelStore::open(&store).unwrap().load_model(&ModelKey::Global).unwrap();
    assert_eq!(global.token_count(), 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ndjson");
    let out = run(&["train", "--corpus", missing.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("nope.ndjson"));

    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        run(&["--config", missing.to_str().unwrap(), "health"]).status.code(),
        Some(2)
    );

    let bad = write(dir.path(), "bad.ndjson", "{\"user_id\":\"a\"}\n");
    let out = run(&[
        "train",
        "--corpus",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("line 1"));

    let out = run(&["health", "--server", "http://127.0.0.1:9"]);
    assert_eq!(out.status.code(), Some(1));
}

/// Trains on the blended synthetic corpus and writes the held-out notes.
fn blended_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let corpus = blended(&BlendConfig::default());
    let train = write(dir, "train.ndjson", &ndjson(&corpus.train));
    let heldout = write(dir, "heldout.ndjson", &ndjson(&corpus.heldout));
    let store = dir.join("store");
    let out = run(&[
        "train",
        "--corpus",
        train.to_str().unwrap(),
        "--out",
        store.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    (heldout, store)
}

#[test]
fn eval_reports_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (heldout, store) = blended_fixture(dir.path());
    let report = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--corpus",
        heldout.to_str().unwrap(),
        "--store",
        store.to_str().unwrap(),
        "--alpha-grid",
        "0.6",
        "--target-coverage",
        "5",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("best alpha: 0.6"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["best_alpha"], 0.6);
    let cov = json["reports"][0]["coverage"].as_f64().unwrap();
    assert!((cov - 5.0).abs() <= 0.1, "coverage {cov}");

    let out = run(&[
        "eval",
        "--corpus",
        heldout.to_str().unwrap(),
        "--store",
        store.to_str().unwrap(),
        "--target-coverage",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("undefined"), "{}", text(&out.stderr));

    let out = run(&[
        "eval",
        "--corpus",
        heldout.to_str().unwrap(),
        "--store",
        dir.path().join("none").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_and_cascade_helps() {
    let dir = tempfile::tempdir().unwrap();
    let (heldout, store) = blended_fixture(dir.path());
    let transcript = |name: &str| -> (String, String) {
        let path = dir.path().join(name);
        let out = run(&[
            "simulate",
            "--corpus",
            heldout.to_str().unwrap(),
            "--store",
            store.to_str().unwrap(),
            "--notes",
            "40",
            "--transcript",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", text(&out.stderr));
        (std::fs::read_to_string(path).unwrap(), text(&out.stdout))
    };
    let (a, stdout) = transcript("a.ndjson");
    let (b, _) = transcript("b.ndjson");
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let saved: Vec<f64> = stdout
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(saved.len(), 2);
    assert!(saved[1] >= saved[0], "{stdout}");
}

#[test]
fn serve_refuses_without_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "serve",
        "--store",
        dir.path().join("s").to_str().unwrap(),
        "--bind",
        "127.0.0.1:0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("typeahead train"));
}

#[cfg(unix)]
#[test]
fn serve_answers_clients_and_drains_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "c.ndjson", TINY);
    let store = dir.path().join("store");
    assert!(run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        store.to_str().unwrap()
    ])
    .status
    .success());

    let mut child = bin()
        .args([
            "serve",
            "--store",
            store.to_str().unwrap(),
            "--bind",
            "127.0.0.1:0",
            "--corpus",
            corpus.to_str().unwrap(),
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let out = run(&["health", "--server", &url]);
    assert!(out.status.success(), "{}", text(&out.stdout));
    assert!(text(&out.stdout).contains("\"ok\""));

    let out = run(&[
        "suggest",
        "--server",
        &url,
        "--user",
        "alice",
        "--text",
        "thank you for ",
    ]);
    assert!(out.status.success());
    let resp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(resp["candidates"].as_array().is_some_and(|c| !c.is_empty()));

    let out = run(&[
        "feedback",
        "--server",
        &url,
        "--user",
        "alice",
        "--context",
        "thank you for ",
        "--suggestion",
        "the update",
        "--action",
        "accepted",
    ]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read_to_string(store.join("feedback/events.ndjson"))
            .unwrap()
            .lines()
            .count(),
        1
    );

    let out = run(&["train-user", "--server", &url, "--user", "alice"]);
    assert!(out.status.success());
    assert!(text(&out.stdout).contains("\"notes\": 2"));

    let status = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(child.wait().unwrap().success());
}
