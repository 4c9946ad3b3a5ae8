//! Shared configuration for the CLI and the service.
//!
//! Precedence, lowest first: built-in defaults, the TOML file, `TYPEAHEAD_*`
//! environment variables, command-line flags (applied by the caller).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::charlm::CharParams;
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "TYPEAHEAD_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub corpus: Option<PathBuf>,
    pub store_root: PathBuf,
    pub bind: String,
    pub alpha_ensemble: f64,
    pub alpha_norm: f64,
    pub threshold: f64,
    pub top_n: usize,
    pub max_words: usize,
    pub markov_order: usize,
    pub char_order: usize,
    pub char_backoff: f64,
    pub char_threshold: f64,
    pub window_days: i64,
    pub max_text_chars: usize,
    pub upstream_lm_url: Option<String>,
    pub upstream_timeout_ms: u64,
}

impl Default for Config {
    fn default() -> Self {
        let e = EnsembleConfig::default();
        Self {
            corpus: None,
            store_root: PathBuf::from("store"),
            bind: "127.0.0.1:8080".into(),
            alpha_ensemble: e.alpha_ensemble,
            alpha_norm: e.alpha_norm,
            threshold: e.threshold,
            top_n: e.top_n,
            max_words: e.max_words,
            markov_order: e.markov_order,
            char_order: 6,
            char_backoff: 0.4,
            char_threshold: -2.0,
            window_days: 90,
            max_text_chars: 10_000,
            upstream_lm_url: None,
            upstream_timeout_ms: 60,
        }
    }
}

/// Keys that may be overridden from the environment.
pub const KEYS: &[&str] = &[
    "corpus",
    "store_root",
    "bind",
    "alpha_ensemble",
    "alpha_norm",
    "threshold",
    "top_n",
    "max_words",
    "markov_order",
    "char_order",
    "char_backoff",
    "char_threshold",
    "window_days",
    "max_text_chars",
    "upstream_lm_url",
    "upstream_timeout_ms",
];

const STRING_KEYS: &[&str] = &["corpus", "store_root", "bind", "upstream_lm_url"];

impl Config {
    /// Reads `path` (if given) and applies overrides from `env`.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (name, raw) in env {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = key.to_ascii_lowercase();
            if !KEYS.contains(&key.as_str()) {
                continue;
            }
            table.insert(key.clone(), env_value(&key, &raw)?);
        }
        let config: Config = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_env(path: Option<&Path>) -> Result<Self> {
        Self::load(path, std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        self.ensemble().validate()?;
        if self.char_order == 0 {
            return Err(Error::Config("char_order must be >= 1".into()));
        }
        if !(self.char_backoff > 0.0 && self.char_backoff <= 1.0) {
            return Err(Error::Config("char_backoff must be in (0, 1]".into()));
        }
        if self.window_days <= 0 {
            return Err(Error::Config("window_days must be positive".into()));
        }
        if self.max_text_chars == 0 {
            return Err(Error::Config("max_text_chars must be positive".into()));
        }
        Ok(())
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            alpha_ensemble: self.alpha_ensemble,
            alpha_norm: self.alpha_norm,
            threshold: self.threshold,
            top_n: self.top_n,
            max_words: self.max_words,
            markov_order: self.markov_order,
        }
    }

    pub fn char_params(&self) -> CharParams {
        CharParams {
            backoff_factor: self.char_backoff,
            threshold: self.char_threshold,
            ..CharParams::default()
        }
    }
}

fn env_value(key: &str, raw: &str) -> Result<toml::Value> {
    if STRING_KEYS.contains(&key) {
        return Ok(toml::Value::String(raw.to_string()));
    }
    let doc = format!("v = {raw}");
    let mut parsed = doc
        .parse::<toml::Table>()
        .map_err(|_| Error::Config(format!("{ENV_PREFIX}{}: cannot parse {raw:?}", key.to_uppercase())))?;
    Ok(parsed.remove("v").expect("key present"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = Config::load(None, env(&[])).unwrap();
        assert_eq!(c.alpha_ensemble, 0.6);
        assert_eq!(c.alpha_norm, 0.4);
        assert_eq!(c.top_n, 3);
        assert_eq!(c.markov_order, 2);
        assert_eq!(c.window_days, 90);
        assert_eq!(c.max_text_chars, 10_000);
        assert!(c.upstream_lm_url.is_none());
    }

    #[test]
    fn env_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "alpha_ensemble = 0.2\ntop_n = 5\nstore_root = \"/tmp/s\"\n").unwrap();
        let c = Config::load(
            Some(&path),
            env(&[
                ("TYPEAHEAD_ALPHA_ENSEMBLE", "0.8"),
                ("TYPEAHEAD_BIND", "0.0.0.0:9000"),
                ("TYPEAHEAD_LATENCY_CORPUS", "ignored"),
                ("HOME", "/root"),
            ]),
        )
        .unwrap();
        assert_eq!(c.alpha_ensemble, 0.8);
        assert_eq!(c.top_n, 5);
        assert_eq!(c.store_root, PathBuf::from("/tmp/s"));
        assert_eq!(c.bind, "0.0.0.0:9000");
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(Config::load(None, env(&[("TYPEAHEAD_TOP_N", "many")])).is_err());
        assert!(Config::load(None, env(&[("TYPEAHEAD_ALPHA_ENSEMBLE", "1.5")])).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "unknown_key = 1\n").unwrap();
        assert!(matches!(Config::load(Some(&path), env(&[])), Err(Error::Config(_))));
    }
}
