//! Optional remote next-token model with a circuit breaker.
//!
//! The remote endpoint receives `{"context": [tokens]}` and answers
//! `{"distribution": {token: probability}}`. Any error or a reply slower
//! than the budget falls back to the local global model; after repeated
//! failures the remote is skipped for a cool-down period.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::runtime::Handle;
use typeahead_core::decoder::{LanguageModel, Source};
use typeahead_core::markov::{Distribution, WordModel};

const FAILURES_TO_OPEN: u32 = 3;
const COOL_DOWN: Duration = Duration::from_secs(30);

#[derive(Serialize)]
struct UpstreamRequest<'a> {
    context: &'a [String],
}

#[derive(Deserialize)]
struct UpstreamReply {
    distribution: std::collections::HashMap<String, f64>,
}

pub struct UpstreamLm {
    url: String,
    client: reqwest::Client,
    runtime: Handle,
    budget: Duration,
    fallback: Arc<WordModel>,
    failures: AtomicU32,
    open_until_ms: AtomicU64,
    epoch: Instant,
}

impl UpstreamLm {
    /// Must be called from within a tokio runtime; model calls must then
    /// happen on blocking threads of that runtime.
    pub fn new(url: impl Into<String>, budget: Duration, fallback: Arc<WordModel>) -> Self {
        Self {
            url: url.into(),
            client: reqwest::Client::new(),
            runtime: Handle::current(),
            budget,
            fallback,
            failures: AtomicU32::new(0),
            open_until_ms: AtomicU64::new(0),
            epoch: Instant::now(),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn is_open(&self) -> bool {
        self.now_ms() < self.open_until_ms.load(Ordering::Relaxed)
    }

    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn fetch(&self, context: &[String]) -> Option<Distribution<String>> {
        let request = self.client.post(&self.url).json(&UpstreamRequest { context }).send();
        let budget = self.budget;
        let reply = self.runtime.block_on(async move {
            tokio::time::timeout(budget, async {
                request.await?.error_for_status()?.json::<UpstreamReply>().await
            })
            .await
        });
        match reply {
            Ok(Ok(r)) => Some(Distribution::from_probabilities(r.distribution)),
            _ => None,
        }
    }

    fn record(&self, ok: bool) {
        if ok {
            self.failures.store(0, Ordering::Relaxed);
        } else if self.failures.fetch_add(1, Ordering::Relaxed) + 1 >= FAILURES_TO_OPEN {
            self.failures.store(0, Ordering::Relaxed);
            self.open_until_ms
                .store(self.now_ms() + COOL_DOWN.as_millis() as u64, Ordering::Relaxed);
            tracing::warn!(url = %self.url, "upstream model unavailable, using local global model");
        }
    }
}

impl LanguageModel for UpstreamLm {
    fn next_distribution(&self, context: &[String]) -> Distribution<String> {
        if !self.is_open() {
            let fetched = self.fetch(context);
            self.record(fetched.is_some());
            if let Some(d) = fetched {
                return d;
            }
        }
        self.fallback.next_distribution(context)
    }

    fn source(&self) -> Source {
        Source::Global
    }
}
