//! Personalized text completion: n-gram models, decoding, per-user
//! ensembles, a character-level fallback, the typing-session cascade, and
//! offline evaluation.

pub mod api;
pub mod charlm;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod ensemble;
pub mod error;
pub mod markov;
pub mod metrics;
pub mod session;
pub mod store;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
