//! Co-training of a small decoder-only language model and an embedding-based
//! recommender.
//!
//! The two models share information through dedicated per-user/per-item
//! vocabulary tokens, by preloading the recommender's embeddings into the
//! language model's entity rows, through a fused prediction head that reads
//! the language model's top-layer feature, and through an alternating
//! mutual-learning loop anchored on a value-copied sharing store.
//!
//! Module map:
//! - [`corpus`]: ingestion, interaction matrix, splits, negatives, candidate sets
//! - [`vocab`]: mixed vocabulary, tokenizer, prompt templates
//! - [`drs`]: GMF / NCF / LightGCN recommenders with standalone and fused heads
//! - [`lm`]: decoder-only transformer, SFT objective, answer scoring
//! - [`bridge`]: sharing store, mutual losses, joint training loop
//! - [`eval`]: metrics, task harnesses, ablations, gamma sweep
//! - [`pipeline`] and [`config`]: experiment orchestration used by the CLI

pub mod bridge;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod drs;
pub mod error;
pub mod eval;
pub mod lm;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod store;
pub mod vocab;

pub use error::{Error, Result};
