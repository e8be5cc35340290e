//! Retrieval engine and evaluation harness for cross-lingual debunked-narrative
//! retrieval: given a claim (typically a social-media post) as the query, find
//! and rank previously published fact-checking articles from a multilingual
//! corpus.
//!
//! The crate is organised by stage:
//!
//! - [`corpus`]: data model, JSONL ingestion, splits and training pairs.
//! - [`lexical`]: tokenizer, inverted index and Okapi BM25.
//! - [`dense`]: embedding matrices, exact cosine search, hashing embedder.
//! - [`trainer`]: projection-head bi-encoder trained with an MSE-on-cosine loss.
//! - [`pipeline`]: multistage retrieval with pair and listwise re-rankers.
//! - [`metrics`]: MRR, DCG@K and nDCG@K over graded judgments.
//! - [`analysis`]: dataset diagnostics and the latency benchmark.

pub mod analysis;
pub mod corpus;
pub mod dense;
mod error;
pub(crate) mod io;
pub mod lexical;
pub mod metrics;
pub mod pipeline;
pub mod ranking;
pub mod trainer;

pub use error::{Error, Result};
pub use ranking::{RankedList, ScoredDoc};
