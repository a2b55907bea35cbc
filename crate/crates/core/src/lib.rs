//! Benchmark harness for evaluating vision-language models on human
//! activity recognition.
//!
//! The crate builds keyword-verified descriptive ground-truth captions for
//! activity videos and scores model outputs against them with four
//! evaluation methods (keyword matching, cosine similarity, token-level
//! embedding precision, and a True/False model judge), reporting Mean
//! Class Accuracy under cross-subject and cross-view protocols.
//!
//! Module map:
//! - [`dataset`]: manifests, keyword lexicons, caption records, and the
//!   shared token-normalization/matching primitive.
//! - [`keyframe`]: representative-frame selection via frame differencing,
//!   brightness/entropy filtering, and k-means over intensity histograms.
//! - [`providers`]: chat-vision, sentence-embedding, and token-embedding
//!   backends, each with a live HTTP client and a deterministic mock.
//! - [`captiongen`]: the iterative generate/check/refine caption loop and
//!   dataset-wide coverage verification.
//! - [`metrics`]: the four scorers behind one verdict type.
//! - [`protocol`]: CS/CV splits, per-class sampling, and Mean Class
//!   Accuracy.
//! - [`runner`]: configuration, response caching, bounded-parallelism
//!   batch execution, and report emission behind the CLI commands.

pub mod captiongen;
pub mod dataset;
pub mod keyframe;
pub mod metrics;
pub mod protocol;
pub mod providers;
pub mod runner;
