//! Measures the topical alignment between developers' concrete information
//! needs (Q&A corpora) and a programming language's official documentation.
//!
//! The pipeline ingests a Stack Exchange dump, a Discourse forum, and an
//! HTML documentation tree; cleans and vectorizes both corpora; trains an
//! anchored topic model on the Q&A side; projects the documentation through
//! it; and derives per-knowledge-unit prevalence and awareness metrics, the
//! absent/divergent/convergent classification, and the statistical battery
//! over them.

pub mod alignment;
pub mod corex;
pub mod html;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod registry;
pub mod report;
pub mod stats;
