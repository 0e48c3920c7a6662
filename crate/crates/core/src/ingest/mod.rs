//! Corpus acquisition: Q&A posts from a Stack Exchange dump file and a
//! Discourse forum API, tag-based post selection, and documentation
//! chapters from an HTML book tree.

mod discourse;
mod docs;
mod stackexchange;
mod tags;

pub use discourse::{fetch_discourse, DiscourseClient, FetchOptions};
pub use docs::{extract_doc_chapters, DocExtraction};
pub use stackexchange::{parse_stackexchange_dump, DumpParse};
pub use tags::{expand_tags, TagExpansion};

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed XML at byte offset {offset}: {message}")]
    MalformedXml { offset: u64, message: String },
    #[error("row {row_id}: {message}")]
    BadRow { row_id: String, message: String },
    #[error("forum request to {url} failed after {attempts} attempts: {message}")]
    Http {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("forum response from {url} is missing field `{field}`")]
    SchemaDrift { url: String, field: &'static str },
    #[error("cursor file {path} is corrupt: {message}")]
    BadCursor { path: PathBuf, message: String },
}

/// Where a post came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostSource {
    StackExchange,
    Discourse,
}

impl PostSource {
    pub fn label(&self) -> &'static str {
        match self {
            PostSource::StackExchange => "stack-exchange",
            PostSource::Discourse => "discourse",
        }
    }
}

/// One Q&A thread: the question plus its answers and the awareness metadata
/// the downstream metrics consume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub source: PostSource,
    pub title: String,
    pub question_body: String,
    pub answer_bodies: Vec<String>,
    pub n_answers: u32,
    pub has_accepted: bool,
    pub accepted_date: Option<NaiveDateTime>,
    pub tags: Vec<String>,
    pub created: Option<NaiveDateTime>,
}

impl Post {
    /// Key used for deduplication; later fetches replace earlier ones.
    pub fn dedup_key(&self) -> (PostSource, String) {
        (self.source, self.id.clone())
    }
}

/// Deduplicate by (source, id), keeping the later occurrence, and return the
/// survivors ordered by (source, numeric-aware id).
pub fn dedup_posts(posts: Vec<Post>) -> Vec<Post> {
    let mut by_key: BTreeMap<(PostSource, (u64, String)), Post> = BTreeMap::new();
    for post in posts {
        let numeric = post.id.parse::<u64>().unwrap_or(u64::MAX);
        by_key.insert((post.source, (numeric, post.id.clone())), post);
    }
    by_key.into_values().collect()
}

/// One documentation chapter's extracted paragraph content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub book: String,
    pub chapter_path: String,
    /// Concatenated inner markup of the chapter's paragraph elements,
    /// single-space separated; never empty (empty chapters are dropped at
    /// extraction).
    pub text: String,
}

impl CorpusDocument {
    pub fn doc_id(&self) -> String {
        format!("{}/{}", self.book, self.chapter_path)
    }
}

/// Per-tag counts backing the exclusivity/significance thresholds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagStats {
    pub tag: String,
    /// Posts carrying both this tag and any seed tag.
    pub n_target_posts: u64,
    /// Posts carrying this tag at all.
    pub n_total_posts: u64,
}
