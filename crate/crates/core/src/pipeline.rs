//! Stage orchestration: run configuration, stage artifacts on disk, and the
//! stage runner. Every artifact is written atomically (temp file + rename)
//! and every stage checks that its prerequisites exist before running, so
//! `run all` is just the stages in order and reruns are idempotent given
//! identical inputs and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{self, AlignmentClass, CutoffConfig};
use crate::corex::{self, TopicModel, TrainConfig};
use crate::ingest::{self, CorpusDocument, FetchOptions, Post, TagStats};
use crate::metrics::{
    compute_metric_table, AwarenessMode, AwarenessRecord, MetricTable, ModelTag,
    TopicProbabilities,
};
use crate::preprocess::{
    assemble_post_text, build_vocabulary, vectorize, DocTermMatrix, LemmaTable, StopList,
    TextCleaner, TokenizedDocument, Vocabulary,
};
use crate::registry::KuRegistry;
use crate::report;
use crate::stats::{self, BatteryInput, LabeledEstimate};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid run configuration:\n{}", .0.join("\n"))]
    ConfigInvalid(Vec<String>),
    #[error("failed to read config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    ConfigParse(String),
    #[error("missing artifact {artifact}: run the `{run_first}` stage first")]
    MissingPrerequisite { artifact: String, run_first: Stage },
    #[error("artifact {path} is corrupt: {message}")]
    CorruptArtifact { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Registry(#[from] crate::registry::RegistryError),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Preprocess(#[from] crate::preprocess::PreprocessError),
    #[error(transparent)]
    Corex(#[from] crate::corex::CorexError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Alignment(#[from] crate::alignment::AlignmentError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Preprocess,
    Train,
    Predict,
    Metrics,
    Align,
    Stats,
    All,
}

impl Stage {
    pub const ORDER: [Stage; 7] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::Train,
        Stage::Predict,
        Stage::Metrics,
        Stage::Align,
        Stage::Stats,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Metrics => "metrics",
            Stage::Align => "align",
            Stage::Stats => "stats",
            Stage::All => "all",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ingest" => Ok(Stage::Ingest),
            "preprocess" => Ok(Stage::Preprocess),
            "train" => Ok(Stage::Train),
            "predict" => Ok(Stage::Predict),
            "metrics" => Ok(Stage::Metrics),
            "align" => Ok(Stage::Align),
            "stats" => Ok(Stage::Stats),
            "all" => Ok(Stage::All),
            other => Err(format!(
                "unknown stage `{other}` (expected one of ingest, preprocess, train, predict, metrics, align, stats, all)"
            )),
        }
    }
}

fn default_tet() -> f64 {
    0.5
}
fn default_tst() -> f64 {
    0.01
}
fn default_min_df() -> usize {
    2
}
fn default_alpha() -> f64 {
    0.05
}
fn default_anchor_strength() -> f64 {
    10.0
}
fn default_max_iter() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-5
}
fn default_seed() -> u64 {
    42
}

/// Training knobs as they appear in the config file; `n_topics` defaults to
/// the registry size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSettings {
    #[serde(default)]
    pub n_topics: Option<usize>,
    #[serde(default = "default_anchor_strength")]
    pub anchor_strength: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            n_topics: None,
            anchor_strength: default_anchor_strength(),
            max_iter: default_max_iter(),
            tol: default_tol(),
            seed: default_seed(),
        }
    }
}

/// Which prevalence metric drives the rank segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingMetric {
    #[default]
    Frequency,
    Popularity,
}

/// The full run configuration, loadable from JSON or TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Stack Exchange `Posts.xml` dump file.
    #[serde(default)]
    pub dump: Option<PathBuf>,
    /// Discourse forum base URL.
    #[serde(default)]
    pub forum_url: Option<String>,
    /// Forum category path segment, e.g. `help/5`.
    #[serde(default)]
    pub forum_category: Option<String>,
    /// Root of the HTML documentation tree.
    #[serde(default)]
    pub docs_root: Option<PathBuf>,
    /// KU registry file; omit to use the bundled Rust registry.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default)]
    pub seed_tags: Vec<String>,
    #[serde(default)]
    pub tags_include: Vec<String>,
    #[serde(default)]
    pub tags_exclude: Vec<String>,
    #[serde(default = "default_tet")]
    pub tet: f64,
    #[serde(default = "default_tst")]
    pub tst: f64,
    #[serde(default = "default_min_df")]
    pub min_df: usize,
    #[serde(default)]
    pub stoplist: Option<PathBuf>,
    #[serde(default)]
    pub lemma_table: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub cutoffs: CutoffConfig,
    #[serde(default)]
    pub ranking_metric: RankingMetric,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => {
                toml::from_str(&text).map_err(|e| PipelineError::ConfigParse(e.to_string()))?
            }
            _ => serde_json::from_str(&text)
                .map_err(|e| PipelineError::ConfigParse(e.to_string()))?,
        };
        Ok(cfg)
    }

    /// Collect every validation problem at once.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.dump.is_none() && self.forum_url.is_none() && self.docs_root.is_none() {
            issues.push("no input configured: set dump, forum_url, or docs_root".into());
        }
        for (name, path) in [
            ("dump", &self.dump),
            ("docs_root", &self.docs_root),
            ("registry", &self.registry),
            ("stoplist", &self.stoplist),
            ("lemma_table", &self.lemma_table),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    issues.push(format!("{name} path does not exist: {}", p.display()));
                }
            }
        }
        if self.forum_url.is_some() && self.forum_category.is_none() {
            issues.push("forum_url is set but forum_category is missing".into());
        }
        if !(0.0 < self.tet && self.tet < 1.0) {
            issues.push(format!("tet must lie in (0, 1), got {}", self.tet));
        }
        if !(0.0 < self.tst && self.tst < 1.0) {
            issues.push(format!("tst must lie in (0, 1), got {}", self.tst));
        }
        if self.min_df < 1 {
            issues.push("min_df must be at least 1".into());
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            issues.push(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.train.anchor_strength < 1.0 {
            issues.push(format!(
                "anchor_strength must be at least 1, got {}",
                self.train.anchor_strength
            ));
        }
        if let Err(e) = self.cutoffs.validate() {
            issues.push(e.to_string());
        }
        issues
    }

    pub fn load_registry(&self) -> Result<KuRegistry, PipelineError> {
        Ok(match &self.registry {
            Some(path) => KuRegistry::from_path(path)?,
            None => KuRegistry::bundled_rust(),
        })
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Write `bytes` to `path` atomically via a sibling temp file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn write_artifact(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    write_atomic(path, bytes).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_artifact(path: &Path, produced_by: Stage) -> Result<String, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingPrerequisite {
            artifact: path.display().to_string(),
            run_first: produced_by,
        });
    }
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(
    text: &str,
    path: &Path,
) -> Result<Vec<T>, PipelineError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line).map_err(|e| PipelineError::CorruptArtifact {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

// Artifact file names.
const POSTS_FILE: &str = "posts.jsonl";
const DOCUMENTS_FILE: &str = "documents.jsonl";
const TAG_TABLE_FILE: &str = "tag_selection.tsv";
const TOKENS_POSTS_FILE: &str = "tokens_posts.jsonl";
const TOKENS_DOCS_FILE: &str = "tokens_documents.jsonl";
const VOCABULARY_FILE: &str = "vocabulary.txt";
const MATRIX_POSTS_FILE: &str = "matrix_posts.jsonl";
const MATRIX_DOCS_FILE: &str = "matrix_documents.jsonl";
const ANCHOR_COVERAGE_FILE: &str = "anchor_coverage.tsv";
const MODEL_FILE: &str = "model.json";
const DOC_TOPICS_CONCRETE_FILE: &str = "doc_topics_concrete.tsv";
const DOC_TOPICS_DOCS_FILE: &str = "doc_topics_documentation.tsv";
const TOPIC_TC_FILE: &str = "topic_tc.tsv";
const METRICS_JSON_FILE: &str = "metrics.json";
const KU_METRICS_CONCRETE_FILE: &str = "ku_metrics_concrete.tsv";
const KU_METRICS_DOCS_FILE: &str = "ku_metrics_documentation.tsv";
const PAIR_METRICS_CONCRETE_FILE: &str = "pair_metrics_concrete.tsv";
const PAIR_METRICS_DOCS_FILE: &str = "pair_metrics_documentation.tsv";
const PREVALENCE_FILE: &str = "prevalence.tsv";
const KUS_PER_DOC_FILE: &str = "kus_per_document.tsv";
const KUS_PER_DOC_SUMMARY_FILE: &str = "kus_per_document_summary.tsv";
const CLASSIFICATION_FILE: &str = "classification.tsv";
const CLASSIFICATION_JSON_FILE: &str = "classification.json";
const CROSSTAB_CLASS_FILE: &str = "crosstab_by_class.tsv";
const CROSSTAB_CATEGORY_FILE: &str = "crosstab_by_category.tsv";
const SLOPE_FILE: &str = "slope_data.tsv";
const AWARENESS_RANKING_FILE: &str = "awareness_ranking.tsv";
const SKEWNESS_FILE: &str = "skewness.tsv";
const CORRELATIONS_FILE: &str = "correlations.tsv";
const KUS_PER_DOC_TEST_FILE: &str = "kus_per_document_test.tsv";
const BATTERY_FILE: &str = "awareness_battery.tsv";

/// Run one stage (or `all`). Prerequisite artifacts are the previous
/// stages' files under `out_dir`.
pub fn run(stage: Stage, cfg: &RunConfig) -> Result<(), PipelineError> {
    let issues = cfg.validate();
    if !issues.is_empty() {
        return Err(PipelineError::ConfigInvalid(issues));
    }
    match stage {
        Stage::Ingest => run_ingest(cfg),
        Stage::Preprocess => run_preprocess(cfg),
        Stage::Train => run_train(cfg),
        Stage::Predict => run_predict(cfg),
        Stage::Metrics => run_metrics(cfg),
        Stage::Align => run_align(cfg),
        Stage::Stats => run_stats(cfg),
        Stage::All => {
            for stage in Stage::ORDER {
                run(stage, cfg)?;
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Debug, Serialize, Deserialize)]
struct IngestSummary {
    dump_posts_parsed: u64,
    dump_posts_selected: u64,
    dump_answers_selected: u64,
    orphan_answers: u64,
    forum_posts: u64,
    forum_answers: u64,
    surviving_tags: Vec<String>,
    documents: u64,
    chapters_skipped_empty: u64,
    files_scanned: u64,
}

fn run_ingest(cfg: &RunConfig) -> Result<(), PipelineError> {
    let mut posts: Vec<Post> = Vec::new();
    let mut summary = IngestSummary {
        dump_posts_parsed: 0,
        dump_posts_selected: 0,
        dump_answers_selected: 0,
        orphan_answers: 0,
        forum_posts: 0,
        forum_answers: 0,
        surviving_tags: vec![],
        documents: 0,
        chapters_skipped_empty: 0,
        files_scanned: 0,
    };

    if let Some(dump_path) = &cfg.dump {
        let file = std::fs::File::open(dump_path).map_err(|source| PipelineError::Io {
            path: dump_path.clone(),
            source,
        })?;
        let parsed = ingest::parse_stackexchange_dump(std::io::BufReader::new(file))?;
        summary.dump_posts_parsed = parsed.posts.len() as u64;
        summary.orphan_answers = parsed.orphan_answers;

        let seed_tags: BTreeSet<String> = cfg.seed_tags.iter().cloned().collect();
        let selected = if seed_tags.is_empty() {
            // no tag selection configured: the dump is taken as already
            // filtered to the corpus of interest
            parsed.posts
        } else {
            let mut stats_by_tag: BTreeMap<String, TagStats> = BTreeMap::new();
            for post in &parsed.posts {
                let is_target = post.tags.iter().any(|t| seed_tags.contains(t));
                for tag in &post.tags {
                    let entry = stats_by_tag.entry(tag.clone()).or_insert(TagStats {
                        tag: tag.clone(),
                        n_target_posts: 0,
                        n_total_posts: 0,
                    });
                    entry.n_total_posts += 1;
                    if is_target {
                        entry.n_target_posts += 1;
                    }
                }
            }
            let reference_count = seed_tags
                .iter()
                .filter_map(|t| stats_by_tag.get(t))
                .map(|s| s.n_target_posts)
                .max()
                .unwrap_or(0)
                .max(1);
            let tag_stats: Vec<TagStats> = stats_by_tag.values().cloned().collect();
            let expansion =
                ingest::expand_tags(&seed_tags, &tag_stats, cfg.tet, cfg.tst, reference_count);
            let mut final_tags = expansion.surviving;
            for tag in &cfg.tags_include {
                final_tags.insert(tag.clone());
            }
            for tag in &cfg.tags_exclude {
                final_tags.remove(tag);
            }
            summary.surviving_tags = final_tags.iter().cloned().collect();

            let mut tag_table = String::from("tag\tn_target_posts\tn_total_posts\ttet\ttst\tkept\n");
            for stats in &tag_stats {
                let tet = stats.n_target_posts as f64 / stats.n_total_posts.max(1) as f64;
                let tst = stats.n_target_posts as f64 / reference_count as f64;
                tag_table.push_str(&format!(
                    "{}\t{}\t{}\t{tet}\t{tst}\t{}\n",
                    stats.tag,
                    stats.n_target_posts,
                    stats.n_total_posts,
                    final_tags.contains(&stats.tag),
                ));
            }
            write_artifact(&cfg.artifact(TAG_TABLE_FILE), tag_table.as_bytes())?;

            parsed
                .posts
                .into_iter()
                .filter(|p| p.tags.iter().any(|t| final_tags.contains(t)))
                .collect()
        };
        summary.dump_posts_selected = selected.len() as u64;
        summary.dump_answers_selected = selected.iter().map(|p| p.n_answers as u64).sum();
        posts.extend(selected);
    }

    if let (Some(url), Some(category)) = (&cfg.forum_url, &cfg.forum_category) {
        let options = FetchOptions {
            cursor_path: Some(cfg.artifact("forum_cursor.json")),
            ..FetchOptions::default()
        };
        std::fs::create_dir_all(&cfg.out_dir).map_err(|source| PipelineError::Io {
            path: cfg.out_dir.clone(),
            source,
        })?;
        let forum_posts = ingest::fetch_discourse(url, category, &options)?;
        summary.forum_posts = forum_posts.len() as u64;
        summary.forum_answers = forum_posts.iter().map(|p| p.n_answers as u64).sum();
        posts.extend(forum_posts);
    }

    let posts = ingest::dedup_posts(posts);
    write_artifact(&cfg.artifact(POSTS_FILE), jsonl(&posts).as_bytes())?;

    let mut documents: Vec<CorpusDocument> = Vec::new();
    if let Some(root) = &cfg.docs_root {
        let extraction = ingest::extract_doc_chapters(root)?;
        summary.documents = extraction.documents.len() as u64;
        summary.chapters_skipped_empty = extraction.skipped_empty;
        summary.files_scanned = extraction.files_scanned;
        documents = extraction.documents;
    }
    write_artifact(&cfg.artifact(DOCUMENTS_FILE), jsonl(&documents).as_bytes())?;

    let summary_json =
        serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_artifact(&cfg.artifact("ingest_summary.json"), summary_json.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// preprocess

fn post_doc_id(post: &Post) -> String {
    format!("{}:{}", post.source.label(), post.id)
}

fn load_posts(cfg: &RunConfig) -> Result<Vec<Post>, PipelineError> {
    let path = cfg.artifact(POSTS_FILE);
    let text = read_artifact(&path, Stage::Ingest)?;
    parse_jsonl(&text, &path)
}

fn load_documents(cfg: &RunConfig) -> Result<Vec<CorpusDocument>, PipelineError> {
    let path = cfg.artifact(DOCUMENTS_FILE);
    let text = read_artifact(&path, Stage::Ingest)?;
    parse_jsonl(&text, &path)
}

fn load_vocabulary(cfg: &RunConfig) -> Result<Vocabulary, PipelineError> {
    let path = cfg.artifact(VOCABULARY_FILE);
    let text = read_artifact(&path, Stage::Preprocess)?;
    Ok(Vocabulary::from_words(
        text.lines().map(str::to_string).collect(),
    ))
}

fn load_matrix(cfg: &RunConfig, file: &str) -> Result<DocTermMatrix, PipelineError> {
    let path = cfg.artifact(file);
    let text = read_artifact(&path, Stage::Preprocess)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::CorruptArtifact {
        path,
        message: e.to_string(),
    })
}

fn run_preprocess(cfg: &RunConfig) -> Result<(), PipelineError> {
    let registry = cfg.load_registry()?;
    let posts = load_posts(cfg)?;
    let documents = load_documents(cfg)?;

    let stoplist = match &cfg.stoplist {
        Some(path) => StopList::from_path(path)?,
        None => StopList::bundled()?,
    };
    let lemmas = match &cfg.lemma_table {
        Some(path) => LemmaTable::from_path(path)?,
        None => LemmaTable::bundled()?,
    };
    let cleaner = TextCleaner::new(stoplist, lemmas, registry.anchor_lexicon());

    let post_tokens: Vec<TokenizedDocument> = posts
        .par_iter()
        .map(|post| TokenizedDocument {
            doc_id: post_doc_id(post),
            tokens: cleaner.clean(&assemble_post_text(post)),
        })
        .collect();
    let doc_tokens: Vec<TokenizedDocument> = documents
        .par_iter()
        .map(|doc| TokenizedDocument {
            doc_id: doc.doc_id(),
            tokens: cleaner.clean(&doc.text),
        })
        .collect();

    let vocabulary = build_vocabulary(&post_tokens, cfg.min_df)?;
    let matrix_posts = vectorize(&post_tokens, &vocabulary);
    // the documentation corpus is constrained to the concrete vocabulary
    let matrix_docs = vectorize(&doc_tokens, &vocabulary);

    let coverage = registry.validate_anchors(&vocabulary);
    let mut coverage_table = String::from("ku\tmissing_tokens\n");
    for unit in &coverage.per_unit {
        coverage_table.push_str(&format!("{}\t{}\n", unit.unit, unit.missing.join(",")));
    }
    coverage_table.push_str(&format!("__coverage__\t{}\n", coverage.coverage));

    write_artifact(&cfg.artifact(TOKENS_POSTS_FILE), jsonl(&post_tokens).as_bytes())?;
    write_artifact(&cfg.artifact(TOKENS_DOCS_FILE), jsonl(&doc_tokens).as_bytes())?;
    write_artifact(
        &cfg.artifact(VOCABULARY_FILE),
        (vocabulary.word_types().join("\n") + "\n").as_bytes(),
    )?;
    write_artifact(
        &cfg.artifact(MATRIX_POSTS_FILE),
        serde_json::to_string(&matrix_posts)
            .expect("matrix serializes")
            .as_bytes(),
    )?;
    write_artifact(
        &cfg.artifact(MATRIX_DOCS_FILE),
        serde_json::to_string(&matrix_docs)
            .expect("matrix serializes")
            .as_bytes(),
    )?;
    write_artifact(&cfg.artifact(ANCHOR_COVERAGE_FILE), coverage_table.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train / predict

fn run_train(cfg: &RunConfig) -> Result<(), PipelineError> {
    let registry = cfg.load_registry()?;
    let vocabulary = load_vocabulary(cfg)?;
    let matrix = load_matrix(cfg, MATRIX_POSTS_FILE)?;

    // anchors restricted to tokens the vocabulary kept; the coverage report
    // from the preprocess stage lists what fell out
    let mut anchors: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (j, tokens) in registry.anchor_token_sets().into_iter().enumerate() {
        let present: BTreeSet<String> = tokens
            .into_iter()
            .filter(|t| vocabulary.index_of(t).is_some())
            .collect();
        if !present.is_empty() {
            anchors.insert(j, present);
        }
    }

    let train_cfg = TrainConfig {
        n_topics: cfg.train.n_topics.unwrap_or_else(|| registry.len()),
        anchor_strength: cfg.train.anchor_strength,
        max_iter: cfg.train.max_iter,
        tol: cfg.train.tol,
        seed: cfg.train.seed,
    };
    let model = corex::train(&matrix, &vocabulary, &anchors, &train_cfg)?;

    model.save(&cfg.artifact(MODEL_FILE))?;
    let probs = TopicProbabilities::new(
        model.n_topics,
        model.doc_ids().to_vec(),
        model.doc_topic_prob().to_vec(),
    )?;
    write_artifact(
        &cfg.artifact(DOC_TOPICS_CONCRETE_FILE),
        report::doc_topics_table(&probs).as_bytes(),
    )?;
    write_artifact(
        &cfg.artifact(TOPIC_TC_FILE),
        report::topic_tc_table(&model, &registry).as_bytes(),
    )?;
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<TopicModel, PipelineError> {
    let path = cfg.artifact(MODEL_FILE);
    if !path.exists() {
        return Err(PipelineError::MissingPrerequisite {
            artifact: path.display().to_string(),
            run_first: Stage::Train,
        });
    }
    Ok(TopicModel::load(&path)?)
}

fn run_predict(cfg: &RunConfig) -> Result<(), PipelineError> {
    let model = load_model(cfg)?;
    let matrix = load_matrix(cfg, MATRIX_DOCS_FILE)?;
    let rows = model.predict(&matrix)?;
    let probs = TopicProbabilities::new(model.n_topics, matrix.doc_ids.clone(), rows)?;
    write_artifact(
        &cfg.artifact(DOC_TOPICS_DOCS_FILE),
        report::doc_topics_table(&probs).as_bytes(),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// metrics

fn parse_doc_topics(text: &str, path: &Path) -> Result<TopicProbabilities, PipelineError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| PipelineError::CorruptArtifact {
        path: path.to_path_buf(),
        message: "empty doc-topics table".into(),
    })?;
    let n_topics = header.split('\t').count() - 1;
    let mut doc_ids = Vec::new();
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut fields = line.split('\t');
        let doc_id = fields.next().unwrap_or_default().to_string();
        let row: Result<Vec<f64>, _> = fields.map(|f| f.parse::<f64>()).collect();
        let row = row.map_err(|e| PipelineError::CorruptArtifact {
            path: path.to_path_buf(),
            message: format!("bad probability in row for {doc_id}: {e}"),
        })?;
        doc_ids.push(doc_id);
        rows.push(row);
    }
    Ok(TopicProbabilities::new(n_topics, doc_ids, rows)?)
}

fn load_doc_topics(cfg: &RunConfig, file: &str, stage: Stage) -> Result<TopicProbabilities, PipelineError> {
    let path = cfg.artifact(file);
    let text = read_artifact(&path, stage)?;
    parse_doc_topics(&text, &path)
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsArtifact {
    concrete: MetricTable,
    documentation: MetricTable,
}

fn run_metrics(cfg: &RunConfig) -> Result<(), PipelineError> {
    let registry = cfg.load_registry()?;
    let concrete_probs = load_doc_topics(cfg, DOC_TOPICS_CONCRETE_FILE, Stage::Train)?;
    let doc_probs = load_doc_topics(cfg, DOC_TOPICS_DOCS_FILE, Stage::Predict)?;
    let posts = load_posts(cfg)?;

    let awareness_by_id: BTreeMap<String, AwarenessRecord> = posts
        .iter()
        .map(|p| {
            (
                post_doc_id(p),
                AwarenessRecord {
                    doc_id: post_doc_id(p),
                    n_answers: p.n_answers,
                    has_accepted: p.has_accepted,
                },
            )
        })
        .collect();
    let awareness: Vec<AwarenessRecord> = concrete_probs
        .doc_ids
        .iter()
        .map(|id| {
            awareness_by_id
                .get(id)
                .cloned()
                .ok_or_else(|| PipelineError::CorruptArtifact {
                    path: cfg.artifact(POSTS_FILE),
                    message: format!("no post metadata for document {id}"),
                })
        })
        .collect::<Result<_, _>>()?;

    let concrete = compute_metric_table(
        &concrete_probs,
        Some((&awareness, AwarenessMode::Merged)),
        ModelTag::Concrete,
    )?;
    let documentation = compute_metric_table(&doc_probs, None, ModelTag::Documentation)?;

    write_artifact(
        &cfg.artifact(KU_METRICS_CONCRETE_FILE),
        report::ku_metrics_table(&concrete, &registry).as_bytes(),
    )?;
    write_artifact(
        &cfg.artifact(KU_METRICS_DOCS_FILE),
        report::ku_metrics_table(&documentation, &registry).as_bytes(),
    )?;
    write_artifact(
        &cfg.artifact(PAIR_METRICS_CONCRETE_FILE),
        report::pair_metrics_table(&concrete, &registry).as_bytes(),
    )?;
    write_artifact(
        &cfg.artifact(PAIR_METRICS_DOCS_FILE),
        report::pair_metrics_table(&documentation, &registry).as_bytes(),
    )?;
    write_artifact(
        &cfg.artifact(PREVALENCE_FILE),
        report::prevalence_table(&concrete, &documentation, &registry).as_bytes(),
    )?;
    let (counts, summary) = report::kus_per_document_table(&concrete, &documentation);
    write_artifact(&cfg.artifact(KUS_PER_DOC_FILE), counts.as_bytes())?;
    write_artifact(&cfg.artifact(KUS_PER_DOC_SUMMARY_FILE), summary.as_bytes())?;

    let artifact = MetricsArtifact {
        concrete,
        documentation,
    };
    write_artifact(
        &cfg.artifact(METRICS_JSON_FILE),
        serde_json::to_string(&artifact)
            .expect("metrics serialize")
            .as_bytes(),
    )?;
    Ok(())
}

fn load_metrics(cfg: &RunConfig) -> Result<MetricsArtifact, PipelineError> {
    let path = cfg.artifact(METRICS_JSON_FILE);
    let text = read_artifact(&path, Stage::Metrics)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::CorruptArtifact {
        path,
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// align

#[derive(Debug, Serialize, Deserialize)]
struct ClassificationArtifact {
    /// unit index -> class, for units with defined values in both models
    classes: BTreeMap<usize, AlignmentClass>,
    excluded: Vec<usize>,
}

fn ranking_values(table: &MetricTable, metric: RankingMetric) -> Vec<Option<f64>> {
    match metric {
        RankingMetric::Frequency => table.frequency.iter().map(|&v| Some(v as f64)).collect(),
        RankingMetric::Popularity => table.popularity.iter().map(|&v| Some(v as f64)).collect(),
    }
}

fn run_align(cfg: &RunConfig) -> Result<(), PipelineError> {
    let registry = cfg.load_registry()?;
    let metrics = load_metrics(cfg)?;

    let concrete_values = ranking_values(&metrics.concrete, cfg.ranking_metric);
    let doc_values = ranking_values(&metrics.documentation, cfg.ranking_metric);
    let outcome = alignment::align_kus(&concrete_values, &doc_values, &cfg.cutoffs)?;

    // ranks over the units with defined values, 1 = most prevalent
    let defined_units: Vec<usize> = outcome.classified.iter().map(|&(u, ..)| u).collect();
    let concrete_defined: Vec<f64> = defined_units
        .iter()
        .map(|&u| concrete_values[u].unwrap())
        .collect();
    let doc_defined: Vec<f64> = defined_units
        .iter()
        .map(|&u| doc_values[u].unwrap())
        .collect();
    let concrete_ranks: BTreeMap<usize, usize> = defined_units
        .iter()
        .copied()
        .zip(alignment::rank_descending(&concrete_defined))
        .collect();
    let documentation_ranks: BTreeMap<usize, usize> = defined_units
        .iter()
        .copied()
        .zip(alignment::rank_descending(&doc_defined))
        .collect();

    let classes_by_unit: BTreeMap<usize, AlignmentClass> = outcome
        .classified
        .iter()
        .map(|&(u, _, _, class)| (u, class))
        .collect();
    let class_pairs: Vec<(usize, AlignmentClass)> =
        classes_by_unit.iter().map(|(&u, &c)| (u, c)).collect();
    let crosstab = alignment::category_crosstab(&class_pairs, &registry);

    let ku_names: Vec<String> = defined_units
        .iter()
        .map(|&u| registry.units()[u].name.clone())
        .collect();
    let c_ranks: Vec<usize> = defined_units.iter().map(|u| concrete_ranks[u]).collect();
    let d_ranks: Vec<usize> = defined_units
        .iter()
        .map(|u| documentation_ranks[u])
        .collect();
    let classes: Vec<AlignmentClass> = defined_units.iter().map(|u| classes_by_unit[u]).collect();
    let slope = alignment::slope_data(&ku_names, &c_ranks, &d_ranks, &classes)?;

    write_artifact(
        &cfg.artifact(CLASSIFICATION_FILE),
        report::classification_table(&registry, &outcome, &concrete_ranks, &documentation_ranks)
            .as_bytes(),
    )?;
    write_artifact(
        &cfg.artifact(CROSSTAB_CLASS_FILE),
        report::crosstab_by_class_table(&crosstab).as_bytes(),
    )?;
    write_artifact(
        &cfg.artifact(CROSSTAB_CATEGORY_FILE),
        report::crosstab_by_category_table(&crosstab).as_bytes(),
    )?;
    write_artifact(&cfg.artifact(SLOPE_FILE), report::slope_table(&slope).as_bytes())?;
    write_artifact(
        &cfg.artifact(AWARENESS_RANKING_FILE),
        report::awareness_ranking_table(&registry, &metrics.concrete, &classes_by_unit).as_bytes(),
    )?;
    write_artifact(
        &cfg.artifact(CLASSIFICATION_JSON_FILE),
        serde_json::to_string(&ClassificationArtifact {
            classes: classes_by_unit,
            excluded: outcome.excluded,
        })
        .expect("classification serializes")
        .as_bytes(),
    )?;
    Ok(())
}

fn load_classification(cfg: &RunConfig) -> Result<ClassificationArtifact, PipelineError> {
    let path = cfg.artifact(CLASSIFICATION_JSON_FILE);
    let text = read_artifact(&path, Stage::Align)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::CorruptArtifact {
        path,
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// stats

fn skewness_row(
    rows: &mut Vec<(String, LabeledEstimate)>,
    name: &str,
    values: &[f64],
) {
    if let Ok(est) = stats::skewness_g1(values) {
        rows.push((name.to_string(), est));
    }
}

fn spearman_row(
    rows: &mut Vec<(String, LabeledEstimate)>,
    name: &str,
    x: &[f64],
    y: &[f64],
) {
    if let Ok(est) = stats::spearman(x, y) {
        rows.push((name.to_string(), est));
    }
}

fn run_stats(cfg: &RunConfig) -> Result<(), PipelineError> {
    let metrics = load_metrics(cfg)?;
    let classification = load_classification(cfg)?;

    let freq = |t: &MetricTable| -> Vec<f64> { t.frequency.iter().map(|&v| v as f64).collect() };
    let pop = |t: &MetricTable| -> Vec<f64> { t.popularity.iter().map(|&v| v as f64).collect() };
    let cofreq =
        |t: &MetricTable| -> Vec<f64> { t.pairs.iter().map(|p| p.co_frequency as f64).collect() };
    let affinity_defined = |t: &MetricTable| -> Vec<f64> {
        t.pairs.iter().filter_map(|p| p.affinity).collect()
    };

    let mut skew_rows = Vec::new();
    for (tag, table) in [
        ("concrete", &metrics.concrete),
        ("documentation", &metrics.documentation),
    ] {
        skewness_row(&mut skew_rows, &format!("{tag}/frequency"), &freq(table));
        skewness_row(&mut skew_rows, &format!("{tag}/popularity"), &pop(table));
        skewness_row(&mut skew_rows, &format!("{tag}/co-frequency"), &cofreq(table));
        skewness_row(
            &mut skew_rows,
            &format!("{tag}/affinity"),
            &affinity_defined(table),
        );
    }
    write_artifact(
        &cfg.artifact(SKEWNESS_FILE),
        report::labeled_estimates_table("distribution", &skew_rows).as_bytes(),
    )?;

    let mut corr_rows = Vec::new();
    spearman_row(
        &mut corr_rows,
        "frequency/concrete-vs-documentation",
        &freq(&metrics.concrete),
        &freq(&metrics.documentation),
    );
    spearman_row(
        &mut corr_rows,
        "popularity/concrete-vs-documentation",
        &pop(&metrics.concrete),
        &pop(&metrics.documentation),
    );
    spearman_row(
        &mut corr_rows,
        "frequency-vs-popularity/concrete",
        &freq(&metrics.concrete),
        &pop(&metrics.concrete),
    );
    spearman_row(
        &mut corr_rows,
        "frequency-vs-popularity/documentation",
        &freq(&metrics.documentation),
        &pop(&metrics.documentation),
    );
    spearman_row(
        &mut corr_rows,
        "co-frequency/concrete-vs-documentation",
        &cofreq(&metrics.concrete),
        &cofreq(&metrics.documentation),
    );
    {
        // affinity correlates over pairs defined in both models
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (a, b) in metrics
            .concrete
            .pairs
            .iter()
            .zip(&metrics.documentation.pairs)
        {
            if let (Some(x), Some(y)) = (a.affinity, b.affinity) {
                xs.push(x);
                ys.push(y);
            }
        }
        spearman_row(&mut corr_rows, "affinity/concrete-vs-documentation", &xs, &ys);
    }
    // awareness metric cross-correlations on the concrete model
    {
        let defined_pairs = |x: &[Option<f64>], y: &[Option<f64>]| -> (Vec<f64>, Vec<f64>) {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (a, b) in x.iter().zip(y) {
                if let (Some(a), Some(b)) = (a, b) {
                    xs.push(*a);
                    ys.push(*b);
                }
            }
            (xs, ys)
        };
        let c = &metrics.concrete;
        let (xs, ys) = defined_pairs(&c.attraction, &c.attention);
        spearman_row(&mut corr_rows, "attraction-vs-attention/concrete", &xs, &ys);
        let (xs, ys) = defined_pairs(&c.attraction, &c.agreement);
        spearman_row(&mut corr_rows, "attraction-vs-agreement/concrete", &xs, &ys);
        let (xs, ys) = defined_pairs(&c.attention, &c.agreement);
        spearman_row(&mut corr_rows, "attention-vs-agreement/concrete", &xs, &ys);
    }
    write_artifact(
        &cfg.artifact(CORRELATIONS_FILE),
        report::labeled_estimates_table("comparison", &corr_rows).as_bytes(),
    )?;

    // KUs-per-document: one-sided test that the concrete counts run larger,
    // with the effect size
    {
        let a: Vec<f64> = metrics
            .concrete
            .kus_per_doc
            .counts
            .iter()
            .map(|&c| c as f64)
            .collect();
        let b: Vec<f64> = metrics
            .documentation
            .kus_per_doc
            .counts
            .iter()
            .map(|&c| c as f64)
            .collect();
        let mut rows = Vec::new();
        if let Ok(mw) = stats::mann_whitney(&a, &b, stats::Alternative::AGreater) {
            rows.push(("mann-whitney/concrete-greater".to_string(), mw));
        }
        if let Ok(delta) = stats::cliffs_delta(&a, &b) {
            rows.push(("cliffs-delta".to_string(), delta));
        }
        write_artifact(
            &cfg.artifact(KUS_PER_DOC_TEST_FILE),
            report::labeled_estimates_table("test", &rows).as_bytes(),
        )?;
    }

    let class_pairs: Vec<(usize, AlignmentClass)> = classification
        .classes
        .iter()
        .map(|(&u, &c)| (u, c))
        .collect();
    let input = BatteryInput {
        attraction: &metrics.concrete.attraction,
        attention: &metrics.concrete.attention,
        agreement: &metrics.concrete.agreement,
        classes: &class_pairs,
    };
    let battery = stats::rq3_battery(&input, cfg.alpha);
    write_artifact(
        &cfg.artifact(BATTERY_FILE),
        report::battery_table(&battery).as_bytes(),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_parses_from_str() {
        assert_eq!("train".parse::<Stage>().unwrap(), Stage::Train);
        assert_eq!("all".parse::<Stage>().unwrap(), Stage::All);
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    fn config_validation_collects_all_issues() {
        let cfg = RunConfig {
            dump: Some(PathBuf::from("/nonexistent/posts.xml")),
            forum_url: Some("http://example".into()),
            forum_category: None,
            docs_root: None,
            registry: None,
            seed_tags: vec![],
            tags_include: vec![],
            tags_exclude: vec![],
            tet: 1.5,
            tst: 0.01,
            min_df: 0,
            stoplist: None,
            lemma_table: None,
            train: TrainSettings::default(),
            cutoffs: CutoffConfig::default(),
            ranking_metric: RankingMetric::Frequency,
            alpha: 2.0,
            out_dir: PathBuf::from("/tmp/out"),
        };
        let issues = cfg.validate();
        assert!(issues.len() >= 5, "expected many issues, got {issues:?}");
    }

    #[test]
    fn missing_prerequisite_names_the_stage_to_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            dump: None,
            forum_url: None,
            forum_category: None,
            docs_root: Some(dir.path().to_path_buf()),
            registry: None,
            seed_tags: vec![],
            tags_include: vec![],
            tags_exclude: vec![],
            tet: 0.5,
            tst: 0.01,
            min_df: 2,
            stoplist: None,
            lemma_table: None,
            train: TrainSettings::default(),
            cutoffs: CutoffConfig::default(),
            ranking_metric: RankingMetric::Frequency,
            alpha: 0.05,
            out_dir: dir.path().join("out"),
        };
        let err = run(Stage::Metrics, &cfg).unwrap_err();
        match err {
            PipelineError::MissingPrerequisite { run_first, .. } => {
                assert_eq!(run_first, Stage::Train);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn write_atomic_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
    }

    #[test]
    fn toml_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "out_dir = \"/tmp/out\"\n").unwrap();
        let cfg = RunConfig::from_path(&path).unwrap();
        assert_eq!(cfg.tet, 0.5);
        assert_eq!(cfg.min_df, 2);
        assert_eq!(cfg.train.anchor_strength, 10.0);
        assert_eq!(cfg.cutoffs.concrete_high, 50.0);
    }
}
