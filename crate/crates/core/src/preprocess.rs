//! Text preprocessing: raw HTML post/chapter text to token lists and binary
//! document-term vectors over a shared vocabulary.
//!
//! Cleaning applies, in order: code-snippet removal, HTML tag stripping,
//! punctuation/non-alphabetic removal, compound-anchor underscoring,
//! lemmatization against a bundled lookup table, and stop-word removal.
//! The stop list and lemma table ship in-repo and are hash-pinned so runs
//! are reproducible.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::html;
use crate::ingest::Post;
use crate::registry::underscore_form;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const BUNDLED_STOPWORDS_SHA256: &str =
    "019f104ba2ed07436d05f9cdd3383034ad66014edc27fc651f837e1a038b6451";
const BUNDLED_LEMMAS: &str = include_str!("../data/lemmas.tsv");
const BUNDLED_LEMMAS_SHA256: &str =
    "9c13524398d9f2f1f9cc525475809b96b32ffe1ecc1f8b36590cda16eecd345d";

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bundled {name} failed its hash pin (expected {expected}, got {actual})")]
    HashMismatch {
        name: &'static str,
        expected: String,
        actual: String,
    },
    #[error("malformed lemma table line {line}: expected `form<TAB>lemma`")]
    MalformedLemmaLine { line: usize },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("min_df must be at least 1")]
    InvalidMinDf,
}

fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fixed stop-word list. The bundled list is verified against its pin at
/// load time; user-supplied lists are taken as-is.
#[derive(Debug, Clone)]
pub struct StopList {
    words: HashSet<String>,
}

impl StopList {
    pub fn bundled() -> Result<Self, PreprocessError> {
        let actual = sha256_hex(BUNDLED_STOPWORDS);
        if actual != BUNDLED_STOPWORDS_SHA256 {
            return Err(PreprocessError::HashMismatch {
                name: "stop list",
                expected: BUNDLED_STOPWORDS_SHA256.to_string(),
                actual,
            });
        }
        Ok(Self::from_text(BUNDLED_STOPWORDS))
    }

    pub fn from_path(path: &Path) -> Result<Self, PreprocessError> {
        let text = std::fs::read_to_string(path).map_err(|source| PreprocessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_text(&text))
    }

    pub fn from_text(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        Self { words }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Deterministic word -> lemma lookup with identity fallback. Tokens absent
/// from the table (including underscored anchor tokens) pass through
/// unchanged.
#[derive(Debug, Clone)]
pub struct LemmaTable {
    map: HashMap<String, String>,
}

impl LemmaTable {
    pub fn bundled() -> Result<Self, PreprocessError> {
        let actual = sha256_hex(BUNDLED_LEMMAS);
        if actual != BUNDLED_LEMMAS_SHA256 {
            return Err(PreprocessError::HashMismatch {
                name: "lemma table",
                expected: BUNDLED_LEMMAS_SHA256.to_string(),
                actual,
            });
        }
        Self::from_text(BUNDLED_LEMMAS)
    }

    pub fn from_path(path: &Path) -> Result<Self, PreprocessError> {
        let text = std::fs::read_to_string(path).map_err(|source| PreprocessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, PreprocessError> {
        let mut map = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (form, lemma) = line
                .split_once('\t')
                .ok_or(PreprocessError::MalformedLemmaLine { line: idx + 1 })?;
            map.insert(form.trim().to_lowercase(), lemma.trim().to_lowercase());
        }
        Ok(Self { map })
    }

    pub fn lemma<'a>(&'a self, word: &'a str) -> &'a str {
        self.map.get(word).map(String::as_str).unwrap_or(word)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Matches compound anchor phrases (and their pluralized variants) against a
/// lowercase word stream, longest phrase first, and replaces each occurrence
/// with the phrase's underscored token.
#[derive(Debug, Clone)]
struct AnchorMatcher {
    // first word -> candidate (phrase words, replacement token), longest first
    by_first: HashMap<String, Vec<(Vec<String>, String)>>,
}

impl AnchorMatcher {
    fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut exact: HashSet<Vec<String>> = HashSet::new();
        let mut entries: Vec<(Vec<String>, String)> = Vec::new();
        let mut compounds: Vec<Vec<String>> = Vec::new();
        for phrase in phrases {
            let words: Vec<String> = phrase
                .as_ref()
                .split_whitespace()
                .map(|w| w.to_lowercase())
                .collect();
            if words.len() < 2 {
                continue; // single words need no replacement
            }
            if exact.insert(words.clone()) {
                let token = underscore_form(phrase.as_ref());
                compounds.push(words.clone());
                entries.push((words, token));
            }
        }
        // Pluralized variants of the last word map to the canonical token,
        // unless the variant is itself a registry phrase.
        for words in compounds {
            let mut variant = words.clone();
            if let Some(last) = variant.last_mut() {
                *last = naive_plural(last);
            }
            if variant != words && !exact.contains(&variant) {
                let token = underscore_form(&words.join(" "));
                exact.insert(variant.clone());
                entries.push((variant, token));
            }
        }
        let mut by_first: HashMap<String, Vec<(Vec<String>, String)>> = HashMap::new();
        for (words, token) in entries {
            by_first
                .entry(words[0].clone())
                .or_default()
                .push((words, token));
        }
        for candidates in by_first.values_mut() {
            candidates.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        }
        Self { by_first }
    }

    /// Replace phrase occurrences in `words`, consuming matched spans.
    fn replace(&self, words: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(words.len());
        let mut i = 0;
        while i < words.len() {
            let mut matched = false;
            if let Some(candidates) = self.by_first.get(&words[i]) {
                for (phrase, token) in candidates {
                    let end = i + phrase.len();
                    if end <= words.len() && words[i..end] == phrase[..] {
                        out.push(token.clone());
                        i = end;
                        matched = true;
                        break;
                    }
                }
            }
            if !matched {
                out.push(words[i].clone());
                i += 1;
            }
        }
        out
    }
}

fn naive_plural(word: &str) -> String {
    if word.ends_with('s')
        || word.ends_with('x')
        || word.ends_with('z')
        || word.ends_with("ch")
        || word.ends_with("sh")
    {
        format!("{word}es")
    } else if word.len() > 1 && word.ends_with('y') {
        let stem = &word[..word.len() - 1];
        let before = word.as_bytes()[word.len() - 2] as char;
        if "aeiou".contains(before) {
            format!("{word}s")
        } else {
            format!("{stem}ies")
        }
    } else {
        format!("{word}s")
    }
}

/// The full cleaning pipeline. Construct once per run and reuse; `clean` is
/// a pure function of its input.
#[derive(Debug, Clone)]
pub struct TextCleaner {
    stoplist: StopList,
    lemmas: LemmaTable,
    matcher: AnchorMatcher,
}

impl TextCleaner {
    pub fn new<I, S>(stoplist: StopList, lemmas: LemmaTable, anchor_phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            stoplist,
            lemmas,
            matcher: AnchorMatcher::new(anchor_phrases),
        }
    }

    /// Apply the six cleaning steps to raw HTML text and return the token
    /// list. Empty output is allowed.
    pub fn clean(&self, raw_html: &str) -> Vec<String> {
        // steps 1-2: drop code-element content, strip remaining tags
        let text = html::strip_tags_dropping_code(raw_html);
        // step 3: letters survive (lowercased), everything else is a break
        let mut scrubbed = String::with_capacity(text.len());
        for ch in text.chars() {
            if ch.is_alphabetic() {
                scrubbed.extend(ch.to_lowercase());
            } else {
                scrubbed.push(' ');
            }
        }
        let words: Vec<String> = scrubbed.split_whitespace().map(str::to_string).collect();
        // step 4: compound anchors to underscored tokens
        let replaced = self.matcher.replace(&words);
        // steps 5-6: lemmatize, then drop stop words
        replaced
            .into_iter()
            .map(|w| self.lemmas.lemma(&w).to_string())
            .filter(|w| !self.stoplist.contains(w))
            .collect()
    }
}

/// Title, question body, and answer bodies joined with single spaces, in
/// that order.
pub fn assemble_post_text(post: &Post) -> String {
    let mut parts = Vec::with_capacity(2 + post.answer_bodies.len());
    parts.push(post.title.as_str());
    parts.push(post.question_body.as_str());
    parts.extend(post.answer_bodies.iter().map(String::as_str));
    parts.join(" ")
}

/// One document after cleaning: a source-scoped id and its token list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

/// Word types ordered by descending document frequency (ties lexicographic),
/// with a reverse index.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    word_types: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(word_types: Vec<String>) -> Self {
        let index = word_types
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { word_types, index }
    }

    pub fn word_types(&self) -> &[String] {
        &self.word_types
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.word_types[idx]
    }

    pub fn len(&self) -> usize {
        self.word_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_types.is_empty()
    }

    /// Content hash used to check that a matrix and a model agree on the
    /// vocabulary.
    pub fn content_hash(&self) -> String {
        sha256_hex(&self.word_types.join("\n"))
    }
}

/// Word types appearing in at least `min_df` documents.
pub fn build_vocabulary(
    docs: &[TokenizedDocument],
    min_df: usize,
) -> Result<Vocabulary, PreprocessError> {
    if min_df < 1 {
        return Err(PreprocessError::InvalidMinDf);
    }
    if docs.is_empty() {
        return Err(PreprocessError::EmptyCorpus);
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let distinct: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for token in distinct {
            *df.entry(token).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = df.into_iter().filter(|&(_, n)| n >= min_df).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from_words(
        kept.into_iter().map(|(w, _)| w.to_string()).collect(),
    ))
}

/// Sparse binary document-term matrix: per-document sorted unique column
/// indices over a fixed vocabulary width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocTermMatrix {
    pub n_terms: usize,
    pub doc_ids: Vec<String>,
    pub rows: Vec<Vec<u32>>,
}

impl DocTermMatrix {
    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, doc: usize) -> &[u32] {
        &self.rows[doc]
    }

    /// Number of stored (present) cells.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Binary presence matrix over `vocab`; out-of-vocabulary tokens are dropped
/// silently, so vectorizing one corpus with another's vocabulary constrains
/// the word types to the shared set. All-zero rows are retained.
pub fn vectorize(docs: &[TokenizedDocument], vocab: &Vocabulary) -> DocTermMatrix {
    let mut doc_ids = Vec::with_capacity(docs.len());
    let mut rows = Vec::with_capacity(docs.len());
    for doc in docs {
        let mut cols: Vec<u32> = doc
            .tokens
            .iter()
            .filter_map(|t| vocab.index_of(t))
            .map(|i| i as u32)
            .collect();
        cols.sort_unstable();
        cols.dedup();
        doc_ids.push(doc.doc_id.clone());
        rows.push(cols);
    }
    DocTermMatrix {
        n_terms: vocab.len(),
        doc_ids,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Post, PostSource};
    use proptest::prelude::*;

    fn cleaner() -> TextCleaner {
        TextCleaner::new(
            StopList::bundled().unwrap(),
            LemmaTable::bundled().unwrap(),
            crate::registry::KuRegistry::bundled_rust().anchor_lexicon(),
        )
    }

    #[test]
    fn bundled_stoplist_passes_hash_pin() {
        let list = StopList::bundled().unwrap();
        assert_eq!(list.len(), 179);
        assert!(list.contains("the"));
        assert!(!list.contains("tuple"));
    }

    #[test]
    fn bundled_lemma_table_loads() {
        let table = LemmaTable::bundled().unwrap();
        assert_eq!(table.lemma("tuples"), "tuple");
        assert_eq!(table.lemma("unknownword"), "unknownword");
    }

    #[test]
    fn lemma_table_outputs_are_stable() {
        // idempotence of the whole pipeline needs every lemma to be a fixed
        // point of the table
        let table = LemmaTable::bundled().unwrap();
        for lemma in table.map.values() {
            assert_eq!(table.lemma(lemma), lemma, "lemma `{lemma}` is not stable");
        }
    }

    #[test]
    fn clean_applies_all_six_steps() {
        let tokens = cleaner().clean("<code>fn main(){}</code> How do primitive type tuples work?");
        assert_eq!(tokens, vec!["primitive_type", "tuple", "work"]);
    }

    #[test]
    fn clean_empty_input() {
        assert!(cleaner().clean("").is_empty());
    }

    #[test]
    fn clean_all_stop_words() {
        assert!(cleaner().clean("the and a").is_empty());
    }

    #[test]
    fn clean_underscores_pluralized_compound() {
        let tokens = cleaner().clean("working with primitive types");
        assert_eq!(tokens, vec!["working", "primitive_type"]);
    }

    #[test]
    fn clean_longest_phrase_wins() {
        // "dynamically sized type" must not be consumed by the shorter
        // overlap alternatives
        let tokens = cleaner().clean("a dynamically sized type here");
        assert!(tokens.contains(&"dynamically_sized_type".to_string()));
    }

    #[test]
    fn clean_recaptures_user_typed_underscores() {
        let tokens = cleaner().clean("use std_io for reading");
        assert!(tokens.contains(&"std_io".to_string()));
    }

    #[test]
    fn clean_is_idempotent_on_own_output() {
        let c = cleaner();
        for text in [
            "<code>x</code> How do primitive type tuples work?",
            "<p>Borrowing and the borrow checker with if let patterns</p>",
            "dynamically sized types and smart pointers everywhere",
        ] {
            let once = c.clean(text);
            let twice = c.clean(&once.join(" "));
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn clean_drops_digits_and_punctuation() {
        let tokens = cleaner().clean("error[E0308]: mismatched types; expected i32, found 42");
        for t in &tokens {
            assert!(t.chars().all(|c| c.is_alphabetic() || c == '_'), "{t}");
        }
    }

    #[test]
    fn assemble_post_text_orders_parts() {
        let post = Post {
            id: "1".into(),
            source: PostSource::StackExchange,
            title: "T".into(),
            question_body: "B".into(),
            answer_bodies: vec!["A1".into(), "A2".into()],
            n_answers: 2,
            has_accepted: false,
            accepted_date: None,
            tags: vec![],
            created: None,
        };
        assert_eq!(assemble_post_text(&post), "T B A1 A2");
    }

    #[test]
    fn assemble_post_text_without_answers() {
        let post = Post {
            id: "1".into(),
            source: PostSource::StackExchange,
            title: "T".into(),
            question_body: "B".into(),
            answer_bodies: vec![],
            n_answers: 0,
            has_accepted: false,
            accepted_date: None,
            tags: vec![],
            created: None,
        };
        assert_eq!(assemble_post_text(&post), "T B");
    }

    fn doc(id: &str, tokens: &[&str]) -> TokenizedDocument {
        TokenizedDocument {
            doc_id: id.into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn vocabulary_orders_by_df_then_lexicographic() {
        let docs = vec![doc("1", &["a", "b"]), doc("2", &["b"])];
        let vocab = build_vocabulary(&docs, 1).unwrap();
        assert_eq!(vocab.word_types(), &["b".to_string(), "a".to_string()]);
    }

    #[test]
    fn vocabulary_min_df_threshold() {
        let docs = vec![doc("1", &["a", "b"]), doc("2", &["b"])];
        let vocab = build_vocabulary(&docs, 2).unwrap();
        assert_eq!(vocab.word_types(), &["b".to_string()]);
    }

    #[test]
    fn vocabulary_empty_corpus_is_error() {
        assert!(matches!(
            build_vocabulary(&[], 1),
            Err(PreprocessError::EmptyCorpus)
        ));
    }

    #[test]
    fn vectorize_binarizes_and_drops_oov() {
        let vocab = Vocabulary::from_words(vec!["a".into(), "b".into(), "c".into()]);
        let m = vectorize(&[doc("1", &["a", "a", "b"]), doc("2", &["zzz"])], &vocab);
        assert_eq!(m.rows[0], vec![0, 1]);
        assert!(m.rows[1].is_empty()); // all-zero row retained
        assert_eq!(m.n_docs(), 2);
        assert_eq!(m.n_terms, 3);
    }

    proptest! {
        #[test]
        fn vocabulary_df_matches_brute_force(
            docs in proptest::collection::vec(
                proptest::collection::vec("[a-e]", 0..12),
                1..40,
            ),
            min_df in 1usize..4,
        ) {
            let docs: Vec<TokenizedDocument> = docs
                .into_iter()
                .enumerate()
                .map(|(i, tokens)| TokenizedDocument { doc_id: i.to_string(), tokens })
                .collect();
            let vocab = build_vocabulary(&docs, min_df).unwrap();
            let matrix = vectorize(&docs, &vocab);
            // brute-force document frequency per kept word type
            for (col, word) in vocab.word_types().iter().enumerate() {
                let df_brute = docs
                    .iter()
                    .filter(|d| d.tokens.iter().any(|t| t == word))
                    .count();
                let df_matrix = matrix
                    .rows
                    .iter()
                    .filter(|r| r.binary_search(&(col as u32)).is_ok())
                    .count();
                prop_assert!(df_brute >= min_df);
                prop_assert_eq!(df_brute, df_matrix);
            }
        }

        #[test]
        fn clean_output_tokens_are_well_formed(text in ".{0,200}") {
            let c = cleaner();
            for token in c.clean(&text) {
                prop_assert!(!token.is_empty());
                prop_assert!(token.chars().all(|ch| ch.is_alphabetic() || ch == '_'));
                prop_assert!(!c.stoplist.contains(&token));
            }
        }
    }
}
