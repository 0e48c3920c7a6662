//! The ten knowledge-unit metrics over a model's document-topic
//! probabilities: prevalence (occurrence, co-occurrence, dominance,
//! frequency, co-frequency, popularity, affinity) and awareness
//! (attraction, attention, agreement), plus the per-document occurring-KU
//! distribution.
//!
//! Undefined values are represented as absent (`None`), never as 0 or NaN,
//! and stay out of downstream ranks.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("co-frequency and affinity need two distinct topics (got {0} twice)")]
    IdenticalTopics(usize),
    #[error("probability table is ragged: row {row} has {got} topics, expected {expected}")]
    RaggedTable {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("awareness metadata covers {meta} documents but the table has {docs}")]
    MetadataMismatch { meta: usize, docs: usize },
}

/// Which corpus a metric table was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelTag {
    Concrete,
    Documentation,
}

impl ModelTag {
    pub fn label(&self) -> &'static str {
        match self {
            ModelTag::Concrete => "concrete",
            ModelTag::Documentation => "documentation",
        }
    }
}

/// Whether awareness metrics were computed per source site or merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AwarenessMode {
    Merged,
    PerSite,
}

/// Per-document topic probabilities, rows aligned with `doc_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicProbabilities {
    pub n_topics: usize,
    pub doc_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TopicProbabilities {
    pub fn new(
        n_topics: usize,
        doc_ids: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, MetricsError> {
        for (row, probs) in rows.iter().enumerate() {
            if probs.len() != n_topics {
                return Err(MetricsError::RaggedTable {
                    row,
                    got: probs.len(),
                    expected: n_topics,
                });
            }
        }
        Ok(Self {
            n_topics,
            doc_ids,
            rows,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }
}

/// Awareness metadata for one post, aligned with the probability table by
/// position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AwarenessRecord {
    pub doc_id: String,
    pub n_answers: u32,
    pub has_accepted: bool,
}

/// A topic occurs in a document when its probability strictly exceeds one
/// half.
pub fn occurrence(p: f64) -> bool {
    p > 0.5
}

/// Two topics co-occur when both occur.
pub fn co_occurrence(p_a: f64, p_b: f64) -> bool {
    occurrence(p_a) && occurrence(p_b)
}

/// The dominant topic is the argmax; ties fall to the lowest topic index.
/// Dominance does not require occurrence.
pub fn dominant_topic(probs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = j;
        }
    }
    best
}

/// Number of documents in which `topic` occurs.
pub fn frequency(topic: usize, table: &TopicProbabilities) -> u64 {
    table
        .rows
        .iter()
        .filter(|row| occurrence(row[topic]))
        .count() as u64
}

/// Number of documents in which `topic` is dominant.
pub fn popularity(topic: usize, table: &TopicProbabilities) -> u64 {
    table
        .rows
        .iter()
        .filter(|row| dominant_topic(row) == topic)
        .count() as u64
}

/// Number of documents in which both topics occur.
pub fn co_frequency(
    topic_a: usize,
    topic_b: usize,
    table: &TopicProbabilities,
) -> Result<u64, MetricsError> {
    if topic_a == topic_b {
        return Err(MetricsError::IdenticalTopics(topic_a));
    }
    Ok(table
        .rows
        .iter()
        .filter(|row| co_occurrence(row[topic_a], row[topic_b]))
        .count() as u64)
}

/// Co-frequency normalized by the mean frequency of the pair. Absent when
/// both frequencies are zero.
pub fn affinity(
    topic_a: usize,
    topic_b: usize,
    table: &TopicProbabilities,
) -> Result<Option<f64>, MetricsError> {
    let co = co_frequency(topic_a, topic_b, table)? as f64;
    let mean = (frequency(topic_a, table) + frequency(topic_b, table)) as f64 / 2.0;
    if mean == 0.0 {
        return Ok(None);
    }
    Ok(Some(co / mean))
}

/// Response rate among posts where `topic` is dominant; absent when the
/// topic is never dominant.
pub fn attraction(
    topic: usize,
    table: &TopicProbabilities,
    posts: &[AwarenessRecord],
) -> Option<f64> {
    let mut dominant = 0u64;
    let mut answered = 0u64;
    for (row, meta) in table.rows.iter().zip(posts) {
        if dominant_topic(row) == topic {
            dominant += 1;
            if meta.n_answers > 0 {
                answered += 1;
            }
        }
    }
    if dominant == 0 {
        None
    } else {
        Some(answered as f64 / dominant as f64)
    }
}

/// Probability-weighted mean answer count over the posts where `topic`
/// occurs; absent when it occurs nowhere.
pub fn attention(
    topic: usize,
    table: &TopicProbabilities,
    posts: &[AwarenessRecord],
) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (row, meta) in table.rows.iter().zip(posts) {
        let p = row[topic];
        if occurrence(p) {
            num += p * meta.n_answers as f64;
            den += p;
        }
    }
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// Accepted-answer rate among the posts where `topic` occurs; absent when
/// it occurs nowhere.
pub fn agreement(
    topic: usize,
    table: &TopicProbabilities,
    posts: &[AwarenessRecord],
) -> Option<f64> {
    let mut occurring = 0u64;
    let mut accepted = 0u64;
    for (row, meta) in table.rows.iter().zip(posts) {
        if occurrence(row[topic]) {
            occurring += 1;
            if meta.has_accepted {
                accepted += 1;
            }
        }
    }
    if occurring == 0 {
        None
    } else {
        Some(accepted as f64 / occurring as f64)
    }
}

/// Per-document count of occurring topics, plus the quartile summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KusPerDocument {
    pub counts: Vec<u64>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Lower/upper quartiles by the median-of-halves rule; empty input yields
/// zeros.
fn quartiles(sorted: &[u64]) -> (f64, f64, f64) {
    fn median(slice: &[u64]) -> f64 {
        let n = slice.len();
        if n == 0 {
            return 0.0;
        }
        if n % 2 == 1 {
            slice[n / 2] as f64
        } else {
            (slice[n / 2 - 1] + slice[n / 2]) as f64 / 2.0
        }
    }
    let n = sorted.len();
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let med = median(sorted);
    let (lower, upper) = if n % 2 == 0 {
        (&sorted[..n / 2], &sorted[n / 2..])
    } else {
        (&sorted[..n / 2], &sorted[n / 2 + 1..])
    };
    (median(lower), med, median(upper))
}

pub fn kus_per_document(table: &TopicProbabilities) -> KusPerDocument {
    let counts: Vec<u64> = table
        .rows
        .iter()
        .map(|row| row.iter().filter(|&&p| occurrence(p)).count() as u64)
        .collect();
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    let (q1, median, q3) = quartiles(&sorted);
    KusPerDocument {
        counts,
        median,
        q1,
        q3,
    }
}

/// All per-KU and per-pair metric values for one model in one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub model_tag: ModelTag,
    pub awareness_mode: Option<AwarenessMode>,
    pub n_docs: u64,
    pub frequency: Vec<u64>,
    pub popularity: Vec<u64>,
    /// Upper-triangle pairs `(a, b, co_frequency, affinity)` with `a < b`.
    pub pairs: Vec<PairMetrics>,
    pub attraction: Vec<Option<f64>>,
    pub attention: Vec<Option<f64>>,
    pub agreement: Vec<Option<f64>>,
    pub kus_per_doc: KusPerDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub topic_a: usize,
    pub topic_b: usize,
    pub co_frequency: u64,
    pub affinity: Option<f64>,
}

/// Compute the full metric table. Awareness metadata must be present for
/// the concrete model and absent for the documentation model; the awareness
/// columns exist only when metadata is given.
pub fn compute_metric_table(
    table: &TopicProbabilities,
    posts: Option<(&[AwarenessRecord], AwarenessMode)>,
    model_tag: ModelTag,
) -> Result<MetricTable, MetricsError> {
    if let Some((records, _)) = posts {
        if records.len() != table.n_docs() {
            return Err(MetricsError::MetadataMismatch {
                meta: records.len(),
                docs: table.n_docs(),
            });
        }
    }
    let m = table.n_topics;
    let frequency_col: Vec<u64> = (0..m).map(|j| frequency(j, table)).collect();
    let popularity_col: Vec<u64> = (0..m).map(|j| popularity(j, table)).collect();
    let mut pairs = Vec::with_capacity(m.saturating_sub(1) * m / 2);
    for a in 0..m {
        for b in (a + 1)..m {
            pairs.push(PairMetrics {
                topic_a: a,
                topic_b: b,
                co_frequency: co_frequency(a, b, table)?,
                affinity: affinity(a, b, table)?,
            });
        }
    }
    let (attraction_col, attention_col, agreement_col) = match posts {
        Some((records, _)) => (
            (0..m).map(|j| attraction(j, table, records)).collect(),
            (0..m).map(|j| attention(j, table, records)).collect(),
            (0..m).map(|j| agreement(j, table, records)).collect(),
        ),
        None => (vec![None; m], vec![None; m], vec![None; m]),
    };
    Ok(MetricTable {
        model_tag,
        awareness_mode: posts.map(|(_, mode)| mode),
        n_docs: table.n_docs() as u64,
        frequency: frequency_col,
        popularity: popularity_col,
        pairs,
        attraction: attraction_col,
        attention: attention_col,
        agreement: agreement_col,
        kus_per_doc: kus_per_document(table),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn table(rows: Vec<Vec<f64>>) -> TopicProbabilities {
        let n_topics = rows[0].len();
        let doc_ids = (0..rows.len()).map(|i| format!("d{i}")).collect();
        TopicProbabilities::new(n_topics, doc_ids, rows).unwrap()
    }

    fn meta(answers: &[u32], accepted: &[bool]) -> Vec<AwarenessRecord> {
        answers
            .iter()
            .zip(accepted)
            .enumerate()
            .map(|(i, (&n, &acc))| AwarenessRecord {
                doc_id: format!("d{i}"),
                n_answers: n,
                has_accepted: acc,
            })
            .collect()
    }

    #[test]
    fn occurrence_is_strict() {
        assert!(occurrence(0.51));
        assert!(!occurrence(0.5));
        assert!(!occurrence(0.0));
    }

    #[test]
    fn dominance_tie_goes_to_lowest_index() {
        assert_eq!(dominant_topic(&[0.2, 0.9, 0.9]), 1);
        assert_eq!(dominant_topic(&[0.0, 0.0, 0.1]), 2);
        assert_eq!(dominant_topic(&[0.3]), 0);
    }

    #[test]
    fn frequency_counts_occurrences() {
        let t = table(vec![vec![0.6], vec![0.4], vec![0.9]]);
        assert_eq!(frequency(0, &t), 2);
    }

    #[test]
    fn popularity_partitions_documents() {
        let t = table(vec![
            vec![0.6, 0.3, 0.9],
            vec![0.2, 0.2, 0.1],
            vec![0.5, 0.5, 0.1],
        ]);
        let total: u64 = (0..3).map(|j| popularity(j, &t)).sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn affinity_formula() {
        // 20 docs: topics 0 and 1 each occur in 10, together in 5
        let mut rows = Vec::new();
        for i in 0..20 {
            let a = i < 10;
            let b = (5..15).contains(&i);
            rows.push(vec![if a { 0.9 } else { 0.1 }, if b { 0.9 } else { 0.1 }]);
        }
        let t = table(rows);
        assert_eq!(frequency(0, &t), 10);
        assert_eq!(frequency(1, &t), 10);
        assert_eq!(co_frequency(0, 1, &t).unwrap(), 5);
        assert_abs_diff_eq!(affinity(0, 1, &t).unwrap().unwrap(), 0.5);
    }

    #[test]
    fn affinity_never_cooccurring_is_zero() {
        let t = table(vec![vec![0.9, 0.1], vec![0.1, 0.9]]);
        assert_abs_diff_eq!(affinity(0, 1, &t).unwrap().unwrap(), 0.0);
    }

    #[test]
    fn affinity_undefined_when_both_frequencies_zero() {
        let t = table(vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        assert_eq!(affinity(0, 1, &t).unwrap(), None);
    }

    #[test]
    fn identical_topics_are_an_error() {
        let t = table(vec![vec![0.9, 0.1]]);
        assert!(co_frequency(1, 1, &t).is_err());
    }

    #[test]
    fn attraction_response_rate() {
        // topic 0 dominant in 4 posts, 3 answered
        let t = table(vec![
            vec![0.9, 0.1],
            vec![0.8, 0.2],
            vec![0.7, 0.1],
            vec![0.6, 0.0],
            vec![0.1, 0.9],
        ]);
        let posts = meta(&[1, 2, 3, 0, 0], &[false; 5]);
        assert_abs_diff_eq!(attraction(0, &t, &posts).unwrap(), 0.75);
    }

    #[test]
    fn attraction_undefined_for_never_dominant_topic() {
        let t = table(vec![vec![0.9, 0.1], vec![0.8, 0.2]]);
        let posts = meta(&[1, 1], &[false, false]);
        assert_eq!(attraction(1, &t, &posts), None);
    }

    #[test]
    fn attention_weighted_average() {
        let t = table(vec![vec![0.6], vec![0.8], vec![0.2]]);
        let posts = meta(&[1, 3, 50], &[false, false, false]);
        let expected = (0.6 * 1.0 + 0.8 * 3.0) / (0.6 + 0.8);
        assert_abs_diff_eq!(attention(0, &t, &posts).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(attention(0, &t, &posts).unwrap(), 2.142857142857143, epsilon = 1e-12);
    }

    #[test]
    fn attention_zero_when_occurring_posts_unanswered() {
        let t = table(vec![vec![0.7], vec![0.9]]);
        let posts = meta(&[0, 0], &[false, false]);
        assert_abs_diff_eq!(attention(0, &t, &posts).unwrap(), 0.0);
    }

    #[test]
    fn agreement_rate() {
        let mut rows = vec![vec![0.9]; 10];
        rows.push(vec![0.1]);
        let t = table(rows);
        let mut accepted = vec![false; 11];
        accepted[0] = true;
        accepted[1] = true;
        accepted[2] = true;
        accepted[3] = true;
        let posts = meta(&[1; 11], &accepted);
        assert_abs_diff_eq!(agreement(0, &t, &posts).unwrap(), 0.4);
    }

    #[test]
    fn agreement_undefined_when_topic_never_occurs() {
        let t = table(vec![vec![0.2], vec![0.3]]);
        let posts = meta(&[1, 1], &[true, true]);
        assert_eq!(agreement(0, &t, &posts), None);
    }

    #[test]
    fn kus_per_document_counts() {
        let t = table(vec![vec![0.6, 0.7, 0.2], vec![0.0, 0.0, 0.0]]);
        let dist = kus_per_document(&t);
        assert_eq!(dist.counts, vec![2, 0]);
        assert_abs_diff_eq!(dist.median, 1.0);
    }

    #[test]
    fn metric_table_shape() {
        let t = table(vec![vec![0.9, 0.2, 0.6], vec![0.1, 0.8, 0.55]]);
        let posts = meta(&[2, 0], &[true, false]);
        let table = compute_metric_table(
            &t,
            Some((&posts, AwarenessMode::Merged)),
            ModelTag::Concrete,
        )
        .unwrap();
        assert_eq!(table.frequency.len(), 3);
        assert_eq!(table.pairs.len(), 3);
        assert_eq!(table.n_docs, 2);
        assert!(table.attraction.iter().any(Option::is_some));
        let doc_table =
            compute_metric_table(&t, None, ModelTag::Documentation).unwrap();
        assert!(doc_table.attraction.iter().all(|v| v.is_none()));
    }

    #[test]
    fn metadata_length_mismatch_is_an_error() {
        let t = table(vec![vec![0.9], vec![0.1]]);
        let posts = meta(&[1], &[false]);
        assert!(compute_metric_table(
            &t,
            Some((&posts, AwarenessMode::Merged)),
            ModelTag::Concrete
        )
        .is_err());
    }
}
