//! Anchored correlation-explanation topic model over binary document-term
//! data.
//!
//! Training maximizes the total correlation explained by `m` binary latent
//! topics. Each sweep re-estimates the topic marginals and the per-topic
//! word conditionals from the current document-topic probabilities, updates
//! word-topic connection weights from mutual information (anchored pairs
//! are pinned at the anchor strength), and re-derives `p(y|x)` for every
//! document. The per-topic total correlation is measured as the mean log
//! normalizer of the latent update; training stops when the relative change
//! of the total falls below the configured tolerance.
//!
//! Everything is deterministic given the seed: initialization uses a
//! counter-based RNG and all parallel reductions run in fixed order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::preprocess::{DocTermMatrix, Vocabulary};

/// Floor/ceiling for probabilities before taking logs.
const PROB_EPS: f64 = 1e-10;
/// Pseudo-count mass pulling word conditionals toward the empirical rate.
const THETA_SMOOTHING: f64 = 1.0;
/// Softmax temperature for the word-topic competition.
const ALPHA_TEMPERATURE: f64 = 10.0;
/// Memory term when updating connection weights.
const ALPHA_DAMPING: f64 = 0.5;
/// Warmup sweeps during which the latent posterior is tempered so topics
/// cannot harden onto a single word before the structure matures.
const WARMUP_SWEEPS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum CorexError {
    #[error("cannot train on an empty matrix ({n_docs} docs x {n_terms} terms)")]
    EmptyMatrix { n_docs: usize, n_terms: usize },
    #[error("anchor token `{token}` for topic {topic} is not in the vocabulary")]
    UnknownAnchor { token: String, topic: usize },
    #[error("anchor map addresses topic {topic} but the model has only {n_topics} topics")]
    AnchorTopicOutOfRange { topic: usize, n_topics: usize },
    #[error("matrix has {matrix_terms} columns but the model vocabulary has {model_terms}")]
    ColumnMismatch {
        matrix_terms: usize,
        model_terms: usize,
    },
    #[error("topic index {topic} out of range (model has {n_topics} topics)")]
    TopicOutOfRange { topic: usize, n_topics: usize },
    #[error("failed to read model from {path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error("failed to write model to {path}: {message}")]
    Store { path: PathBuf, message: String },
}

/// Training knobs. The defaults mirror the reference setup: anchor strength
/// 10, at most 200 sweeps, relative-TC tolerance 1e-5, seed 42.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_topics: usize,
    pub anchor_strength: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(n_topics: usize) -> Self {
        Self {
            n_topics,
            anchor_strength: 10.0,
            max_iter: 200,
            tol: 1e-5,
            seed: 42,
        }
    }
}

/// A trained anchored topic model. Immutable; safe to share across threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicModel {
    pub n_topics: usize,
    pub anchor_strength: f64,
    pub seed: u64,
    pub iterations_run: usize,
    pub converged: bool,
    word_types: Vec<String>,
    vocab_hash: String,
    anchor_map: BTreeMap<usize, BTreeSet<String>>,
    /// Connection weights, `n_topics x n_terms`.
    alpha: Vec<Vec<f64>>,
    /// Word-topic mutual information, `n_topics x n_terms` (nats).
    mi: Vec<Vec<f64>>,
    /// `log p(y_j = k)` per topic, indexed `[topic][k]`.
    log_py: Vec<[f64; 2]>,
    /// `log p(x_i = v | y_j = k)`, indexed `[topic][word][v][k]`.
    theta: Vec<Vec<[[f64; 2]; 2]>>,
    doc_ids: Vec<String>,
    /// `p(y_j = 1 | x)` per training document, `n_docs x n_topics`.
    doc_topic_prob: Vec<Vec<f64>>,
    /// Per-topic total-correlation contribution (nats), topic order.
    topic_tc: Vec<f64>,
    pub total_tc: f64,
    /// Total TC after each training sweep.
    tc_history: Vec<f64>,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Precomputed per-sweep quantities for the latent update: for each topic a
/// per-label baseline (the all-words-absent score) and per (word, label) the
/// score shift a present word applies.
struct LatentParams {
    n_topics: usize,
    base: Vec<[f64; 2]>,
    /// `[topic][word][k]`
    shift: Vec<Vec<[f64; 2]>>,
}

impl LatentParams {
    fn build(
        log_py: &[[f64; 2]],
        theta: &[Vec<[[f64; 2]; 2]>],
        alpha: &[Vec<f64>],
    ) -> Self {
        let n_topics = log_py.len();
        let n_terms = alpha.first().map(Vec::len).unwrap_or(0);
        let mut base = vec![[0.0; 2]; n_topics];
        let mut shift = vec![vec![[0.0; 2]; n_terms]; n_topics];
        for j in 0..n_topics {
            let py1 = log_py[j][1].exp();
            let py0 = log_py[j][0].exp();
            base[j] = [log_py[j][0], log_py[j][1]];
            for i in 0..n_terms {
                let th = &theta[j][i];
                // model-implied marginal of word i under topic j's labels
                let p1 = clamp_prob(py1 * th[1][1].exp() + py0 * th[1][0].exp());
                let lp1 = p1.ln();
                let lp0 = (1.0 - p1).ln();
                let a = alpha[j][i];
                for k in 0..2 {
                    let absent = a * (th[0][k] - lp0);
                    base[j][k] += absent;
                    shift[j][i][k] = a * (th[1][k] - lp1) - absent;
                }
            }
        }
        Self {
            n_topics,
            base,
            shift,
        }
    }

    /// `p(y=1|x)` and `log Z` for one document row of present-word indices.
    /// `temperature` tempers the posterior (deterministic-annealing warmup);
    /// the log normalizer is always the exact, untempered one.
    fn score_row(&self, row: &[u32], temperature: f64) -> (Vec<f64>, Vec<f64>) {
        let mut q = Vec::with_capacity(self.n_topics);
        let mut log_z = Vec::with_capacity(self.n_topics);
        for j in 0..self.n_topics {
            let mut s = self.base[j];
            for &i in row {
                let shift = self.shift[j][i as usize];
                s[0] += shift[0];
                s[1] += shift[1];
            }
            let z = log_sum_exp2(s[0], s[1]);
            if temperature >= 1.0 {
                q.push((s[1] - z).exp());
            } else {
                let d = temperature * (s[1] - s[0]);
                let p = if d >= 0.0 {
                    1.0 / (1.0 + (-d).exp())
                } else {
                    let e = d.exp();
                    e / (1.0 + e)
                };
                q.push(p);
            }
            log_z.push(z);
        }
        (q, log_z)
    }
}

/// Mutable training state, snapshotted into a [`TopicModel`] at the end.
struct Trainer<'a> {
    matrix: &'a DocTermMatrix,
    /// word -> documents containing it
    docs_with_word: Vec<Vec<u32>>,
    /// empirical word rates
    word_rate: Vec<f64>,
    n_topics: usize,
    anchor_cols: Vec<Vec<usize>>,
    anchor_strength: f64,
    alpha: Vec<Vec<f64>>,
    mi: Vec<Vec<f64>>,
    log_py: Vec<[f64; 2]>,
    theta: Vec<Vec<[[f64; 2]; 2]>>,
    q: Vec<Vec<f64>>,
}

impl<'a> Trainer<'a> {
    fn new(
        matrix: &'a DocTermMatrix,
        anchor_cols: Vec<Vec<usize>>,
        cfg: &TrainConfig,
    ) -> Self {
        let n_docs = matrix.n_docs();
        let n_terms = matrix.n_terms;
        let mut docs_with_word = vec![Vec::new(); n_terms];
        for (l, row) in matrix.rows.iter().enumerate() {
            for &i in row {
                docs_with_word[i as usize].push(l as u32);
            }
        }
        let word_rate: Vec<f64> = docs_with_word
            .iter()
            .map(|docs| clamp_prob(docs.len() as f64 / n_docs as f64))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        // uniform-random connection weights, anchored pairs pre-boosted
        let mut alpha = vec![vec![0.0; n_terms]; cfg.n_topics];
        for row in alpha.iter_mut() {
            for cell in row.iter_mut() {
                *cell = rng.gen::<f64>();
            }
        }
        for (j, cols) in anchor_cols.iter().enumerate() {
            for &i in cols {
                alpha[j][i] = cfg.anchor_strength;
            }
        }
        // seed responsibilities near one half with a whisper of noise: the
        // noise only breaks symmetry (direction, not magnitude), so the
        // initial state carries no spurious correlation, and the anchored
        // connection weights steer each topic toward its anchors from the
        // first latent update; label orientation is fixed after training
        let mut q = vec![vec![0.0; cfg.n_topics]; n_docs];
        for row in q.iter_mut() {
            for cell in row.iter_mut() {
                *cell = 0.5 + (rng.gen::<f64>() - 0.5) * 0.004;
            }
        }

        Self {
            matrix,
            docs_with_word,
            word_rate,
            n_topics: cfg.n_topics,
            anchor_cols,
            anchor_strength: cfg.anchor_strength,
            alpha,
            mi: vec![vec![0.0; n_terms]; cfg.n_topics],
            log_py: vec![[0.0; 2]; cfg.n_topics],
            theta: vec![vec![[[0.0; 2]; 2]; n_terms]; cfg.n_topics],
            q,
        }
    }

    /// Topic marginals from the current responsibilities.
    fn update_py(&mut self) {
        let n = self.matrix.n_docs() as f64;
        for j in 0..self.n_topics {
            let mean = self.q.iter().map(|row| row[j]).sum::<f64>() / n;
            let p1 = clamp_prob(mean);
            self.log_py[j] = [(1.0 - p1).ln(), p1.ln()];
        }
    }

    /// Word conditionals from responsibilities and data, smoothed toward the
    /// empirical word rate. Parallel over words; each word reduces its own
    /// document list in fixed order.
    fn update_theta(&mut self) {
        let n = self.matrix.n_docs() as f64;
        for j in 0..self.n_topics {
            let qj: Vec<f64> = self.q.iter().map(|row| row[j]).collect();
            let total1: f64 = qj.iter().sum();
            let total0 = n - total1;
            let word_rate = &self.word_rate;
            let docs_with_word = &self.docs_with_word;
            // cell[v][k]: log p(x_i = v | y_j = k)
            let cells: Vec<[[f64; 2]; 2]> = (0..self.matrix.n_terms)
                .into_par_iter()
                .map(|i| {
                    let mut present1 = 0.0;
                    for &l in &docs_with_word[i] {
                        present1 += qj[l as usize];
                    }
                    let present0 = docs_with_word[i].len() as f64 - present1;
                    let rate = word_rate[i];
                    let p1g1 =
                        clamp_prob((present1 + THETA_SMOOTHING * rate) / (total1 + THETA_SMOOTHING));
                    let p1g0 =
                        clamp_prob((present0 + THETA_SMOOTHING * rate) / (total0 + THETA_SMOOTHING));
                    [
                        [(1.0 - p1g0).ln(), (1.0 - p1g1).ln()],
                        [p1g0.ln(), p1g1.ln()],
                    ]
                })
                .collect();
            for (i, cell) in cells.into_iter().enumerate() {
                self.theta[j][i] = cell;
            }
        }
    }

    /// Mutual information between each word and each topic label under the
    /// fitted marginals.
    fn update_mi(&mut self) {
        for j in 0..self.n_topics {
            let py = [self.log_py[j][0].exp(), self.log_py[j][1].exp()];
            for i in 0..self.matrix.n_terms {
                let th = &self.theta[j][i];
                let mut marginal = [0.0; 2];
                for v in 0..2 {
                    for k in 0..2 {
                        marginal[v] += py[k] * th[v][k].exp();
                    }
                    marginal[v] = clamp_prob(marginal[v]);
                }
                let mut info = 0.0;
                for v in 0..2 {
                    for k in 0..2 {
                        let joint = py[k] * th[v][k].exp();
                        if joint > 0.0 {
                            info += joint * (th[v][k] - marginal[v].ln());
                        }
                    }
                }
                self.mi[j][i] = info.max(0.0);
            }
        }
    }

    /// Proposed connection weights: words compete across topics through a
    /// softmax on mutual information; anchored pairs stay pinned at the
    /// anchor strength.
    fn propose_alpha(&self) -> Vec<Vec<f64>> {
        let mut proposal = self.alpha.clone();
        for i in 0..self.matrix.n_terms {
            let best = (0..self.n_topics)
                .map(|j| self.mi[j][i])
                .fold(f64::NEG_INFINITY, f64::max);
            for j in 0..self.n_topics {
                let target = (ALPHA_TEMPERATURE * (self.mi[j][i] - best)).exp();
                proposal[j][i] =
                    ALPHA_DAMPING * self.alpha[j][i].min(1.0) + (1.0 - ALPHA_DAMPING) * target;
            }
        }
        for (j, cols) in self.anchor_cols.iter().enumerate() {
            for &i in cols {
                proposal[j][i] = self.anchor_strength;
            }
        }
        proposal
    }

    /// `p(y|x)` for all documents under the given weights, plus the
    /// per-topic mean log normalizer (the TC estimate). Parallel over
    /// documents, merged in order.
    fn latent_with(&self, alpha: &[Vec<f64>], temperature: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let params = LatentParams::build(&self.log_py, &self.theta, alpha);
        let scored: Vec<(Vec<f64>, Vec<f64>)> = self
            .matrix
            .rows
            .par_iter()
            .map(|row| params.score_row(row, temperature))
            .collect();
        let n = self.matrix.n_docs() as f64;
        let mut tc = vec![0.0; self.n_topics];
        let mut q = Vec::with_capacity(scored.len());
        for (q_row, logz_row) in scored {
            for j in 0..self.n_topics {
                tc[j] += logz_row[j];
            }
            q.push(q_row);
        }
        for t in tc.iter_mut() {
            *t /= n;
        }
        (q, tc)
    }

    /// Run one latent update, taking the proposed structure step only when
    /// it does not lower the objective; otherwise keep the previous weights
    /// for this sweep. Keeps the measured TC non-decreasing while the
    /// proposals converge.
    fn update_latent(
        &mut self,
        proposal: Option<Vec<Vec<f64>>>,
        prev_total: Option<f64>,
        temperature: f64,
    ) -> Vec<f64> {
        if let Some(proposed) = proposal {
            let (q_new, tc_new) = self.latent_with(&proposed, temperature);
            let total_new: f64 = tc_new.iter().sum();
            let accept = match prev_total {
                Some(prev) => total_new >= prev - 1e-9,
                None => true,
            };
            if accept {
                self.alpha = proposed;
                self.q = q_new;
                return tc_new;
            }
            let (q_old, tc_old) = self.latent_with(&self.alpha, temperature);
            let total_old: f64 = tc_old.iter().sum();
            if total_new > total_old {
                self.alpha = proposed;
                self.q = q_new;
                tc_new
            } else {
                self.q = q_old;
                tc_old
            }
        } else {
            let (q, tc) = self.latent_with(&self.alpha, temperature);
            self.q = q;
            tc
        }
    }

    /// Orient each topic so that its anchor words (or, unanchored, its
    /// strongest word) are positively associated with the label y=1.
    fn fix_orientation(&mut self) {
        for j in 0..self.n_topics {
            let witness_cols: Vec<usize> = if self.anchor_cols[j].is_empty() {
                // strongest word by MI, lowest index on ties
                let mut best = 0;
                for i in 1..self.matrix.n_terms {
                    if self.mi[j][i] > self.mi[j][best] {
                        best = i;
                    }
                }
                vec![best]
            } else {
                self.anchor_cols[j].clone()
            };
            let score: f64 = witness_cols
                .iter()
                .map(|&i| self.theta[j][i][1][1] - self.theta[j][i][1][0])
                .sum();
            if score < 0.0 {
                self.log_py[j].swap(0, 1);
                for i in 0..self.matrix.n_terms {
                    self.theta[j][i][0].swap(0, 1);
                    self.theta[j][i][1].swap(0, 1);
                }
            }
        }
    }
}

fn resolve_anchor_columns(
    anchors: &BTreeMap<usize, BTreeSet<String>>,
    vocab: &Vocabulary,
    n_topics: usize,
) -> Result<Vec<Vec<usize>>, CorexError> {
    let mut cols = vec![Vec::new(); n_topics];
    for (&topic, tokens) in anchors {
        if topic >= n_topics {
            return Err(CorexError::AnchorTopicOutOfRange { topic, n_topics });
        }
        for token in tokens {
            let idx = vocab
                .index_of(token)
                .ok_or_else(|| CorexError::UnknownAnchor {
                    token: token.clone(),
                    topic,
                })?;
            cols[topic].push(idx);
        }
        cols[topic].sort_unstable();
        cols[topic].dedup();
    }
    Ok(cols)
}

/// Train an anchored topic model. Deterministic given `(matrix, anchors,
/// cfg)`; a model that hits `max_iter` without meeting the tolerance is
/// returned with `converged = false` rather than failing.
pub fn train(
    matrix: &DocTermMatrix,
    vocab: &Vocabulary,
    anchors: &BTreeMap<usize, BTreeSet<String>>,
    cfg: &TrainConfig,
) -> Result<TopicModel, CorexError> {
    if matrix.n_docs() == 0 || matrix.n_terms == 0 {
        return Err(CorexError::EmptyMatrix {
            n_docs: matrix.n_docs(),
            n_terms: matrix.n_terms,
        });
    }
    assert!(cfg.n_topics >= 1, "n_topics must be at least 1");
    assert!(
        cfg.anchor_strength >= 1.0,
        "anchor_strength must be at least 1"
    );
    let anchor_cols = resolve_anchor_columns(anchors, vocab, cfg.n_topics)?;

    let mut trainer = Trainer::new(matrix, anchor_cols, cfg);
    let mut tc_history: Vec<f64> = Vec::new();
    let mut topic_tc = vec![0.0; cfg.n_topics];
    let mut converged = false;
    let mut iterations_run = 0;

    for sweep in 0..cfg.max_iter {
        trainer.update_py();
        trainer.update_theta();
        trainer.update_mi();
        let proposal = if sweep > 0 {
            Some(trainer.propose_alpha())
        } else {
            None
        };
        let warming = sweep < WARMUP_SWEEPS;
        let temperature = ((sweep + 1) as f64 / WARMUP_SWEEPS as f64).min(1.0);
        topic_tc = trainer.update_latent(proposal, tc_history.last().copied(), temperature);
        let total: f64 = topic_tc.iter().sum();
        iterations_run = sweep + 1;
        if !warming {
            if let Some(&prev) = tc_history.last() {
                let rel = (total - prev).abs() / prev.abs().max(1e-9);
                if rel < cfg.tol {
                    tc_history.push(total);
                    converged = true;
                    break;
                }
            }
        }
        tc_history.push(total);
    }

    // Fix label orientation, then re-derive the latent state once so the
    // stored probabilities are exactly what `predict` reproduces.
    trainer.fix_orientation();
    topic_tc = trainer.update_latent(None, None, 1.0);
    let total_tc: f64 = topic_tc.iter().sum();

    Ok(TopicModel {
        n_topics: cfg.n_topics,
        anchor_strength: cfg.anchor_strength,
        seed: cfg.seed,
        iterations_run,
        converged,
        word_types: vocab.word_types().to_vec(),
        vocab_hash: vocab.content_hash(),
        anchor_map: anchors.clone(),
        alpha: trainer.alpha,
        mi: trainer.mi,
        log_py: trainer.log_py,
        theta: trainer.theta,
        doc_ids: matrix.doc_ids.clone(),
        doc_topic_prob: trainer.q,
        topic_tc,
        total_tc,
        tc_history,
    })
}

impl TopicModel {
    pub fn n_terms(&self) -> usize {
        self.word_types.len()
    }

    pub fn word_types(&self) -> &[String] {
        &self.word_types
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn anchor_map(&self) -> &BTreeMap<usize, BTreeSet<String>> {
        &self.anchor_map
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Training-corpus `p(y|x)`, one row per document.
    pub fn doc_topic_prob(&self) -> &[Vec<f64>] {
        &self.doc_topic_prob
    }

    pub fn tc_history(&self) -> &[f64] {
        &self.tc_history
    }

    /// Per-topic TC in topic order plus the same values sorted descending
    /// (the elbow diagnostic).
    pub fn topic_tc_distribution(&self) -> (Vec<f64>, Vec<f64>) {
        let in_order = self.topic_tc.clone();
        let mut sorted = in_order.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        (in_order, sorted)
    }

    pub fn topic_tc(&self) -> &[f64] {
        &self.topic_tc
    }

    /// Hold the learned associations fixed and score new documents over the
    /// same vocabulary. Pure: repeated calls agree exactly, and scoring the
    /// training matrix reproduces the stored probabilities.
    pub fn predict(&self, matrix: &DocTermMatrix) -> Result<Vec<Vec<f64>>, CorexError> {
        if matrix.n_terms != self.n_terms() {
            return Err(CorexError::ColumnMismatch {
                matrix_terms: matrix.n_terms,
                model_terms: self.n_terms(),
            });
        }
        let params = LatentParams::build(&self.log_py, &self.theta, &self.alpha);
        Ok(matrix
            .rows
            .par_iter()
            .map(|row| params.score_row(row, 1.0).0)
            .collect())
    }

    /// Connection-strength-weighted association of a word with a topic.
    pub fn association(&self, topic: usize, word_idx: usize) -> f64 {
        self.alpha[topic][word_idx] * self.mi[topic][word_idx]
    }

    /// The `k` words most associated with `topic`, strongest first, ties
    /// broken lexicographically. Asking for more words than the vocabulary
    /// holds returns the whole vocabulary, ranked.
    pub fn top_words(&self, topic: usize, k: usize) -> Result<Vec<String>, CorexError> {
        if topic >= self.n_topics {
            return Err(CorexError::TopicOutOfRange {
                topic,
                n_topics: self.n_topics,
            });
        }
        let mut ranked: Vec<(usize, f64)> = (0..self.n_terms())
            .map(|i| (i, self.association(topic, i)))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| self.word_types[a.0].cmp(&self.word_types[b.0]))
        });
        Ok(ranked
            .into_iter()
            .take(k)
            .map(|(i, _)| self.word_types[i].clone())
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), CorexError> {
        let json = serde_json::to_string(self).map_err(|e| CorexError::Store {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        crate::pipeline::write_atomic(path, json.as_bytes()).map_err(|e| CorexError::Store {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorexError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorexError::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| CorexError::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{vectorize, TokenizedDocument};
    use approx::assert_abs_diff_eq;

    /// Two disjoint ten-word clusters, one anchor word per cluster. Each
    /// cluster activates independently per document (the two planted topics
    /// are separate latent factors); an active cluster contributes each of
    /// its words with probability 0.6.
    fn planted_fixture(n_docs: usize, seed: u64) -> (DocTermMatrix, Vocabulary, Vec<(bool, bool)>) {
        let cluster_a: Vec<String> = (0..10).map(|i| format!("alpha{i}")).collect();
        let cluster_b: Vec<String> = (0..10).map(|i| format!("beta{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut docs = Vec::with_capacity(n_docs);
        let mut labels = Vec::with_capacity(n_docs);
        for l in 0..n_docs {
            let bits = (l % 4 == 1 || l % 4 == 3, l % 4 == 2 || l % 4 == 3);
            let mut tokens = Vec::new();
            for (active, pool) in [(bits.0, &cluster_a), (bits.1, &cluster_b)] {
                if active {
                    tokens.extend(pool.iter().filter(|_| rng.gen::<f64>() < 0.6).cloned());
                    if !tokens.iter().any(|t| pool.contains(t)) {
                        tokens.push(pool[0].clone());
                    }
                }
            }
            docs.push(TokenizedDocument {
                doc_id: format!("d{l}"),
                tokens,
            });
            labels.push(bits);
        }
        let mut words: Vec<String> = cluster_a.iter().chain(cluster_b.iter()).cloned().collect();
        words.sort();
        let vocab = Vocabulary::from_words(words);
        let matrix = vectorize(&docs, &vocab);
        (matrix, vocab, labels)
    }

    fn planted_anchors() -> BTreeMap<usize, BTreeSet<String>> {
        let mut anchors = BTreeMap::new();
        anchors.insert(0, BTreeSet::from(["alpha0".to_string()]));
        anchors.insert(1, BTreeSet::from(["beta0".to_string()]));
        anchors
    }

    fn planted_model() -> (TopicModel, DocTermMatrix, Vec<(bool, bool)>) {
        let (matrix, vocab, labels) = planted_fixture(200, 7);
        let mut cfg = TrainConfig::new(2);
        // a single anchor per topic wants a modest strength: high strengths
        // over-concentrate a topic onto its anchor's own presence
        cfg.anchor_strength = 3.0;
        let model = train(&matrix, &vocab, &planted_anchors(), &cfg).unwrap();
        (model, matrix, labels)
    }

    #[test]
    fn planted_clusters_are_recovered() {
        let (model, _, labels) = planted_model();
        let mut correct = 0;
        for (l, &(bit_a, bit_b)) in labels.iter().enumerate() {
            let probs = &model.doc_topic_prob()[l];
            if (probs[0] > 0.5) == bit_a && (probs[1] > 0.5) == bit_b {
                correct += 1;
            }
        }
        assert!(
            correct as f64 >= 0.95 * labels.len() as f64,
            "only {correct}/{} docs recovered",
            labels.len()
        );
    }

    #[test]
    fn anchor_word_ranks_first_in_its_topic() {
        let (model, _, _) = planted_model();
        assert_eq!(model.top_words(0, 5).unwrap()[0], "alpha0");
        assert_eq!(model.top_words(1, 5).unwrap()[0], "beta0");
    }

    #[test]
    fn training_is_deterministic() {
        let (matrix, vocab, _) = planted_fixture(80, 3);
        let cfg = TrainConfig::new(2);
        let a = train(&matrix, &vocab, &planted_anchors(), &cfg).unwrap();
        let b = train(&matrix, &vocab, &planted_anchors(), &cfg).unwrap();
        assert_eq!(a.doc_topic_prob(), b.doc_topic_prob());
        assert_eq!(a.total_tc, b.total_tc);
        assert_eq!(a.tc_history(), b.tc_history());
    }

    #[test]
    fn tc_is_nondecreasing_within_tolerance() {
        let (model, _, _) = planted_model();
        let history = model.tc_history();
        assert!(history.len() >= 2);
        for window in history.windows(2) {
            assert!(
                window[1] >= window[0] - 1e-6,
                "TC decreased: {} -> {}",
                window[0],
                window[1]
            );
        }
    }

    #[test]
    fn probability_sums_stay_within_topic_count() {
        let (model, _, _) = planted_model();
        for row in model.doc_topic_prob() {
            let sum: f64 = row.iter().sum();
            assert!((0.0..=model.n_topics as f64 + 1e-12).contains(&sum));
            for &p in row {
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn predict_on_training_matrix_is_a_fixed_point() {
        let (model, matrix, _) = planted_model();
        let again = model.predict(&matrix).unwrap();
        for (stored, fresh) in model.doc_topic_prob().iter().zip(&again) {
            for (a, b) in stored.iter().zip(fresh) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn all_zero_rows_share_the_evidence_free_score() {
        let (model, matrix, _) = planted_model();
        let mut empty = matrix.clone();
        empty.doc_ids = vec!["e0".into(), "e1".into()];
        empty.rows = vec![vec![], vec![]];
        let probs = model.predict(&empty).unwrap();
        assert_eq!(probs[0], probs[1]);
    }

    #[test]
    fn single_topic_identical_docs_constant_probability() {
        let docs: Vec<TokenizedDocument> = (0..30)
            .map(|l| TokenizedDocument {
                doc_id: format!("d{l}"),
                tokens: vec!["same".into(), "words".into()],
            })
            .collect();
        let vocab = Vocabulary::from_words(vec!["same".into(), "words".into()]);
        let matrix = vectorize(&docs, &vocab);
        let model = train(&matrix, &vocab, &BTreeMap::new(), &TrainConfig::new(1)).unwrap();
        let first = model.doc_topic_prob()[0][0];
        for row in model.doc_topic_prob() {
            assert_abs_diff_eq!(row[0], first, epsilon = 1e-12);
        }
    }

    #[test]
    fn independent_noise_has_negligible_topic_tc() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let words: Vec<String> = (0..12).map(|i| format!("w{i:02}")).collect();
        let docs: Vec<TokenizedDocument> = (0..2000)
            .map(|l| TokenizedDocument {
                doc_id: format!("d{l}"),
                tokens: words
                    .iter()
                    .filter(|_| rng.gen::<f64>() < 0.3)
                    .cloned()
                    .collect(),
            })
            .collect();
        let vocab = Vocabulary::from_words(words);
        let matrix = vectorize(&docs, &vocab);
        let model = train(&matrix, &vocab, &BTreeMap::new(), &TrainConfig::new(3)).unwrap();
        for (j, tc) in model.topic_tc().iter().enumerate() {
            assert!(tc.abs() < 1e-2, "topic {j} TC {tc} above tolerance");
        }
    }

    #[test]
    fn topic_tc_sums_to_total() {
        let (model, _, _) = planted_model();
        let (in_order, sorted) = model.topic_tc_distribution();
        let sum: f64 = in_order.iter().sum();
        assert_eq!(sum, model.total_tc);
        assert!(sorted.windows(2).all(|w| w[0] >= w[1]));
        assert!(in_order.iter().all(|&tc| tc >= -1e-9));
    }

    #[test]
    fn unknown_anchor_token_is_an_error() {
        let (matrix, vocab, _) = planted_fixture(20, 1);
        let mut anchors = BTreeMap::new();
        anchors.insert(1, BTreeSet::from(["nonexistent".to_string()]));
        let err = train(&matrix, &vocab, &anchors, &TrainConfig::new(2)).unwrap_err();
        match err {
            CorexError::UnknownAnchor { token, topic } => {
                assert_eq!(token, "nonexistent");
                assert_eq!(topic, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_matrix_is_an_error() {
        let matrix = DocTermMatrix {
            n_terms: 0,
            doc_ids: vec![],
            rows: vec![],
        };
        let vocab = Vocabulary::from_words(vec![]);
        assert!(matches!(
            train(&matrix, &vocab, &BTreeMap::new(), &TrainConfig::new(1)),
            Err(CorexError::EmptyMatrix { .. })
        ));
    }

    #[test]
    fn predict_rejects_column_mismatch() {
        let (model, matrix, _) = planted_model();
        let mut wrong = matrix;
        wrong.n_terms += 1;
        assert!(matches!(
            model.predict(&wrong),
            Err(CorexError::ColumnMismatch { .. })
        ));
    }

    #[test]
    fn top_words_truncates_to_vocabulary() {
        let (model, _, _) = planted_model();
        let words = model.top_words(0, 10_000).unwrap();
        assert_eq!(words.len(), model.n_terms());
    }

    #[test]
    fn model_round_trips_through_disk() {
        let (model, matrix, _) = planted_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = TopicModel::load(&path).unwrap();
        assert_eq!(loaded.doc_topic_prob(), model.doc_topic_prob());
        assert_eq!(loaded.predict(&matrix).unwrap(), model.predict(&matrix).unwrap());
    }
}
