//! Hard-assignment EM topic inference over sentence-group embeddings.
//!
//! Every group gets exactly one topic: the one maximizing
//! `cos(v_g, v_t) · p(t|d)`. Topic vectors are the means of their groups
//! and `p(t|d)` is the smoothed share of the document's groups assigned to
//! `t`. The smoothing constant starts at `max(8, α)` and is halved every
//! epoch down to `α`. During early epochs a document is sometimes assigned
//! to its second-best topics instead, with a probability that shrinks
//! linearly with the epoch number.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::{dot, norm, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Iterations used by [`transform`] for held-out documents.
pub const TRANSFORM_ITERATIONS: usize = 5;

const INIT_STREAM: u64 = 0x696e_6974;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    /// Number of topics.
    pub k: usize,
    /// Document prior; the floor of the smoothing schedule.
    pub alpha: f64,
    pub epochs: usize,
    /// Sentences per group the corpus was built with.
    pub n_s: usize,
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            k: 50,
            alpha: 2.0,
            epochs: 10,
            n_s: 3,
            seed: 0,
        }
    }
}

impl FitParams {
    /// Initial smoothing constant, `max(8, α)`.
    pub fn c0(&self) -> f64 {
        self.alpha.max(8.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.n_s < 1 {
            return Err(Error::InvalidParameter("n_s must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be a finite non-negative number, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Smoothing constant used by this epoch's M-step.
    pub c: f64,
    /// Groups whose topic differs from the previous epoch (all groups in epoch 1).
    pub changed: usize,
}

/// A fitted model. Rows of `topic_doc` follow corpus document order and
/// `assignments` follows group row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub params: FitParams,
    pub doc_ids: Vec<String>,
    pub topic_vectors: Vec<Vec<f64>>,
    pub topic_doc: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub epoch_log: Vec<EpochRecord>,
}

impl TopicModel {
    pub fn k(&self) -> usize {
        self.params.k
    }

    pub fn dim(&self) -> usize {
        self.topic_vectors.first().map_or(0, Vec::len)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }
}

/// State handed to a fit observer after each epoch.
#[derive(Debug)]
pub struct EpochState<'a> {
    pub epoch: usize,
    pub c: f64,
    pub assignments: &'a [usize],
    pub topic_vectors: &'a [Vec<f64>],
    pub topic_doc: &'a [Vec<f64>],
}

/// Group row ranges of each document.
pub fn doc_ranges(corpus: &Corpus) -> Vec<Range<usize>> {
    (0..corpus.num_documents()).map(|d| corpus.doc_rows(d)).collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(a ^ splitmix64(b))))
}

/// The uniform `[0, 1)` draw that decides the assignment rank of document `doc` in `epoch`.
///
/// Each (seed, document, epoch) has its own stream, so E-steps give the
/// same result regardless of how documents are scheduled across threads.
pub fn perturbation_draw(seed: u64, doc: usize, epoch: usize) -> f64 {
    stream_rng(seed, doc as u64, epoch as u64).random::<f64>()
}

/// 1 for the best topic, 2 for the runner-up.
pub fn assignment_rank(draw: f64, epoch: usize, epochs: usize, k: usize) -> usize {
    if k == 1 || draw < 0.5 + epoch as f64 / (2.0 * epochs as f64) {
        1
    } else {
        2
    }
}

/// Smoothing schedule step: `max(c/2, α)`.
pub fn anneal(c: f64, alpha: f64) -> f64 {
    (c / 2.0).max(alpha)
}

fn cosine_to(v: &[f32], v_norm: f64, topic: &[f64], topic_norm: f64) -> f64 {
    if v_norm == 0.0 || topic_norm == 0.0 {
        return 0.0;
    }
    let d: f64 = v.iter().zip(topic).map(|(&x, &y)| f64::from(x) * y).sum();
    d / (v_norm * topic_norm)
}

fn topic_norms(topics: &[Vec<f64>]) -> Vec<f64> {
    topics
        .iter()
        .map(|t| t.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

/// Topic with the `rank`-th largest `cos(v, v_t) · prior[t]`; ties go to the lower index.
fn ranked_topic(v: &[f32], topics: &[Vec<f64>], norms: &[f64], prior: &[f64], rank: usize) -> usize {
    let v_norm = norm(v);
    let mut best: Option<(usize, f64)> = None;
    let mut second: Option<(usize, f64)> = None;
    for (t, (topic, &n)) in topics.iter().zip(norms).enumerate() {
        let s = cosine_to(v, v_norm, topic, n) * prior[t];
        match best {
            Some((_, b)) if s <= b => {
                if second.is_none_or(|(_, c)| s > c) {
                    second = Some((t, s));
                }
            }
            _ => {
                second = best;
                best = Some((t, s));
            }
        }
    }
    match (rank, second) {
        (2, Some((t, _))) => t,
        _ => best.map_or(0, |(t, _)| t),
    }
}

fn check_topics(emb: &EmbeddingMatrix, topics: &[Vec<f64>]) -> Result<()> {
    if let Some(bad) = topics.iter().find(|t| t.len() != emb.dim()) {
        return Err(Error::DimensionMismatch {
            expected: emb.dim(),
            found: bad.len(),
        });
    }
    Ok(())
}

/// Pick `k` distinct rows by k-means++ seeding under cosine distance.
///
/// The first row is uniform; each further row is drawn with weight
/// `(1 − max cos to chosen rows)²`. When every remaining weight is zero
/// (duplicated vectors) the next row is uniform among the unchosen ones.
pub fn seed_rows(emb: &EmbeddingMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    let g = emb.rows();
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if g < k {
        return Err(Error::InsufficientData { groups: g, k });
    }
    let mut rng = stream_rng(seed, INIT_STREAM, 0);
    let norms: Vec<f64> = emb.iter_rows().map(norm).collect();
    let cos = |a: usize, b: usize| {
        let n = norms[a] * norms[b];
        if n == 0.0 {
            0.0
        } else {
            (dot(emb.row(a), emb.row(b)) / n).clamp(-1.0, 1.0)
        }
    };

    let mut chosen = vec![rng.random_range(0..g)];
    let mut taken = vec![false; g];
    taken[chosen[0]] = true;
    // Smallest cosine distance from each row to the chosen set.
    let mut dist: Vec<f64> = (0..g).map(|r| 1.0 - cos(r, chosen[0])).collect();

    while chosen.len() < k {
        let weights: Vec<f64> = (0..g)
            .map(|r| if taken[r] { 0.0 } else { dist[r] * dist[r] })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (r, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    pick = Some(r);
                    if target < acc {
                        break;
                    }
                }
            }
            pick.expect("positive total weight")
        } else {
            let free: Vec<usize> = (0..g).filter(|&r| !taken[r]).collect();
            free[rng.random_range(0..free.len())]
        };
        taken[next] = true;
        chosen.push(next);
        for (r, d) in dist.iter_mut().enumerate() {
            *d = d.min(1.0 - cos(r, next));
        }
    }
    Ok(chosen)
}

/// Initial topic vectors: the group vectors picked by [`seed_rows`].
pub fn init_topics(emb: &EmbeddingMatrix, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    Ok(seed_rows(emb, k, seed)?
        .into_iter()
        .map(|r| emb.row(r).iter().map(|&x| f64::from(x)).collect())
        .collect())
}

/// Assign every group a topic.
///
/// Per document one draw `r` is taken; all of its groups use the best topic
/// when `r < 0.5 + epoch/(2·epochs)` and the runner-up otherwise.
pub fn e_step(
    emb: &EmbeddingMatrix,
    docs: &[Range<usize>],
    topics: &[Vec<f64>],
    topic_doc: &[Vec<f64>],
    epoch: usize,
    epochs: usize,
    seed: u64,
) -> Vec<usize> {
    let k = topics.len();
    let norms = topic_norms(topics);
    docs.par_iter()
        .enumerate()
        .map(|(d, rows)| {
            let rank = assignment_rank(perturbation_draw(seed, d, epoch), epoch, epochs, k);
            rows.clone()
                .map(|r| ranked_topic(emb.row(r), topics, &norms, &topic_doc[d], rank))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

fn assign_best(
    emb: &EmbeddingMatrix,
    docs: &[Range<usize>],
    topics: &[Vec<f64>],
    topic_doc: &[Vec<f64>],
) -> Vec<usize> {
    let norms = topic_norms(topics);
    docs.par_iter()
        .enumerate()
        .map(|(d, rows)| {
            rows.clone()
                .map(|r| ranked_topic(emb.row(r), topics, &norms, &topic_doc[d], 1))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

/// `p(t|d) = (|A_{t,d}| + c) / (|d| + k·c)` for every document.
pub fn doc_topic_update(docs: &[Range<usize>], assignments: &[usize], c: f64, k: usize) -> Vec<Vec<f64>> {
    docs.iter()
        .map(|rows| {
            let mut counts = vec![0usize; k];
            for &t in &assignments[rows.clone()] {
                counts[t] += 1;
            }
            let denom = rows.len() as f64 + k as f64 * c;
            counts.iter().map(|&n| (n as f64 + c) / denom).collect()
        })
        .collect()
}

/// Recompute topic vectors as group means and the smoothed topic-document distribution.
///
/// A topic left without groups is reseeded to the group vector whose best
/// cosine to the live topics is lowest (lowest row on ties).
pub fn m_step(
    emb: &EmbeddingMatrix,
    docs: &[Range<usize>],
    assignments: &[usize],
    c: f64,
    k: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let dim = emb.dim();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (r, &t) in assignments.iter().enumerate() {
        counts[t] += 1;
        for (s, &x) in sums[t].iter_mut().zip(emb.row(r)) {
            *s += f64::from(x);
        }
    }
    let mut live: Vec<usize> = Vec::with_capacity(k);
    for t in 0..k {
        if counts[t] > 0 {
            let n = counts[t] as f64;
            sums[t].iter_mut().for_each(|s| *s /= n);
            live.push(t);
        }
    }

    let mut used = vec![false; emb.rows()];
    for t in (0..k).filter(|&t| counts[t] == 0) {
        let norms: Vec<f64> = live.iter().map(|&l| topic_norms(&sums[l..=l])[0]).collect();
        let closeness = |r: usize| {
            let v = emb.row(r);
            let vn = norm(v);
            live.iter()
                .zip(&norms)
                .map(|(&l, &n)| cosine_to(v, vn, &sums[l], n))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let row = (0..emb.rows())
            .filter(|&r| !used[r])
            .map(|r| (r, closeness(r)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(r, _)| r);
        if let Some(r) = row {
            used[r] = true;
            sums[t] = emb.row(r).iter().map(|&x| f64::from(x)).collect();
            live.push(t);
        }
    }

    (sums, doc_topic_update(docs, assignments, c, k))
}

fn check_inputs(docs: &[Range<usize>], emb: &EmbeddingMatrix, params: &FitParams) -> Result<()> {
    params.validate()?;
    let groups = docs.last().map_or(0, |r| r.end);
    if emb.rows() != groups {
        return Err(Error::Alignment {
            expected: groups,
            found: emb.rows(),
        });
    }
    if groups < params.k {
        return Err(Error::InsufficientData { groups, k: params.k });
    }
    Ok(())
}

/// Fit a model on a corpus whose group rows align with `emb`.
pub fn fit(corpus: &Corpus, emb: &EmbeddingMatrix, params: &FitParams) -> Result<TopicModel> {
    fit_observed(corpus, emb, params, |_| {})
}

/// [`fit`], calling `observer` after every epoch.
pub fn fit_observed(
    corpus: &Corpus,
    emb: &EmbeddingMatrix,
    params: &FitParams,
    observer: impl FnMut(&EpochState<'_>),
) -> Result<TopicModel> {
    let docs = doc_ranges(corpus);
    let mut model = fit_documents(&docs, emb, params, observer)?;
    model.doc_ids = corpus.documents().iter().map(|d| d.id.clone()).collect();
    Ok(model)
}

/// Fit on documents given as contiguous group-row ranges covering `emb`.
pub fn fit_documents(
    docs: &[Range<usize>],
    emb: &EmbeddingMatrix,
    params: &FitParams,
    mut observer: impl FnMut(&EpochState<'_>),
) -> Result<TopicModel> {
    check_inputs(docs, emb, params)?;
    let k = params.k;
    let mut topics = init_topics(emb, k, params.seed)?;
    let mut topic_doc = vec![vec![1.0 / k as f64; k]; docs.len()];
    let mut c = params.c0();
    let mut assignments: Vec<usize> = Vec::new();
    let mut epoch_log = Vec::with_capacity(params.epochs);

    for epoch in 1..=params.epochs {
        let next = e_step(emb, docs, &topics, &topic_doc, epoch, params.epochs, params.seed);
        let changed = if assignments.is_empty() {
            next.len()
        } else {
            next.iter().zip(&assignments).filter(|(a, b)| a != b).count()
        };
        assignments = next;
        (topics, topic_doc) = m_step(emb, docs, &assignments, c, k);
        epoch_log.push(EpochRecord { epoch, c, changed });
        observer(&EpochState {
            epoch,
            c,
            assignments: &assignments,
            topic_vectors: &topics,
            topic_doc: &topic_doc,
        });
        c = anneal(c, params.alpha);
    }

    Ok(TopicModel {
        params: params.clone(),
        doc_ids: Vec::new(),
        topic_vectors: topics,
        topic_doc,
        assignments,
        epoch_log,
    })
}

/// Infer `p(t|d)` for unseen documents with the topic vectors held fixed.
///
/// Runs [`TRANSFORM_ITERATIONS`] rounds of best-topic assignment and prior
/// update with the smoothing constant fixed at `α`.
pub fn transform(model: &TopicModel, emb: &EmbeddingMatrix, corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
    transform_documents(model, emb, &doc_ranges(corpus))
}

pub fn transform_documents(model: &TopicModel, emb: &EmbeddingMatrix, docs: &[Range<usize>]) -> Result<Vec<Vec<f64>>> {
    let k = model.k();
    if docs.is_empty() {
        return Ok(Vec::new());
    }
    check_topics(emb, &model.topic_vectors)?;
    let groups = docs.last().map_or(0, |r| r.end);
    if emb.rows() != groups {
        return Err(Error::Alignment {
            expected: groups,
            found: emb.rows(),
        });
    }
    let mut topic_doc = vec![vec![1.0 / k as f64; k]; docs.len()];
    for _ in 0..TRANSFORM_ITERATIONS {
        let assignments = assign_best(emb, docs, &model.topic_vectors, &topic_doc);
        topic_doc = doc_topic_update(docs, &assignments, model.params.alpha, k);
    }
    Ok(topic_doc)
}
