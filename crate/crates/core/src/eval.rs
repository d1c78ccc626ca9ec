//! Clustering quality against labels (NMI) and topic coherence (NPMI).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, Corpus};
use crate::error::{Error, Result};
use crate::report::TopicWords;

/// Cluster label per document: the most probable topic, lowest index on ties.
pub fn doc_clusters(topic_doc: &[Vec<f64>]) -> Vec<usize> {
    topic_doc
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (t, &x)| if x > best.1 { (t, x) } else { best })
                .0
        })
        .collect()
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization, natural log.
///
/// When both partitions are trivial (zero entropy) they are identical and the result is 1.
pub fn nmi<A, B>(pred: &[A], truth: &[B]) -> Result<f64>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidParameter("nmi needs at least one labeled document".into()));
    }
    let n = pred.len() as f64;
    let mut joint: HashMap<(&A, &B), usize> = HashMap::new();
    let mut pa: HashMap<&A, usize> = HashMap::new();
    let mut pb: HashMap<&B, usize> = HashMap::new();
    for (a, b) in pred.iter().zip(truth) {
        *joint.entry((a, b)).or_default() += 1;
        *pa.entry(a).or_default() += 1;
        *pb.entry(b).or_default() += 1;
    }
    let ha = entropy(pa.values().copied(), n);
    let hb = entropy(pb.values().copied(), n);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|((a, b), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (pa[a] as f64 * pb[b] as f64)).ln()
        })
        .sum();
    Ok((mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0))
}

/// Document frequencies of a word set over a reference collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSource {
    pub doc_count: usize,
    pub word_doc_freq: BTreeMap<String, usize>,
    /// Keyed by the lexicographically ordered pair.
    pub pair_doc_freq: BTreeMap<(String, String), usize>,
}

impl CoherenceSource {
    /// Count binary per-document occurrences of `vocabulary` words.
    pub fn from_documents<'a, D, W>(docs: D, vocabulary: &BTreeSet<String>) -> Result<Self>
    where
        D: IntoIterator<Item = W>,
        W: IntoIterator<Item = &'a str>,
    {
        let mut doc_count = 0;
        let mut word_doc_freq = BTreeMap::new();
        let mut pair_doc_freq = BTreeMap::new();
        for doc in docs {
            doc_count += 1;
            let present: BTreeSet<&str> = doc
                .into_iter()
                .filter(|w| vocabulary.contains(*w))
                .collect();
            let present: Vec<&str> = present.into_iter().collect();
            for (i, &a) in present.iter().enumerate() {
                *word_doc_freq.entry(a.to_owned()).or_insert(0) += 1;
                for &b in &present[i + 1..] {
                    *pair_doc_freq.entry((a.to_owned(), b.to_owned())).or_insert(0) += 1;
                }
            }
        }
        if doc_count == 0 {
            return Err(Error::EmptyReference);
        }
        Ok(CoherenceSource {
            doc_count,
            word_doc_freq,
            pair_doc_freq,
        })
    }

    pub fn from_corpus(corpus: &Corpus, vocabulary: &BTreeSet<String>) -> Result<Self> {
        CoherenceSource::from_documents(corpus.documents().iter().map(|d| d.words()), vocabulary)
    }

    pub fn word_freq(&self, w: &str) -> usize {
        self.word_doc_freq.get(w).copied().unwrap_or(0)
    }

    pub fn pair_freq(&self, a: &str, b: &str) -> usize {
        let key = if a <= b { (a, b) } else { (b, a) };
        // BTreeMap<(String, String)> cannot be probed with borrowed tuples.
        self.pair_doc_freq
            .get(&(key.0.to_owned(), key.1.to_owned()))
            .copied()
            .unwrap_or(0)
    }

    /// NPMI of a word pair, or `None` when either word never occurs.
    ///
    /// A pair that never co-occurs gets joint probability `1/doc_count`. A
    /// pair present in every document scores 1.
    pub fn npmi(&self, a: &str, b: &str) -> Option<f64> {
        let n = self.doc_count as f64;
        let (fa, fb) = (self.word_freq(a), self.word_freq(b));
        if fa == 0 || fb == 0 {
            return None;
        }
        let co = self.pair_freq(a, b);
        let joint = if co == 0 { 1.0 / n } else { co as f64 / n };
        if joint >= 1.0 {
            return Some(1.0);
        }
        let pmi = (joint / ((fa as f64 / n) * (fb as f64 / n))).ln();
        Some((pmi / -joint.ln()).clamp(-1.0, 1.0))
    }
}

/// Build a coherence source from a corpus file in the JSONL corpus format.
pub fn build_coherence_source(
    reference: impl AsRef<Path>,
    vocabulary: &BTreeSet<String>,
) -> Result<CoherenceSource> {
    let (corpus, _) = load_corpus(reference, 1)?;
    CoherenceSource::from_corpus(&corpus, vocabulary)
}

/// Union of all listed topic words.
pub fn topic_vocabulary(topics: &[TopicWords]) -> BTreeSet<String> {
    topics
        .iter()
        .flat_map(|t| t.words.iter().map(|w| w.w.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub mean: f64,
    /// `None` for topics without a scorable pair.
    pub per_topic: Vec<Option<f64>>,
}

/// Mean pairwise NPMI among each topic's first `top_n` words, averaged over scorable topics.
pub fn npmi_coherence(topics: &[TopicWords], source: &CoherenceSource, top_n: usize) -> Result<Coherence> {
    let per_topic: Vec<Option<f64>> = topics
        .iter()
        .map(|t| {
            let words: Vec<&str> = t.words.iter().take(top_n).map(|w| w.w.as_str()).collect();
            let scores: Vec<f64> = words
                .iter()
                .enumerate()
                .flat_map(|(i, a)| words[i + 1..].iter().map(move |b| (*a, *b)))
                .filter_map(|(a, b)| source.npmi(a, b))
                .collect();
            (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
        })
        .collect();
    let scored: Vec<f64> = per_topic.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::UndefinedCoherence);
    }
    Ok(Coherence {
        mean: scored.iter().sum::<f64>() / scored.len() as f64,
        per_topic,
    })
}

/// Metrics report written by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nmi: Option<f64>,
    pub npmi: f64,
    pub per_topic_npmi: Vec<Option<f64>>,
    pub docs_scored: usize,
}

/// NMI over labeled documents only; `None` when no document carries a label.
pub fn labeled_nmi(corpus: &Corpus, topic_doc: &[Vec<f64>]) -> Result<(Option<f64>, usize)> {
    if topic_doc.len() != corpus.num_documents() {
        return Err(Error::LengthMismatch {
            left: topic_doc.len(),
            right: corpus.num_documents(),
        });
    }
    let clusters = doc_clusters(topic_doc);
    let (pred, truth): (Vec<usize>, Vec<&str>) = corpus
        .documents()
        .iter()
        .zip(clusters)
        .filter_map(|(d, c)| d.label.as_deref().map(|l| (c, l)))
        .unzip();
    if pred.is_empty() {
        return Ok((None, 0));
    }
    Ok((Some(nmi(&pred, &truth)?), pred.len()))
}
