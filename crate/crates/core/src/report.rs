//! Word-topic scores.
//!
//! Every word inherits the topic of its sentence group. A word is reported
//! for a topic only when its topic count clears
//! `n_min = n(w)/|T| + std_t n(w|t) + max_d n(w|d)` and the topic holds more
//! than a uniform share of its occurrences:
//!
//! ```text
//! score(w|t) = sqrt(max(n(w|t) − n_min, 0)) · (p(t|w) − 1/|T|),   p(t|w) = n(w|t) / n(w)
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Counts for a single word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCounts {
    /// `n(w|t)` for every topic.
    pub per_topic: Vec<u64>,
    /// `max_d n(w|d)`.
    pub max_doc: u64,
}

impl WordCounts {
    /// `n(w)`.
    pub fn total(&self) -> u64 {
        self.per_topic.iter().sum()
    }

    pub fn n_min(&self) -> f64 {
        let k = self.per_topic.len() as f64;
        let mean = self.total() as f64 / k;
        let var = self
            .per_topic
            .iter()
            .map(|&n| (n as f64 - mean).powi(2))
            .sum::<f64>()
            / k;
        mean + var.sqrt() + self.max_doc as f64
    }

    pub fn p_topic(&self, topic: usize) -> f64 {
        self.per_topic[topic] as f64 / self.total() as f64
    }

    pub fn score(&self, topic: usize) -> f64 {
        let k = self.per_topic.len() as f64;
        let frequency = (self.per_topic[topic] as f64 - self.n_min()).max(0.0).sqrt();
        frequency * (self.p_topic(topic) - 1.0 / k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTopicCounts {
    pub num_topics: usize,
    pub words: BTreeMap<String, WordCounts>,
}

impl WordTopicCounts {
    pub fn get(&self, word: &str) -> Option<&WordCounts> {
        self.words.get(word)
    }

    pub fn n_min(&self, word: &str) -> Option<f64> {
        self.get(word).map(WordCounts::n_min)
    }

    pub fn score(&self, word: &str, topic: usize) -> Option<f64> {
        self.get(word).map(|c| c.score(topic))
    }
}

/// Count every word occurrence under the topic of its group.
pub fn count_words(corpus: &Corpus, assignments: &[usize], k: usize) -> Result<WordTopicCounts> {
    if assignments.len() != corpus.num_groups() {
        return Err(Error::LengthMismatch {
            left: assignments.len(),
            right: corpus.num_groups(),
        });
    }
    if let Some(&t) = assignments.iter().find(|&&t| t >= k) {
        return Err(Error::InvalidParameter(format!("topic {t} out of range for k={k}")));
    }
    let mut words: BTreeMap<String, WordCounts> = BTreeMap::new();
    for (d, doc) in corpus.documents().iter().enumerate() {
        let mut in_doc: HashMap<&str, u64> = HashMap::new();
        for (group, row) in doc.groups.iter().zip(corpus.doc_rows(d)) {
            let topic = assignments[row];
            for w in &group.words {
                *in_doc.entry(w).or_default() += 1;
                let entry = words.entry(w.clone()).or_insert_with(|| WordCounts {
                    per_topic: vec![0; k],
                    max_doc: 0,
                });
                entry.per_topic[topic] += 1;
            }
        }
        for (w, n) in in_doc {
            let entry = words.get_mut(w).expect("counted above");
            entry.max_doc = entry.max_doc.max(n);
        }
    }
    Ok(WordTopicCounts {
        num_topics: k,
        words,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub w: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicWords {
    pub topic: usize,
    pub words: Vec<WordScore>,
}

/// Strip a final "ing", "es", "ed" or "s" when at least three letters remain.
pub fn stem(word: &str) -> &str {
    for suffix in ["ing", "es", "ed", "s"] {
        if let Some(base) = word.strip_suffix(suffix) {
            if base.chars().count() >= 3 {
                return base;
            }
        }
    }
    word
}

/// Stem every word and keep the highest score per stem.
pub fn merge_stems(words: Vec<WordScore>) -> Vec<WordScore> {
    let mut merged: BTreeMap<String, f64> = BTreeMap::new();
    for ws in words {
        let best = merged.entry(stem(&ws.w).to_owned()).or_insert(ws.score);
        *best = best.max(ws.score);
    }
    let mut out: Vec<WordScore> = merged
        .into_iter()
        .map(|(w, score)| WordScore { w, score })
        .collect();
    out.sort_by(by_score);
    out
}

fn by_score(a: &WordScore, b: &WordScore) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.w.cmp(&b.w))
}

/// Positive-score words per topic, best first, ties in lexicographic order.
///
/// With `postprocess`, words are stemmed and duplicates merged (keeping the
/// higher score) before truncating to `top_n`.
pub fn top_words(counts: &WordTopicCounts, top_n: usize, postprocess: bool) -> Vec<TopicWords> {
    (0..counts.num_topics)
        .map(|topic| {
            let mut words: Vec<WordScore> = counts
                .words
                .iter()
                .map(|(w, c)| WordScore {
                    w: w.clone(),
                    score: c.score(topic),
                })
                .filter(|ws| ws.score > 0.0)
                .collect();
            if postprocess {
                words = merge_stems(words);
            }
            words.sort_by(by_score);
            words.truncate(top_n);
            TopicWords { topic, words }
        })
        .collect()
}

/// One line per topic with up to `per_line` words.
pub fn format_table(topics: &[TopicWords], per_line: usize) -> String {
    let mut out = String::new();
    for t in topics {
        let words: Vec<&str> = t.words.iter().take(per_line).map(|w| w.w.as_str()).collect();
        let _ = writeln!(out, "topic {:>3}: {}", t.topic, words.join(" "));
    }
    out
}
