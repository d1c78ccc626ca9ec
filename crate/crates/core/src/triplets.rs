//! Triplet dataset construction for encoder fine-tuning.
//!
//! Adjacent groups of the same document are treated as positives and groups
//! drawn from other documents as negatives. Triplets whose base-model
//! embeddings contradict that assumption are filtered out before export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GroupKey};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: GroupKey,
    pub positive: GroupKey,
    pub negative: GroupKey,
}

/// Dataset-side and trainer-side settings for fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtParams {
    /// Fraction removed by anchor–positive distance.
    pub f_pos: f64,
    /// Fraction removed by the positive-minus-negative distance gap.
    pub f_tri: f64,
    /// Negatives drawn per anchor/positive pair.
    pub n_neg: usize,
    /// Triplet-loss margin.
    pub margin: f64,
    /// Fine-tuning epochs.
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FtParams {
    fn default() -> Self {
        FtParams {
            f_pos: 0.08,
            f_tri: 0.24,
            n_neg: 2,
            margin: 0.16,
            epochs: 4,
            seed: 0,
        }
    }
}

impl FtParams {
    pub fn validate(&self) -> Result<()> {
        check_fractions(self.f_pos, self.f_tri)?;
        if self.n_neg < 1 {
            return Err(Error::InvalidParameter("n_neg must be at least 1".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidParameter("margin must be positive".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidParameter("fine-tuning epochs must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_fractions(f_pos: f64, f_tri: f64) -> Result<()> {
    let unit = 0.0..1.0;
    if !unit.contains(&f_pos) || !unit.contains(&f_tri) {
        return Err(Error::InvalidParameter(format!(
            "filter fractions must lie in [0, 1): f_pos={f_pos}, f_tri={f_tri}"
        )));
    }
    if f_pos + f_tri >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "f_pos + f_tri must be below 1, got {}",
            f_pos + f_tri
        )));
    }
    Ok(())
}

/// Expected output size of [`build_triplets`]: `n_neg · max(2|d| − 2, 0)` summed over documents.
pub fn expected_triplet_count(corpus: &Corpus, n_neg: usize) -> usize {
    corpus
        .documents()
        .iter()
        .map(|d| n_neg * (2 * d.num_groups()).saturating_sub(2))
        .sum()
}

/// Emit forward and backward triplets for every group, `n_neg` times each.
///
/// Each negative is a uniformly chosen group of a uniformly chosen other
/// document; forward and backward triplets draw their negatives separately.
pub fn build_triplets(corpus: &Corpus, n_neg: usize, seed: u64) -> Result<Vec<Triplet>> {
    let num_docs = corpus.num_documents();
    if num_docs < 2 {
        return Err(Error::InsufficientDocuments { found: num_docs });
    }
    if n_neg < 1 {
        return Err(Error::InvalidParameter("n_neg must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_negative = |d: usize, rng: &mut ChaCha8Rng| {
        let mut other = rng.random_range(0..num_docs - 1);
        if other >= d {
            other += 1;
        }
        let group = rng.random_range(0..corpus.documents()[other].num_groups());
        GroupKey { doc: other, group }
    };

    let mut triplets = Vec::with_capacity(expected_triplet_count(corpus, n_neg));
    for (d, doc) in corpus.documents().iter().enumerate() {
        let len = doc.num_groups();
        for i in 0..len {
            let anchor = GroupKey { doc: d, group: i };
            for _ in 0..n_neg {
                if i + 1 < len {
                    triplets.push(Triplet {
                        anchor,
                        positive: GroupKey { doc: d, group: i + 1 },
                        negative: draw_negative(d, &mut rng),
                    });
                }
                if i > 0 {
                    triplets.push(Triplet {
                        anchor,
                        positive: GroupKey { doc: d, group: i - 1 },
                        negative: draw_negative(d, &mut rng),
                    });
                }
            }
        }
    }
    Ok(triplets)
}

/// Number of triplets each criterion removes from a set of `n0`.
pub fn removal_counts(n0: usize, f_pos: f64, f_tri: f64) -> (usize, usize) {
    let cut = |f: f64| (f * n0 as f64).floor() as usize;
    (cut(f_pos), cut(f_tri))
}

/// Anchor–positive and anchor–negative Euclidean distances.
pub fn triplet_distances(corpus: &Corpus, emb: &EmbeddingMatrix, t: &Triplet) -> Result<(f64, f64)> {
    let vec_of = |key: GroupKey| {
        corpus
            .row(key)
            .filter(|&r| r < emb.rows())
            .map(|r| emb.row(r))
            .ok_or_else(|| Error::Integrity(format!("no embedding for group {key:?}")))
    };
    let a = vec_of(t.anchor)?;
    Ok((euclidean(a, vec_of(t.positive)?), euclidean(a, vec_of(t.negative)?)))
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Indices of the `count` largest keys among `candidates`; on ties the later triplet goes first.
fn largest(candidates: &[usize], key: impl Fn(usize) -> f64, count: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(b.cmp(&a)));
    order.truncate(count);
    order
}

/// Drop likely mislabeled triplets.
///
/// With `N0` input triplets, first the `floor(f_pos·N0)` with largest
/// anchor–positive distance are removed, then from the rest the
/// `floor(f_tri·N0)` with largest `‖A−P‖ − ‖A−N‖`. Survivors keep their
/// original order.
pub fn filter_triplets(
    triplets: &[Triplet],
    corpus: &Corpus,
    emb: &EmbeddingMatrix,
    f_pos: f64,
    f_tri: f64,
) -> Result<Vec<Triplet>> {
    check_fractions(f_pos, f_tri)?;
    let n0 = triplets.len();
    if n0 == 0 {
        return Ok(Vec::new());
    }
    let (cut_pos, cut_tri) = removal_counts(n0, f_pos, f_tri);
    if cut_pos + cut_tri >= n0 {
        return Err(Error::OverFiltering {
            removed: cut_pos + cut_tri,
            total: n0,
        });
    }

    let distances = triplets
        .par_iter()
        .map(|t| triplet_distances(corpus, emb, t))
        .collect::<Result<Vec<_>>>()?;

    let mut keep = vec![true; n0];
    let all: Vec<usize> = (0..n0).collect();
    for i in largest(&all, |i| distances[i].0, cut_pos) {
        keep[i] = false;
    }
    let remaining: Vec<usize> = (0..n0).filter(|&i| keep[i]).collect();
    for i in largest(&remaining, |i| distances[i].0 - distances[i].1, cut_tri) {
        keep[i] = false;
    }
    Ok(triplets
        .iter()
        .zip(keep)
        .filter_map(|(t, k)| k.then_some(*t))
        .collect())
}

#[derive(Serialize)]
struct ExportedGroup<'a> {
    doc: &'a str,
    group: usize,
    text: String,
}

#[derive(Serialize)]
struct ExportedTriplet<'a> {
    anchor: ExportedGroup<'a>,
    positive: ExportedGroup<'a>,
    negative: ExportedGroup<'a>,
}

/// Write triplets as JSON lines with group texts. Returns the number of lines.
pub fn write_triplets<W: Write>(triplets: &[Triplet], corpus: &Corpus, mut w: W) -> Result<usize> {
    let resolve = |key: GroupKey| {
        let doc = corpus
            .documents()
            .get(key.doc)
            .ok_or_else(|| Error::Integrity(format!("triplet references missing document {}", key.doc)))?;
        let group = doc.groups.get(key.group).ok_or_else(|| {
            Error::Integrity(format!("document {:?} has no group {}", doc.id, key.group))
        })?;
        Ok::<_, Error>(ExportedGroup {
            doc: &doc.id,
            group: key.group,
            text: group.text(),
        })
    };
    let io = |e: std::io::Error| Error::Integrity(format!("write failed: {e}"));
    for t in triplets {
        let rec = ExportedTriplet {
            anchor: resolve(t.anchor)?,
            positive: resolve(t.positive)?,
            negative: resolve(t.negative)?,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(triplets.len())
}

pub fn export_triplets(triplets: &[Triplet], corpus: &Corpus, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    // Resolve everything before touching the file so a bad reference leaves nothing behind.
    write_triplets(triplets, corpus, std::io::sink())?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_triplets(triplets, corpus, BufWriter::new(file))
}

/// Sidecar settings the trainer reads next to the triplet file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub margin: f64,
    pub epochs: usize,
}

impl From<&FtParams> for TrainerConfig {
    fn from(p: &FtParams) -> Self {
        TrainerConfig {
            margin: p.margin,
            epochs: p.epochs,
        }
    }
}
