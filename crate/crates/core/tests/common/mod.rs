//! Fixtures and brute-force reference implementations shared by the integration suites.
//!
//! The oracles here are written independently of the library code paths
//! they check: selection instead of sorting, explicit contingency tables,
//! direct document scans.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};
use std::ops::Range;

use bos_topics::corpus::{Corpus, GroupKey};
use bos_topics::embedding::EmbeddingMatrix;
use bos_topics::triplets::Triplet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLUSTER_WORDS: [[&str; 6]; 3] = [
    ["Rocket", "orbit", "launch", "planet", "comet", "telescope"],
    ["Pitcher", "inning", "batter", "homerun", "stadium", "umpire"],
    ["Senate", "ballot", "election", "governor", "campaign", "policy"],
];

/// A synthetic corpus whose group embeddings come from known clusters.
pub struct Planted {
    pub corpus: Corpus,
    pub emb: EmbeddingMatrix,
    /// Majority cluster of each document.
    pub doc_labels: Vec<usize>,
    /// Cluster each group was drawn from.
    pub group_clusters: Vec<usize>,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit vector within `max_angle_deg` of the basis vector `axis`.
pub fn noisy_axis(rng: &mut impl Rng, axis: usize, dim: usize, max_angle_deg: f64) -> Vec<f32> {
    let mut u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    u[axis] = 0.0;
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let theta = rng.random_range(0.0..=max_angle_deg).to_radians();
    (0..dim)
        .map(|i| {
            let base = if i == axis { theta.cos() } else { 0.0 };
            (base + theta.sin() * u[i] / n) as f32
        })
        .collect()
}

/// `docs × groups` groups; cluster centroids are orthogonal basis vectors
/// (pairwise 90°), noise is at most `noise_deg`, and each group comes from
/// its document's majority cluster with probability `purity`.
pub fn planted(seed: u64, docs: usize, groups: usize, clusters: usize, dim: usize, noise_deg: f64, purity: f64) -> Planted {
    assert!(clusters <= dim && clusters <= CLUSTER_WORDS.len());
    let mut rng = rng(seed);
    let mut records = Vec::with_capacity(docs);
    let mut rows = Vec::with_capacity(docs * groups);
    let mut doc_labels = Vec::with_capacity(docs);
    let mut group_clusters = Vec::with_capacity(docs * groups);
    for d in 0..docs {
        let main = rng.random_range(0..clusters);
        doc_labels.push(main);
        let mut text = String::new();
        for _ in 0..groups {
            let cluster = if rng.random_bool(purity) {
                main
            } else {
                let mut other = rng.random_range(0..clusters - 1);
                if other >= main {
                    other += 1;
                }
                other
            };
            group_clusters.push(cluster);
            rows.push(noisy_axis(&mut rng, cluster, dim, noise_deg));
            let words: Vec<&str> = (0..4)
                .map(|_| CLUSTER_WORDS[cluster][rng.random_range(0..6)])
                .collect();
            text.push_str(&format!("The {} and {}. ", capitalize(words[0]), words[1..].join(" ")));
        }
        records.push((format!("doc{d:04}"), text, Some(format!("class{main}"))));
    }
    let (corpus, report) = Corpus::from_records(records, 1).expect("planted corpus");
    assert!(report.dropped.is_empty());
    assert_eq!(corpus.num_groups(), docs * groups, "one sentence per group");
    Planted {
        corpus,
        emb: EmbeddingMatrix::from_rows(&rows).unwrap().normalize().unwrap(),
        doc_labels,
        group_clusters,
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// Corpus with the given group counts per document (`n_s = 1`).
pub fn corpus_with_sizes(sizes: &[usize]) -> Corpus {
    let recs = sizes.iter().enumerate().map(|(d, &n)| {
        let text: String = (0..n).map(|i| format!("Doc {d} part {i}. ")).collect();
        (format!("d{d}"), text, None)
    });
    Corpus::from_records(recs, 1).unwrap().0
}

pub fn random_unit_rows(rng: &mut impl Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let data: Vec<Vec<f32>> = (0..rows)
        .map(|_| loop {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            if v.iter().map(|x| x * x).sum::<f32>() > 1e-3 {
                break v;
            }
        })
        .collect();
    EmbeddingMatrix::from_rows(&data).unwrap().normalize().unwrap()
}

/// `Σ_d n_neg · max(2|d| − 2, 0)` by enumerating each document's emit conditions.
pub fn oracle_triplet_count(sizes: &[usize], n_neg: usize) -> usize {
    let mut n = 0;
    for &len in sizes {
        for i in 0..len {
            for _ in 0..n_neg {
                n += usize::from(i + 1 < len) + usize::from(i > 0);
            }
        }
    }
    n
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Survivors by repeated selection of the current worst triplet (later index on ties).
pub fn oracle_filter(triplets: &[Triplet], corpus: &Corpus, emb: &EmbeddingMatrix, f_pos: f64, f_tri: f64) -> Vec<Triplet> {
    let n0 = triplets.len();
    let v = |k: GroupKey| emb.row(corpus.row(k).unwrap());
    let ap: Vec<f64> = triplets.iter().map(|t| dist(v(t.anchor), v(t.positive))).collect();
    let an: Vec<f64> = triplets.iter().map(|t| dist(v(t.anchor), v(t.negative))).collect();
    let mut alive: Vec<bool> = vec![true; n0];
    let remove = |count: usize, key: &dyn Fn(usize) -> f64, alive: &mut Vec<bool>| {
        for _ in 0..count {
            let mut worst: Option<usize> = None;
            for i in 0..n0 {
                if !alive[i] {
                    continue;
                }
                worst = match worst {
                    Some(w) if key(i) < key(w) => Some(w),
                    _ => Some(i),
                };
            }
            alive[worst.unwrap()] = false;
        }
    };
    let cut_pos = (f_pos * n0 as f64) as usize;
    let cut_tri = (f_tri * n0 as f64) as usize;
    remove(cut_pos, &|i| ap[i], &mut alive);
    remove(cut_tri, &|i| ap[i] - an[i], &mut alive);
    triplets
        .iter()
        .zip(&alive)
        .filter(|(_, a)| **a)
        .map(|(t, _)| *t)
        .collect()
}

/// Exhaustive assignment: full sort of every topic by (score desc, index asc), take position `rank − 1`.
pub fn oracle_assign(v: &[f32], topics: &[Vec<f64>], prior: &[f64], rank: usize) -> usize {
    let vn = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, usize)> = topics
        .iter()
        .enumerate()
        .map(|(t, tv)| {
            let tn = tv.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = v.iter().zip(tv).map(|(a, b)| *a as f64 * b).sum();
            let cos = if tn == 0.0 { 0.0 } else { dot / (vn * tn) };
            (cos * prior[t], t)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored[(rank - 1).min(scored.len() - 1)].1
}

/// n_min via the raw-moment variance formula.
pub fn oracle_n_min(per_topic: &[u64], max_doc: u64) -> f64 {
    let k = per_topic.len() as f64;
    let s1: f64 = per_topic.iter().map(|&x| x as f64).sum();
    let s2: f64 = per_topic.iter().map(|&x| (x as f64) * (x as f64)).sum();
    let var = (s2 / k - (s1 / k) * (s1 / k)).max(0.0);
    s1 / k + var.sqrt() + max_doc as f64
}

pub fn oracle_score(per_topic: &[u64], max_doc: u64, t: usize) -> f64 {
    let n: u64 = per_topic.iter().sum();
    let excess = per_topic[t] as f64 - oracle_n_min(per_topic, max_doc);
    if excess <= 0.0 {
        return 0.0;
    }
    excess.sqrt() * (per_topic[t] as f64 / n as f64 - 1.0 / per_topic.len() as f64)
}

/// NMI from an explicit contingency table over the distinct labels.
pub fn oracle_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let ps: Vec<usize> = pred.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let ts: Vec<usize> = truth.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut table = vec![vec![0f64; ts.len()]; ps.len()];
    for (p, t) in pred.iter().zip(truth) {
        let i = ps.iter().position(|x| x == p).unwrap();
        let j = ts.iter().position(|x| x == t).unwrap();
        table[i][j] += 1.0;
    }
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..ts.len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let h = |xs: &[f64]| -xs.iter().map(|c| c / n).map(|p| p * p.log2()).sum::<f64>();
    let (hp, ht) = (h(&row), h(&col));
    if hp == 0.0 && ht == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for i in 0..ps.len() {
        for j in 0..ts.len() {
            if table[i][j] > 0.0 {
                mi += table[i][j] / n * ((table[i][j] * n) / (row[i] * col[j])).log2();
            }
        }
    }
    // The ratio is base-independent.
    mi / ((hp + ht) / 2.0)
}

/// Mean NPMI over scorable pairs, counting documents by direct scans.
pub fn oracle_topic_npmi(words: &[&str], docs: &[Vec<&str>]) -> Option<f64> {
    let n = docs.len() as f64;
    let sets: Vec<HashSet<&str>> = docs.iter().map(|d| d.iter().copied().collect()).collect();
    let df = |w: &str| sets.iter().filter(|s| s.contains(w)).count() as f64;
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..words.len() {
        for j in i + 1..words.len() {
            let (a, b) = (words[i], words[j]);
            let (fa, fb) = (df(a), df(b));
            if fa == 0.0 || fb == 0.0 {
                continue;
            }
            let co = sets.iter().filter(|s| s.contains(a) && s.contains(b)).count() as f64;
            let pj = if co == 0.0 { 1.0 / n } else { co / n };
            let v = if pj == 1.0 {
                1.0
            } else {
                (pj / (fa / n * fb / n)).ln() / -pj.ln()
            };
            total += v;
            pairs += 1;
        }
    }
    (pairs > 0).then(|| total / pairs as f64)
}

/// Word counts per topic and per-document maxima by scanning the corpus.
pub fn oracle_counts(corpus: &Corpus, assignments: &[usize], k: usize) -> HashMap<String, (Vec<u64>, u64)> {
    let mut out: HashMap<String, (Vec<u64>, u64)> = HashMap::new();
    let mut row = 0;
    for doc in corpus.documents() {
        let mut local: HashMap<String, u64> = HashMap::new();
        for g in &doc.groups {
            for w in &g.words {
                out.entry(w.clone()).or_insert_with(|| (vec![0; k], 0)).0[assignments[row]] += 1;
                *local.entry(w.clone()).or_default() += 1;
            }
            row += 1;
        }
        for (w, c) in local {
            let e = out.get_mut(&w).unwrap();
            e.1 = e.1.max(c);
        }
    }
    out
}

pub fn ranges_of(sizes: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let r = start..start + s;
            start += s;
            r
        })
        .collect()
}
