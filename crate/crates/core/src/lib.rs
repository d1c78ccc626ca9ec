//! Bag-of-sentences topic modeling.
//!
//! Documents are split into sentences and grouped into disjoint runs of
//! `n_s` consecutive sentences. Each group carries one embedding vector and
//! receives exactly one topic. The crate covers the whole data path:
//!
//! - [`corpus`]: sentence splitting, grouping and word tokenization.
//! - [`embedding`]: the `EMB1` embedding matrix format and external providers.
//! - [`triplets`]: anchor/positive/negative dataset construction and noise
//!   filtering for encoder fine-tuning.
//! - [`model`]: hard-assignment EM inference with an annealed document prior.
//! - [`report`]: word-topic counts and scores.
//! - [`eval`]: NMI against labels and document-level NPMI coherence.

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod model;
pub mod report;
pub mod triplets;

pub use corpus::{Corpus, Document, GroupKey, LoadReport, SentenceGroup};
pub use embedding::EmbeddingMatrix;
pub use error::{Error, Result};
pub use model::{FitParams, TopicModel};
pub use triplets::{FtParams, Triplet};
