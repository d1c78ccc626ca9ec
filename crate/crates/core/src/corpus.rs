//! Documents as ordered sequences of sentence groups.
//!
//! Ingestion runs `split_sentences` → `group_sentences` → `tokenize_words`
//! per document. The resulting [`Corpus`] is immutable and assigns every
//! group a contiguous row number, which is the row of its embedding.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A run of at most `n_s` consecutive sentences from one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceGroup {
    pub doc_id: String,
    /// Position of the group within its document.
    pub index: usize,
    pub sentences: Vec<String>,
    /// Lowercased word tokens of all sentences, in order.
    pub words: Vec<String>,
}

impl SentenceGroup {
    /// The group's sentences joined by single spaces.
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub label: Option<String>,
    pub groups: Vec<SentenceGroup>,
}

impl Document {
    /// Build a document from raw text. Returns `None` when the text holds no sentence.
    pub fn from_text(
        id: impl Into<String>,
        text: &str,
        label: Option<String>,
        n_s: usize,
    ) -> Result<Option<Self>> {
        let id = id.into();
        let sentences = split_sentences(text);
        if sentences.is_empty() {
            check_group_size(n_s)?;
            return Ok(None);
        }
        let groups = group_sentences(&id, sentences, n_s)?;
        Ok(Some(Document { id, label, groups }))
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.groups
            .iter()
            .flat_map(|g| g.sentences.iter().map(String::as_str))
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.groups
            .iter()
            .flat_map(|g| g.words.iter().map(String::as_str))
    }
}

/// Position of a group: document position in the corpus and group position in the document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub doc: usize,
    pub group: usize,
}

/// Counts from ingesting a corpus file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub loaded: usize,
    /// Ids of records whose text held no sentence.
    pub dropped: Vec<String>,
}

/// An immutable collection of documents with a global group enumeration.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    n_s: usize,
    group_index: Vec<GroupKey>,
    doc_offsets: Vec<usize>,
    ids: HashMap<String, usize>,
}

impl Corpus {
    /// Assemble a corpus. Every document must hold at least one group and ids must be unique.
    pub fn new(documents: Vec<Document>, n_s: usize) -> Result<Self> {
        check_group_size(n_s)?;
        let mut ids = HashMap::with_capacity(documents.len());
        let mut group_index = Vec::new();
        let mut doc_offsets = Vec::with_capacity(documents.len() + 1);
        for (d, doc) in documents.iter().enumerate() {
            if ids.insert(doc.id.clone(), d).is_some() {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
            if doc.groups.is_empty() {
                return Err(Error::Integrity(format!("document {:?} has no groups", doc.id)));
            }
            doc_offsets.push(group_index.len());
            group_index.extend((0..doc.groups.len()).map(|group| GroupKey { doc: d, group }));
        }
        doc_offsets.push(group_index.len());
        Ok(Corpus {
            documents,
            n_s,
            group_index,
            doc_offsets,
            ids,
        })
    }

    /// Ingest `(id, text, label)` records. Records without sentences are dropped and reported.
    pub fn from_records<I>(records: I, n_s: usize) -> Result<(Self, LoadReport)>
    where
        I: IntoIterator<Item = (String, String, Option<String>)>,
    {
        check_group_size(n_s)?;
        let records: Vec<_> = records.into_iter().collect();
        let mut seen = HashMap::with_capacity(records.len());
        for (id, _, _) in &records {
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let built = records
            .into_par_iter()
            .map(|(id, text, label)| {
                let fallback = id.clone();
                Document::from_text(id, &text, label, n_s).map(|doc| doc.ok_or(fallback))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut report = LoadReport::default();
        let mut documents = Vec::with_capacity(built.len());
        for doc in built {
            match doc {
                Ok(doc) => documents.push(doc),
                Err(id) => report.dropped.push(id),
            }
        }
        report.loaded = documents.len();
        Ok((Corpus::new(documents, n_s)?, report))
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }

    pub fn num_groups(&self) -> usize {
        self.group_index.len()
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    /// Global enumeration of groups; position in the slice is the row number.
    pub fn group_index(&self) -> &[GroupKey] {
        &self.group_index
    }

    /// Row numbers of a document's groups.
    pub fn doc_rows(&self, doc: usize) -> Range<usize> {
        self.doc_offsets[doc]..self.doc_offsets[doc + 1]
    }

    pub fn row(&self, key: GroupKey) -> Option<usize> {
        let doc = self.documents.get(key.doc)?;
        (key.group < doc.groups.len()).then(|| self.doc_offsets[key.doc] + key.group)
    }

    pub fn key(&self, row: usize) -> Option<GroupKey> {
        self.group_index.get(row).copied()
    }

    pub fn group(&self, key: GroupKey) -> Option<&SentenceGroup> {
        self.documents.get(key.doc)?.groups.get(key.group)
    }

    pub fn group_at(&self, row: usize) -> Option<&SentenceGroup> {
        self.group(self.key(row)?)
    }

    pub fn doc_position(&self, id: &str) -> Option<usize> {
        self.ids.get(id).copied()
    }

    pub fn groups(&self) -> impl Iterator<Item = &SentenceGroup> {
        self.documents.iter().flat_map(|d| d.groups.iter())
    }
}

#[derive(Deserialize)]
struct Record {
    id: String,
    text: String,
    #[serde(default)]
    label: Option<String>,
}

/// Load a line-delimited JSON corpus: one `{"id", "text", "label"?}` object per line.
///
/// Blank lines are ignored. Line numbers in errors are 1-based.
pub fn load_corpus(path: impl AsRef<Path>, n_s: usize) -> Result<(Corpus, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push((rec.id, rec.text, rec.label));
    }
    Corpus::from_records(records, n_s)
}

fn check_group_size(n_s: usize) -> Result<()> {
    if n_s < 1 {
        return Err(Error::InvalidParameter(
            "group size n_s must be at least 1".into(),
        ));
    }
    Ok(())
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '\u{201d}' | '\u{2019}')
}

/// Split text into sentences.
///
/// Boundaries fall after runs of `.`, `!`, `?` (plus trailing closing quotes
/// and brackets) and at runs of line breaks. A period between two digits
/// never splits, and neither does a run of periods whose next non-whitespace
/// character is a lowercase letter. Sentences are trimmed; together they
/// cover every non-whitespace character of the input exactly once.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut push = |from: usize, to: usize| {
        let s = text[from..to].trim();
        if !s.is_empty() {
            sentences.push(s.to_owned());
        }
    };

    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c == '\n' || c == '\r' {
            push(start, pos);
            while i < chars.len() && matches!(chars[i].1, '\n' | '\r') {
                i += 1;
            }
            start = chars.get(i).map_or(text.len(), |&(p, _)| p);
            continue;
        }
        if !is_terminator(c) {
            i += 1;
            continue;
        }

        let prev = i.checked_sub(1).map(|j| chars[j].1);
        let next = chars.get(i + 1).map(|&(_, n)| n);
        if c == '.' && prev.is_some_and(|p| p.is_ascii_digit()) && next.is_some_and(|n| n.is_ascii_digit()) {
            i += 1;
            continue;
        }

        let mut end = i + 1;
        let mut only_periods = c == '.';
        while end < chars.len() && is_terminator(chars[end].1) {
            only_periods &= chars[end].1 == '.';
            end += 1;
        }
        while end < chars.len() && is_closer(chars[end].1) {
            end += 1;
        }
        if only_periods {
            let following = chars[end..].iter().map(|&(_, n)| n).find(|n| !n.is_whitespace());
            if following.is_some_and(char::is_lowercase) {
                i = end;
                continue;
            }
        }
        let end_byte = chars.get(end).map_or(text.len(), |&(p, _)| p);
        push(start, end_byte);
        start = end_byte;
        i = end;
    }
    push(start, text.len());
    sentences
}

/// Partition sentences into consecutive groups of `n_s`; only the last group may be shorter.
pub fn group_sentences(doc_id: &str, sentences: Vec<String>, n_s: usize) -> Result<Vec<SentenceGroup>> {
    check_group_size(n_s)?;
    let mut groups = Vec::with_capacity(sentences.len().div_ceil(n_s));
    let mut iter = sentences.into_iter().peekable();
    while iter.peek().is_some() {
        let sentences: Vec<String> = iter.by_ref().take(n_s).collect();
        let words = sentences.iter().flat_map(|s| tokenize_words(s)).collect();
        groups.push(SentenceGroup {
            doc_id: doc_id.to_owned(),
            index: groups.len(),
            sentences,
            words,
        });
    }
    Ok(groups)
}

/// Lowercased alphanumeric tokens; punctuation is dropped, numbers are kept.
pub fn tokenize_words(sentence: &str) -> Vec<String> {
    sentence
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
