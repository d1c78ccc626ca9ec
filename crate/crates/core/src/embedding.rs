//! Sentence-group embeddings and the `EMB1` file format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "BOSEMB1\0"            8 bytes magic
//! row_count              u32
//! dim                    u32
//! row_count * dim        f32, row-major
//! ```
//!
//! A companion `<path>.idx.jsonl` maps each row to its `(doc, group)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BOSEMB1\0";
const HEADER_LEN: u64 = 16;

/// Dense `rows × dim` matrix of `f32`, one row per sentence group.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 && !data.is_empty() {
            return Err(Error::InvalidParameter("embedding dim must be positive".into()));
        }
        if dim > 0 && !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        Ok(EmbeddingMatrix {
            dim,
            data,
            normalized: false,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        EmbeddingMatrix::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Scale every row to unit Euclidean norm.
    pub fn normalize(mut self) -> Result<Self> {
        let dim = self.dim.max(1);
        for (r, row) in self.data.chunks_exact_mut(dim).enumerate() {
            let norm = norm(row);
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::DegenerateVector { row: r });
            }
            for x in row.iter_mut() {
                *x = (f64::from(*x) / norm) as f32;
            }
        }
        self.normalized = true;
        Ok(self)
    }

    /// Fail unless the row count matches the corpus group count.
    pub fn check_aligned(&self, corpus: &Corpus) -> Result<()> {
        if self.rows() != corpus.num_groups() {
            return Err(Error::Alignment {
                expected: corpus.num_groups(),
                found: self.rows(),
            });
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut reader: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN as usize];
        let got = read_full(&mut reader, &mut header)?;
        if got < MAGIC.len() || &header[..8] != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected BOSEMB1".into(),
            });
        }
        if got < header.len() {
            return Err(Error::Format {
                offset: got as u64,
                message: "truncated header".into(),
            });
        }
        let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if rows > 0 && dim == 0 {
            return Err(Error::Format {
                offset: 12,
                message: format!("{rows} rows declared with dim 0"),
            });
        }
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format {
                offset: 8,
                message: "row_count * dim overflows".into(),
            })?;

        let mut payload = Vec::new();
        reader
            .take(expected as u64 + 1)
            .read_to_end(&mut payload)
            .map_err(|e| Error::Format {
                offset: HEADER_LEN,
                message: e.to_string(),
            })?;
        if payload.len() < expected {
            return Err(Error::Format {
                offset: HEADER_LEN + payload.len() as u64,
                message: format!(
                    "truncated payload: {rows} x {dim} floats need {expected} bytes, found {}",
                    payload.len()
                ),
            });
        }
        if payload.len() > expected {
            return Err(Error::Format {
                offset: HEADER_LEN + expected as u64,
                message: format!("trailing data after {rows} x {dim} floats"),
            });
        }

        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Format {
                offset: HEADER_LEN + 4 * i as u64,
                message: "non-finite value".into(),
            });
        }
        let matrix = EmbeddingMatrix {
            dim,
            data,
            normalized: false,
        };
        if let Some(row) = matrix.iter_rows().position(|r| norm(r) == 0.0) {
            return Err(Error::DegenerateVector { row });
        }
        Ok(matrix)
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        let too_big = |_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "matrix exceeds u32 bounds");
        writer.write_all(MAGIC)?;
        writer.write_all(&u32::try_from(self.rows()).map_err(too_big)?.to_le_bytes())?;
        writer.write_all(&u32::try_from(self.dim).map_err(too_big)?.to_le_bytes())?;
        for x in &self.data {
            writer.write_all(&x.to_le_bytes())?;
        }
        writer.flush()
    }
}

fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match reader.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => {
                return Err(Error::Format {
                    offset: got as u64,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(got)
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(Error::DegenerateVector { row: 0 });
    }
    if nb == 0.0 {
        return Err(Error::DegenerateVector { row: 1 });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::read_from(BufReader::new(file))
}

pub fn save_embeddings(path: impl AsRef<Path>, matrix: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    matrix
        .write_to(BufWriter::new(file))
        .map_err(|e| Error::io(path, e))
}

/// One line of the `.idx.jsonl` sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub row: usize,
    pub doc: String,
    pub group: usize,
}

/// Path of the row index that accompanies an embedding file.
pub fn index_path(path: impl AsRef<Path>) -> PathBuf {
    let mut p = path.as_ref().as_os_str().to_owned();
    p.push(".idx.jsonl");
    PathBuf::from(p)
}

pub fn index_entries(corpus: &Corpus) -> impl Iterator<Item = IndexEntry> + '_ {
    corpus.group_index().iter().enumerate().map(|(row, key)| IndexEntry {
        row,
        doc: corpus.documents()[key.doc].id.clone(),
        group: key.group,
    })
}

/// Write `<emb_path>.idx.jsonl` for the corpus group enumeration.
pub fn write_index(emb_path: impl AsRef<Path>, corpus: &Corpus) -> Result<PathBuf> {
    let path = index_path(emb_path);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for entry in index_entries(corpus) {
        serde_json::to_writer(&mut w, &entry)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// An external process that turns group texts into an `EMB1` file.
///
/// The provider receives one JSON object per group on standard input,
/// `{"row", "doc", "group", "text"}` in row order, and must write an `EMB1`
/// file to the path passed as its final argument (also exported as
/// `BOS_EMB_OUT`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl ProviderCommand {
    /// Split a command line on whitespace. No quoting is interpreted.
    pub fn parse(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidParameter("empty provider command".into()))?;
        Ok(ProviderCommand {
            program,
            args: parts.collect(),
        })
    }
}

#[derive(Serialize)]
struct ProviderInput<'a> {
    row: usize,
    doc: &'a str,
    group: usize,
    text: String,
}

/// Run a provider over the corpus and load the embeddings it writes to `out`.
///
/// Also writes the row index sidecar next to `out`.
pub fn request_embeddings(
    corpus: &Corpus,
    provider: &ProviderCommand,
    out: impl AsRef<Path>,
) -> Result<EmbeddingMatrix> {
    request_embeddings_with_env(corpus, provider, out, &[])
}

pub fn request_embeddings_with_env(
    corpus: &Corpus,
    provider: &ProviderCommand,
    out: impl AsRef<Path>,
    env: &[(&str, &str)],
) -> Result<EmbeddingMatrix> {
    let out = out.as_ref();
    let mut input = Vec::new();
    for (row, key) in corpus.group_index().iter().enumerate() {
        let doc = &corpus.documents()[key.doc];
        let rec = ProviderInput {
            row,
            doc: &doc.id,
            group: key.group,
            text: doc.groups[key.group].text(),
        };
        serde_json::to_writer(&mut input, &rec)?;
        input.push(b'\n');
    }

    let mut child = Command::new(&provider.program)
        .args(&provider.args)
        .arg(out)
        .env("BOS_EMB_OUT", out)
        .envs(env.iter().copied())
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Provider {
            status: "spawn failed".into(),
            stderr: format!("{}: {e}", provider.program),
        })?;

    let mut stdin = child.stdin.take().expect("stdin is piped");
    let writer = std::thread::spawn(move || {
        // A provider may exit without draining its input; a broken pipe is reported via its status.
        let _ = stdin.write_all(&input);
    });
    let output = child.wait_with_output().map_err(|e| Error::Provider {
        status: "wait failed".into(),
        stderr: e.to_string(),
    })?;
    let _ = writer.join();

    if !output.status.success() {
        return Err(Error::Provider {
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_owned(),
        });
    }
    let matrix = load_embeddings(out)?;
    matrix.check_aligned(corpus)?;
    write_index(out, corpus)?;
    Ok(matrix)
}
