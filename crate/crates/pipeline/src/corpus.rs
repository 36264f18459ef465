//! JSONL corpus files: one JSON object per line, UTF-8, newline-terminated.
//!
//! Every artifact the pipeline writes — datasets, CoT corpora, self-eval
//! corpora, teacher caches — uses this format because it is streamable,
//! resumable (append is a valid write), and diff-able. Readers reject
//! malformed lines with their line number and duplicate record keys, so a
//! truncated or double-appended file fails loudly instead of training on
//! silently corrupt data.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use selfdistill_core::{CoTSample, SelfEvalSample, TaskInstance};

/// A record type that can live in a corpus file. The key ties the invariant
/// "no two records describe the same thing" to the type: instances are keyed
/// by id, CoT samples by (instance, draw), self-evals by (instance, draw,
/// eval draw). Batches are homogeneous by construction — one Rust type per
/// file — so the mixed-type failure mode of schemaless stores cannot occur.
pub trait CorpusRecord: Serialize + DeserializeOwned {
    /// Human-readable type name for error messages.
    const KIND: &'static str;

    /// Uniqueness key within one corpus file.
    fn key(&self) -> String;
}

impl CorpusRecord for TaskInstance {
    const KIND: &'static str = "task instance";

    fn key(&self) -> String {
        self.id.clone()
    }
}

impl CorpusRecord for CoTSample {
    const KIND: &'static str = "cot sample";

    fn key(&self) -> String {
        format!("{}/{}", self.instance_id, self.cot_index)
    }
}

impl CorpusRecord for SelfEvalSample {
    const KIND: &'static str = "self-eval sample";

    fn key(&self) -> String {
        format!("{}/{}/{}", self.instance_id, self.cot_index, self.eval_index)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: bad {kind} record: {message}")]
    SchemaViolation { path: PathBuf, line: usize, kind: &'static str, message: String },
    #[error("{path}:{line}: duplicate {kind} key {key}")]
    DuplicateKey { path: PathBuf, line: usize, kind: &'static str, key: String },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusIoError {
    CorpusIoError::Io { path: path.to_path_buf(), source }
}

/// Write records to `path`, replacing any existing file. Returns the number
/// of lines written; the file always ends with a newline (or is empty).
pub fn serialize_corpus<R: CorpusRecord>(
    records: &[R],
    path: &Path,
) -> Result<usize, CorpusIoError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        write_record(&mut out, record, path)?;
    }
    out.flush().map_err(|e| io_err(path, e))?;
    Ok(records.len())
}

/// Append records to `path`, creating it if absent. Uniqueness against the
/// existing contents is the caller's contract (the harvester checks before
/// appending); the next full read still enforces it.
pub fn append_corpus<R: CorpusRecord>(
    records: &[R],
    path: &Path,
) -> Result<usize, CorpusIoError> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        write_record(&mut out, record, path)?;
    }
    out.flush().map_err(|e| io_err(path, e))?;
    Ok(records.len())
}

fn write_record<R: CorpusRecord, W: Write>(
    out: &mut W,
    record: &R,
    path: &Path,
) -> Result<(), CorpusIoError> {
    // serde_json only fails here on non-string map keys or a failing
    // Serialize impl, neither of which our record types can produce.
    let line = serde_json::to_string(record).map_err(|e| CorpusIoError::SchemaViolation {
        path: path.to_path_buf(),
        line: 0,
        kind: R::KIND,
        message: e.to_string(),
    })?;
    out.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
    out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Read a whole corpus in file order. Blank lines are ignored so that a file
/// assembled by concatenation still reads cleanly; anything else that fails
/// to parse reports its 1-based line number.
pub fn deserialize_corpus<R: CorpusRecord>(path: &Path) -> Result<Vec<R>, CorpusIoError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: R =
            serde_json::from_str(&line).map_err(|e| CorpusIoError::SchemaViolation {
                path: path.to_path_buf(),
                line: idx + 1,
                kind: R::KIND,
                message: e.to_string(),
            })?;
        let key = record.key();
        if !seen.insert(key.clone()) {
            return Err(CorpusIoError::DuplicateKey {
                path: path.to_path_buf(),
                line: idx + 1,
                kind: R::KIND,
                key,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Like `deserialize_corpus`, but a missing file reads as an empty corpus.
/// Used by resume scans, where "never started" and "nothing done yet" are
/// the same state.
pub fn read_or_empty<R: CorpusRecord>(path: &Path) -> Result<Vec<R>, CorpusIoError> {
    if path.exists() {
        deserialize_corpus(path)
    } else {
        Ok(Vec::new())
    }
}
