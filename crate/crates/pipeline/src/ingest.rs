//! Thin adapters from public dataset distributions to task-instance JSONL.
//!
//! Each adapter maps one public format — the math word problems ship as one
//! JSON array, the QA and NLI sets as JSONL — onto `TaskInstance` records and
//! nothing more: no filtering, no relabeling, no text cleanup beyond
//! whitespace trimming. The converted file then goes through the same
//! dataset validation as anything else the pipeline reads.

use std::path::Path;

use selfdistill_core::types::validate_dataset;
use selfdistill_core::{TaskInstance, TaskKind};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestFormat {
    /// Math word problems: a JSON array of {ID, Body, Question, Equation, …}.
    Svamp,
    /// Multiple-choice QA: JSONL of {id, question: {stem, choices}, answerKey}.
    CommonsenseQa,
    /// NLI rounds: JSONL of {uid, premise, hypothesis, label: e|n|c}.
    Anli,
}

impl IngestFormat {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "svamp" => Some(IngestFormat::Svamp),
            "cqa" | "commonsenseqa" => Some(IngestFormat::CommonsenseQa),
            "anli" => Some(IngestFormat::Anli),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: instance {id}: answer key {key} matches no choice")]
    BadAnswerKey { line: usize, id: String, key: String },
    #[error("line {line}: instance {id}: unknown gold label {label:?}")]
    UnknownLabel { line: usize, id: String, label: String },
    #[error("converted dataset is invalid: {0}")]
    Invalid(#[from] selfdistill_core::types::CorpusError),
}

/// Convert raw file text in the given format to validated instances.
pub fn ingest(format: IngestFormat, text: &str) -> Result<Vec<TaskInstance>, IngestError> {
    let instances = match format {
        IngestFormat::Svamp => ingest_svamp(text)?,
        IngestFormat::CommonsenseQa => ingest_cqa(text)?,
        IngestFormat::Anli => ingest_anli(text)?,
    };
    validate_dataset(&instances)?;
    Ok(instances)
}

/// File-path convenience wrapper around [`ingest`].
pub fn ingest_file(format: IngestFormat, path: &Path) -> Result<Vec<TaskInstance>, IngestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| IngestError::Io { path: path.to_path_buf(), source: e })?;
    ingest(format, &text)
}

#[derive(Deserialize)]
struct SvampRow {
    #[serde(rename = "ID")]
    id: String,
    #[serde(rename = "Body")]
    body: String,
    #[serde(rename = "Question")]
    question: String,
    #[serde(rename = "Equation")]
    equation: String,
}

/// The math distribution is one JSON array. The gold label is the equation
/// string, not the final number: answer normalization evaluates both sides,
/// so "( 290.0 / 2.0 )" and a student's "145" compare equal.
pub fn ingest_svamp(text: &str) -> Result<Vec<TaskInstance>, IngestError> {
    let rows: Vec<SvampRow> = serde_json::from_str(text)
        .map_err(|e| IngestError::Malformed { line: e.line(), message: e.to_string() })?;
    Ok(rows
        .into_iter()
        .map(|row| TaskInstance {
            id: row.id,
            task: TaskKind::MathWordProblem,
            input_text: format!("{} {}", row.body.trim(), row.question.trim()),
            human_label: Some(row.equation.trim().to_string()),
            choices: None,
        })
        .collect())
}

#[derive(Deserialize)]
struct CqaRow {
    id: String,
    question: CqaQuestion,
    #[serde(rename = "answerKey")]
    answer_key: Option<String>,
}

#[derive(Deserialize)]
struct CqaQuestion {
    stem: String,
    choices: Vec<CqaChoice>,
}

#[derive(Deserialize)]
struct CqaChoice {
    label: String,
    text: String,
}

/// Choices are folded into the input text as "(a) … (b) …" so the student
/// sees its options, and kept separately on the instance for answer
/// normalization. The answer key letter is resolved to the choice text;
/// unlabeled rows (test splits) keep `human_label` empty.
pub fn ingest_cqa(text: &str) -> Result<Vec<TaskInstance>, IngestError> {
    let mut instances = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: CqaRow = serde_json::from_str(line)
            .map_err(|e| IngestError::Malformed { line: idx + 1, message: e.to_string() })?;
        let mut rendered = format!("{}\nAnswer Choices:", row.question.stem.trim());
        for choice in &row.question.choices {
            rendered.push_str(&format!(
                " ({}) {}",
                choice.label.to_ascii_lowercase(),
                choice.text.trim()
            ));
        }
        let human_label = match &row.answer_key {
            Some(key) => Some(
                row.question
                    .choices
                    .iter()
                    .find(|c| c.label.eq_ignore_ascii_case(key))
                    .map(|c| c.text.trim().to_string())
                    .ok_or_else(|| IngestError::BadAnswerKey {
                        line: idx + 1,
                        id: row.id.clone(),
                        key: key.clone(),
                    })?,
            ),
            None => None,
        };
        instances.push(TaskInstance {
            id: row.id,
            task: TaskKind::CommonsenseQa,
            input_text: rendered,
            human_label,
            choices: Some(
                row.question.choices.iter().map(|c| c.text.trim().to_string()).collect(),
            ),
        });
    }
    Ok(instances)
}

#[derive(Deserialize)]
struct AnliRow {
    uid: String,
    premise: String,
    hypothesis: String,
    label: Option<String>,
}

/// NLI rows label with single letters; accept the spelled-out forms too.
fn expand_nli_label(raw: &str) -> Option<&'static str> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "e" | "entailment" => Some("entailment"),
        "n" | "neutral" => Some("neutral"),
        "c" | "contradiction" => Some("contradiction"),
        _ => None,
    }
}

pub fn ingest_anli(text: &str) -> Result<Vec<TaskInstance>, IngestError> {
    let mut instances = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: AnliRow = serde_json::from_str(line)
            .map_err(|e| IngestError::Malformed { line: idx + 1, message: e.to_string() })?;
        let human_label = match &row.label {
            Some(raw) => Some(
                expand_nli_label(raw)
                    .ok_or_else(|| IngestError::UnknownLabel {
                        line: idx + 1,
                        id: row.uid.clone(),
                        label: raw.clone(),
                    })?
                    .to_string(),
            ),
            None => None,
        };
        instances.push(TaskInstance {
            id: row.uid,
            task: TaskKind::Nli,
            input_text: format!(
                "Premise: {}\nHypothesis: {}",
                row.premise.trim(),
                row.hypothesis.trim()
            ),
            human_label,
            choices: None,
        });
    }
    Ok(instances)
}
