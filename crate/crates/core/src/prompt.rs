//! Few-shot prompt construction and completion parsing.
//!
//! Prompts and completions share one wire format: an exemplar (or a teacher
//! response) is a `Rationale: ...` line followed by a `Label: ...` line.
//! Parsing splits at the **last** `Label:` marker, case-insensitively, so a
//! rationale that itself discusses labels does not derail extraction.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::answer::{canonical_verdict, VerdictLexicon};
use crate::types::{canonicalize_label, CoTSample, TaskInstance, TaskKind, Verdict};

/// One worked example for chain-of-thought prompting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTExemplar {
    pub input_text: String,
    pub rationale: String,
    pub label: String,
}

/// One worked example for self-evaluation prompting. `cot_text` is a complete
/// rendered subject (task, rationale, predicted label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfEvalExemplar {
    pub cot_text: String,
    pub rationale: String,
    pub verdict: Verdict,
}

/// A few-shot template: an instruction plus exemplars of one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptTemplate {
    Cot {
        instruction: String,
        exemplars: Vec<CoTExemplar>,
    },
    SelfEval {
        instruction: String,
        exemplars: Vec<SelfEvalExemplar>,
    },
}

impl PromptTemplate {
    #[must_use]
    pub fn shot_count(&self) -> usize {
        match self {
            PromptTemplate::Cot { exemplars, .. } => exemplars.len(),
            PromptTemplate::SelfEval { exemplars, .. } => exemplars.len(),
        }
    }

    #[must_use]
    pub fn is_cot(&self) -> bool {
        matches!(self, PromptTemplate::Cot { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptError {
    /// A CoT template was passed where a self-eval template was needed, or
    /// vice versa.
    KindMismatch { expected: &'static str },
    /// Subject construction was given a CoT sample from a different instance.
    SubjectIdMismatch { instance_id: String, cot_instance_id: String },
    /// Subject construction needs a successfully parsed CoT sample.
    UnparsedCot { instance_id: String, cot_index: u32 },
}

impl fmt::Display for PromptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptError::KindMismatch { expected } => {
                write!(f, "template kind mismatch: expected a {expected} template")
            }
            PromptError::SubjectIdMismatch { instance_id, cot_instance_id } => {
                write!(
                    f,
                    "CoT sample belongs to {cot_instance_id:?}, not {instance_id:?}"
                )
            }
            PromptError::UnparsedCot { instance_id, cot_index } => {
                write!(
                    f,
                    "cannot build an eval subject from unparsed CoT ({instance_id:?}, {cot_index})"
                )
            }
        }
    }
}

impl core::error::Error for PromptError {}

/// Marker line that introduces the model's answer region.
pub const LABEL_MARKER: &str = "label:";
/// Tag that opens a rationale, stripped during parsing.
pub const RATIONALE_TAG: &str = "rationale:";

/// Render the few-shot CoT prompt for one instance. The prompt ends with an
/// open `Rationale:` cue so the completion starts inside the rationale.
pub fn render_cot_prompt(
    template: &PromptTemplate,
    instance: &TaskInstance,
) -> Result<String, PromptError> {
    let (instruction, exemplars) = match template {
        PromptTemplate::Cot { instruction, exemplars } => (instruction, exemplars),
        PromptTemplate::SelfEval { .. } => {
            return Err(PromptError::KindMismatch { expected: "chain-of-thought" })
        }
    };
    let mut out = String::new();
    out.push_str(instruction);
    out.push_str("\n\n");
    for ex in exemplars {
        out.push_str("Input: ");
        out.push_str(&ex.input_text);
        out.push_str("\nRationale: ");
        out.push_str(&ex.rationale);
        out.push_str("\nLabel: ");
        out.push_str(&ex.label);
        out.push_str("\n\n");
    }
    out.push_str("Input: ");
    out.push_str(&instance.input_text);
    out.push_str("\nRationale:");
    Ok(out)
}

/// The text a self-evaluation judges: the original task input, the rationale
/// under review, and the label it arrived at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSubject(String);

impl EvalSubject {
    #[must_use]
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The predicted label embedded in the subject, if present. The simulator
    /// uses this to phrase its verdict rationales.
    #[must_use]
    pub fn predicted_label(&self) -> Option<&str> {
        let idx = self.0.rfind(PREDICTED_LABEL_TAG)?;
        let rest = &self.0[idx + PREDICTED_LABEL_TAG.len()..];
        Some(rest.lines().next().unwrap_or(rest).trim())
    }
}

impl fmt::Display for EvalSubject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

const PREDICTED_LABEL_TAG: &str = "Predicted Label:";

/// Build the subject text for evaluating `cot` against its instance.
pub fn make_eval_subject(
    instance: &TaskInstance,
    cot: &CoTSample,
) -> Result<EvalSubject, PromptError> {
    if instance.id != cot.instance_id {
        return Err(PromptError::SubjectIdMismatch {
            instance_id: instance.id.clone(),
            cot_instance_id: cot.instance_id.clone(),
        });
    }
    if !cot.parse_ok {
        return Err(PromptError::UnparsedCot {
            instance_id: cot.instance_id.clone(),
            cot_index: cot.cot_index,
        });
    }
    let mut out = String::new();
    out.push_str("Task: ");
    out.push_str(&instance.input_text);
    out.push_str("\nRationale: ");
    out.push_str(&cot.rationale);
    out.push('\n');
    out.push_str(PREDICTED_LABEL_TAG);
    out.push(' ');
    out.push_str(&cot.pseudo_label);
    Ok(EvalSubject(out))
}

/// Render the few-shot self-evaluation prompt for one subject.
pub fn render_self_eval_prompt(
    template: &PromptTemplate,
    subject: &EvalSubject,
) -> Result<String, PromptError> {
    let (instruction, exemplars) = match template {
        PromptTemplate::SelfEval { instruction, exemplars } => (instruction, exemplars),
        PromptTemplate::Cot { .. } => {
            return Err(PromptError::KindMismatch { expected: "self-evaluation" })
        }
    };
    let mut out = String::new();
    out.push_str(instruction);
    out.push_str("\n\n");
    for ex in exemplars {
        out.push_str(&ex.cot_text);
        out.push_str("\nRationale: ");
        out.push_str(&ex.rationale);
        out.push_str("\nLabel: ");
        out.push_str(ex.verdict.as_str());
        out.push_str("\n\n");
    }
    out.push_str(subject.as_str());
    out.push_str("\nRationale:");
    Ok(out)
}

/// Why a completion could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseFailure {
    NoLabelMarker,
    EmptyLabel,
    UnknownVerdict { raw: String },
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseFailure::NoLabelMarker => f.write_str("completion has no Label: marker"),
            ParseFailure::EmptyLabel => f.write_str("completion has an empty label"),
            ParseFailure::UnknownVerdict { raw } => {
                write!(f, "completion's label {raw:?} is not a recognized verdict")
            }
        }
    }
}

impl core::error::Error for ParseFailure {}

/// A parsed chain-of-thought completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCot {
    pub rationale: String,
    pub label: String,
}

/// A parsed self-evaluation completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSelfEval {
    pub rationale: String,
    pub verdict: Verdict,
    pub via_synonym: bool,
}

/// Byte offset of the last case-insensitive occurrence of `LABEL_MARKER`.
fn last_label_marker(completion: &str) -> Option<usize> {
    let lower = completion.to_lowercase();
    // Lowercasing can change byte lengths for non-ASCII text, so map the match
    // back through a linear scan over char boundaries.
    if lower.len() == completion.len() {
        return lower.rfind(LABEL_MARKER);
    }
    let mut found = None;
    for (idx, _) in completion.char_indices() {
        let tail = &completion[idx..];
        if tail.len() >= LABEL_MARKER.len()
            && tail.is_char_boundary(LABEL_MARKER.len())
            && tail[..LABEL_MARKER.len()].eq_ignore_ascii_case(LABEL_MARKER)
        {
            found = Some(idx);
        }
    }
    found
}

/// Split a completion into (rationale, raw label line). The label is the text
/// after the last `Label:` marker up to the end of that line; the rationale is
/// everything before the marker with a leading `Rationale:` tag stripped.
fn split_completion(completion: &str) -> Result<(String, String), ParseFailure> {
    let marker = last_label_marker(completion).ok_or(ParseFailure::NoLabelMarker)?;
    let after = &completion[marker + LABEL_MARKER.len()..];
    let label_line = after.lines().next().unwrap_or("").trim();
    if label_line.is_empty() {
        return Err(ParseFailure::EmptyLabel);
    }
    let mut before = completion[..marker].trim();
    if before.len() >= RATIONALE_TAG.len()
        && before.is_char_boundary(RATIONALE_TAG.len())
        && before[..RATIONALE_TAG.len()].eq_ignore_ascii_case(RATIONALE_TAG)
    {
        before = before[RATIONALE_TAG.len()..].trim();
    }
    if before.is_empty() {
        log::debug!("completion parsed with an empty rationale");
    }
    Ok((before.to_string(), label_line.to_string()))
}

/// Parse a CoT completion into rationale and canonicalized pseudo-label.
///
/// Math labels keep their exact character content (only trimmed and with
/// whitespace runs collapsed) because expressions carry no case; all other
/// tasks get full lowercase canonicalization.
pub fn parse_cot_response(completion: &str, task: TaskKind) -> Result<ParsedCot, ParseFailure> {
    let (rationale, raw_label) = split_completion(completion)?;
    let label = match task {
        TaskKind::MathWordProblem => {
            let mut out = String::with_capacity(raw_label.len());
            for (i, word) in raw_label.split_whitespace().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(word);
            }
            out
        }
        _ => canonicalize_label(&raw_label),
    };
    if label.is_empty() {
        return Err(ParseFailure::EmptyLabel);
    }
    Ok(ParsedCot { rationale, label })
}

/// Parse a self-evaluation completion with the default verdict lexicon.
pub fn parse_self_eval_response(completion: &str) -> Result<ParsedSelfEval, ParseFailure> {
    parse_self_eval_response_with(completion, &VerdictLexicon::default())
}

/// Parse a self-evaluation completion, resolving the verdict through a caller
/// supplied lexicon.
pub fn parse_self_eval_response_with(
    completion: &str,
    lexicon: &VerdictLexicon,
) -> Result<ParsedSelfEval, ParseFailure> {
    let (rationale, raw_label) = split_completion(completion)?;
    let (verdict, via_synonym) = canonical_verdict(&raw_label, lexicon)
        .ok_or(ParseFailure::UnknownVerdict { raw: raw_label.clone() })?;
    Ok(ParsedSelfEval { rationale, verdict, via_synonym })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn instance(text: &str) -> TaskInstance {
        TaskInstance {
            id: "i1".to_string(),
            task: TaskKind::Nli,
            input_text: text.to_string(),
            human_label: None,
            choices: None,
        }
    }

    fn cot_template() -> PromptTemplate {
        PromptTemplate::Cot {
            instruction: "Answer with a rationale and a label.".to_string(),
            exemplars: vec![CoTExemplar {
                input_text: "Premise: p. Hypothesis: h.".to_string(),
                rationale: "p talks about h directly.".to_string(),
                label: "entailment".to_string(),
            }],
        }
    }

    #[test]
    fn cot_prompt_layout() {
        let prompt = render_cot_prompt(&cot_template(), &instance("Premise: q. Hypothesis: r."))
            .unwrap();
        let expected = "Answer with a rationale and a label.\n\n\
            Input: Premise: p. Hypothesis: h.\n\
            Rationale: p talks about h directly.\n\
            Label: entailment\n\n\
            Input: Premise: q. Hypothesis: r.\n\
            Rationale:";
        assert_eq!(prompt, expected);
    }

    #[test]
    fn template_kind_checked() {
        let se = PromptTemplate::SelfEval {
            instruction: "Judge.".to_string(),
            exemplars: vec![],
        };
        assert!(matches!(
            render_cot_prompt(&se, &instance("x")),
            Err(PromptError::KindMismatch { .. })
        ));
    }

    #[test]
    fn parse_takes_last_label_marker() {
        let completion = "Rationale: The label: entailment would be wrong here, the \
                          hypothesis adds location.\nLabel: neutral";
        let parsed = parse_cot_response(completion, TaskKind::Nli).unwrap();
        assert_eq!(parsed.label, "neutral");
        assert_eq!(
            parsed.rationale,
            "The label: entailment would be wrong here, the hypothesis adds location."
        );
    }

    #[test]
    fn parse_truncates_label_at_newline() {
        let completion = "Rationale: r\nLabel: neutral\nI hope that helps!";
        let parsed = parse_cot_response(completion, TaskKind::Nli).unwrap();
        assert_eq!(parsed.label, "neutral");
    }

    #[test]
    fn parse_failures_reported() {
        assert_eq!(
            parse_cot_response("no marker here", TaskKind::Nli),
            Err(ParseFailure::NoLabelMarker)
        );
        assert_eq!(
            parse_cot_response("Rationale: r\nLabel:   ", TaskKind::Nli),
            Err(ParseFailure::EmptyLabel)
        );
    }

    #[test]
    fn math_labels_keep_case_and_symbols() {
        let parsed =
            parse_cot_response("Rationale: add.\nLabel: ( 6.0 + 7.0 ) + 3.0", TaskKind::MathWordProblem)
                .unwrap();
        assert_eq!(parsed.label, "( 6.0 + 7.0 ) + 3.0");
    }

    #[test]
    fn self_eval_parse_maps_synonyms() {
        let parsed = parse_self_eval_response("Rationale: checks out.\nLabel: Yes").unwrap();
        assert_eq!(parsed.verdict, Verdict::Correct);
        assert!(parsed.via_synonym);
        let strict = parse_self_eval_response("Rationale: off by one.\nLabel: incorrect").unwrap();
        assert_eq!(strict.verdict, Verdict::Incorrect);
        assert!(!strict.via_synonym);
        assert!(matches!(
            parse_self_eval_response("Rationale: r\nLabel: banana"),
            Err(ParseFailure::UnknownVerdict { .. })
        ));
    }

    #[test]
    fn subject_contains_task_rationale_and_label() {
        let inst = instance("Premise: p. Hypothesis: h.");
        let cot = CoTSample {
            instance_id: "i1".to_string(),
            cot_index: 0,
            rationale: "p mentions h.".to_string(),
            pseudo_label: "entailment".to_string(),
            raw_completion: String::new(),
            parse_ok: true,
            provenance: crate::types::provenance_sim("sim", 0.7, "h"),
        };
        let subject = make_eval_subject(&inst, &cot).unwrap();
        assert_eq!(
            subject.as_str(),
            "Task: Premise: p. Hypothesis: h.\nRationale: p mentions h.\nPredicted Label: entailment"
        );
        assert_eq!(subject.predicted_label(), Some("entailment"));
    }

    #[test]
    fn subject_rejects_mismatched_or_unparsed() {
        let inst = instance("x");
        let mut cot = CoTSample {
            instance_id: "other".to_string(),
            cot_index: 0,
            rationale: "r".to_string(),
            pseudo_label: "y".to_string(),
            raw_completion: String::new(),
            parse_ok: true,
            provenance: crate::types::provenance_sim("sim", 0.7, "h"),
        };
        assert!(matches!(
            make_eval_subject(&inst, &cot),
            Err(PromptError::SubjectIdMismatch { .. })
        ));
        cot.instance_id = "i1".to_string();
        cot.parse_ok = false;
        assert!(matches!(make_eval_subject(&inst, &cot), Err(PromptError::UnparsedCot { .. })));
    }

    #[test]
    fn rendered_exemplar_blocks_parse_back() {
        let rationale = "Two steps of addition give the total.";
        let label = "16";
        let block = alloc::format!("Rationale: {rationale}\nLabel: {label}");
        let parsed = parse_cot_response(&block, TaskKind::MathWordProblem).unwrap();
        assert_eq!(parsed.rationale, rationale);
        assert_eq!(parsed.label, label);
    }
}
