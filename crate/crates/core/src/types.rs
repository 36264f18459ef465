//! Corpus domain types and their structural invariants.
//!
//! These are the records every other module trades in: task instances, teacher
//! chain-of-thought samples, teacher self-evaluation samples, and the flat
//! training examples the trainer consumes. Validation lives here too so that
//! corpora are checked once, at the boundary, instead of defensively everywhere.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use alloc::collections::BTreeSet;
use serde::{Deserialize, Serialize};

/// Task family an instance belongs to. Controls prompting, answer
/// normalization, and how the simulated teacher fabricates wrong labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MathWordProblem,
    CommonsenseQa,
    Nli,
    SelfEvaluation,
    Synthetic,
}

impl TaskKind {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::MathWordProblem => "math_word_problem",
            TaskKind::CommonsenseQa => "commonsense_qa",
            TaskKind::Nli => "nli",
            TaskKind::SelfEvaluation => "self_evaluation",
            TaskKind::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One problem to be solved. `human_label` is the gold answer when the source
/// dataset provides one; `choices` is present exactly for multiple-choice QA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub task: TaskKind,
    pub input_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

/// Which teacher implementation produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherBackendKind {
    Live,
    Replay,
    Simulated,
}

impl TeacherBackendKind {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            TeacherBackendKind::Live => "live",
            TeacherBackendKind::Replay => "replay",
            TeacherBackendKind::Simulated => "simulated",
        }
    }
}

impl fmt::Display for TeacherBackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a completion came from and under what sampling settings.
/// `request_hash` identifies the exact (prompt, params, sample index) request,
/// so a sample can be traced back to its cache row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherProvenance {
    pub backend: TeacherBackendKind,
    pub model_id: String,
    pub temperature: f64,
    pub request_hash: String,
    pub timestamp: String,
}

/// One sampled chain of thought for an instance.
///
/// Invariant: `parse_ok == false` means the completion did not contain a
/// recognizable label; `rationale` and `pseudo_label` are then empty and the
/// record is kept only for audit (`raw_completion` always holds the full text).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTSample {
    pub instance_id: String,
    pub cot_index: u32,
    pub rationale: String,
    pub pseudo_label: String,
    pub raw_completion: String,
    pub parse_ok: bool,
    pub provenance: TeacherProvenance,
}

/// Binary self-evaluation outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

impl Verdict {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Incorrect => "incorrect",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One sampled self-evaluation of a specific chain of thought.
///
/// Invariant: `verdict.is_some() == parse_ok`. A failed parse keeps the raw
/// completion and empty rationale, mirroring [`CoTSample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfEvalSample {
    pub instance_id: String,
    pub cot_index: u32,
    pub eval_index: u32,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub raw_completion: String,
    pub parse_ok: bool,
    pub provenance: TeacherProvenance,
}

/// Task prefix prepended to every student input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prefix {
    Predict,
    Explain,
}

impl Prefix {
    /// The literal tag, including the trailing space, as it appears at the
    /// start of `TrainingExample::input_text`.
    #[must_use]
    pub fn tag(self) -> &'static str {
        match self {
            Prefix::Predict => "predict: ",
            Prefix::Explain => "explain: ",
        }
    }
}

/// Which corpus a training example was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTag {
    Cot,
    SelfEval,
}

/// Which loss term an example belongs to: label terms get unit weight,
/// rationale terms are scaled by lambda.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRole {
    LabelTerm,
    RationaleTerm,
}

/// One (input, target) pair for the student. `input_text` already starts with
/// the prefix tag; the trainer never re-derives it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prefix: Prefix,
    pub input_text: String,
    pub target_text: String,
    pub task_tag: TaskTag,
    pub weight_role: WeightRole,
}

/// Lowercase, trim, and collapse internal whitespace runs to single spaces.
/// This is the label canonicalization applied before any comparison.
#[must_use]
pub fn canonicalize_label(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut first = true;
    for word in lowered.split_whitespace() {
        if !first {
            out.push(' ');
        }
        out.push_str(word);
        first = false;
    }
    out
}

/// Structural violations detected by corpus validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusError {
    DuplicateInstanceId { id: String },
    EmptyInstanceId,
    ChoicesOnNonCqa { id: String },
    MissingChoices { id: String },
    EmptyChoices { id: String },
    LabelNotInChoices { id: String, label: String },
    BadNliLabel { id: String, label: String },
    BadVerdictLabel { id: String, label: String },
    DuplicateCotKey { instance_id: String, cot_index: u32 },
    DuplicateEvalKey { instance_id: String, cot_index: u32, eval_index: u32 },
    VerdictParseMismatch { instance_id: String, cot_index: u32, eval_index: u32 },
    DanglingCotInstance { instance_id: String, cot_index: u32 },
    DanglingEvalTarget { instance_id: String, cot_index: u32, eval_index: u32 },
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusError::DuplicateInstanceId { id } => {
                write!(f, "duplicate instance id {id:?}")
            }
            CorpusError::EmptyInstanceId => f.write_str("instance with empty id"),
            CorpusError::ChoicesOnNonCqa { id } => {
                write!(f, "instance {id:?} has choices but is not a multiple-choice task")
            }
            CorpusError::MissingChoices { id } => {
                write!(f, "multiple-choice instance {id:?} has no choices")
            }
            CorpusError::EmptyChoices { id } => {
                write!(f, "multiple-choice instance {id:?} has an empty choice list")
            }
            CorpusError::LabelNotInChoices { id, label } => {
                write!(f, "instance {id:?}: label {label:?} is not among its choices")
            }
            CorpusError::BadNliLabel { id, label } => {
                write!(f, "instance {id:?}: {label:?} is not an NLI label")
            }
            CorpusError::BadVerdictLabel { id, label } => {
                write!(f, "instance {id:?}: {label:?} is not a verdict label")
            }
            CorpusError::DuplicateCotKey { instance_id, cot_index } => {
                write!(f, "duplicate CoT key ({instance_id:?}, {cot_index})")
            }
            CorpusError::DuplicateEvalKey { instance_id, cot_index, eval_index } => {
                write!(
                    f,
                    "duplicate self-eval key ({instance_id:?}, {cot_index}, {eval_index})"
                )
            }
            CorpusError::VerdictParseMismatch { instance_id, cot_index, eval_index } => {
                write!(
                    f,
                    "self-eval ({instance_id:?}, {cot_index}, {eval_index}): verdict presence \
                     disagrees with parse_ok"
                )
            }
            CorpusError::DanglingCotInstance { instance_id, cot_index } => {
                write!(
                    f,
                    "CoT ({instance_id:?}, {cot_index}) references an unknown instance"
                )
            }
            CorpusError::DanglingEvalTarget { instance_id, cot_index, eval_index } => {
                write!(
                    f,
                    "self-eval ({instance_id:?}, {cot_index}, {eval_index}) references an \
                     unknown CoT sample"
                )
            }
        }
    }
}

impl core::error::Error for CorpusError {}

const NLI_LABELS: [&str; 3] = ["entailment", "neutral", "contradiction"];

/// Check instance-level invariants: unique non-empty ids, `choices` present
/// exactly for multiple-choice instances, gold labels drawn from the task's
/// label space (choice membership for QA, the three-way NLI set, verdicts).
pub fn validate_dataset(instances: &[TaskInstance]) -> Result<(), CorpusError> {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for inst in instances {
        if inst.id.is_empty() {
            return Err(CorpusError::EmptyInstanceId);
        }
        if !seen.insert(inst.id.as_str()) {
            return Err(CorpusError::DuplicateInstanceId { id: inst.id.clone() });
        }
        match (&inst.task, &inst.choices) {
            (TaskKind::CommonsenseQa, None) => {
                return Err(CorpusError::MissingChoices { id: inst.id.clone() });
            }
            (TaskKind::CommonsenseQa, Some(choices)) if choices.is_empty() => {
                return Err(CorpusError::EmptyChoices { id: inst.id.clone() });
            }
            (TaskKind::CommonsenseQa, Some(choices)) => {
                if let Some(label) = &inst.human_label {
                    let canon = canonicalize_label(label);
                    if !choices.iter().any(|c| canonicalize_label(c) == canon) {
                        return Err(CorpusError::LabelNotInChoices {
                            id: inst.id.clone(),
                            label: label.clone(),
                        });
                    }
                }
            }
            (_, Some(_)) => {
                return Err(CorpusError::ChoicesOnNonCqa { id: inst.id.clone() });
            }
            (_, None) => {}
        }
        if inst.task == TaskKind::Nli {
            if let Some(label) = &inst.human_label {
                let canon = canonicalize_label(label);
                if !NLI_LABELS.contains(&canon.as_str()) {
                    return Err(CorpusError::BadNliLabel {
                        id: inst.id.clone(),
                        label: label.clone(),
                    });
                }
            }
        }
        if inst.task == TaskKind::SelfEvaluation {
            if let Some(label) = &inst.human_label {
                let canon = canonicalize_label(label);
                if canon != "correct" && canon != "incorrect" {
                    return Err(CorpusError::BadVerdictLabel {
                        id: inst.id.clone(),
                        label: label.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Check that `(instance_id, cot_index)` keys are unique.
pub fn validate_cot_corpus(cots: &[CoTSample]) -> Result<(), CorpusError> {
    let mut seen: BTreeSet<(&str, u32)> = BTreeSet::new();
    for cot in cots {
        if !seen.insert((cot.instance_id.as_str(), cot.cot_index)) {
            return Err(CorpusError::DuplicateCotKey {
                instance_id: cot.instance_id.clone(),
                cot_index: cot.cot_index,
            });
        }
    }
    Ok(())
}

/// Check that `(instance_id, cot_index, eval_index)` keys are unique and that
/// the `verdict`/`parse_ok` invariant holds.
pub fn validate_eval_corpus(evals: &[SelfEvalSample]) -> Result<(), CorpusError> {
    let mut seen: BTreeSet<(&str, u32, u32)> = BTreeSet::new();
    for ev in evals {
        if !seen.insert((ev.instance_id.as_str(), ev.cot_index, ev.eval_index)) {
            return Err(CorpusError::DuplicateEvalKey {
                instance_id: ev.instance_id.clone(),
                cot_index: ev.cot_index,
                eval_index: ev.eval_index,
            });
        }
        if ev.verdict.is_some() != ev.parse_ok {
            return Err(CorpusError::VerdictParseMismatch {
                instance_id: ev.instance_id.clone(),
                cot_index: ev.cot_index,
                eval_index: ev.eval_index,
            });
        }
    }
    Ok(())
}

/// Check that every CoT references a known instance and every self-evaluation
/// references a known CoT sample.
pub fn check_referential_integrity(
    instances: &[TaskInstance],
    cots: &[CoTSample],
    evals: &[SelfEvalSample],
) -> Result<(), CorpusError> {
    let ids: BTreeSet<&str> = instances.iter().map(|i| i.id.as_str()).collect();
    let mut cot_keys: BTreeSet<(&str, u32)> = BTreeSet::new();
    for cot in cots {
        if !ids.contains(cot.instance_id.as_str()) {
            return Err(CorpusError::DanglingCotInstance {
                instance_id: cot.instance_id.clone(),
                cot_index: cot.cot_index,
            });
        }
        cot_keys.insert((cot.instance_id.as_str(), cot.cot_index));
    }
    for ev in evals {
        if !cot_keys.contains(&(ev.instance_id.as_str(), ev.cot_index)) {
            return Err(CorpusError::DanglingEvalTarget {
                instance_id: ev.instance_id.clone(),
                cot_index: ev.cot_index,
                eval_index: ev.eval_index,
            });
        }
    }
    Ok(())
}

/// Convenience used in tests and the simulated teacher.
#[must_use]
pub fn provenance_sim(model_id: &str, temperature: f64, request_hash: &str) -> TeacherProvenance {
    TeacherProvenance {
        backend: TeacherBackendKind::Simulated,
        model_id: model_id.to_string(),
        temperature,
        request_hash: request_hash.to_string(),
        timestamp: SIM_TIMESTAMP.to_string(),
    }
}

/// Fixed timestamp stamped on simulated samples so simulated harvests are
/// byte-reproducible run to run.
pub const SIM_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn inst(id: &str, task: TaskKind) -> TaskInstance {
        TaskInstance {
            id: id.to_string(),
            task,
            input_text: format!("input for {id}"),
            human_label: None,
            choices: None,
        }
    }

    #[test]
    fn canonicalize_collapses_case_and_whitespace() {
        assert_eq!(canonicalize_label("  Death  And\tDecay "), "death and decay");
        assert_eq!(canonicalize_label("Entailment"), "entailment");
        assert_eq!(canonicalize_label(""), "");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let ds = vec![inst("a", TaskKind::Synthetic), inst("a", TaskKind::Synthetic)];
        assert_eq!(
            validate_dataset(&ds),
            Err(CorpusError::DuplicateInstanceId { id: "a".to_string() })
        );
    }

    #[test]
    fn choices_required_exactly_for_multiple_choice() {
        let mut mc = inst("q1", TaskKind::CommonsenseQa);
        assert!(matches!(
            validate_dataset(core::slice::from_ref(&mc)),
            Err(CorpusError::MissingChoices { .. })
        ));
        mc.choices = Some(vec!["yes".to_string(), "no".to_string()]);
        mc.human_label = Some("Yes".to_string());
        assert!(validate_dataset(core::slice::from_ref(&mc)).is_ok());

        let mut nli = inst("n1", TaskKind::Nli);
        nli.choices = Some(vec!["x".to_string()]);
        assert!(matches!(
            validate_dataset(core::slice::from_ref(&nli)),
            Err(CorpusError::ChoicesOnNonCqa { .. })
        ));
    }

    #[test]
    fn nli_labels_checked() {
        let mut nli = inst("n1", TaskKind::Nli);
        nli.human_label = Some("Neutral".to_string());
        assert!(validate_dataset(core::slice::from_ref(&nli)).is_ok());
        nli.human_label = Some("maybe".to_string());
        assert!(matches!(
            validate_dataset(core::slice::from_ref(&nli)),
            Err(CorpusError::BadNliLabel { .. })
        ));
    }

    #[test]
    fn referential_integrity_finds_dangling_records() {
        let ds = vec![inst("a", TaskKind::Synthetic)];
        let prov = provenance_sim("sim", 0.7, "h");
        let cot = CoTSample {
            instance_id: "a".to_string(),
            cot_index: 0,
            rationale: "r".to_string(),
            pseudo_label: "x".to_string(),
            raw_completion: "Rationale: r\nLabel: x".to_string(),
            parse_ok: true,
            provenance: prov.clone(),
        };
        let ev = SelfEvalSample {
            instance_id: "a".to_string(),
            cot_index: 1,
            eval_index: 0,
            rationale: "r".to_string(),
            verdict: Some(Verdict::Correct),
            raw_completion: "Rationale: r\nLabel: correct".to_string(),
            parse_ok: true,
            provenance: prov,
        };
        let cots = vec![cot];
        let evals = vec![ev];
        assert!(check_referential_integrity(&ds, &cots, &[]).is_ok());
        assert!(matches!(
            check_referential_integrity(&ds, &cots, &evals),
            Err(CorpusError::DanglingEvalTarget { cot_index: 1, .. })
        ));
    }

    #[test]
    fn verdict_must_match_parse_flag() {
        let prov = provenance_sim("sim", 0.7, "h");
        let ev = SelfEvalSample {
            instance_id: "a".to_string(),
            cot_index: 0,
            eval_index: 0,
            rationale: String::new(),
            verdict: None,
            raw_completion: "gibberish".to_string(),
            parse_ok: true,
            provenance: prov,
        };
        assert!(matches!(
            validate_eval_corpus(core::slice::from_ref(&ev)),
            Err(CorpusError::VerdictParseMismatch { .. })
        ));
    }

    #[test]
    fn serde_round_trip_preserves_instances() {
        let mut i = inst("svamp-1", TaskKind::MathWordProblem);
        i.human_label = Some("( 6.0 + 7.0 )".to_string());
        let json = serde_json::to_string(&i).unwrap();
        assert!(!json.contains("choices"));
        let back: TaskInstance = serde_json::from_str(&json).unwrap();
        assert_eq!(back, i);
    }
}
