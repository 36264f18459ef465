//! Building student training examples out of harvested corpora.
//!
//! Every teacher sample becomes an adjacent (predict, explain) pair: the
//! predict example targets the label (pseudo-label, human label, or verdict),
//! the explain example targets the rationale. Adjacency is what
//! [`crate::loss::pair_examples`] relies on.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::prompt::{make_eval_subject, PromptError};
use crate::types::{
    CoTSample, Prefix, SelfEvalSample, TaskInstance, TaskTag, TrainingExample, WeightRole,
};

/// Which label the CoT predict examples target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// The teacher's own pseudo-labels.
    Pseudo,
    /// Gold labels from the dataset.
    Human,
}

impl LabelSource {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Pseudo => "pseudo",
            LabelSource::Human => "human",
        }
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuildError {
    UnknownInstance { instance_id: String },
    UnknownCot { instance_id: String, cot_index: u32 },
    MissingHumanLabel { instance_id: String },
    Subject(PromptError),
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::UnknownInstance { instance_id } => {
                write!(f, "sample references unknown instance {instance_id:?}")
            }
            BuildError::UnknownCot { instance_id, cot_index } => {
                write!(f, "self-eval references unknown CoT ({instance_id:?}, {cot_index})")
            }
            BuildError::MissingHumanLabel { instance_id } => {
                write!(f, "human-label training needs a gold label for {instance_id:?}")
            }
            BuildError::Subject(e) => write!(f, "cannot build eval subject: {e}"),
        }
    }
}

impl core::error::Error for BuildError {}

impl From<PromptError> for BuildError {
    fn from(e: PromptError) -> Self {
        BuildError::Subject(e)
    }
}

fn example(
    prefix: Prefix,
    body: &str,
    target: &str,
    tag: TaskTag,
    role: WeightRole,
) -> TrainingExample {
    TrainingExample {
        prefix,
        input_text: format!("{}{body}", prefix.tag()),
        target_text: String::from(target),
        task_tag: tag,
        weight_role: role,
    }
}

/// Build CoT distillation pairs. Unparsed samples are skipped (they carry no
/// usable text), as are samples with an empty rationale; both are logged.
pub fn build_cot_examples(
    dataset: &[TaskInstance],
    cots: &[CoTSample],
    label_source: LabelSource,
) -> Result<Vec<TrainingExample>, BuildError> {
    let by_id: BTreeMap<&str, &TaskInstance> =
        dataset.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut out = Vec::new();
    let mut skipped_unparsed = 0usize;
    let mut skipped_empty_rationale = 0usize;
    for cot in cots {
        if !cot.parse_ok {
            skipped_unparsed += 1;
            continue;
        }
        let instance = by_id
            .get(cot.instance_id.as_str())
            .ok_or_else(|| BuildError::UnknownInstance { instance_id: cot.instance_id.clone() })?;
        let label: &str = match label_source {
            LabelSource::Pseudo => &cot.pseudo_label,
            LabelSource::Human => instance.human_label.as_deref().ok_or_else(|| {
                BuildError::MissingHumanLabel { instance_id: instance.id.clone() }
            })?,
        };
        if cot.rationale.is_empty() {
            skipped_empty_rationale += 1;
            continue;
        }
        out.push(example(
            Prefix::Predict,
            &instance.input_text,
            label,
            TaskTag::Cot,
            WeightRole::LabelTerm,
        ));
        out.push(example(
            Prefix::Explain,
            &instance.input_text,
            &cot.rationale,
            TaskTag::Cot,
            WeightRole::RationaleTerm,
        ));
    }
    if skipped_unparsed > 0 || skipped_empty_rationale > 0 {
        log::debug!(
            "CoT example build skipped {skipped_unparsed} unparsed and \
             {skipped_empty_rationale} empty-rationale samples"
        );
    }
    Ok(out)
}

/// Build self-evaluation distillation pairs. The student input is the rendered
/// eval subject (task, rationale, predicted label) behind the usual prefixes.
pub fn build_se_examples(
    dataset: &[TaskInstance],
    cots: &[CoTSample],
    evals: &[SelfEvalSample],
) -> Result<Vec<TrainingExample>, BuildError> {
    let by_id: BTreeMap<&str, &TaskInstance> =
        dataset.iter().map(|i| (i.id.as_str(), i)).collect();
    let by_key: BTreeMap<(&str, u32), &CoTSample> =
        cots.iter().map(|c| ((c.instance_id.as_str(), c.cot_index), c)).collect();
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for ev in evals {
        let (verdict, rationale) = match (&ev.verdict, ev.parse_ok) {
            (Some(v), true) if !ev.rationale.is_empty() => (*v, &ev.rationale),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let instance = by_id
            .get(ev.instance_id.as_str())
            .ok_or_else(|| BuildError::UnknownInstance { instance_id: ev.instance_id.clone() })?;
        let cot = by_key.get(&(ev.instance_id.as_str(), ev.cot_index)).ok_or_else(|| {
            BuildError::UnknownCot {
                instance_id: ev.instance_id.clone(),
                cot_index: ev.cot_index,
            }
        })?;
        let subject = make_eval_subject(instance, cot)?;
        out.push(example(
            Prefix::Predict,
            subject.as_str(),
            verdict.as_str(),
            TaskTag::SelfEval,
            WeightRole::LabelTerm,
        ));
        out.push(example(
            Prefix::Explain,
            subject.as_str(),
            rationale,
            TaskTag::SelfEval,
            WeightRole::RationaleTerm,
        ));
    }
    if skipped > 0 {
        log::debug!("self-eval example build skipped {skipped} unusable samples");
    }
    Ok(out)
}

/// Keep only CoTs with `cot_index < k`: the subsampling rule behind the
/// condition grid and the N_CoT ablation.
#[must_use]
pub fn subsample_cots(cots: &[CoTSample], k: u32) -> Vec<CoTSample> {
    cots.iter().filter(|c| c.cot_index < k).cloned().collect()
}

/// Keep only self-evaluations with `eval_index < m` (and `cot_index < k`, so
/// evals of discarded CoTs disappear with them).
#[must_use]
pub fn subsample_evals(evals: &[SelfEvalSample], k: u32, m: u32) -> Vec<SelfEvalSample> {
    evals.iter().filter(|e| e.cot_index < k && e.eval_index < m).cloned().collect()
}

/// Largest `k` such that every instance in the corpus has CoTs 0..k. Returns 0
/// for an empty corpus.
#[must_use]
pub fn cot_capacity(cots: &[CoTSample]) -> u32 {
    let mut per_instance: BTreeMap<&str, u32> = BTreeMap::new();
    for c in cots {
        let e = per_instance.entry(c.instance_id.as_str()).or_insert(0);
        *e = (*e).max(c.cot_index + 1);
    }
    per_instance.values().copied().min().unwrap_or(0)
}

/// Largest `m` such that every evaluated CoT has evals 0..m. Returns 0 for an
/// empty corpus.
#[must_use]
pub fn eval_capacity(evals: &[SelfEvalSample]) -> u32 {
    let mut per_cot: BTreeMap<(&str, u32), u32> = BTreeMap::new();
    for e in evals {
        let slot = per_cot.entry((e.instance_id.as_str(), e.cot_index)).or_insert(0);
        *slot = (*slot).max(e.eval_index + 1);
    }
    per_cot.values().copied().min().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{provenance_sim, TaskKind, Verdict};
    use alloc::string::ToString;
    use alloc::vec;

    fn instance(id: &str) -> TaskInstance {
        TaskInstance {
            id: id.to_string(),
            task: TaskKind::Synthetic,
            input_text: format!("input {id}"),
            human_label: Some("alpha".to_string()),
            choices: None,
        }
    }

    fn cot(id: &str, idx: u32, label: &str) -> CoTSample {
        CoTSample {
            instance_id: id.to_string(),
            cot_index: idx,
            rationale: format!("rationale {idx} for {id}"),
            pseudo_label: label.to_string(),
            raw_completion: String::new(),
            parse_ok: true,
            provenance: provenance_sim("sim", 0.7, "h"),
        }
    }

    fn eval(id: &str, cot_idx: u32, eval_idx: u32, v: Verdict) -> SelfEvalSample {
        SelfEvalSample {
            instance_id: id.to_string(),
            cot_index: cot_idx,
            eval_index: eval_idx,
            rationale: format!("critique {eval_idx}"),
            verdict: Some(v),
            raw_completion: String::new(),
            parse_ok: true,
            provenance: provenance_sim("sim", 0.7, "h"),
        }
    }

    #[test]
    fn cot_examples_pair_label_and_rationale() {
        let ds = vec![instance("a")];
        let cots = vec![cot("a", 0, "beta")];
        let out = build_cot_examples(&ds, &cots, LabelSource::Pseudo).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].input_text, "predict: input a");
        assert_eq!(out[0].target_text, "beta");
        assert_eq!(out[0].weight_role, WeightRole::LabelTerm);
        assert_eq!(out[1].input_text, "explain: input a");
        assert_eq!(out[1].target_text, "rationale 0 for a");
        assert_eq!(out[1].weight_role, WeightRole::RationaleTerm);
        assert!(out.iter().all(|e| e.task_tag == TaskTag::Cot));
    }

    #[test]
    fn human_labels_replace_pseudo_labels() {
        let ds = vec![instance("a")];
        let cots = vec![cot("a", 0, "beta"), cot("a", 1, "gamma")];
        let out = build_cot_examples(&ds, &cots, LabelSource::Human).unwrap();
        assert_eq!(out[0].target_text, "alpha");
        assert_eq!(out[2].target_text, "alpha");
        // Rationales stay per-sample.
        assert_ne!(out[1].target_text, out[3].target_text);

        let mut unlabeled = instance("b");
        unlabeled.human_label = None;
        let err = build_cot_examples(&[unlabeled], &[cot("b", 0, "x")], LabelSource::Human);
        assert!(matches!(err, Err(BuildError::MissingHumanLabel { .. })));
    }

    #[test]
    fn unparsed_and_empty_rationale_cots_are_skipped() {
        let ds = vec![instance("a")];
        let mut bad = cot("a", 0, "");
        bad.parse_ok = false;
        bad.pseudo_label = String::new();
        let mut empty = cot("a", 1, "beta");
        empty.rationale = String::new();
        let good = cot("a", 2, "beta");
        let out = build_cot_examples(&ds, &[bad, empty, good], LabelSource::Pseudo).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn se_examples_embed_the_subject() {
        let ds = vec![instance("a")];
        let cots = vec![cot("a", 0, "beta")];
        let evals = vec![eval("a", 0, 0, Verdict::Incorrect)];
        let out = build_se_examples(&ds, &cots, &evals).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[0].input_text.starts_with("predict: Task: input a"));
        assert!(out[0].input_text.contains("Predicted Label: beta"));
        assert_eq!(out[0].target_text, "incorrect");
        assert_eq!(out[1].target_text, "critique 0");
        assert!(out.iter().all(|e| e.task_tag == TaskTag::SelfEval));
    }

    #[test]
    fn dangling_references_error() {
        let ds = vec![instance("a")];
        let cots = vec![cot("a", 0, "beta")];
        assert!(matches!(
            build_cot_examples(&ds, &[cot("zz", 0, "x")], LabelSource::Pseudo),
            Err(BuildError::UnknownInstance { .. })
        ));
        assert!(matches!(
            build_se_examples(&ds, &cots, &[eval("a", 5, 0, Verdict::Correct)]),
            Err(BuildError::UnknownCot { cot_index: 5, .. })
        ));
    }

    #[test]
    fn subsampling_filters_by_index() {
        let cots = vec![cot("a", 0, "x"), cot("a", 1, "x"), cot("a", 2, "x")];
        assert_eq!(subsample_cots(&cots, 2).len(), 2);
        assert_eq!(subsample_cots(&cots, 0).len(), 0);
        let evals = vec![
            eval("a", 0, 0, Verdict::Correct),
            eval("a", 0, 1, Verdict::Correct),
            eval("a", 2, 0, Verdict::Correct),
        ];
        let sub = subsample_evals(&evals, 1, 5);
        assert_eq!(sub.len(), 2);
        assert!(sub.iter().all(|e| e.cot_index == 0));
        assert_eq!(subsample_evals(&evals, 3, 1).len(), 2);
    }

    #[test]
    fn capacities_are_min_over_groups() {
        let cots = vec![cot("a", 0, "x"), cot("a", 1, "x"), cot("b", 0, "x")];
        assert_eq!(cot_capacity(&cots), 1);
        assert_eq!(cot_capacity(&[]), 0);
        let evals = vec![
            eval("a", 0, 0, Verdict::Correct),
            eval("a", 0, 1, Verdict::Correct),
            eval("b", 0, 0, Verdict::Correct),
        ];
        assert_eq!(eval_capacity(&evals), 1);
    }
}
