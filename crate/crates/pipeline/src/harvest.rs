//! Resumable corpus harvesting: one pass obtaining multiple CoTs per
//! instance, a second obtaining multiple self-evaluations per CoT.
//!
//! Both passes share the same shape — render a prompt, ask the gateway for n
//! completions, parse each into a flagged record, append to the output file
//! one work unit at a time. A work unit (all of an instance's CoTs; all of
//! one CoT's evaluations) is appended and flushed atomically relative to the
//! resume scan, so an interrupted harvest restarts by skipping finished
//! units and re-doing at most the one that was in flight.
//!
//! Parse failures are kept as records with `parse_ok: false` rather than
//! dropped: harvest counts must stay auditable, and the training-set builder
//! filters them out explicitly (and logs how many it skipped).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use selfdistill_core::answer::normalize_answer;
use selfdistill_core::prompt::{
    make_eval_subject, parse_cot_response, parse_self_eval_response, render_cot_prompt,
    render_self_eval_prompt, PromptError, PromptTemplate,
};
use selfdistill_core::types::{check_referential_integrity, CorpusError};
use selfdistill_core::{CoTSample, SelfEvalSample, TaskInstance, Verdict};
use serde::Serialize;

use crate::corpus::{append_corpus, read_or_empty, serialize_corpus, CorpusIoError};
use crate::gateway::{GatewayError, SamplingParams, SimRequest, TeacherGateway};

/// Settings for one harvest run. `n_eval = 0` disables the self-evaluation
/// pass entirely — the CoT-only conditions.
#[derive(Debug, Clone)]
pub struct HarvestConfig {
    pub n_cot: u32,
    pub n_eval: u32,
    /// Only consulted by `harvest_cots`; eval-only runs may leave it unset.
    pub cot_template: Option<PromptTemplate>,
    /// Only consulted when `n_eval > 0`; CoT-only harvests may leave it unset.
    pub eval_template: Option<PromptTemplate>,
    pub sampling: SamplingParams,
    pub resume: bool,
}

impl HarvestConfig {
    pub fn validate(&self) -> Result<(), HarvestError> {
        if self.n_cot < 1 {
            return Err(HarvestError::Config("n_cot must be at least 1"));
        }
        if let Some(template) = &self.cot_template {
            if !template.is_cot() {
                return Err(HarvestError::Config("cot_template must be a CoT template"));
            }
        }
        if let Some(template) = &self.eval_template {
            if self.n_eval > 0 && template.is_cot() {
                return Err(HarvestError::Config("eval_template must be a self-eval template"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarvestError {
    #[error("harvest config rejected: {0}")]
    Config(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("self-eval corpus references unknown CoT {instance_id}/{cot_index}")]
    DanglingCot { instance_id: String, cot_index: u32 },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] CorpusIoError),
}

/// Harvest `n_cot` chains of thought per instance. With an output path and
/// `resume`, already-finished instances are skipped and partially-finished
/// ones are re-done from scratch; the returned corpus always covers the full
/// dataset in dataset order.
pub fn harvest_cots(
    dataset: &[TaskInstance],
    gateway: &TeacherGateway,
    config: &HarvestConfig,
    out: Option<&Path>,
) -> Result<Vec<CoTSample>, HarvestError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(HarvestError::EmptyDataset);
    }

    let mut done: BTreeMap<String, Vec<CoTSample>> = BTreeMap::new();
    if let (Some(path), true) = (out, config.resume) {
        let existing: Vec<CoTSample> = read_or_empty(path)?;
        let mut by_instance: BTreeMap<String, Vec<CoTSample>> = BTreeMap::new();
        for rec in existing {
            by_instance.entry(rec.instance_id.clone()).or_default().push(rec);
        }
        let total = by_instance.len();
        done = by_instance
            .into_iter()
            .filter(|(_, recs)| recs.len() >= config.n_cot as usize)
            .collect();
        if done.len() < total {
            // Partially harvested instances get re-done; compact the file so
            // their stale records cannot duplicate.
            log::info!(
                "resume: dropping {} partially harvested instance(s)",
                total - done.len()
            );
            let keep: Vec<CoTSample> =
                done.values().flat_map(|recs| recs.iter().cloned()).collect();
            serialize_corpus(&keep, path)?;
        } else if !done.is_empty() {
            log::info!("resume: {} instance(s) already harvested", done.len());
        }
    } else if let (Some(path), false) = (out, config.resume) {
        // A fresh run owns the file.
        serialize_corpus::<CoTSample>(&[], path)?;
    }

    let cot_template = config
        .cot_template
        .as_ref()
        .ok_or(HarvestError::Config("CoT harvesting needs a CoT template"))?;
    let params = SamplingParams { n_samples: config.n_cot, ..config.sampling.clone() };
    let mut corpus = Vec::with_capacity(dataset.len() * config.n_cot as usize);
    for instance in dataset {
        if let Some(existing) = done.get(&instance.id) {
            corpus.extend(existing.iter().cloned());
            continue;
        }
        let prompt = render_cot_prompt(cot_template, instance)?;
        let sampled = gateway.sample(&prompt, &params, Some(SimRequest::Cot { instance }))?;
        let mut unit = Vec::with_capacity(sampled.len());
        for (i, sample) in sampled.into_iter().enumerate() {
            let record = match parse_cot_response(&sample.text, instance.task) {
                Ok(parsed) => CoTSample {
                    instance_id: instance.id.clone(),
                    cot_index: i as u32,
                    rationale: parsed.rationale,
                    pseudo_label: parsed.label,
                    raw_completion: sample.text,
                    parse_ok: true,
                    provenance: sample.provenance,
                },
                Err(failure) => {
                    log::debug!("instance {}: draw {i} unparseable: {failure}", instance.id);
                    CoTSample {
                        instance_id: instance.id.clone(),
                        cot_index: i as u32,
                        rationale: String::new(),
                        pseudo_label: String::new(),
                        raw_completion: sample.text,
                        parse_ok: false,
                        provenance: sample.provenance,
                    }
                }
            };
            unit.push(record);
        }
        if let Some(path) = out {
            append_corpus(&unit, path)?;
        }
        corpus.extend(unit);
    }
    Ok(corpus)
}

/// Whether a CoT's pseudo-label matches the instance's gold label under
/// task-aware normalization. Unparseable or unnormalizable pseudo-labels
/// count as not matching; no gold label means no answer.
fn pseudo_label_matches(instance: &TaskInstance, cot: &CoTSample) -> Option<bool> {
    let gold_raw = instance.human_label.as_deref()?;
    let gold = match normalize_answer(instance.task, gold_raw, instance) {
        Ok(canon) => canon,
        Err(_) => return Some(false),
    };
    match normalize_answer(instance.task, &cot.pseudo_label, instance) {
        Ok(pred) => Some(gold.matches(&pred)),
        Err(_) => Some(false),
    }
}

/// Harvest `n_eval` self-evaluations for every parse-successful CoT.
pub fn harvest_self_evals(
    dataset: &[TaskInstance],
    cot_corpus: &[CoTSample],
    gateway: &TeacherGateway,
    config: &HarvestConfig,
    out: Option<&Path>,
) -> Result<Vec<SelfEvalSample>, HarvestError> {
    config.validate()?;
    if config.n_eval == 0 {
        if let Some(path) = out {
            serialize_corpus::<SelfEvalSample>(&[], path)?;
        }
        return Ok(Vec::new());
    }

    let by_id: BTreeMap<&str, &TaskInstance> =
        dataset.iter().map(|inst| (inst.id.as_str(), inst)).collect();
    for cot in cot_corpus {
        if !by_id.contains_key(cot.instance_id.as_str()) {
            return Err(HarvestError::DanglingCot {
                instance_id: cot.instance_id.clone(),
                cot_index: cot.cot_index,
            });
        }
    }

    let mut done: BTreeMap<(String, u32), Vec<SelfEvalSample>> = BTreeMap::new();
    if let (Some(path), true) = (out, config.resume) {
        let existing: Vec<SelfEvalSample> = read_or_empty(path)?;
        let mut counts: BTreeMap<(String, u32), Vec<SelfEvalSample>> = BTreeMap::new();
        for rec in existing {
            counts
                .entry((rec.instance_id.clone(), rec.cot_index))
                .or_default()
                .push(rec);
        }
        let total = counts.len();
        done = counts
            .into_iter()
            .filter(|(_, recs)| recs.len() >= config.n_eval as usize)
            .collect();
        if done.len() < total {
            log::info!(
                "resume: dropping {} partially evaluated CoT(s)",
                total - done.len()
            );
            let keep: Vec<SelfEvalSample> =
                done.values().flat_map(|recs| recs.iter().cloned()).collect();
            serialize_corpus(&keep, path)?;
        }
    } else if let (Some(path), false) = (out, config.resume) {
        serialize_corpus::<SelfEvalSample>(&[], path)?;
    }

    let eval_template = config
        .eval_template
        .as_ref()
        .ok_or(HarvestError::Config("self-eval harvesting needs an eval template"))?;

    let params = SamplingParams { n_samples: config.n_eval, ..config.sampling.clone() };
    let mut corpus = Vec::new();
    let mut skipped_unparsed = 0usize;
    for cot in cot_corpus {
        if !cot.parse_ok {
            skipped_unparsed += 1;
            continue;
        }
        if let Some(unit) = done.get(&(cot.instance_id.clone(), cot.cot_index)) {
            corpus.extend(unit.iter().cloned());
            continue;
        }
        let instance = by_id[cot.instance_id.as_str()];
        let subject = make_eval_subject(instance, cot)?;
        let prompt = render_self_eval_prompt(eval_template, &subject)?;
        let truth_is_correct = pseudo_label_matches(instance, cot).unwrap_or(false);
        let sampled = gateway.sample(
            &prompt,
            &params,
            Some(SimRequest::SelfEval { subject: &subject, truth_is_correct }),
        )?;
        let mut unit = Vec::with_capacity(sampled.len());
        for (j, sample) in sampled.into_iter().enumerate() {
            let record = match parse_self_eval_response(&sample.text) {
                Ok(parsed) => SelfEvalSample {
                    instance_id: cot.instance_id.clone(),
                    cot_index: cot.cot_index,
                    eval_index: j as u32,
                    rationale: parsed.rationale,
                    verdict: Some(parsed.verdict),
                    raw_completion: sample.text,
                    parse_ok: true,
                    provenance: sample.provenance,
                },
                Err(failure) => {
                    log::debug!(
                        "cot {}/{}: eval draw {j} unparseable: {failure}",
                        cot.instance_id,
                        cot.cot_index
                    );
                    SelfEvalSample {
                        instance_id: cot.instance_id.clone(),
                        cot_index: cot.cot_index,
                        eval_index: j as u32,
                        rationale: String::new(),
                        verdict: None,
                        raw_completion: sample.text,
                        parse_ok: false,
                        provenance: sample.provenance,
                    }
                }
            };
            unit.push(record);
        }
        if let Some(path) = out {
            append_corpus(&unit, path)?;
        }
        corpus.extend(unit);
    }
    if skipped_unparsed > 0 {
        log::info!("skipped {skipped_unparsed} parse-failed CoT(s) in self-eval harvest");
    }
    check_referential_integrity(dataset, cot_corpus, &corpus)?;
    Ok(corpus)
}

/// Verdict tallies over a self-eval corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct VerdictDistribution {
    pub correct: usize,
    pub incorrect: usize,
    pub unparsed: usize,
}

/// Summary of one harvested corpus pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarvestReport {
    pub instances: usize,
    pub cots: usize,
    pub evals: usize,
    pub cot_parse_failures: usize,
    pub eval_parse_failures: usize,
    /// Fraction of parse-successful CoTs whose pseudo-label matches the gold
    /// label, over instances that have one. Absent when nothing is gold-labeled.
    pub pseudo_label_agreement: Option<f64>,
    pub verdict_distribution: VerdictDistribution,
}

/// Count-and-agreement summary. The dataset provides the gold labels that
/// pseudo-label agreement is measured against.
pub fn harvest_report(
    dataset: &[TaskInstance],
    cot_corpus: &[CoTSample],
    eval_corpus: &[SelfEvalSample],
) -> HarvestReport {
    let by_id: BTreeMap<&str, &TaskInstance> =
        dataset.iter().map(|inst| (inst.id.as_str(), inst)).collect();

    let instances: BTreeSet<&str> =
        cot_corpus.iter().map(|c| c.instance_id.as_str()).collect();
    let cot_parse_failures = cot_corpus.iter().filter(|c| !c.parse_ok).count();

    let mut agree = 0usize;
    let mut judged = 0usize;
    for cot in cot_corpus.iter().filter(|c| c.parse_ok) {
        let Some(instance) = by_id.get(cot.instance_id.as_str()) else { continue };
        if let Some(matched) = pseudo_label_matches(instance, cot) {
            judged += 1;
            if matched {
                agree += 1;
            }
        }
    }

    let mut verdicts = VerdictDistribution::default();
    for eval in eval_corpus {
        match eval.verdict {
            Some(Verdict::Correct) => verdicts.correct += 1,
            Some(Verdict::Incorrect) => verdicts.incorrect += 1,
            None => verdicts.unparsed += 1,
        }
    }

    HarvestReport {
        instances: instances.len(),
        cots: cot_corpus.len(),
        evals: eval_corpus.len(),
        cot_parse_failures,
        eval_parse_failures: verdicts.unparsed,
        pseudo_label_agreement: (judged > 0).then(|| agree as f64 / judged as f64),
        verdict_distribution: verdicts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use selfdistill_core::prompt::{CoTExemplar, SelfEvalExemplar};
    use selfdistill_core::sim::SimulatedTeacherConfig;
    use selfdistill_core::synth::synthetic_dataset;
    use selfdistill_core::types::{validate_cot_corpus, validate_eval_corpus};

    pub(crate) fn cot_template() -> PromptTemplate {
        PromptTemplate::Cot {
            instruction: "Work through the task step by step, then give the final label."
                .into(),
            exemplars: vec![CoTExemplar {
                input_text: "status report from the relay unit in standard mode".into(),
                rationale: "The relay unit in standard mode reports under the first class."
                    .into(),
                label: "alpha".into(),
            }],
        }
    }

    pub(crate) fn eval_template() -> PromptTemplate {
        PromptTemplate::SelfEval {
            instruction: "Judge whether the reasoning and label are correct.".into(),
            exemplars: vec![SelfEvalExemplar {
                cot_text: "Task: status report from the relay unit in standard mode\nRationale: sounds right\nPredicted Label: alpha".into(),
                rationale: "The label matches the reporting rule.".into(),
                verdict: Verdict::Correct,
            }],
        }
    }

    pub(crate) fn config(n_cot: u32, n_eval: u32) -> HarvestConfig {
        HarvestConfig {
            n_cot,
            n_eval,
            cot_template: Some(cot_template()),
            eval_template: Some(eval_template()),
            sampling: SamplingParams::default(),
            resume: false,
        }
    }

    fn sim_gateway(q: f64, s: f64, seed: u64) -> TeacherGateway {
        TeacherGateway::simulated(SimulatedTeacherConfig::new(q, s, seed).unwrap(), None)
            .unwrap()
    }

    #[test]
    fn counts_follow_the_count_law() {
        let dataset = synthetic_dataset(10, 21);
        let gateway = sim_gateway(0.2, 0.9, 4);
        let cfg = config(3, 2);
        let cots = harvest_cots(&dataset, &gateway, &cfg, None).unwrap();
        assert_eq!(cots.len(), 30);
        validate_cot_corpus(&cots).unwrap();
        let parse_ok = cots.iter().filter(|c| c.parse_ok).count();
        let evals = harvest_self_evals(&dataset, &cots, &gateway, &cfg, None).unwrap();
        assert_eq!(evals.len(), parse_ok * 2);
        validate_eval_corpus(&evals).unwrap();
    }

    #[test]
    fn n_eval_zero_is_an_empty_corpus_with_no_calls() {
        let dataset = synthetic_dataset(4, 3);
        let gateway = sim_gateway(0.2, 0.9, 4);
        let cfg = config(2, 0);
        let cots = harvest_cots(&dataset, &gateway, &cfg, None).unwrap();
        let draws_after_cots = gateway.counters().sim_draws;
        let evals = harvest_self_evals(&dataset, &cots, &gateway, &cfg, None).unwrap();
        assert!(evals.is_empty());
        assert_eq!(gateway.counters().sim_draws, draws_after_cots);
    }

    #[test]
    fn perfectly_reliable_evaluator_flags_exactly_the_flawed_cots() {
        let dataset = synthetic_dataset(12, 8);
        let gateway = sim_gateway(0.4, 1.0, 17);
        let cfg = config(2, 1);
        let cots = harvest_cots(&dataset, &gateway, &cfg, None).unwrap();
        let evals = harvest_self_evals(&dataset, &cots, &gateway, &cfg, None).unwrap();
        let by_id: BTreeMap<&str, &TaskInstance> =
            dataset.iter().map(|i| (i.id.as_str(), i)).collect();
        assert!(!evals.is_empty());
        for eval in &evals {
            let cot = cots
                .iter()
                .find(|c| c.instance_id == eval.instance_id && c.cot_index == eval.cot_index)
                .unwrap();
            let flawed = !pseudo_label_matches(by_id[cot.instance_id.as_str()], cot).unwrap();
            let expected = if flawed { Verdict::Incorrect } else { Verdict::Correct };
            assert_eq!(eval.verdict, Some(expected), "cot {}/{}", cot.instance_id, cot.cot_index);
        }
    }

    #[test]
    fn dangling_cot_reference_is_rejected() {
        let dataset = synthetic_dataset(2, 5);
        let gateway = sim_gateway(0.0, 1.0, 1);
        let cfg = config(1, 1);
        let mut cots = harvest_cots(&dataset, &gateway, &cfg, None).unwrap();
        cots[0].instance_id = "nope".into();
        let err = harvest_self_evals(&dataset, &cots, &gateway, &cfg, None).unwrap_err();
        assert!(matches!(err, HarvestError::DanglingCot { .. }));
    }

    #[test]
    fn resume_skips_complete_instances_and_redoes_partial_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cots.jsonl");
        let dataset = synthetic_dataset(6, 2);
        let gateway = sim_gateway(0.3, 0.9, 9);
        let mut cfg = config(3, 0);

        let full = harvest_cots(&dataset, &gateway, &cfg, Some(&path)).unwrap();
        let draws_full = gateway.counters().sim_draws;
        assert_eq!(draws_full, 18);

        // Truncate to 2 complete instances plus one partial (7 records).
        let keep: Vec<CoTSample> = full.iter().take(7).cloned().collect();
        serialize_corpus(&keep, &path).unwrap();

        cfg.resume = true;
        let resumed = harvest_cots(&dataset, &gateway, &cfg, Some(&path)).unwrap();
        assert_eq!(resumed, full);
        // 4 instances redone (one partial + three missing), 2 skipped.
        assert_eq!(gateway.counters().sim_draws - draws_full, 12);

        let on_disk: Vec<CoTSample> = crate::corpus::deserialize_corpus(&path).unwrap();
        assert_eq!(on_disk.len(), full.len());

        // Idempotent when complete: nothing new appended.
        let again = harvest_cots(&dataset, &gateway, &cfg, Some(&path)).unwrap();
        assert_eq!(again, full);
        assert_eq!(gateway.counters().sim_draws - draws_full, 12);
    }

    #[test]
    fn report_counts_and_boundary_agreement() {
        let dataset = synthetic_dataset(10, 31);
        let gateway = sim_gateway(0.0, 1.0, 2);
        let cfg = config(2, 2);
        let cots = harvest_cots(&dataset, &gateway, &cfg, None).unwrap();
        let evals = harvest_self_evals(&dataset, &cots, &gateway, &cfg, None).unwrap();
        let report = harvest_report(&dataset, &cots, &evals);
        assert_eq!(report.instances, 10);
        assert_eq!(report.cots, 20);
        assert_eq!(report.evals, 40);
        assert_eq!(report.cot_parse_failures, 0);
        // q=0: every pseudo-label is the gold label; s=1: every verdict correct.
        assert_eq!(report.pseudo_label_agreement, Some(1.0));
        assert_eq!(report.verdict_distribution.correct, 40);
        assert_eq!(report.verdict_distribution.incorrect, 0);
    }

    #[test]
    fn report_agreement_tracks_flaw_rate_at_scale() {
        let dataset = synthetic_dataset(1000, 77);
        let gateway = sim_gateway(0.3, 0.9, 41);
        let cfg = config(1, 0);
        let cots = harvest_cots(&dataset, &gateway, &cfg, None).unwrap();
        let report = harvest_report(&dataset, &cots, &[]);
        let agreement = report.pseudo_label_agreement.unwrap();
        assert!(
            (agreement - 0.7).abs() <= 0.03,
            "agreement {agreement} strays from 0.7 by more than 0.03"
        );
    }
}
