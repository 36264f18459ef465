//! Deterministic simulated teacher.
//!
//! The simulator fabricates chain-of-thought and self-evaluation completions
//! from ground truth: with probability `flaw_rate_q` a CoT argues for a wrong
//! label, and a self-evaluation names the true verdict with probability
//! `eval_reliability_s`. Every draw is a pure function of
//! `(identity, draw_index, seed)`, so harvests replay byte-for-byte.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::answer::eval_math_expression;
use crate::digest::derive_seed;
use crate::prompt::EvalSubject;
use crate::synth;
use crate::types::{canonicalize_label, TaskInstance, TaskKind, Verdict};

/// Knobs of the simulated teacher.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimulatedTeacherConfig {
    /// Probability that a CoT draw argues for a wrong pseudo-label.
    pub flaw_rate_q: f64,
    /// Probability that a self-evaluation draw reports the true verdict.
    pub eval_reliability_s: f64,
    /// Base seed mixed into every derived RNG stream.
    pub seed: u64,
}

impl SimulatedTeacherConfig {
    pub fn new(flaw_rate_q: f64, eval_reliability_s: f64, seed: u64) -> Result<Self, SimError> {
        let cfg = SimulatedTeacherConfig { flaw_rate_q, eval_reliability_s, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, value) in [
            ("flaw_rate_q", self.flaw_rate_q),
            ("eval_reliability_s", self.eval_reliability_s),
        ] {
            if !(0.0..=1.0).contains(&value) || value.is_nan() {
                return Err(SimError::InvalidProbability { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    InvalidProbability { name: &'static str, value: f64 },
    /// The simulator can only fabricate answers for labeled instances.
    MissingGroundTruth { instance_id: String },
    /// Multiple-choice simulation needs the instance's choices.
    MissingChoices { instance_id: String },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidProbability { name, value } => {
                write!(f, "{name} = {value} is not a probability")
            }
            SimError::MissingGroundTruth { instance_id } => {
                write!(f, "instance {instance_id:?} has no human label to simulate from")
            }
            SimError::MissingChoices { instance_id } => {
                write!(f, "instance {instance_id:?} has no choices to simulate from")
            }
        }
    }
}

impl core::error::Error for SimError {}

fn snippet(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().take(6).collect();
    words.join(" ")
}

/// The label a faithful teacher would emit for `instance`: math gold
/// expressions are evaluated to their numeric value, everything else passes
/// through canonicalization.
fn faithful_label(instance: &TaskInstance, gold: &str) -> String {
    match instance.task {
        TaskKind::MathWordProblem => match eval_math_expression(gold) {
            Some(v) => format!("{v}"),
            None => gold.trim().to_string(),
        },
        _ => canonicalize_label(gold),
    }
}

/// A wrong-but-plausible label for `instance`, drawn with `rng`. Returns
/// `None` when the task admits no alternative (single-choice instance).
fn flawed_label(
    instance: &TaskInstance,
    gold_canonical: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Option<String>, SimError> {
    match instance.task {
        TaskKind::MathWordProblem => {
            let value = eval_math_expression(gold_canonical).unwrap_or(0.0);
            let magnitude = rng.random_range(1..=5) as f64;
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Ok(Some(format!("{}", value + sign * magnitude)))
        }
        TaskKind::CommonsenseQa => {
            let choices = instance
                .choices
                .as_deref()
                .ok_or_else(|| SimError::MissingChoices { instance_id: instance.id.clone() })?;
            let alternatives: Vec<String> = choices
                .iter()
                .map(|c| canonicalize_label(c))
                .filter(|c| c != gold_canonical)
                .collect();
            if alternatives.is_empty() {
                return Ok(None);
            }
            let idx = rng.random_range(0..alternatives.len());
            Ok(Some(alternatives[idx].clone()))
        }
        TaskKind::Nli => {
            let alternatives: Vec<&str> = ["entailment", "neutral", "contradiction"]
                .into_iter()
                .filter(|l| *l != gold_canonical)
                .collect();
            let idx = rng.random_range(0..alternatives.len());
            Ok(Some(alternatives[idx].to_string()))
        }
        TaskKind::SelfEvaluation => {
            let flipped = if gold_canonical == "correct" { "incorrect" } else { "correct" };
            Ok(Some(flipped.to_string()))
        }
        TaskKind::Synthetic => {
            let alternatives: Vec<&str> = synth::LABELS
                .into_iter()
                .filter(|l| *l != gold_canonical)
                .collect();
            if alternatives.is_empty() {
                return Ok(None);
            }
            let idx = rng.random_range(0..alternatives.len());
            Ok(Some(alternatives[idx].to_string()))
        }
    }
}

fn correct_rationale(variant: u32, snip: &str, label: &str) -> String {
    match variant % 3 {
        0 => format!("Working through {snip} step by step, every detail settles on {label}."),
        1 => format!("The clues in {snip} line up with one another, so the answer is {label}."),
        _ => format!("Taking the stated facts together, the result comes out to {label}."),
    }
}

fn flawed_rationale(variant: u32, snip: &str, label: &str) -> String {
    match variant % 3 {
        0 => format!("At first glance {snip} seems decisive, which points to {label}."),
        1 => format!("Weighing the most prominent detail of {snip}, the answer looks like {label}."),
        _ => format!("A quick reading of {snip} suggests {label}."),
    }
}

/// Fabricate one chain-of-thought completion for `instance`.
///
/// The completion is a standalone `Rationale: ...\nLabel: ...` block and is a
/// pure function of `(instance.id, draw_index, config.seed)`.
pub fn simulate_cot(
    instance: &TaskInstance,
    config: &SimulatedTeacherConfig,
    draw_index: u32,
) -> Result<String, SimError> {
    config.validate()?;
    let gold = instance
        .human_label
        .as_deref()
        .ok_or_else(|| SimError::MissingGroundTruth { instance_id: instance.id.clone() })?;
    let draw = format!("{draw_index}");
    let mut rng = ChaCha8Rng::from_seed(derive_seed(
        "sim-cot",
        &[instance.id.as_str(), &draw],
        config.seed,
    ));
    let flawed = rng.random::<f64>() < config.flaw_rate_q;
    let variant = rng.random_range(0..3u32);
    let truthful = faithful_label(instance, gold);
    let snip = snippet(&instance.input_text);
    let (rationale, label) = if flawed {
        match flawed_label(instance, &canonicalize_label(&truthful), &mut rng)? {
            Some(wrong) => (flawed_rationale(variant, &snip, &wrong), wrong),
            None => {
                log::debug!("instance {} admits no wrong label; emitting truth", instance.id);
                (correct_rationale(variant, &snip, &truthful), truthful)
            }
        }
    } else {
        (correct_rationale(variant, &snip, &truthful), truthful)
    };
    Ok(format!("Rationale: {rationale}\nLabel: {label}"))
}

/// Fabricate one self-evaluation completion for `subject`.
///
/// `truth_is_correct` is whether the evaluated CoT's label actually matches
/// ground truth; the emitted verdict agrees with that with probability
/// `eval_reliability_s`. Pure function of `(subject, draw_index, config.seed)`.
pub fn simulate_self_eval(
    subject: &EvalSubject,
    truth_is_correct: bool,
    config: &SimulatedTeacherConfig,
    draw_index: u32,
) -> Result<String, SimError> {
    config.validate()?;
    let draw = format!("{draw_index}");
    let mut rng = ChaCha8Rng::from_seed(derive_seed(
        "sim-eval",
        &[subject.as_str(), &draw],
        config.seed,
    ));
    let reliable = rng.random::<f64>() < config.eval_reliability_s;
    let variant = rng.random_range(0..2u32);
    let verdict_is_correct = truth_is_correct == reliable;
    let label = subject.predicted_label().unwrap_or("the stated label").to_string();
    let rationale = if verdict_is_correct {
        match variant {
            0 => format!(
                "Re-deriving the answer from the task confirms the reasoning; {label} follows."
            ),
            _ => format!(
                "Each step is consistent with the task input, so {label} holds up."
            ),
        }
    } else {
        match variant {
            0 => format!(
                "Re-deriving the answer from the task contradicts the reasoning; {label} does not follow."
            ),
            _ => format!(
                "A step conflicts with the task input, so {label} does not hold up."
            ),
        }
    };
    let verdict = if verdict_is_correct { Verdict::Correct } else { Verdict::Incorrect };
    Ok(format!("Rationale: {rationale}\nLabel: {verdict}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{make_eval_subject, parse_cot_response, parse_self_eval_response};
    use crate::types::provenance_sim;
    use alloc::vec;

    fn nli_instance(id: &str) -> TaskInstance {
        TaskInstance {
            id: id.to_string(),
            task: TaskKind::Nli,
            input_text: "Premise: p. Hypothesis: h.".to_string(),
            human_label: Some("neutral".to_string()),
            choices: None,
        }
    }

    #[test]
    fn config_rejects_non_probabilities() {
        assert!(SimulatedTeacherConfig::new(0.3, 0.9, 1).is_ok());
        assert!(matches!(
            SimulatedTeacherConfig::new(-0.1, 0.9, 1),
            Err(SimError::InvalidProbability { name: "flaw_rate_q", .. })
        ));
        assert!(matches!(
            SimulatedTeacherConfig::new(0.3, 1.5, 1),
            Err(SimError::InvalidProbability { name: "eval_reliability_s", .. })
        ));
    }

    #[test]
    fn cot_draws_are_deterministic_and_parse() {
        let cfg = SimulatedTeacherConfig::new(0.5, 0.9, 42).unwrap();
        let inst = nli_instance("n1");
        let a = simulate_cot(&inst, &cfg, 3).unwrap();
        let b = simulate_cot(&inst, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let parsed = parse_cot_response(&a, TaskKind::Nli).unwrap();
        assert!(["entailment", "neutral", "contradiction"].contains(&parsed.label.as_str()));
    }

    #[test]
    fn flaw_rate_extremes() {
        let inst = nli_instance("n2");
        let clean = SimulatedTeacherConfig::new(0.0, 0.9, 7).unwrap();
        let dirty = SimulatedTeacherConfig::new(1.0, 0.9, 7).unwrap();
        for draw in 0..20 {
            let c = simulate_cot(&inst, &clean, draw).unwrap();
            assert_eq!(parse_cot_response(&c, TaskKind::Nli).unwrap().label, "neutral");
            let d = simulate_cot(&inst, &dirty, draw).unwrap();
            assert_ne!(parse_cot_response(&d, TaskKind::Nli).unwrap().label, "neutral");
        }
    }

    #[test]
    fn flaw_rate_roughly_calibrated() {
        let cfg = SimulatedTeacherConfig::new(0.3, 0.9, 13).unwrap();
        let mut flawed = 0u32;
        let n = 1000;
        for i in 0..n {
            let inst = nli_instance(&format!("cal-{i}"));
            let text = simulate_cot(&inst, &cfg, 0).unwrap();
            let parsed = parse_cot_response(&text, TaskKind::Nli).unwrap();
            if parsed.label != "neutral" {
                flawed += 1;
            }
        }
        let rate = f64::from(flawed) / f64::from(n);
        assert!((rate - 0.3).abs() < 0.05, "flaw rate {rate}");
    }

    #[test]
    fn math_flaws_perturb_the_value() {
        let inst = TaskInstance {
            id: "m1".to_string(),
            task: TaskKind::MathWordProblem,
            input_text: "Ryan studies languages.".to_string(),
            human_label: Some("( ( 6.0 + 7.0 ) + 3.0 )".to_string()),
            choices: None,
        };
        let clean = SimulatedTeacherConfig::new(0.0, 0.9, 1).unwrap();
        let text = simulate_cot(&inst, &clean, 0).unwrap();
        let parsed = parse_cot_response(&text, TaskKind::MathWordProblem).unwrap();
        assert_eq!(eval_math_expression(&parsed.label), Some(16.0));

        let dirty = SimulatedTeacherConfig::new(1.0, 0.9, 1).unwrap();
        for draw in 0..10 {
            let text = simulate_cot(&inst, &dirty, draw).unwrap();
            let parsed = parse_cot_response(&text, TaskKind::MathWordProblem).unwrap();
            let v = eval_math_expression(&parsed.label).unwrap();
            assert!((v - 16.0).abs() > 0.5, "flawed value {v} too close to truth");
        }
    }

    #[test]
    fn unlabeled_instances_are_rejected() {
        let mut inst = nli_instance("n3");
        inst.human_label = None;
        let cfg = SimulatedTeacherConfig::new(0.3, 0.9, 1).unwrap();
        assert!(matches!(
            simulate_cot(&inst, &cfg, 0),
            Err(SimError::MissingGroundTruth { .. })
        ));
    }

    fn subject_for(label: &str) -> EvalSubject {
        let inst = nli_instance("s1");
        let cot = crate::types::CoTSample {
            instance_id: "s1".to_string(),
            cot_index: 0,
            rationale: "The premise does not mention location.".to_string(),
            pseudo_label: label.to_string(),
            raw_completion: String::new(),
            parse_ok: true,
            provenance: provenance_sim("sim", 0.7, "h"),
        };
        make_eval_subject(&inst, &cot).unwrap()
    }

    #[test]
    fn self_eval_reliability_extremes() {
        let subject = subject_for("neutral");
        let always = SimulatedTeacherConfig::new(0.3, 1.0, 5).unwrap();
        let never = SimulatedTeacherConfig::new(0.3, 0.0, 5).unwrap();
        for draw in 0..10 {
            let t = simulate_self_eval(&subject, true, &always, draw).unwrap();
            assert_eq!(parse_self_eval_response(&t).unwrap().verdict, Verdict::Correct);
            let f = simulate_self_eval(&subject, false, &always, draw).unwrap();
            assert_eq!(parse_self_eval_response(&f).unwrap().verdict, Verdict::Incorrect);
            let flipped = simulate_self_eval(&subject, true, &never, draw).unwrap();
            assert_eq!(parse_self_eval_response(&flipped).unwrap().verdict, Verdict::Incorrect);
        }
    }

    #[test]
    fn self_eval_is_deterministic_per_subject_and_draw() {
        let subject = subject_for("entailment");
        let cfg = SimulatedTeacherConfig::new(0.3, 0.9, 5).unwrap();
        let a = simulate_self_eval(&subject, true, &cfg, 2).unwrap();
        let b = simulate_self_eval(&subject, true, &cfg, 2).unwrap();
        assert_eq!(a, b);
        let other = simulate_self_eval(&subject_for("contradiction"), true, &cfg, 2).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn rationales_mention_the_predicted_label() {
        let subject = subject_for("neutral");
        let cfg = SimulatedTeacherConfig::new(0.3, 1.0, 5).unwrap();
        let endorsing = simulate_self_eval(&subject, true, &cfg, 0).unwrap();
        assert!(endorsing.contains("neutral"), "{endorsing}");
        let refuting = simulate_self_eval(&subject, false, &cfg, 0).unwrap();
        assert!(refuting.contains("neutral"), "{refuting}");
        assert!(refuting.contains("not"), "{refuting}");
    }

    #[test]
    fn synthetic_instances_simulate() {
        let data = crate::synth::synthetic_dataset(5, 3);
        let cfg = SimulatedTeacherConfig::new(1.0, 0.9, 9).unwrap();
        for inst in &data {
            let text = simulate_cot(inst, &cfg, 0).unwrap();
            let parsed = parse_cot_response(&text, TaskKind::Synthetic).unwrap();
            assert!(crate::synth::LABELS.contains(&parsed.label.as_str()));
            assert_ne!(&parsed.label, inst.human_label.as_ref().unwrap());
        }
    }

    #[test]
    fn cqa_flaws_come_from_other_choices() {
        let inst = TaskInstance {
            id: "q1".to_string(),
            task: TaskKind::CommonsenseQa,
            input_text: "What happens to a plant when it is dying?".to_string(),
            human_label: Some("death and decay".to_string()),
            choices: Some(vec![
                "change of color".to_string(),
                "death and decay".to_string(),
                "getting cold".to_string(),
            ]),
        };
        let dirty = SimulatedTeacherConfig::new(1.0, 0.9, 2).unwrap();
        for draw in 0..10 {
            let text = simulate_cot(&inst, &dirty, draw).unwrap();
            let parsed = parse_cot_response(&text, TaskKind::CommonsenseQa).unwrap();
            assert!(parsed.label == "change of color" || parsed.label == "getting cold");
        }
    }
}
