//! Student evaluation: greedy decoding, normalization, exact-match accuracy,
//! and the aggregation used to report conditions across seeds.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::answer::{normalize_answer, CanonicalLabel, NormalizeError};
use crate::student::StudentModel;
use crate::trainset::LabelSource;
use crate::types::{Prefix, TaskInstance};

/// Decoding cap used when an experiment config does not set its own.
pub const DEFAULT_MAX_DECODE_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    EmptyTestSet,
    MissingGoldLabel { instance_id: String },
    /// The gold label itself failed normalization; the test set is broken.
    BadGoldLabel { instance_id: String, reason: NormalizeError },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::EmptyTestSet => f.write_str("cannot evaluate on an empty test set"),
            EvalError::MissingGoldLabel { instance_id } => {
                write!(f, "test instance {instance_id:?} has no gold label")
            }
            EvalError::BadGoldLabel { instance_id, reason } => {
                write!(f, "gold label of {instance_id:?} does not normalize: {reason}")
            }
        }
    }
}

impl core::error::Error for EvalError {}

/// Greedy-decode the student's label for one instance and normalize it.
/// Normalization failures (including empty decodes) surface as errors; the
/// caller decides whether that counts as a wrong prediction.
pub fn predict_label(
    model: &dyn StudentModel,
    instance: &TaskInstance,
    max_len: usize,
) -> Result<CanonicalLabel, NormalizeError> {
    let input_text = alloc::format!("{}{}", Prefix::Predict.tag(), instance.input_text);
    let input = model.tokenize(&input_text);
    let decoded_ids = model.generate(&input, max_len);
    let decoded = model.detokenize(&decoded_ids);
    normalize_answer(instance.task, &decoded, instance)
}

/// Accuracy of one model over one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAccuracy {
    pub correct: usize,
    pub total: usize,
    /// Predictions that failed to normalize (counted as wrong).
    pub prediction_failures: usize,
    pub accuracy: f64,
}

/// Exact-match accuracy with task-aware normalization. Every test instance
/// must carry a valid gold label; broken gold labels are an error rather than
/// a silent zero.
pub fn evaluate(
    model: &dyn StudentModel,
    test_set: &[TaskInstance],
    max_len: usize,
) -> Result<EvalAccuracy, EvalError> {
    if test_set.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut correct = 0usize;
    let mut failures = 0usize;
    for instance in test_set {
        let gold_raw = instance
            .human_label
            .as_deref()
            .ok_or_else(|| EvalError::MissingGoldLabel { instance_id: instance.id.clone() })?;
        let gold = normalize_answer(instance.task, gold_raw, instance).map_err(|reason| {
            EvalError::BadGoldLabel { instance_id: instance.id.clone(), reason }
        })?;
        match predict_label(model, instance, max_len) {
            Ok(pred) => {
                if gold.matches(&pred) {
                    correct += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    Ok(EvalAccuracy {
        correct,
        total: test_set.len(),
        prediction_failures: failures,
        accuracy: correct as f64 / test_set.len() as f64,
    })
}

#[must_use]
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divide by n, not n-1): the spread of the
/// seeds actually run, not an estimate of a larger population.
#[must_use]
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mu = mean(values);
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
    libm::sqrt(var)
}

/// One experiment cell: a condition trained under several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub condition: String,
    pub label_source: LabelSource,
    pub n_cot: u32,
    pub n_eval: u32,
    pub seeds: Vec<u64>,
    pub per_seed_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

impl EvalResult {
    #[must_use]
    pub fn from_runs(
        condition: &str,
        label_source: LabelSource,
        n_cot: u32,
        n_eval: u32,
        seeds: &[u64],
        per_seed_accuracy: Vec<f64>,
    ) -> Self {
        let mean_accuracy = mean(&per_seed_accuracy);
        let std_accuracy = population_std(&per_seed_accuracy);
        EvalResult {
            condition: String::from(condition),
            label_source,
            n_cot,
            n_eval,
            seeds: seeds.to_vec(),
            per_seed_accuracy,
            mean_accuracy,
            std_accuracy,
        }
    }
}
