//! The two prefix-tagged multi-task losses.
//!
//! Both losses have the same shape: over a batch of (predict, explain) pairs,
//! the mean of `label_term + lambda * rationale_term`, where each term is the
//! mean per-token softmax cross-entropy of the student on that example. They
//! differ only in which corpus the pairs were built from, which is asserted,
//! not assumed.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::student::StudentModel;
use crate::types::{Prefix, TaskTag, TrainingExample, WeightRole};

/// A predict/explain example pair sharing one underlying teacher sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamplePair {
    pub predict: TrainingExample,
    pub explain: TrainingExample,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    EmptyBatch,
    EmptyTarget { index: usize },
    /// The flat example list did not alternate predict/explain.
    UnpairedExample { index: usize, detail: String },
    WrongTaskTag { index: usize, expected: TaskTag },
    NonFinite { index: usize },
    InvalidLambda { lambda: f64 },
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::EmptyBatch => f.write_str("loss over an empty batch is undefined"),
            LossError::EmptyTarget { index } => {
                write!(f, "example {index} has an empty target")
            }
            LossError::UnpairedExample { index, detail } => {
                write!(f, "example {index}: {detail}")
            }
            LossError::WrongTaskTag { index, expected } => {
                write!(f, "pair {index} does not carry task tag {expected:?}")
            }
            LossError::NonFinite { index } => {
                write!(f, "pair {index} produced a non-finite loss")
            }
            LossError::InvalidLambda { lambda } => {
                write!(f, "lambda = {lambda} must be finite and non-negative")
            }
        }
    }
}

impl core::error::Error for LossError {}

/// Zip a flat example list (as produced by the example builders, predict and
/// explain adjacent) into pairs, checking roles and prefixes.
pub fn pair_examples(examples: &[TrainingExample]) -> Result<Vec<ExamplePair>, LossError> {
    if examples.len() % 2 != 0 {
        return Err(LossError::UnpairedExample {
            index: examples.len() - 1,
            detail: String::from("odd number of examples"),
        });
    }
    let mut pairs = Vec::with_capacity(examples.len() / 2);
    for (i, chunk) in examples.chunks_exact(2).enumerate() {
        let (predict, explain) = (&chunk[0], &chunk[1]);
        if predict.prefix != Prefix::Predict || predict.weight_role != WeightRole::LabelTerm {
            return Err(LossError::UnpairedExample {
                index: 2 * i,
                detail: String::from("expected a predict/label-term example"),
            });
        }
        if explain.prefix != Prefix::Explain || explain.weight_role != WeightRole::RationaleTerm {
            return Err(LossError::UnpairedExample {
                index: 2 * i + 1,
                detail: String::from("expected an explain/rationale-term example"),
            });
        }
        if predict.task_tag != explain.task_tag {
            return Err(LossError::UnpairedExample {
                index: 2 * i + 1,
                detail: String::from("pair members carry different task tags"),
            });
        }
        pairs.push(ExamplePair { predict: predict.clone(), explain: explain.clone() });
    }
    Ok(pairs)
}

/// Mean per-token softmax cross-entropy of the student on one (input, target)
/// text pair.
pub fn token_xent(
    model: &dyn StudentModel,
    input_text: &str,
    target_text: &str,
) -> Result<f64, LossError> {
    let input = model.tokenize(input_text);
    let target = model.tokenize_target(target_text);
    if target.is_empty() {
        return Err(LossError::EmptyTarget { index: 0 });
    }
    let log_probs = model.target_log_probs(&input, &target);
    debug_assert_eq!(log_probs.len(), target.len());
    let loss = -log_probs.iter().sum::<f64>() / target.len() as f64;
    if !loss.is_finite() {
        return Err(LossError::NonFinite { index: 0 });
    }
    Ok(loss)
}

fn multitask_loss(
    model: &dyn StudentModel,
    batch: &[ExamplePair],
    lambda: f64,
    expected: TaskTag,
) -> Result<f64, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(LossError::InvalidLambda { lambda });
    }
    let mut total = 0.0;
    for (i, pair) in batch.iter().enumerate() {
        if pair.predict.task_tag != expected || pair.explain.task_tag != expected {
            return Err(LossError::WrongTaskTag { index: i, expected });
        }
        let label_term = token_xent(model, &pair.predict.input_text, &pair.predict.target_text)
            .map_err(|e| reindex(e, i))?;
        let rationale_term =
            token_xent(model, &pair.explain.input_text, &pair.explain.target_text)
                .map_err(|e| reindex(e, i))?;
        let contribution = label_term + lambda * rationale_term;
        if !contribution.is_finite() {
            return Err(LossError::NonFinite { index: i });
        }
        total += contribution;
    }
    Ok(total / batch.len() as f64)
}

fn reindex(e: LossError, i: usize) -> LossError {
    match e {
        LossError::EmptyTarget { .. } => LossError::EmptyTarget { index: i },
        LossError::NonFinite { .. } => LossError::NonFinite { index: i },
        other => other,
    }
}

/// Self-evaluation distillation loss over a batch of verdict/critique pairs.
pub fn loss_se(
    model: &dyn StudentModel,
    batch: &[ExamplePair],
    lambda: f64,
) -> Result<f64, LossError> {
    multitask_loss(model, batch, lambda, TaskTag::SelfEval)
}

/// Chain-of-thought distillation loss over a batch of label/rationale pairs.
pub fn loss_cot(
    model: &dyn StudentModel,
    batch: &[ExamplePair],
    lambda: f64,
) -> Result<f64, LossError> {
    multitask_loss(model, batch, lambda, TaskTag::Cot)
}
