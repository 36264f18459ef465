//! The two-phase distillation trainer.
//!
//! Phase one fits the self-evaluation pairs, phase two the chain-of-thought
//! pairs (the `joint_mixed` schedule interleaves batches of both instead).
//! Within a batch, each pair contributes `label + lambda * rationale` mean
//! token cross-entropy; gradients are accumulated per example with the same
//! `1/n` and `lambda/n` coefficients, so batched and one-by-one processing
//! produce identical losses by construction.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::derive_seed;
use crate::loss::{pair_examples, ExamplePair, LossError};
use crate::student::{TokenId, TrainableStudent};
use crate::trainset::{
    build_cot_examples, build_se_examples, BuildError, LabelSource,
};
use crate::types::{CoTSample, SelfEvalSample, TaskInstance};

/// Order of the two training phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSchedule {
    /// Self-evaluation first, then chain-of-thought (the default).
    SequentialSeThenCot,
    /// One pass interleaving shuffled batches from both pools.
    JointMixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    SelfEval,
    Cot,
    Joint,
}

impl Phase {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::SelfEval => "se",
            Phase::Cot => "cot",
            Phase::Joint => "joint",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters of one training run. The defaults mirror the full-scale
/// recipe (batch 64, learning rate 5e-5, lambda 0.5); desk-scale experiment
/// configs override them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_weight: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs_se: usize,
    pub epochs_cot: usize,
    pub phase_schedule: PhaseSchedule,
    pub label_source: LabelSource,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_weight: 0.5,
            batch_size: 64,
            learning_rate: 5e-5,
            weight_decay: 0.01,
            epochs_se: 3,
            epochs_cot: 3,
            phase_schedule: PhaseSchedule::SequentialSeThenCot,
            label_source: LabelSource::Pseudo,
            seed: DEFAULT_SEEDS[0],
        }
    }
}

/// The three seeds experiments report over by default.
pub const DEFAULT_SEEDS: [u64; 3] = [13, 42, 2023];

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.lambda_weight.is_finite() || self.lambda_weight < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "lambda_weight = {} must be finite and non-negative",
                self.lambda_weight
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".to_string()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "weight_decay = {} must be non-negative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    InvalidConfig(String),
    Build(BuildError),
    Loss(LossError),
    /// Training diverged; the payload says exactly where.
    NonFiniteLoss { phase: Phase, epoch: usize, batch: usize, value: f64 },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::InvalidConfig(msg) => write!(f, "invalid training config: {msg}"),
            TrainError::Build(e) => write!(f, "cannot build training examples: {e}"),
            TrainError::Loss(e) => write!(f, "loss error: {e}"),
            TrainError::NonFiniteLoss { phase, epoch, batch, value } => {
                write!(
                    f,
                    "non-finite loss {value} in phase {phase}, epoch {epoch}, batch {batch}"
                )
            }
        }
    }
}

impl core::error::Error for TrainError {}

impl From<BuildError> for TrainError {
    fn from(e: BuildError) -> Self {
        TrainError::Build(e)
    }
}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        TrainError::Loss(e)
    }
}

/// One epoch's summary, as surfaced to hooks and the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    /// Epoch index within its phase, starting at 0.
    pub epoch: usize,
    pub batches: usize,
    pub examples: usize,
    /// Example-weighted mean of `label + lambda * rationale` over the epoch.
    pub mean_loss: f64,
}

/// Observer for checkpointing and logging. The default methods do nothing.
pub trait TrainHook<S: TrainableStudent> {
    fn on_epoch(&mut self, _record: &EpochRecord, _model: &S) {}
    fn on_phase_end(&mut self, _phase: Phase, _model: &S) {}
}

/// Hook that ignores every event.
pub struct NoopHook;

impl<S: TrainableStudent> TrainHook<S> for NoopHook {}

/// Decoupled-weight-decay Adam over flat parameter vectors.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamW {
    #[must_use]
    pub fn new(n_params: usize, learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            m: alloc::vec![0.0; n_params],
            v: alloc::vec![0.0; n_params],
            t: 0,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - libm::pow(self.beta1, self.t as f64);
        let b2t = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.learning_rate
                * (m_hat / (libm::sqrt(v_hat) + self.epsilon) + self.weight_decay * params[i]);
        }
    }
}

/// Pre-tokenized pair, so the epoch loop never re-tokenizes.
struct TokenizedPair {
    predict_input: Vec<TokenId>,
    predict_target: Vec<TokenId>,
    explain_input: Vec<TokenId>,
    explain_target: Vec<TokenId>,
}

fn tokenize_pairs<S: TrainableStudent>(model: &S, pairs: &[ExamplePair]) -> Vec<TokenizedPair> {
    pairs
        .iter()
        .map(|p| TokenizedPair {
            predict_input: model.tokenize(&p.predict.input_text),
            predict_target: model.tokenize_target(&p.predict.target_text),
            explain_input: model.tokenize(&p.explain.input_text),
            explain_target: model.tokenize_target(&p.explain.target_text),
        })
        .collect()
}

/// Train `model` on the corpora under `config`.
///
/// Builds self-evaluation and chain-of-thought pairs, then runs the configured
/// schedule. A phase with zero epochs or zero examples is skipped outright (so
/// a run with no self-evaluations is bit-identical to a pure-CoT run).
/// Returns the per-epoch records.
pub fn train<S, H>(
    model: &mut S,
    dataset: &[TaskInstance],
    cot_corpus: &[CoTSample],
    eval_corpus: &[SelfEvalSample],
    config: &TrainConfig,
    hook: &mut H,
) -> Result<Vec<EpochRecord>, TrainError>
where
    S: TrainableStudent,
    H: TrainHook<S>,
{
    config.validate()?;
    let se_pairs = if config.epochs_se > 0 && !eval_corpus.is_empty() {
        pair_examples(&build_se_examples(dataset, cot_corpus, eval_corpus)?)?
    } else {
        Vec::new()
    };
    let cot_pairs = if config.epochs_cot > 0 && !cot_corpus.is_empty() {
        pair_examples(&build_cot_examples(dataset, cot_corpus, config.label_source)?)?
    } else {
        Vec::new()
    };
    train_on_pairs(model, &se_pairs, &cot_pairs, config, hook)
}

/// Lower-level entry point over already-built pairs.
pub fn train_on_pairs<S, H>(
    model: &mut S,
    se_pairs: &[ExamplePair],
    cot_pairs: &[ExamplePair],
    config: &TrainConfig,
    hook: &mut H,
) -> Result<Vec<EpochRecord>, TrainError>
where
    S: TrainableStudent,
    H: TrainHook<S>,
{
    config.validate()?;
    let mut records = Vec::new();
    match config.phase_schedule {
        PhaseSchedule::SequentialSeThenCot => {
            if config.epochs_se > 0 && !se_pairs.is_empty() {
                run_phase(model, se_pairs, Phase::SelfEval, config.epochs_se, config, &mut records, hook)?;
                hook.on_phase_end(Phase::SelfEval, model);
            } else {
                log::debug!("self-evaluation phase skipped (no epochs or no examples)");
            }
            if config.epochs_cot > 0 && !cot_pairs.is_empty() {
                run_phase(model, cot_pairs, Phase::Cot, config.epochs_cot, config, &mut records, hook)?;
                hook.on_phase_end(Phase::Cot, model);
            } else {
                log::debug!("chain-of-thought phase skipped (no epochs or no examples)");
            }
        }
        PhaseSchedule::JointMixed => {
            run_joint(model, se_pairs, cot_pairs, config, &mut records, hook)?;
            hook.on_phase_end(Phase::Joint, model);
        }
    }
    Ok(records)
}

/// Process one batch: accumulate scaled gradients and return the batch loss.
fn batch_step<S: TrainableStudent>(
    model: &mut S,
    tokens: &[TokenizedPair],
    batch: &[usize],
    lambda: f64,
) -> f64 {
    let n = batch.len() as f64;
    model.zero_grads();
    let mut total = 0.0;
    for &idx in batch {
        let pair = &tokens[idx];
        let label_term =
            model.accumulate_loss_grad(&pair.predict_input, &pair.predict_target, 1.0 / n);
        let rationale_term =
            model.accumulate_loss_grad(&pair.explain_input, &pair.explain_target, lambda / n);
        total += label_term + lambda * rationale_term;
    }
    total / n
}

fn shuffle_indices(len: usize, phase: Phase, epoch: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let epoch_str = format!("{epoch}");
    let mut rng = ChaCha8Rng::from_seed(derive_seed(
        "train-shuffle",
        &[phase.as_str(), &epoch_str],
        seed,
    ));
    order.shuffle(&mut rng);
    order
}

fn run_phase<S, H>(
    model: &mut S,
    pairs: &[ExamplePair],
    phase: Phase,
    epochs: usize,
    config: &TrainConfig,
    records: &mut Vec<EpochRecord>,
    hook: &mut H,
) -> Result<(), TrainError>
where
    S: TrainableStudent,
    H: TrainHook<S>,
{
    let tokens = tokenize_pairs(model, pairs);
    let mut opt = AdamW::new(model.params().len(), config.learning_rate, config.weight_decay);
    for epoch in 0..epochs {
        let order = shuffle_indices(pairs.len(), phase, epoch, config.seed);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let loss = batch_step(model, &tokens, batch, config.lambda_weight);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { phase, epoch, batch: batches, value: loss });
            }
            let grads = model.grads().to_vec();
            opt.step(model.params_mut(), &grads);
            epoch_loss += loss * batch.len() as f64;
            batches += 1;
        }
        let record = EpochRecord {
            phase,
            epoch,
            batches,
            examples: pairs.len(),
            mean_loss: epoch_loss / pairs.len() as f64,
        };
        log::debug!(
            "phase {phase} epoch {epoch}: mean loss {:.4} over {} examples",
            record.mean_loss,
            record.examples
        );
        hook.on_epoch(&record, model);
        records.push(record);
    }
    Ok(())
}

fn run_joint<S, H>(
    model: &mut S,
    se_pairs: &[ExamplePair],
    cot_pairs: &[ExamplePair],
    config: &TrainConfig,
    records: &mut Vec<EpochRecord>,
    hook: &mut H,
) -> Result<(), TrainError>
where
    S: TrainableStudent,
    H: TrainHook<S>,
{
    let epochs = config.epochs_se + config.epochs_cot;
    let se_tokens = tokenize_pairs(model, se_pairs);
    let cot_tokens = tokenize_pairs(model, cot_pairs);
    let mut opt = AdamW::new(model.params().len(), config.learning_rate, config.weight_decay);
    for epoch in 0..epochs {
        let se_order = shuffle_indices(se_pairs.len(), Phase::SelfEval, epoch, config.seed);
        let cot_order = shuffle_indices(cot_pairs.len(), Phase::Cot, epoch, config.seed);
        // Batches from both pools, shuffled together.
        let mut batches: Vec<(bool, &[usize])> = se_order
            .chunks(config.batch_size)
            .map(|c| (true, c))
            .chain(cot_order.chunks(config.batch_size).map(|c| (false, c)))
            .collect();
        let epoch_str = format!("{epoch}");
        let mut rng = ChaCha8Rng::from_seed(derive_seed(
            "train-joint-order",
            &[&epoch_str],
            config.seed,
        ));
        batches.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let n_batches = batches.len();
        for (batch_idx, (is_se, batch)) in batches.into_iter().enumerate() {
            let tokens = if is_se { &se_tokens } else { &cot_tokens };
            let loss = batch_step(model, tokens, batch, config.lambda_weight);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    phase: Phase::Joint,
                    epoch,
                    batch: batch_idx,
                    value: loss,
                });
            }
            let grads = model.grads().to_vec();
            opt.step(model.params_mut(), &grads);
            epoch_loss += loss * batch.len() as f64;
        }
        let examples = se_pairs.len() + cot_pairs.len();
        if examples == 0 {
            log::debug!("joint schedule with no examples is a no-op");
            return Ok(());
        }
        let record = EpochRecord {
            phase: Phase::Joint,
            epoch,
            batches: n_batches,
            examples,
            mean_loss: epoch_loss / examples as f64,
        };
        hook.on_epoch(&record, model);
        records.push(record);
    }
    Ok(())
}
