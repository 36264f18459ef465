//! Pins the loss implementations against externally computed values.
//!
//! The fixture (`fixtures/loss_oracle.json`, regenerated by
//! `tools/gen_loss_oracle.py`) holds batch losses for the closed-form
//! [`FixedLogitStudent`] computed with an independent numpy implementation.
//! Any drift in tokenization, softmax, per-token averaging, pair weighting,
//! or the lambda mix shows up here as a > 1e-6 difference.

use selfdistill_core::loss::{loss_cot, loss_se, token_xent, ExamplePair};
use selfdistill_core::student::FixedLogitStudent;
use selfdistill_core::types::{Prefix, TaskTag, TrainingExample, WeightRole};
use serde::Deserialize;

const TOLERANCE: f64 = 1e-6;

#[derive(Deserialize)]
struct OraclePair {
    predict_input: String,
    predict_target: String,
    explain_input: String,
    explain_target: String,
}

#[derive(Deserialize)]
struct OracleFixture {
    lambdas: Vec<f64>,
    se_batch: Vec<OraclePair>,
    cot_batch: Vec<OraclePair>,
    expected_se: Vec<f64>,
    expected_cot: Vec<f64>,
    se_rationale_mean: f64,
    cot_rationale_mean: f64,
}

fn fixture() -> OracleFixture {
    serde_json::from_str(include_str!("fixtures/loss_oracle.json")).expect("fixture parses")
}

fn to_pairs(raw: &[OraclePair], tag: TaskTag) -> Vec<ExamplePair> {
    raw.iter()
        .map(|p| ExamplePair {
            predict: TrainingExample {
                prefix: Prefix::Predict,
                input_text: p.predict_input.clone(),
                target_text: p.predict_target.clone(),
                task_tag: tag,
                weight_role: WeightRole::LabelTerm,
            },
            explain: TrainingExample {
                prefix: Prefix::Explain,
                input_text: p.explain_input.clone(),
                target_text: p.explain_target.clone(),
                task_tag: tag,
                weight_role: WeightRole::RationaleTerm,
            },
        })
        .collect()
}

#[test]
fn se_loss_matches_the_oracle_at_every_lambda() {
    let fx = fixture();
    let model = FixedLogitStudent;
    let batch = to_pairs(&fx.se_batch, TaskTag::SelfEval);
    for (lambda, expected) in fx.lambdas.iter().zip(&fx.expected_se) {
        let got = loss_se(&model, &batch, *lambda).unwrap();
        assert!(
            (got - expected).abs() <= TOLERANCE,
            "lambda {lambda}: got {got}, oracle {expected}"
        );
    }
}

#[test]
fn cot_loss_matches_the_oracle_at_every_lambda() {
    let fx = fixture();
    let model = FixedLogitStudent;
    let batch = to_pairs(&fx.cot_batch, TaskTag::Cot);
    for (lambda, expected) in fx.lambdas.iter().zip(&fx.expected_cot) {
        let got = loss_cot(&model, &batch, *lambda).unwrap();
        assert!(
            (got - expected).abs() <= TOLERANCE,
            "lambda {lambda}: got {got}, oracle {expected}"
        );
    }
}

#[test]
fn lambda_slope_equals_the_mean_rationale_xent() {
    let fx = fixture();
    let model = FixedLogitStudent;
    for (raw, tag, expected_slope) in [
        (&fx.se_batch, TaskTag::SelfEval, fx.se_rationale_mean),
        (&fx.cot_batch, TaskTag::Cot, fx.cot_rationale_mean),
    ] {
        let batch = to_pairs(raw, tag);
        let loss_at = |lambda: f64| match tag {
            TaskTag::SelfEval => loss_se(&model, &batch, lambda).unwrap(),
            TaskTag::Cot => loss_cot(&model, &batch, lambda).unwrap(),
        };
        let slope = loss_at(1.0) - loss_at(0.0);
        assert!(
            (slope - expected_slope).abs() <= TOLERANCE,
            "slope {slope} vs oracle {expected_slope}"
        );
        // And the direct check that the slope is the mean explain-term xent.
        let mean_rationale = batch
            .iter()
            .map(|p| token_xent(&model, &p.explain.input_text, &p.explain.target_text).unwrap())
            .sum::<f64>()
            / batch.len() as f64;
        assert!((slope - mean_rationale).abs() <= TOLERANCE);
    }
}
