//! Experiment lab: the condition grid, both corpus-size ablations, and the
//! synthetic flaw-mitigation experiment.
//!
//! A grid cell is one (condition, label source, seed) training run. Cells
//! are independent, so they fan out across a rayon pool; results are merged
//! in declaration order, never completion order, and every cell records a
//! digest of its final parameters so bit-level reproducibility is checkable
//! from the results file alone.
//!
//! Conditions subsample the harvested corpora by draw index — evaluating
//! n_cot = 3 against a corpus harvested at n_cot = 5 uses draws 0, 1, 2 of
//! each instance — so one expensive harvest serves every cheaper condition.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use selfdistill_core::eval::{evaluate, mean, EvalError, EvalResult};
use selfdistill_core::prompt::{CoTExemplar, PromptTemplate, SelfEvalExemplar};
use selfdistill_core::sim::{SimError, SimulatedTeacherConfig};
use selfdistill_core::student::{
    StudentError, TinyStudent, TinyStudentConfig, TrainableStudent, Vocab,
};
use selfdistill_core::synth::synthetic_dataset;
use selfdistill_core::train::{train, EpochRecord, NoopHook, TrainConfig, TrainError};
use selfdistill_core::trainset::{
    build_cot_examples, build_se_examples, cot_capacity, eval_capacity, subsample_cots,
    subsample_evals, BuildError, LabelSource,
};
use selfdistill_core::{CoTSample, SelfEvalSample, TaskInstance, Verdict};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::harvest::{harvest_cots, harvest_self_evals, HarvestConfig, HarvestError};
use crate::gateway::{SamplingParams, TeacherGateway};

/// One grid row: how much of the harvested corpora a training run sees and
/// how hard it leans on rationales.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: String,
    pub n_cot: u32,
    pub n_eval: u32,
    pub lambda_weight: f64,
}

impl Condition {
    fn new(name: &str, n_cot: u32, n_eval: u32, lambda_weight: f64) -> Self {
        Condition { name: name.to_string(), n_cot, n_eval, lambda_weight }
    }

    /// The five standard rows: plain label distillation, rationale
    /// distillation from one or five CoTs, and the same with the
    /// self-evaluation phase in front.
    pub fn standard_rows() -> Vec<Condition> {
        vec![
            Condition::new("standard", 1, 0, 0.0),
            Condition::new("1 CoT", 1, 0, 0.5),
            Condition::new("1 CoT w/ self-eval", 1, 5, 0.5),
            Condition::new("5 CoTs", 5, 0, 0.5),
            Condition::new("5 CoTs w/ self-eval", 5, 5, 0.5),
        ]
    }
}

/// Shared knobs for every cell in a lab run.
#[derive(Debug, Clone)]
pub struct LabConfig {
    pub seeds: Vec<u64>,
    /// Base training config; `lambda_weight`, `label_source`, and `seed` are
    /// overridden per cell, `epochs_se` is zeroed when a cell has no
    /// self-evaluations.
    pub train: TrainConfig,
    pub student: TinyStudentConfig,
    pub max_decode_len: usize,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            seeds: selfdistill_core::train::DEFAULT_SEEDS.to_vec(),
            train: TrainConfig::default(),
            student: TinyStudentConfig::default(),
            max_decode_len: selfdistill_core::eval::DEFAULT_MAX_DECODE_LEN,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(
        "insufficient corpus for condition {condition:?}: needs {needed_cot} CoTs \
         (corpus has {have_cot}) and {needed_eval} evals per CoT (corpus has {have_eval})"
    )]
    InsufficientCorpus {
        condition: String,
        needed_cot: u32,
        have_cot: u32,
        needed_eval: u32,
        have_eval: u32,
    },
    #[error("lab config rejected: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Student(#[from] StudentError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Harvest(#[from] Box<HarvestError>),
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error("writing results: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything one training run produced, down to a parameter digest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRun {
    pub condition: String,
    pub label_source: LabelSource,
    pub n_cot: u32,
    pub n_eval: u32,
    pub seed: u64,
    pub accuracy: f64,
    pub prediction_failures: usize,
    pub params_sha256: String,
    pub epochs: Vec<EpochRecord>,
}

/// Aggregated rows plus the per-cell evidence behind them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResults {
    pub rows: Vec<EvalResult>,
    pub cells: Vec<CellRun>,
}

/// SHA-256 over the exact parameter bits, little-endian.
pub fn params_digest(params: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for p in params {
        hasher.update(p.to_bits().to_le_bytes());
    }
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in out {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Train and evaluate one cell. The corpora arrive already subsampled.
fn run_cell(
    train_set: &[TaskInstance],
    test_set: &[TaskInstance],
    cots: &[CoTSample],
    evals: &[SelfEvalSample],
    condition: &Condition,
    label_source: LabelSource,
    seed: u64,
    lab: &LabConfig,
) -> Result<CellRun, LabError> {
    let mut cfg = lab.train.clone();
    cfg.lambda_weight = condition.lambda_weight;
    cfg.label_source = label_source;
    cfg.seed = seed;
    if evals.is_empty() {
        cfg.epochs_se = 0;
    }

    // The vocabulary comes from exactly the texts this cell trains on.
    let cot_examples = build_cot_examples(train_set, cots, label_source)?;
    let se_examples = if cfg.epochs_se > 0 && !evals.is_empty() {
        build_se_examples(train_set, cots, evals)?
    } else {
        Vec::new()
    };
    let texts = cot_examples
        .iter()
        .chain(se_examples.iter())
        .flat_map(|ex| [ex.input_text.as_str(), ex.target_text.as_str()]);
    let vocab = Vocab::build(texts);

    let mut student_cfg = lab.student;
    student_cfg.seed = seed;
    let mut model = TinyStudent::new(vocab, &student_cfg)?;
    let epochs = train(&mut model, train_set, cots, evals, &cfg, &mut NoopHook)?;
    let result = evaluate(&model, test_set, lab.max_decode_len)?;

    Ok(CellRun {
        condition: condition.name.clone(),
        label_source,
        n_cot: condition.n_cot,
        n_eval: condition.n_eval,
        seed,
        accuracy: result.accuracy,
        prediction_failures: result.prediction_failures,
        params_sha256: params_digest(model.params()),
        epochs,
    })
}

fn check_capacity(
    conditions: &[Condition],
    cots: &[CoTSample],
    evals: &[SelfEvalSample],
) -> Result<(), LabError> {
    let have_cot = cot_capacity(cots);
    let have_eval = eval_capacity(evals);
    for condition in conditions {
        let cot_short = condition.n_cot > have_cot;
        let eval_short = condition.n_eval > 0 && condition.n_eval > have_eval;
        if cot_short || eval_short {
            return Err(LabError::InsufficientCorpus {
                condition: condition.name.clone(),
                needed_cot: condition.n_cot,
                have_cot,
                needed_eval: condition.n_eval,
                have_eval,
            });
        }
    }
    Ok(())
}

/// Train and evaluate every (condition, label source, seed) cell and
/// aggregate per-condition statistics.
pub fn run_condition_grid(
    train_set: &[TaskInstance],
    test_set: &[TaskInstance],
    cots: &[CoTSample],
    evals: &[SelfEvalSample],
    conditions: &[Condition],
    label_sources: &[LabelSource],
    lab: &LabConfig,
) -> Result<GridResults, LabError> {
    if conditions.is_empty() || label_sources.is_empty() || lab.seeds.is_empty() {
        return Err(LabError::Config("conditions, label sources, and seeds must be non-empty"));
    }
    check_capacity(conditions, cots, evals)?;

    // One subsample per condition serves all its cells.
    let subsampled: Vec<(Vec<CoTSample>, Vec<SelfEvalSample>)> = conditions
        .iter()
        .map(|c| {
            (
                subsample_cots(cots, c.n_cot),
                subsample_evals(evals, c.n_cot, c.n_eval),
            )
        })
        .collect();

    let mut specs = Vec::new();
    for (ci, condition) in conditions.iter().enumerate() {
        for &source in label_sources {
            for &seed in &lab.seeds {
                specs.push((ci, condition, source, seed));
            }
        }
    }

    let mut cells: Vec<CellRun> = specs
        .into_par_iter()
        .map(|(ci, condition, source, seed)| {
            let (cell_cots, cell_evals) = &subsampled[ci];
            run_cell(train_set, test_set, cell_cots, cell_evals, condition, source, seed, lab)
        })
        .collect::<Result<_, _>>()?;

    // Parallel collection preserves order, but the merge contract is
    // declaration order, so pin it explicitly.
    let cond_order: BTreeMap<&str, usize> =
        conditions.iter().enumerate().map(|(i, c)| (c.name.as_str(), i)).collect();
    let source_order = |s: LabelSource| label_sources.iter().position(|&x| x == s).unwrap();
    cells.sort_by_key(|cell| {
        (
            cond_order[cell.condition.as_str()],
            source_order(cell.label_source),
            lab.seeds.iter().position(|&s| s == cell.seed).unwrap(),
        )
    });

    let mut rows = Vec::new();
    for condition in conditions {
        for &source in label_sources {
            let accs: Vec<f64> = cells
                .iter()
                .filter(|cell| cell.condition == condition.name && cell.label_source == source)
                .map(|cell| cell.accuracy)
                .collect();
            rows.push(EvalResult::from_runs(
                &condition.name,
                source,
                condition.n_cot,
                condition.n_eval,
                &lab.seeds,
                accs,
            ));
        }
    }
    Ok(GridResults { rows, cells })
}

/// Vary the number of CoTs per instance at a fixed self-eval count.
pub fn ablate_n_cot(
    train_set: &[TaskInstance],
    test_set: &[TaskInstance],
    cots: &[CoTSample],
    evals: &[SelfEvalSample],
    n_values: &[u32],
    fixed_n_eval: u32,
    label_sources: &[LabelSource],
    lab: &LabConfig,
) -> Result<GridResults, LabError> {
    let conditions: Vec<Condition> = n_values
        .iter()
        .map(|&n| {
            Condition::new(
                &format!("{n} CoTs, {fixed_n_eval} evals"),
                n,
                fixed_n_eval,
                lab.train.lambda_weight,
            )
        })
        .collect();
    run_condition_grid(train_set, test_set, cots, evals, &conditions, label_sources, lab)
}

/// Vary the number of self-evaluations per CoT at one or more fixed CoT
/// counts (the interesting pair is 1 and 5). `m = 0` degenerates to the
/// matching pure-CoT condition.
pub fn ablate_n_eval(
    train_set: &[TaskInstance],
    test_set: &[TaskInstance],
    cots: &[CoTSample],
    evals: &[SelfEvalSample],
    m_values: &[u32],
    fixed_n_cots: &[u32],
    label_sources: &[LabelSource],
    lab: &LabConfig,
) -> Result<GridResults, LabError> {
    let mut conditions = Vec::new();
    for &k in fixed_n_cots {
        for &m in m_values {
            conditions.push(Condition::new(
                &format!("{k} CoTs, {m} evals"),
                k,
                m,
                lab.train.lambda_weight,
            ));
        }
    }
    run_condition_grid(train_set, test_set, cots, evals, &conditions, label_sources, lab)
}

/// Default few-shot templates for the synthetic task. Hand-written exemplars
/// using the task's own label rule, one per class.
pub fn synthetic_cot_template() -> PromptTemplate {
    PromptTemplate::Cot {
        instruction: "Read the device report, reason about which reporting class it falls \
                      under, and finish with the class label."
            .to_string(),
        exemplars: vec![
            CoTExemplar {
                input_text: "status report from the relay unit in standard mode".into(),
                rationale: "The relay unit files under the first reporting class when it \
                            runs in standard mode."
                    .into(),
                label: "alpha".into(),
            },
            CoTExemplar {
                input_text: "diagnostic line for the valve assembly running in standard mode"
                    .into(),
                rationale: "A valve assembly in standard mode belongs to the second \
                            reporting class."
                    .into(),
                label: "beta".into(),
            },
            CoTExemplar {
                input_text: "status report from the sensor unit in inverted mode".into(),
                rationale: "A sensor normally files under the third class, and inverted \
                            mode rotates it to the first."
                    .into(),
                label: "alpha".into(),
            },
        ],
    }
}

/// Self-evaluation counterpart to [`synthetic_cot_template`].
pub fn synthetic_eval_template() -> PromptTemplate {
    PromptTemplate::SelfEval {
        instruction: "Decide whether the reasoning below assigns the right class to the \
                      device report. Answer correct or incorrect with a short justification."
            .to_string(),
        exemplars: vec![
            SelfEvalExemplar {
                cot_text: "Task: status report from the relay unit in standard mode\n\
                           Rationale: The relay files under the first class in standard mode.\n\
                           Predicted Label: alpha"
                    .into(),
                rationale: "The relay's standard-mode class is indeed the first one.".into(),
                verdict: Verdict::Correct,
            },
            SelfEvalExemplar {
                cot_text: "Task: diagnostic line for the valve assembly running in standard mode\n\
                           Rationale: The valve files under the third class.\n\
                           Predicted Label: gamma"
                    .into(),
                rationale: "A standard-mode valve belongs to the second class, not the \
                            third, so the label gamma is wrong."
                    .into(),
                verdict: Verdict::Incorrect,
            },
        ],
    }
}

/// Settings for the paired flawed-teacher comparison.
#[derive(Debug, Clone)]
pub struct MitigationConfig {
    pub flaw_rate_q: f64,
    pub eval_reliability_s: f64,
    pub n_cot: u32,
    pub n_eval: u32,
    pub train_size: usize,
    pub test_size: usize,
    pub data_seed: u64,
    pub sim_seed: u64,
    pub lab: LabConfig,
}

/// One seed's paired accuracies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MitigationPair {
    pub seed: u64,
    pub cot_only: f64,
    pub cot_with_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MitigationReport {
    pub flaw_rate_q: f64,
    pub eval_reliability_s: f64,
    pub n_cot: u32,
    pub n_eval: u32,
    pub train_size: usize,
    pub test_size: usize,
    pub pseudo_label_agreement: Option<f64>,
    pub pairs: Vec<MitigationPair>,
    pub mean_cot_only: f64,
    pub mean_cot_with_se: f64,
    /// mean(cot_with_se) - mean(cot_only): positive when the self-evaluation
    /// phase helped.
    pub mean_gap: f64,
}

/// Generate a synthetic task, harvest it through the simulated teacher with
/// flaw rate q and evaluator reliability s, then train the student with and
/// without the self-evaluation phase under identical seeds.
pub fn synthetic_mitigation_experiment(
    config: &MitigationConfig,
) -> Result<MitigationReport, LabError> {
    let train_set = synthetic_dataset(config.train_size, config.data_seed);
    let test_set = synthetic_dataset(config.test_size, config.data_seed.wrapping_add(1));

    let sim = SimulatedTeacherConfig::new(
        config.flaw_rate_q,
        config.eval_reliability_s,
        config.sim_seed,
    )?;
    let gateway = TeacherGateway::simulated(sim, None)?;
    let harvest_cfg = HarvestConfig {
        n_cot: config.n_cot,
        n_eval: config.n_eval,
        cot_template: Some(synthetic_cot_template()),
        eval_template: Some(synthetic_eval_template()),
        sampling: SamplingParams::default(),
        resume: false,
    };
    let cots =
        harvest_cots(&train_set, &gateway, &harvest_cfg, None).map_err(Box::new)?;
    let evals = harvest_self_evals(&train_set, &cots, &gateway, &harvest_cfg, None)
        .map_err(Box::new)?;
    let agreement =
        crate::harvest::harvest_report(&train_set, &cots, &evals).pseudo_label_agreement;

    let cot_only = Condition::new("cot-only", config.n_cot, 0, config.lab.train.lambda_weight);
    let cot_se = Condition::new(
        "cot+se",
        config.n_cot,
        config.n_eval,
        config.lab.train.lambda_weight,
    );

    let mut pairs = Vec::with_capacity(config.lab.seeds.len());
    for &seed in &config.lab.seeds {
        let a = run_cell(
            &train_set,
            &test_set,
            &cots,
            &[],
            &cot_only,
            LabelSource::Pseudo,
            seed,
            &config.lab,
        )?;
        let b = run_cell(
            &train_set,
            &test_set,
            &cots,
            &evals,
            &cot_se,
            LabelSource::Pseudo,
            seed,
            &config.lab,
        )?;
        pairs.push(MitigationPair { seed, cot_only: a.accuracy, cot_with_se: b.accuracy });
    }

    let mean_a = mean(&pairs.iter().map(|p| p.cot_only).collect::<Vec<_>>());
    let mean_b = mean(&pairs.iter().map(|p| p.cot_with_se).collect::<Vec<_>>());
    Ok(MitigationReport {
        flaw_rate_q: config.flaw_rate_q,
        eval_reliability_s: config.eval_reliability_s,
        n_cot: config.n_cot,
        n_eval: config.n_eval,
        train_size: config.train_size,
        test_size: config.test_size,
        pseudo_label_agreement: agreement,
        pairs,
        mean_cot_only: mean_a,
        mean_cot_with_se: mean_b,
        mean_gap: mean_b - mean_a,
    })
}

/// Render the aggregated rows as an aligned text table, one condition per
/// line, one column per label source.
pub fn render_grid_text(results: &GridResults) -> String {
    let mut sources: Vec<LabelSource> = Vec::new();
    for row in &results.rows {
        if !sources.contains(&row.label_source) {
            sources.push(row.label_source);
        }
    }
    let mut conditions: Vec<&str> = Vec::new();
    for row in &results.rows {
        if !conditions.contains(&row.condition.as_str()) {
            conditions.push(&row.condition);
        }
    }

    let name_width = conditions
        .iter()
        .map(|c| c.len())
        .chain(["condition".len()])
        .max()
        .unwrap_or(9);
    let mut out = String::new();
    out.push_str(&format!("{:<name_width$}", "condition"));
    for source in &sources {
        out.push_str(&format!("  {:>16}", source_title(*source)));
    }
    out.push('\n');
    for condition in &conditions {
        out.push_str(&format!("{condition:<name_width$}"));
        for source in &sources {
            let cell = results
                .rows
                .iter()
                .find(|r| r.condition == *condition && r.label_source == *source);
            match cell {
                Some(r) => out.push_str(&format!(
                    "  {:>16}",
                    format!("{:.1} ± {:.1}", r.mean_accuracy * 100.0, r.std_accuracy * 100.0)
                )),
                None => out.push_str(&format!("  {:>16}", "-")),
            }
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "\naccuracy mean ± population std over {} seed(s), in %\n",
        results.rows.first().map(|r| r.seeds.len()).unwrap_or(0)
    ));
    out
}

fn source_title(source: LabelSource) -> &'static str {
    match source {
        LabelSource::Pseudo => "P-labels",
        LabelSource::Human => "H-labels",
    }
}

/// Write `value` as pretty JSON to `dir/name`, creating `dir` as needed.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, LabError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut file = std::fs::File::create(&path)?;
    serde_json::to_writer_pretty(&mut file, value)
        .map_err(|e| LabError::Io(std::io::Error::other(e)))?;
    file.write_all(b"\n")?;
    Ok(path)
}

/// Write `text` to `dir/name`.
pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, LabError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}
