//! Command-line surface: the whole pipeline behind one binary.
//!
//! Every subcommand reads the same TOML config (all keys optional) and
//! accepts flag overrides; flags win. Exit codes are part of the contract:
//! 0 success, 1 runtime abort, 2 finished but with parse failures recorded
//! in the output, 64 usage or config errors. Config is validated before any
//! side effect, so a bad invocation never leaves partial writes behind.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use selfdistill_core::eval::{evaluate, EvalAccuracy};
use selfdistill_core::student::{TinyStudent, TinyStudentConfig, TrainableStudent, Vocab};
use selfdistill_core::train::{
    train, EpochRecord, Phase, TrainConfig, TrainError, TrainHook,
};
use selfdistill_core::trainset::{build_cot_examples, build_se_examples};
use selfdistill_core::types::{
    check_referential_integrity, validate_dataset, CoTSample, SelfEvalSample, TaskInstance,
};
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, SystemClock};
use crate::corpus::{deserialize_corpus, serialize_corpus, CorpusRecord};
use crate::gateway::{GatewayError, TeacherGateway};
use crate::harvest::{
    harvest_cots, harvest_report, harvest_self_evals, HarvestConfig, HarvestError,
};
use crate::ingest::{ingest_file, IngestFormat};
use crate::lab::{
    ablate_n_cot, ablate_n_eval, params_digest, render_grid_text,
    synthetic_mitigation_experiment, write_json, write_text, Condition, LabConfig, LabError,
    MitigationConfig,
};
use crate::runcfg::{
    load_template, BackendChoice, ConfigError, ResolvedConfig, RunConfigFile, RunManifest,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ABORT: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// A command's terminal failure: the exit code plus what to print.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn abort(message: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_ABORT, message: message.to_string() }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        usage(e.to_string())
    }
}

impl From<HarvestError> for Failure {
    fn from(e: HarvestError) -> Self {
        match e {
            HarvestError::Config(_) => usage(e.to_string()),
            other => abort(other),
        }
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidParams(_) | GatewayError::MissingApiKey => usage(e.to_string()),
            other => abort(other),
        }
    }
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        match e {
            LabError::Config(_) => usage(e.to_string()),
            other => abort(other),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => usage(e.to_string()),
            other => abort(other),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "selfdistill",
    version,
    about = "Distill chain-of-thought and self-evaluation ability into a small student model",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Convert a public dataset distribution into task-instance JSONL.
    Ingest(IngestArgs),
    /// Sample chains of thought from the teacher for every instance.
    HarvestCots(HarvestCotsArgs),
    /// Sample self-evaluations from the teacher for every harvested CoT.
    HarvestEvals(HarvestEvalsArgs),
    /// Train a student on harvested corpora and write checkpoints.
    Train(TrainArgs),
    /// Score a trained checkpoint on a labeled test set.
    Evaluate(EvaluateArgs),
    /// Run a multi-condition experiment and write results files.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    /// Source format: svamp, cqa, or anli.
    #[arg(long)]
    pub format: String,
    /// Raw distribution file (JSON or JSONL depending on format).
    #[arg(long)]
    pub input: PathBuf,
    /// Destination task-instance JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only the first N instances.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct HarvestCotsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Task-instance JSONL to harvest over (default: [dataset].train).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// CoT prompt template JSON (default: [harvest].cot_template).
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Chains of thought per instance (default: [harvest].n_cot).
    #[arg(long)]
    pub n_cot: Option<u32>,
    /// live, replay, or sim (default: [teacher].backend).
    #[arg(long)]
    pub backend: Option<String>,
    /// Destination corpus JSONL (default: [corpus].cots).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Teacher cache JSONL (default: [teacher].cache).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Simulator flaw rate q.
    #[arg(long)]
    pub flaw_rate: Option<f64>,
    /// Simulator evaluation reliability s.
    #[arg(long)]
    pub eval_reliability: Option<f64>,
    #[arg(long)]
    pub sim_seed: Option<u64>,
    /// Redo everything instead of skipping completed instances.
    #[arg(long)]
    pub no_resume: bool,
    /// Also write the harvest report JSON here (always printed to stdout).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct HarvestEvalsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// CoT corpus JSONL to evaluate (default: [corpus].cots).
    #[arg(long)]
    pub cots: Option<PathBuf>,
    /// Self-eval prompt template JSON (default: [harvest].eval_template).
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Self-evaluations per CoT; 0 writes an empty corpus without any
    /// teacher calls (default: [harvest].n_eval).
    #[arg(long)]
    pub n_eval: Option<u32>,
    #[arg(long)]
    pub backend: Option<String>,
    /// Destination corpus JSONL (default: [corpus].evals).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub flaw_rate: Option<f64>,
    #[arg(long)]
    pub eval_reliability: Option<f64>,
    #[arg(long)]
    pub sim_seed: Option<u64>,
    #[arg(long)]
    pub no_resume: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub cots: Option<PathBuf>,
    /// Self-eval corpus; omit to train without the SE phase.
    #[arg(long)]
    pub evals: Option<PathBuf>,
    /// Checkpoint directory (default: [train].checkpoint_dir).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// pseudo or human.
    #[arg(long)]
    pub label_source: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda_weight: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs_se: Option<usize>,
    #[arg(long)]
    pub epochs_cot: Option<usize>,
    /// sequential_se_then_cot or joint_mixed.
    #[arg(long)]
    pub schedule: Option<String>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// weights.json (or checkpoint.json) written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled task-instance JSONL.
    #[arg(long)]
    pub test_set: PathBuf,
    #[arg(long)]
    pub max_decode_len: Option<usize>,
    /// Also write the accuracy JSON here (always printed to stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExperimentArgs {
    /// grid, ncot, neval, or synthetic.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Results root (default: [run].results_dir); files land under
    /// {out_dir}/{run_id}/.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub test_set: Option<PathBuf>,
    #[arg(long)]
    pub cots: Option<PathBuf>,
    #[arg(long)]
    pub evals: Option<PathBuf>,
}

/// Parse argv and run. This is the whole `main`, returned as an exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outcomes, not usage errors.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, Failure> {
    let clock = SystemClock;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(&args, &clock),
        Command::HarvestCots(args) => cmd_harvest_cots(&args, &clock),
        Command::HarvestEvals(args) => cmd_harvest_evals(&args, &clock),
        Command::Train(args) => cmd_train(&args, &clock),
        Command::Evaluate(args) => cmd_evaluate(&args, &clock),
        Command::Experiment(args) => cmd_experiment(&args, &clock),
    }
}

fn load_config(path: Option<&Path>) -> Result<ResolvedConfig, Failure> {
    let file = match path {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    };
    Ok(file.resolve()?)
}

fn load_records<T: CorpusRecord>(path: &Path) -> Result<Vec<T>, Failure> {
    deserialize_corpus(path).map_err(abort)
}

fn load_dataset(path: &Path) -> Result<Vec<TaskInstance>, Failure> {
    let dataset: Vec<TaskInstance> = load_records(path)?;
    validate_dataset(&dataset).map_err(abort)?;
    Ok(dataset)
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_stdout_json<T: Serialize>(value: &T) {
    // Pretty JSON on stdout is the machine-readable command output.
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn cmd_ingest(args: &IngestArgs, clock: &dyn Clock) -> Result<i32, Failure> {
    let resolved = load_config(args.config.as_deref())?;
    let format = IngestFormat::parse(&args.format)
        .ok_or_else(|| usage(format!("unknown format {:?} (expected svamp, cqa, or anli)", args.format)))?;

    let mut manifest = RunManifest::start(
        &resolved.effective_run_id(),
        &resolved.digest(),
        "ingest",
        clock,
    );
    manifest.input(&args.input);

    let mut dataset = ingest_file(format, &args.input).map_err(abort)?;
    if let Some(limit) = args.limit {
        dataset.truncate(limit);
    }
    let count = serialize_corpus(&dataset, &args.out).map_err(abort)?;
    manifest.output(&args.out);
    manifest.finish(&manifest_path(&args.out), clock)?;
    log::info!("ingested {count} instance(s) into {}", args.out.display());
    Ok(EXIT_OK)
}

/// Shared harvest knobs after merging config and flags.
struct HarvestInvocation {
    resolved: ResolvedConfig,
    backend: BackendChoice,
    harvest: HarvestConfig,
}

#[allow(clippy::too_many_arguments)]
fn merge_harvest(
    config: Option<&Path>,
    backend: Option<&str>,
    n_cot: Option<u32>,
    n_eval: Option<u32>,
    model_id: Option<&str>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    flaw_rate: Option<f64>,
    eval_reliability: Option<f64>,
    sim_seed: Option<u64>,
    cache: Option<&Path>,
    no_resume: bool,
    cot_template_flag: Option<&Path>,
    eval_template_flag: Option<&Path>,
    need_cot_template: bool,
) -> Result<HarvestInvocation, Failure> {
    let mut resolved = load_config(config)?;
    if let Some(name) = backend {
        resolved.teacher.backend = BackendChoice::parse(name)
            .ok_or_else(|| usage(format!("unknown backend {name:?} (expected live, replay, or sim)")))?;
    }
    if let Some(id) = model_id {
        resolved.teacher.model_id = id.to_string();
    }
    if let Some(t) = temperature {
        resolved.teacher.temperature = t;
    }
    if let Some(m) = max_tokens {
        resolved.teacher.max_tokens = m;
    }
    if let Some(path) = cache {
        resolved.teacher.cache = Some(path.to_path_buf());
    }
    if let Some(q) = flaw_rate {
        resolved.sim.flaw_rate_q = q;
    }
    if let Some(s) = eval_reliability {
        resolved.sim.eval_reliability_s = s;
    }
    if let Some(seed) = sim_seed {
        resolved.sim.seed = seed;
    }
    resolved.sim.validate().map_err(|e| usage(e.to_string()))?;
    if let Some(n) = n_cot {
        resolved.harvest.n_cot = n;
    }
    if let Some(m) = n_eval {
        resolved.harvest.n_eval = m;
    }
    if no_resume {
        resolved.harvest.resume = false;
    }
    if let Some(path) = cot_template_flag {
        resolved.harvest.cot_template = Some(path.to_path_buf());
    }
    if let Some(path) = eval_template_flag {
        resolved.harvest.eval_template = Some(path.to_path_buf());
    }

    // Each command loads only the template it will render with.
    let cot_template = if need_cot_template {
        let path = resolved.harvest.cot_template.clone().ok_or_else(|| {
            usage("no CoT template: pass --template or set [harvest].cot_template")
        })?;
        Some(load_template(&path)?)
    } else {
        None
    };
    let eval_template = if !need_cot_template && resolved.harvest.n_eval > 0 {
        let path = resolved.harvest.eval_template.clone().ok_or_else(|| {
            usage("no self-eval template: pass --template or set [harvest].eval_template")
        })?;
        Some(load_template(&path)?)
    } else {
        None
    };

    let harvest = HarvestConfig {
        n_cot: resolved.harvest.n_cot,
        n_eval: resolved.harvest.n_eval,
        cot_template,
        eval_template,
        sampling: resolved.teacher.sampling(1),
        resume: resolved.harvest.resume,
    };
    harvest.validate()?;
    let backend = resolved.teacher.backend;
    Ok(HarvestInvocation { resolved, backend, harvest })
}

fn build_gateway(inv: &HarvestInvocation) -> Result<TeacherGateway, Failure> {
    let cache = inv.resolved.teacher.cache.as_deref();
    match inv.backend {
        BackendChoice::Sim => Ok(TeacherGateway::simulated(inv.resolved.sim, cache)?),
        BackendChoice::Replay => {
            let path = cache
                .ok_or_else(|| usage("replay backend needs --cache or [teacher].cache"))?;
            Ok(TeacherGateway::replay(path)?)
        }
        BackendChoice::Live => {
            Ok(TeacherGateway::live(inv.resolved.teacher.live_config(), cache)?)
        }
    }
}

fn finish_harvest(
    report_path: Option<&Path>,
    manifest: RunManifest,
    out: &Path,
    report: &crate::harvest::HarvestReport,
    partial: bool,
    clock: &dyn Clock,
) -> Result<i32, Failure> {
    write_stdout_json(report);
    if let Some(path) = report_path {
        let rendered = serde_json::to_string_pretty(report).expect("report serializes");
        std::fs::write(path, format!("{rendered}\n")).map_err(abort)?;
    }
    manifest.finish(&manifest_path(out), clock)?;
    Ok(if partial { EXIT_PARTIAL } else { EXIT_OK })
}

fn cmd_harvest_cots(args: &HarvestCotsArgs, clock: &dyn Clock) -> Result<i32, Failure> {
    let inv = merge_harvest(
        args.config.as_deref(),
        args.backend.as_deref(),
        args.n_cot,
        None,
        args.model_id.as_deref(),
        args.temperature,
        args.max_tokens,
        args.flaw_rate,
        args.eval_reliability,
        args.sim_seed,
        args.cache.as_deref(),
        args.no_resume,
        args.template.as_deref(),
        None,
        true,
    )?;
    let dataset_path = args
        .dataset
        .clone()
        .or_else(|| inv.resolved.dataset_train.clone())
        .ok_or_else(|| usage("no dataset: pass --dataset or set [dataset].train"))?;
    let out = args
        .out
        .clone()
        .or_else(|| inv.resolved.corpus_cots.clone())
        .ok_or_else(|| usage("no output path: pass --out or set [corpus].cots"))?;

    let mut manifest = RunManifest::start(
        &inv.resolved.effective_run_id(),
        &inv.resolved.digest(),
        "harvest-cots",
        clock,
    );
    manifest.input(&dataset_path);
    if let Some(path) = &inv.resolved.harvest.cot_template {
        manifest.input(path);
    }
    if let (BackendChoice::Replay, Some(path)) = (inv.backend, &inv.resolved.teacher.cache) {
        manifest.input(path);
    }
    let dataset = load_dataset(&dataset_path)?;
    let gateway = build_gateway(&inv)?;

    let cots = harvest_cots(&dataset, &gateway, &inv.harvest, Some(&out))?;
    manifest.output(&out);
    let report = harvest_report(&dataset, &cots, &[]);
    let partial = report.cot_parse_failures > 0;
    finish_harvest(args.report.as_deref(), manifest, &out, &report, partial, clock)
}

fn cmd_harvest_evals(args: &HarvestEvalsArgs, clock: &dyn Clock) -> Result<i32, Failure> {
    let inv = merge_harvest(
        args.config.as_deref(),
        args.backend.as_deref(),
        None,
        args.n_eval,
        args.model_id.as_deref(),
        args.temperature,
        args.max_tokens,
        args.flaw_rate,
        args.eval_reliability,
        args.sim_seed,
        args.cache.as_deref(),
        args.no_resume,
        None,
        args.template.as_deref(),
        false,
    )?;
    let dataset_path = args
        .dataset
        .clone()
        .or_else(|| inv.resolved.dataset_train.clone())
        .ok_or_else(|| usage("no dataset: pass --dataset or set [dataset].train"))?;
    let cots_path = args
        .cots
        .clone()
        .or_else(|| inv.resolved.corpus_cots.clone())
        .ok_or_else(|| usage("no CoT corpus: pass --cots or set [corpus].cots"))?;
    let out = args
        .out
        .clone()
        .or_else(|| inv.resolved.corpus_evals.clone())
        .ok_or_else(|| usage("no output path: pass --out or set [corpus].evals"))?;

    let mut manifest = RunManifest::start(
        &inv.resolved.effective_run_id(),
        &inv.resolved.digest(),
        "harvest-evals",
        clock,
    );
    manifest.input(&dataset_path).input(&cots_path);
    if let Some(path) = &inv.resolved.harvest.eval_template {
        manifest.input(path);
    }
    if let (BackendChoice::Replay, Some(path)) = (inv.backend, &inv.resolved.teacher.cache) {
        manifest.input(path);
    }
    let dataset = load_dataset(&dataset_path)?;
    let cots: Vec<CoTSample> = load_records(&cots_path)?;
    let gateway = build_gateway(&inv)?;

    let evals = harvest_self_evals(&dataset, &cots, &gateway, &inv.harvest, Some(&out))?;
    manifest.output(&out);
    let report = harvest_report(&dataset, &cots, &evals);
    let partial = report.eval_parse_failures > 0;
    finish_harvest(args.report.as_deref(), manifest, &out, &report, partial, clock)
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricsLine {
    epoch: usize,
    phase: Phase,
    loss_mean: f64,
    lr: f64,
    seed: u64,
}

/// Everything needed to rebuild and score a trained student.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub student: CheckpointStudent,
    pub vocab: Vec<String>,
    pub params: Vec<f64>,
    pub params_sha256: String,
    pub phase: Phase,
    pub epoch: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointStudent {
    pub kind: String,
    pub dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

fn write_checkpoint(path: &Path, file: &CheckpointFile) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(abort)?;
    }
    let rendered = serde_json::to_string(file).expect("checkpoint serializes");
    std::fs::write(path, format!("{rendered}\n")).map_err(abort)
}

/// Writes `{out}/{phase}/{epoch}/weights.json` per epoch plus the metrics
/// log. Hook callbacks cannot fail, so the first IO error is parked and
/// re-raised after training.
struct CheckpointHook<'a> {
    out_dir: &'a Path,
    student: CheckpointStudent,
    train: TrainConfig,
    metrics: Vec<MetricsLine>,
    error: Option<Failure>,
}

impl<'a> CheckpointHook<'a> {
    fn new(out_dir: &'a Path, student: CheckpointStudent, train: TrainConfig) -> Self {
        CheckpointHook { out_dir, student, train, metrics: Vec::new(), error: None }
    }
}

impl TrainHook<TinyStudent> for CheckpointHook<'_> {
    fn on_epoch(&mut self, record: &EpochRecord, model: &TinyStudent) {
        if self.error.is_some() {
            return;
        }
        self.metrics.push(MetricsLine {
            epoch: record.epoch,
            phase: record.phase,
            loss_mean: record.mean_loss,
            lr: self.train.learning_rate,
            seed: self.train.seed,
        });
        let path = self
            .out_dir
            .join(record.phase.as_str())
            .join(record.epoch.to_string())
            .join("weights.json");
        let file = CheckpointFile {
            student: self.student.clone(),
            vocab: model.vocab().tokens().to_vec(),
            params: model.params().to_vec(),
            params_sha256: params_digest(model.params()),
            phase: record.phase,
            epoch: record.epoch,
            train: self.train,
        };
        if let Err(e) = write_checkpoint(&path, &file) {
            self.error = Some(e);
        }
    }
}

fn cmd_train(args: &TrainArgs, clock: &dyn Clock) -> Result<i32, Failure> {
    let mut resolved = load_config(args.config.as_deref())?;
    if let Some(v) = args.lambda_weight {
        resolved.train.lambda_weight = v;
    }
    if let Some(v) = args.batch_size {
        resolved.train.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        resolved.train.learning_rate = v;
    }
    if let Some(v) = args.epochs_se {
        resolved.train.epochs_se = v;
    }
    if let Some(v) = args.epochs_cot {
        resolved.train.epochs_cot = v;
    }
    if let Some(v) = args.seed {
        resolved.train.seed = v;
    }
    if let Some(name) = &args.schedule {
        resolved.train.phase_schedule = crate::runcfg::parse_schedule(name)?;
    }
    if let Some(name) = &args.label_source {
        resolved.train.label_source = crate::runcfg::parse_label_source(name)?;
    }
    resolved.train.validate().map_err(|e| usage(e.to_string()))?;

    let dataset_path = args
        .dataset
        .clone()
        .or_else(|| resolved.dataset_train.clone())
        .ok_or_else(|| usage("no dataset: pass --dataset or set [dataset].train"))?;
    let cots_path = args
        .cots
        .clone()
        .or_else(|| resolved.corpus_cots.clone())
        .ok_or_else(|| usage("no CoT corpus: pass --cots or set [corpus].cots"))?;
    let evals_path = args.evals.clone().or_else(|| resolved.corpus_evals.clone());
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| resolved.checkpoint_dir.clone())
        .ok_or_else(|| usage("no output dir: pass --out-dir or set [train].checkpoint_dir"))?;

    let mut manifest = RunManifest::start(
        &resolved.effective_run_id(),
        &resolved.digest(),
        "train",
        clock,
    );
    manifest.input(&dataset_path).input(&cots_path);
    let dataset = load_dataset(&dataset_path)?;
    let cots: Vec<CoTSample> = load_records(&cots_path)?;
    let evals: Vec<SelfEvalSample> = match &evals_path {
        Some(path) => {
            manifest.input(path);
            load_records(path)?
        }
        None => Vec::new(),
    };
    check_referential_integrity(&dataset, &cots, &evals).map_err(abort)?;

    // The vocabulary covers exactly the texts this run trains on.
    let cfg = resolved.train;
    let cot_examples = build_cot_examples(&dataset, &cots, cfg.label_source).map_err(abort)?;
    let se_examples = if cfg.epochs_se > 0 && !evals.is_empty() {
        build_se_examples(&dataset, &cots, &evals).map_err(abort)?
    } else {
        Vec::new()
    };
    let vocab = Vocab::build(
        cot_examples
            .iter()
            .chain(se_examples.iter())
            .flat_map(|ex| [ex.input_text.as_str(), ex.target_text.as_str()]),
    );
    let student_cfg = TinyStudentConfig {
        dim: resolved.student.dim,
        init_scale: resolved.student.init_scale,
        seed: cfg.seed,
    };
    let mut model = TinyStudent::new(vocab, &student_cfg).map_err(abort)?;

    let student_meta = CheckpointStudent {
        kind: resolved.student.kind.clone(),
        dim: student_cfg.dim,
        init_scale: student_cfg.init_scale,
        seed: student_cfg.seed,
    };
    std::fs::create_dir_all(&out_dir).map_err(abort)?;
    let mut hook = CheckpointHook::new(&out_dir, student_meta.clone(), cfg);
    let records = train(&mut model, &dataset, &cots, &evals, &cfg, &mut hook)?;
    if let Some(e) = hook.error.take() {
        return Err(e);
    }

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics_file = std::fs::File::create(&metrics_path).map_err(abort)?;
    for line in &hook.metrics {
        let rendered = serde_json::to_string(line).expect("metrics line serializes");
        writeln!(metrics_file, "{rendered}").map_err(abort)?;
    }
    manifest.output(&metrics_path);

    let last = records.last().ok_or_else(|| abort("training produced no epochs"))?;
    let final_path = out_dir.join("checkpoint.json");
    write_checkpoint(
        &final_path,
        &CheckpointFile {
            student: student_meta,
            vocab: model.vocab().tokens().to_vec(),
            params: model.params().to_vec(),
            params_sha256: params_digest(model.params()),
            phase: last.phase,
            epoch: last.epoch,
            train: cfg,
        },
    )?;
    manifest.output(&final_path);
    for record in &records {
        manifest.output(
            &out_dir
                .join(record.phase.as_str())
                .join(record.epoch.to_string())
                .join("weights.json"),
        );
    }
    manifest.finish(&out_dir.join("manifest.json"), clock)?;
    log::info!(
        "trained {} epoch(s); final mean loss {:.6}; checkpoint at {}",
        records.len(),
        last.mean_loss,
        final_path.display()
    );
    Ok(EXIT_OK)
}

fn load_checkpoint(path: &Path) -> Result<(TinyStudent, CheckpointFile), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| abort(format!("{}: {e}", path.display())))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| abort(format!("{}: {e}", path.display())))?;
    if file.student.kind != "tiny" {
        return Err(abort(format!(
            "checkpoint student kind {:?} is not loadable by this binary",
            file.student.kind
        )));
    }
    let digest = params_digest(&file.params);
    if digest != file.params_sha256 {
        return Err(abort(format!(
            "checkpoint {} is corrupt: params digest {} != recorded {}",
            path.display(),
            digest,
            file.params_sha256
        )));
    }
    let vocab = Vocab::from_tokens(file.vocab.clone()).map_err(abort)?;
    let model =
        TinyStudent::from_params(vocab, file.student.dim, file.params.clone()).map_err(abort)?;
    Ok((model, file))
}

fn cmd_evaluate(args: &EvaluateArgs, clock: &dyn Clock) -> Result<i32, Failure> {
    let resolved = load_config(args.config.as_deref())?;
    let max_len = args.max_decode_len.unwrap_or(resolved.student.max_decode_len);

    let (model, _checkpoint) = load_checkpoint(&args.checkpoint)?;
    let test_set = load_dataset(&args.test_set)?;
    let result: EvalAccuracy = evaluate(&model, &test_set, max_len).map_err(abort)?;
    write_stdout_json(&result);

    if let Some(out) = &args.out {
        let mut manifest = RunManifest::start(
            &resolved.effective_run_id(),
            &resolved.digest(),
            "evaluate",
            clock,
        );
        manifest.input(&args.checkpoint).input(&args.test_set).output(out);
        let rendered = serde_json::to_string_pretty(&result).expect("accuracy serializes");
        std::fs::write(out, format!("{rendered}\n")).map_err(abort)?;
        manifest.finish(&manifest_path(out), clock)?;
    }
    Ok(EXIT_OK)
}

fn lab_config(resolved: &ResolvedConfig) -> LabConfig {
    LabConfig {
        seeds: resolved.grid.seeds.clone(),
        train: resolved.train,
        student: TinyStudentConfig {
            dim: resolved.student.dim,
            init_scale: resolved.student.init_scale,
            seed: 0,
        },
        max_decode_len: resolved.student.max_decode_len,
    }
}

struct GridInputs {
    train_set: Vec<TaskInstance>,
    test_set: Vec<TaskInstance>,
    cots: Vec<CoTSample>,
    evals: Vec<SelfEvalSample>,
}

fn load_grid_inputs(
    args: &ExperimentArgs,
    resolved: &ResolvedConfig,
    manifest: &mut RunManifest,
) -> Result<GridInputs, Failure> {
    let train_path = args
        .dataset
        .clone()
        .or_else(|| resolved.dataset_train.clone())
        .ok_or_else(|| usage("no train set: pass --dataset or set [dataset].train"))?;
    let test_path = args
        .test_set
        .clone()
        .or_else(|| resolved.dataset_test.clone())
        .ok_or_else(|| usage("no test set: pass --test-set or set [dataset].test"))?;
    let cots_path = args
        .cots
        .clone()
        .or_else(|| resolved.corpus_cots.clone())
        .ok_or_else(|| usage("no CoT corpus: pass --cots or set [corpus].cots"))?;
    let evals_path = args.evals.clone().or_else(|| resolved.corpus_evals.clone());

    manifest.input(&train_path).input(&test_path).input(&cots_path);
    let train_set = load_dataset(&train_path)?;
    let test_set = load_dataset(&test_path)?;
    let cots: Vec<CoTSample> = load_records(&cots_path)?;
    let evals: Vec<SelfEvalSample> = match &evals_path {
        Some(path) => {
            manifest.input(path);
            load_records(path)?
        }
        None => Vec::new(),
    };
    check_referential_integrity(&train_set, &cots, &evals).map_err(abort)?;
    Ok(GridInputs { train_set, test_set, cots, evals })
}

fn cmd_experiment(args: &ExperimentArgs, clock: &dyn Clock) -> Result<i32, Failure> {
    let mut resolved = load_config(args.config.as_deref())?;
    if let Some(dir) = &args.out_dir {
        resolved.results_dir = dir.clone();
    }
    let kind = args.kind.to_ascii_lowercase();
    if !matches!(kind.as_str(), "grid" | "ncot" | "neval" | "synthetic") {
        return Err(usage(format!(
            "unknown experiment kind {:?} (expected grid, ncot, neval, or synthetic)",
            args.kind
        )));
    }

    let run_id = resolved.effective_run_id();
    let out_dir = resolved.results_dir.join(&run_id);
    let lab = lab_config(&resolved);
    let mut manifest =
        RunManifest::start(&run_id, &resolved.digest(), &format!("experiment-{kind}"), clock);

    match kind.as_str() {
        "grid" => {
            let inputs = load_grid_inputs(args, &resolved, &mut manifest)?;
            let results = crate::lab::run_condition_grid(
                &inputs.train_set,
                &inputs.test_set,
                &inputs.cots,
                &inputs.evals,
                &Condition::standard_rows(),
                &resolved.grid.label_sources,
                &lab,
            )?;
            manifest.output(&write_json(&out_dir, "grid.json", &results)?);
            manifest.output(&write_text(&out_dir, "grid.txt", &render_grid_text(&results))?);
            print!("{}", render_grid_text(&results));
        }
        "ncot" => {
            let inputs = load_grid_inputs(args, &resolved, &mut manifest)?;
            let results = ablate_n_cot(
                &inputs.train_set,
                &inputs.test_set,
                &inputs.cots,
                &inputs.evals,
                &resolved.ablation.ncot_values,
                resolved.ablation.fixed_n_eval,
                &resolved.grid.label_sources,
                &lab,
            )?;
            manifest.output(&write_json(&out_dir, "ablation_ncot.json", &results)?);
            print!("{}", render_grid_text(&results));
        }
        "neval" => {
            let inputs = load_grid_inputs(args, &resolved, &mut manifest)?;
            let results = ablate_n_eval(
                &inputs.train_set,
                &inputs.test_set,
                &inputs.cots,
                &inputs.evals,
                &resolved.ablation.neval_values,
                &resolved.ablation.fixed_n_cots,
                &resolved.grid.label_sources,
                &lab,
            )?;
            manifest.output(&write_json(&out_dir, "ablation_neval.json", &results)?);
            print!("{}", render_grid_text(&results));
        }
        "synthetic" => {
            let config = MitigationConfig {
                flaw_rate_q: resolved.synthetic.flaw_rate_q,
                eval_reliability_s: resolved.synthetic.eval_reliability_s,
                n_cot: resolved.synthetic.n_cot,
                n_eval: resolved.synthetic.n_eval,
                train_size: resolved.synthetic.train_size,
                test_size: resolved.synthetic.test_size,
                data_seed: resolved.synthetic.data_seed,
                sim_seed: resolved.synthetic.sim_seed,
                lab: lab.clone(),
            };
            let report = synthetic_mitigation_experiment(&config)?;
            manifest.output(&write_json(&out_dir, "synthetic.json", &report)?);
            write_stdout_json(&report);
        }
        _ => unreachable!("kind validated above"),
    }
    manifest.finish(&out_dir.join(format!("manifest-{kind}.json")), clock)?;
    Ok(EXIT_OK)
}
