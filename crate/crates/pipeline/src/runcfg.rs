//! Run configuration: one TOML file per run, every key optional, flags win.
//!
//! The file deserializes into all-`Option` sections which then resolve
//! against the documented defaults; command-line overrides are applied to
//! the resolved form before anything runs. The effective config — after
//! defaults and overrides — is what gets digested, so two runs share a
//! `config_digest` exactly when they would behave identically. The live API
//! key never enters the resolved config: it stays in the environment, off
//! the digest and out of every manifest.

use std::path::{Path, PathBuf};

use selfdistill_core::digest::sha256_hex;
use selfdistill_core::prompt::PromptTemplate;
use selfdistill_core::sim::SimulatedTeacherConfig;
use selfdistill_core::student::TinyStudentConfig;
use selfdistill_core::train::TrainConfig;
use selfdistill_core::trainset::LabelSource;
use serde::{Deserialize, Serialize};

use crate::clock::{rfc3339_utc, Clock};
use crate::gateway::{LiveConfig, RetryPolicy, SamplingParams};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config invalid: {0}")]
    Invalid(String),
}

/// Raw file shape: everything optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub teacher: TeacherSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub harvest: HarvestSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub student: StudentSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub ablation: AblationSection,
    #[serde(default)]
    pub synthetic: SyntheticSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub run_id: Option<String>,
    pub results_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub cots: Option<PathBuf>,
    pub evals: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSection {
    pub backend: Option<String>,
    pub base_url: Option<String>,
    pub model_id: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub parallelism: Option<usize>,
    pub rate_limit_rps: Option<u32>,
    pub timeout_ms: Option<u64>,
    pub cache: Option<PathBuf>,
    pub retry: Option<RetrySection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrySection {
    pub max_attempts: Option<u32>,
    pub base_delay_ms: Option<u64>,
    pub max_delay_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub flaw_rate_q: Option<f64>,
    pub eval_reliability_s: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvestSection {
    pub n_cot: Option<u32>,
    pub n_eval: Option<u32>,
    pub cot_template: Option<PathBuf>,
    pub eval_template: Option<PathBuf>,
    pub resume: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lambda_weight: Option<f64>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs_se: Option<usize>,
    pub epochs_cot: Option<usize>,
    pub phase_schedule: Option<String>,
    pub label_source: Option<String>,
    pub seed: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentSection {
    pub kind: Option<String>,
    pub dim: Option<usize>,
    pub init_scale: Option<f64>,
    pub max_decode_len: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub label_sources: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    pub ncot_values: Option<Vec<u32>>,
    pub fixed_n_eval: Option<u32>,
    pub neval_values: Option<Vec<u32>>,
    pub fixed_n_cots: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub flaw_rate_q: Option<f64>,
    pub eval_reliability_s: Option<f64>,
    pub n_cot: Option<u32>,
    pub n_eval: Option<u32>,
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    pub data_seed: Option<u64>,
    pub sim_seed: Option<u64>,
}

/// Which teacher backend a run talks to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Live,
    Replay,
    Sim,
}

impl BackendChoice {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "live" => Some(BackendChoice::Live),
            "replay" => Some(BackendChoice::Replay),
            "sim" | "simulated" => Some(BackendChoice::Sim),
            _ => None,
        }
    }
}

/// Teacher settings with defaults applied. Deliberately key-free; see the
/// module docs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeacherResolved {
    pub backend: BackendChoice,
    pub base_url: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub parallelism: usize,
    pub rate_limit_rps: Option<u32>,
    pub timeout_ms: u64,
    pub cache: Option<PathBuf>,
    pub retry: RetryPolicy,
}

impl TeacherResolved {
    pub fn sampling(&self, n_samples: u32) -> SamplingParams {
        SamplingParams {
            temperature: self.temperature,
            n_samples,
            max_tokens: self.max_tokens,
            model_id: self.model_id.clone(),
        }
    }

    pub fn live_config(&self) -> LiveConfig {
        LiveConfig {
            base_url: self.base_url.clone(),
            api_key: None,
            parallelism: self.parallelism,
            rate_limit_rps: self.rate_limit_rps,
            retry: self.retry.clone(),
            timeout_ms: self.timeout_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarvestResolved {
    pub n_cot: u32,
    pub n_eval: u32,
    pub cot_template: Option<PathBuf>,
    pub eval_template: Option<PathBuf>,
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudentResolved {
    pub kind: String,
    pub dim: usize,
    pub init_scale: f64,
    pub max_decode_len: usize,
}

impl StudentResolved {
    pub fn tiny_config(&self, seed: u64) -> TinyStudentConfig {
        TinyStudentConfig { dim: self.dim, init_scale: self.init_scale, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResolved {
    pub label_sources: Vec<LabelSource>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationResolved {
    pub ncot_values: Vec<u32>,
    pub fixed_n_eval: u32,
    pub neval_values: Vec<u32>,
    pub fixed_n_cots: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticResolved {
    pub flaw_rate_q: f64,
    pub eval_reliability_s: f64,
    pub n_cot: u32,
    pub n_eval: u32,
    pub train_size: usize,
    pub test_size: usize,
    pub data_seed: u64,
    pub sim_seed: u64,
}

/// The effective configuration a run actually executes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub run_id: Option<String>,
    pub results_dir: PathBuf,
    pub dataset_train: Option<PathBuf>,
    pub dataset_test: Option<PathBuf>,
    pub corpus_cots: Option<PathBuf>,
    pub corpus_evals: Option<PathBuf>,
    pub teacher: TeacherResolved,
    pub sim: SimulatedTeacherConfig,
    pub harvest: HarvestResolved,
    pub train: TrainConfig,
    pub checkpoint_dir: Option<PathBuf>,
    pub student: StudentResolved,
    pub grid: GridResolved,
    pub ablation: AblationResolved,
    pub synthetic: SyntheticResolved,
}

pub(crate) fn parse_label_source(name: &str) -> Result<LabelSource, ConfigError> {
    match name.to_ascii_lowercase().as_str() {
        "pseudo" | "p" => Ok(LabelSource::Pseudo),
        "human" | "h" => Ok(LabelSource::Human),
        other => Err(ConfigError::Invalid(format!(
            "unknown label source {other:?} (expected pseudo or human)"
        ))),
    }
}

pub(crate) fn parse_schedule(
    name: &str,
) -> Result<selfdistill_core::train::PhaseSchedule, ConfigError> {
    use selfdistill_core::train::PhaseSchedule;
    match name.to_ascii_lowercase().as_str() {
        "sequential" | "sequential_se_then_cot" => Ok(PhaseSchedule::SequentialSeThenCot),
        "joint" | "joint_mixed" => Ok(PhaseSchedule::JointMixed),
        other => Err(ConfigError::Invalid(format!(
            "unknown phase schedule {other:?} (expected sequential_se_then_cot or joint_mixed)"
        ))),
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
        toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Apply defaults to every unset key.
    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let train_defaults = TrainConfig::default();
        let train = TrainConfig {
            lambda_weight: self.train.lambda_weight.unwrap_or(train_defaults.lambda_weight),
            batch_size: self.train.batch_size.unwrap_or(train_defaults.batch_size),
            learning_rate: self.train.learning_rate.unwrap_or(train_defaults.learning_rate),
            weight_decay: self.train.weight_decay.unwrap_or(train_defaults.weight_decay),
            epochs_se: self.train.epochs_se.unwrap_or(train_defaults.epochs_se),
            epochs_cot: self.train.epochs_cot.unwrap_or(train_defaults.epochs_cot),
            phase_schedule: match &self.train.phase_schedule {
                Some(name) => parse_schedule(name)?,
                None => train_defaults.phase_schedule,
            },
            label_source: match &self.train.label_source {
                Some(name) => parse_label_source(name)?,
                None => train_defaults.label_source,
            },
            seed: self.train.seed.unwrap_or(train_defaults.seed),
        };

        let backend = match &self.teacher.backend {
            Some(name) => BackendChoice::parse(name).ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "unknown teacher backend {name:?} (expected live, replay, or sim)"
                ))
            })?,
            None => BackendChoice::Sim,
        };
        let retry_defaults = RetryPolicy::default();
        let retry = match &self.teacher.retry {
            Some(section) => RetryPolicy {
                max_attempts: section.max_attempts.unwrap_or(retry_defaults.max_attempts),
                base_delay_ms: section.base_delay_ms.unwrap_or(retry_defaults.base_delay_ms),
                max_delay_ms: section.max_delay_ms.unwrap_or(retry_defaults.max_delay_ms),
            },
            None => retry_defaults,
        };
        let live_defaults = LiveConfig::default();
        let teacher = TeacherResolved {
            backend,
            base_url: self
                .teacher
                .base_url
                .clone()
                .unwrap_or(live_defaults.base_url),
            model_id: self
                .teacher
                .model_id
                .clone()
                .unwrap_or_else(|| match backend {
                    BackendChoice::Sim => "sim-teacher".to_string(),
                    _ => "gpt-3.5-turbo".to_string(),
                }),
            temperature: self.teacher.temperature.unwrap_or(0.7),
            max_tokens: self.teacher.max_tokens.unwrap_or(512),
            parallelism: self.teacher.parallelism.unwrap_or(live_defaults.parallelism),
            rate_limit_rps: self.teacher.rate_limit_rps.or(live_defaults.rate_limit_rps),
            timeout_ms: self.teacher.timeout_ms.unwrap_or(live_defaults.timeout_ms),
            cache: self.teacher.cache.clone(),
            retry,
        };

        let sim = SimulatedTeacherConfig::new(
            self.sim.flaw_rate_q.unwrap_or(0.0),
            self.sim.eval_reliability_s.unwrap_or(1.0),
            self.sim.seed.unwrap_or(0),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let student_kind = self.student.kind.clone().unwrap_or_else(|| "tiny".to_string());
        if student_kind != "tiny" {
            return Err(ConfigError::Invalid(format!(
                "unsupported student kind {student_kind:?}: \"tiny\" is the built-in; \
                 other students integrate through the StudentModel trait"
            )));
        }
        let tiny_defaults = TinyStudentConfig::default();

        let label_sources = match &self.grid.label_sources {
            Some(names) => {
                let mut sources = Vec::with_capacity(names.len());
                for name in names {
                    sources.push(parse_label_source(name)?);
                }
                sources
            }
            None => vec![LabelSource::Pseudo, LabelSource::Human],
        };

        let config = ResolvedConfig {
            run_id: self.run.run_id.clone(),
            results_dir: self
                .run
                .results_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("results")),
            dataset_train: self.dataset.train.clone(),
            dataset_test: self.dataset.test.clone(),
            corpus_cots: self.corpus.cots.clone(),
            corpus_evals: self.corpus.evals.clone(),
            teacher,
            sim,
            harvest: HarvestResolved {
                n_cot: self.harvest.n_cot.unwrap_or(5),
                n_eval: self.harvest.n_eval.unwrap_or(5),
                cot_template: self.harvest.cot_template.clone(),
                eval_template: self.harvest.eval_template.clone(),
                resume: self.harvest.resume.unwrap_or(true),
            },
            train,
            checkpoint_dir: self.train.checkpoint_dir.clone(),
            student: StudentResolved {
                kind: student_kind,
                dim: self.student.dim.unwrap_or(tiny_defaults.dim),
                init_scale: self.student.init_scale.unwrap_or(tiny_defaults.init_scale),
                max_decode_len: self
                    .student
                    .max_decode_len
                    .unwrap_or(selfdistill_core::eval::DEFAULT_MAX_DECODE_LEN),
            },
            grid: GridResolved {
                label_sources,
                seeds: self
                    .grid
                    .seeds
                    .clone()
                    .unwrap_or_else(|| selfdistill_core::train::DEFAULT_SEEDS.to_vec()),
            },
            ablation: AblationResolved {
                ncot_values: self.ablation.ncot_values.clone().unwrap_or_else(|| vec![1, 3, 5]),
                fixed_n_eval: self.ablation.fixed_n_eval.unwrap_or(5),
                neval_values: self
                    .ablation
                    .neval_values
                    .clone()
                    .unwrap_or_else(|| vec![0, 1, 3, 5]),
                fixed_n_cots: self.ablation.fixed_n_cots.clone().unwrap_or_else(|| vec![1, 5]),
            },
            synthetic: SyntheticResolved {
                flaw_rate_q: self.synthetic.flaw_rate_q.unwrap_or(0.3),
                eval_reliability_s: self.synthetic.eval_reliability_s.unwrap_or(0.9),
                n_cot: self.synthetic.n_cot.unwrap_or(5),
                n_eval: self.synthetic.n_eval.unwrap_or(5),
                train_size: self.synthetic.train_size.unwrap_or(200),
                test_size: self.synthetic.test_size.unwrap_or(100),
                data_seed: self.synthetic.data_seed.unwrap_or(11),
                sim_seed: self.synthetic.sim_seed.unwrap_or(7),
            },
        };
        config.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }
}

impl ResolvedConfig {
    /// Digest of the effective config. Serialization order is struct order,
    /// so equal configs digest equally and any behavioral change shows.
    pub fn digest(&self) -> String {
        let rendered = serde_json::to_string(self).expect("resolved config serializes");
        sha256_hex(&["run-config", &rendered])
    }

    /// Run id: explicit, or derived from the digest.
    pub fn effective_run_id(&self) -> String {
        match &self.run_id {
            Some(id) => id.clone(),
            None => format!("run-{}", &self.digest()[..12]),
        }
    }
}

/// Load a prompt template from a JSON file.
pub fn load_template(path: &Path) -> Result<PromptTemplate, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text)
        .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    pub command: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    pub tool_version: String,
}

impl RunManifest {
    pub fn start(run_id: &str, config_digest: &str, command: &str, clock: &dyn Clock) -> Self {
        RunManifest {
            run_id: run_id.to_string(),
            config_digest: config_digest.to_string(),
            command: command.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: rfc3339_utc(clock.now_millis()),
            finished_at: String::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Stamp the end time and write to `path`.
    pub fn finish(mut self, path: &Path, clock: &dyn Clock) -> Result<(), ConfigError> {
        self.finished_at = rfc3339_utc(clock.now_millis());
        let rendered =
            serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(path, format!("{rendered}\n"))
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use selfdistill_core::train::PhaseSchedule;

    #[test]
    fn empty_config_resolves_to_defaults() {
        let file: RunConfigFile = toml::from_str("").unwrap();
        let resolved = file.resolve().unwrap();
        assert_eq!(resolved.train.lambda_weight, 0.5);
        assert_eq!(resolved.train.batch_size, 64);
        assert_eq!(resolved.train.learning_rate, 5e-5);
        assert_eq!(resolved.harvest.n_cot, 5);
        assert_eq!(resolved.harvest.n_eval, 5);
        assert_eq!(resolved.grid.seeds, vec![13, 42, 2023]);
        assert_eq!(resolved.teacher.backend, BackendChoice::Sim);
        assert_eq!(resolved.student.kind, "tiny");
    }

    #[test]
    fn partial_sections_override_only_their_keys() {
        let text = r#"
            [train]
            lambda_weight = 0.25
            phase_schedule = "joint_mixed"

            [teacher]
            backend = "replay"
            cache = "cache.jsonl"
        "#;
        let file: RunConfigFile = toml::from_str(text).unwrap();
        let resolved = file.resolve().unwrap();
        assert_eq!(resolved.train.lambda_weight, 0.25);
        assert_eq!(resolved.train.phase_schedule, PhaseSchedule::JointMixed);
        assert_eq!(resolved.train.batch_size, 64);
        assert_eq!(resolved.teacher.backend, BackendChoice::Replay);
        assert_eq!(resolved.teacher.cache, Some(PathBuf::from("cache.jsonl")));
    }

    #[test]
    fn digest_changes_iff_effective_config_changes() {
        let a = toml::from_str::<RunConfigFile>("").unwrap().resolve().unwrap();
        // Explicitly setting a default leaves the effective config unchanged.
        let b = toml::from_str::<RunConfigFile>("[train]\nlambda_weight = 0.5\n")
            .unwrap()
            .resolve()
            .unwrap();
        // Changing a value changes it.
        let c = toml::from_str::<RunConfigFile>("[train]\nlambda_weight = 0.75\n")
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<RunConfigFile>("[train]\nlearning_rat = 1\n").is_err());
        let bad_backend: RunConfigFile =
            toml::from_str("[teacher]\nbackend = \"psychic\"\n").unwrap();
        assert!(matches!(bad_backend.resolve(), Err(ConfigError::Invalid(_))));
        let bad_lambda: RunConfigFile =
            toml::from_str("[train]\nlambda_weight = -1.0\n").unwrap();
        assert!(matches!(bad_lambda.resolve(), Err(ConfigError::Invalid(_))));
        let bad_student: RunConfigFile =
            toml::from_str("[student]\nkind = \"t5-base\"\n").unwrap();
        assert!(matches!(bad_student.resolve(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn run_id_defaults_to_digest_prefix() {
        let resolved = toml::from_str::<RunConfigFile>("").unwrap().resolve().unwrap();
        let id = resolved.effective_run_id();
        assert!(id.starts_with("run-"));
        assert_eq!(id.len(), 16);
        let named = toml::from_str::<RunConfigFile>("[run]\nrun_id = \"exp7\"\n")
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(named.effective_run_id(), "exp7");
    }

    #[test]
    fn manifest_records_both_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let clock = crate::clock::FakeClock::new(1_700_000_000_000);
        let mut manifest = RunManifest::start("r1", "d1", "train", &clock);
        manifest.input(Path::new("in.jsonl")).output(Path::new("out.jsonl"));
        clock.sleep_millis(2000);
        manifest.finish(&path, &clock).unwrap();
        let back: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back.command, "train");
        assert_eq!(back.inputs, vec!["in.jsonl"]);
        assert!(back.finished_at > back.started_at);
        assert_eq!(back.tool_version, env!("CARGO_PKG_VERSION"));
    }
}
