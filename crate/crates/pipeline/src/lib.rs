//! Distillation pipeline: file formats, teacher access, harvesting, and the
//! experiment lab around the `selfdistill-core` primitives.
//!
//! The core crate owns everything algorithmic (prompting, parsing, losses,
//! the tiny student, training). This crate owns everything that touches the
//! outside world: JSONL corpora on disk, dataset ingestion from public
//! distribution formats, the live/replay/simulated teacher gateway, resumable
//! harvesting, the condition-grid and ablation runners, run configuration,
//! and the command-line front end.

pub mod cli;
pub mod clock;
pub mod corpus;
pub mod gateway;
pub mod harvest;
pub mod ingest;
pub mod lab;
pub mod runcfg;

pub use corpus::{deserialize_corpus, serialize_corpus, CorpusIoError, CorpusRecord};
pub use gateway::{SamplingParams, TeacherGateway};
pub use harvest::{harvest_cots, harvest_report, harvest_self_evals, HarvestConfig};
