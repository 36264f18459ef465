//! Core algorithms for distilling chain-of-thought generation *and* self-evaluation
//! from a large teacher into a small sequence-to-sequence student.
//!
//! Everything in this crate is pure computation over owned data: corpus types and
//! their invariants, prompt rendering and completion parsing, answer normalization,
//! a deterministic simulated teacher, the prefix-tagged multi-task losses, the
//! two-phase trainer, and a tiny trainable reference student. File formats, HTTP,
//! caching, and the CLI live in the companion `selfdistill` crate.
//!
//! The crate is `no_std` (with `alloc`) so the training math can be embedded or
//! cross-checked anywhere; nothing here touches the filesystem or a clock.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod answer;
pub mod digest;
pub mod eval;
pub mod loss;
pub mod prompt;
pub mod sim;
pub mod student;
pub mod synth;
pub mod train;
pub mod trainset;
pub mod types;

pub use types::{
    CoTSample, SelfEvalSample, TaskInstance, TaskKind, TeacherBackendKind, TeacherProvenance,
    TrainingExample, Verdict,
};
