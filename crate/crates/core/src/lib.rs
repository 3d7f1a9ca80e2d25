//! Benchmark harness for affective iterative self-correction of
//! text-generation models.
//!
//! The crate is organized around the run pipeline:
//!
//! - [`bank`] - the 30-cue prompt bank, baseline prompts, and emotion-group
//!   schedules parsed from pattern notation
//! - [`backend`] - the generation interface: chat-completions HTTP client,
//!   deterministic scripted replay, and a seeded respondent simulator
//! - [`verifier`] - boxed-answer extraction, normalization, and the
//!   exact-match oracle with halting selection
//! - [`protocol`] - the iteration state machine and its baselines under
//!   matched candidate budgets
//! - [`datasets`] - task ingestion, image filtering, validation/test splits
//! - [`report`] - cumulative/final accuracy and CSV/JSONL/markdown emission
//! - [`engine`] - resumable comparison runs, ablation grids, manifests
//! - [`config`] - operator configuration shared by the CLI and library

pub mod backend;
pub mod bank;
pub mod config;
pub mod datasets;
pub mod engine;
pub mod protocol;
pub mod report;
pub mod util;
pub mod verifier;

pub use backend::{Backend, GenParams, GenRequest, GenResult};
pub use bank::{CueBank, Emotion, EmotionGroup, SchedulePattern};
pub use datasets::{Benchmark, Task};
pub use protocol::{Resolution, RunRecord, Strategy, TaskRunner};
pub use verifier::AnswerType;
