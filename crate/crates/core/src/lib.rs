//! Dataset construction and evaluation toolkit for reasoning-augmented
//! driving VQA.
//!
//! The crate covers the full round trip of a structured-reasoning dataset:
//! ingesting a multi-view driving QA index, generating step-by-step
//! reasoning chains through a chat-completion endpoint, exporting
//! fine-tuning JSONL files (with and without reasoning), and scoring model
//! predictions with n-gram, LCS, consensus, and judge-based metrics.

pub mod assembler;
pub mod config;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod prompts;
pub mod report;
pub mod tags;

pub use error::{CoreError, Finding, Result, Severity};
pub use model::{
    CameraView, Frame, MetricConfig, ObjectTag, QaRecord, ReasoningChain, TaskCategory,
    TrainingExample, Variant,
};
