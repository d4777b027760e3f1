//! Error and finding types shared across the toolkit.
//!
//! `CoreError` is for failures that abort an operation; `Finding` is for
//! per-item diagnostics (missing files, skipped records, judge hiccups)
//! that are collected and reported without stopping a run. Every error
//! carries a stable machine-readable code so the CLI and downstream tools
//! can branch on it without string-matching prose.

use serde::{Deserialize, Serialize};

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("malformed dataset index at {path}: {detail}")]
    MalformedIndex { path: String, detail: String },

    #[error("unknown task category '{key}' in {context}")]
    UnknownCategory { key: String, context: String },

    #[error("duplicate frame id '{frame_id}' appears in scenes '{scene_a}' and '{scene_b}'")]
    DuplicateFrame {
        frame_id: String,
        scene_a: String,
        scene_b: String,
    },

    #[error("dataset contains no QA records")]
    EmptyDataset,

    #[error("train fraction must lie strictly between 0 and 1, got {value}")]
    InvalidFraction { value: f64 },

    #[error("input text is empty")]
    EmptyInput,

    #[error("answer text is empty")]
    EmptyAnswer,

    #[error("{segment} text already contains a protocol marker")]
    NestedMarkers { segment: &'static str },

    #[error("invalid object tag id '{raw}': expected 'c' followed by a positive integer")]
    InvalidTag { raw: String },

    #[error("frame '{frame_id}' has no {view} view")]
    IncompleteFrame { frame_id: String, view: String },

    #[error("authentication failed (HTTP {status}); check the API key")]
    AuthFailed { status: u16 },

    #[error("token budget exceeded: {used} tokens used of {cap} allowed")]
    BudgetExceeded { used: u64, cap: u64 },

    #[error("gave up after {attempts} attempts; last status {last_status}: {detail}")]
    ExhaustedRetries {
        attempts: u32,
        last_status: u16,
        detail: String,
    },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("no reasoning chain available for record '{qa_id}'")]
    MissingChain { qa_id: String },

    #[error("invalid final-score weights: {0}")]
    WeightsInvalid(String),

    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error("malformed predictions file at line {line}: {detail}")]
    MalformedPredictions { line: usize, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    /// Stable identifier for the error class, independent of message wording.
    pub fn code(&self) -> &'static str {
        match self {
            CoreError::MalformedIndex { .. } => "MALFORMED_INDEX",
            CoreError::UnknownCategory { .. } => "UNKNOWN_CATEGORY",
            CoreError::DuplicateFrame { .. } => "DUPLICATE_FRAME",
            CoreError::EmptyDataset => "EMPTY_DATASET",
            CoreError::InvalidFraction { .. } => "INVALID_FRACTION",
            CoreError::EmptyInput => "EMPTY_INPUT",
            CoreError::EmptyAnswer => "EMPTY_ANSWER",
            CoreError::NestedMarkers { .. } => "NESTED_MARKERS",
            CoreError::InvalidTag { .. } => "INVALID_TAG",
            CoreError::IncompleteFrame { .. } => "INCOMPLETE_FRAME",
            CoreError::AuthFailed { .. } => "AUTH_FAILED",
            CoreError::BudgetExceeded { .. } => "BUDGET_EXCEEDED",
            CoreError::ExhaustedRetries { .. } => "EXHAUSTED_RETRIES",
            CoreError::Transport(_) => "TRANSPORT_ERROR",
            CoreError::MissingChain { .. } => "MISSING_CHAIN",
            CoreError::WeightsInvalid(_) => "WEIGHTS_INVALID",
            CoreError::EmptyEvalSet => "EMPTY_EVAL_SET",
            CoreError::MalformedPredictions { .. } => "MALFORMED_PREDICTIONS",
            CoreError::InvalidConfig(_) => "INVALID_CONFIG",
            CoreError::Io(_) => "IO",
            CoreError::Json(_) => "JSON",
        }
    }
}

/// How serious a finding is. Errors make a validation pass fail; warnings
/// are surfaced but do not change exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

/// A single diagnostic attached to a dataset item, record, or run phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    /// Stable machine-readable code, e.g. `MISSING_VIEW`.
    pub code: String,
    /// What the finding is about (a frame id, qa id, file path, ...).
    pub subject: String,
    /// Human-readable explanation.
    pub message: String,
}

impl Finding {
    pub fn error(code: &str, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Error,
            code: code.to_string(),
            subject: subject.into(),
            message: message.into(),
        }
    }

    pub fn warning(code: &str, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Warning,
            code: code.to_string(),
            subject: subject.into(),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stable() {
        assert_eq!(CoreError::EmptyDataset.code(), "EMPTY_DATASET");
        assert_eq!(
            CoreError::InvalidFraction { value: 1.5 }.code(),
            "INVALID_FRACTION"
        );
        assert_eq!(
            CoreError::Transport("boom".into()).code(),
            "TRANSPORT_ERROR"
        );
    }

    #[test]
    fn finding_severity_round_trips_through_json() {
        let f = Finding::warning("MISSING_VIEW", "frame-0001", "no BACK_LEFT view");
        let json = serde_json::to_string(&f).unwrap();
        let back: Finding = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
        assert!(!back.is_error());
    }
}
