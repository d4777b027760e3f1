//! Core domain types: camera views, task categories, frames, QA records,
//! reasoning chains, training examples, and metric configuration.
//!
//! Conventions that the rest of the crate relies on:
//! - camera views have one canonical order (front, front-left, front-right,
//!   back, back-left, back-right) used everywhere images are listed;
//! - `gt_tags` on a [`QaRecord`] is always derived from the answer text,
//!   never set by hand;
//! - sentence counting is the splitter in [`split_sentences`], shared by
//!   reasoning-chain stats and prompt budget checks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Finding, Result};
use crate::tags;

/// One of the six camera views around the ego vehicle.
///
/// The derived `Ord` follows declaration order, which is also the canonical
/// presentation order for images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CameraView {
    Front,
    FrontLeft,
    FrontRight,
    Back,
    BackLeft,
    BackRight,
}

/// The canonical order in which the six views are listed.
pub fn canonical_view_order() -> [CameraView; 6] {
    [
        CameraView::Front,
        CameraView::FrontLeft,
        CameraView::FrontRight,
        CameraView::Back,
        CameraView::BackLeft,
        CameraView::BackRight,
    ]
}

impl CameraView {
    /// Dataset-style key for this view, e.g. `CAM_FRONT_LEFT`.
    pub fn cam_key(self) -> &'static str {
        match self {
            CameraView::Front => "CAM_FRONT",
            CameraView::FrontLeft => "CAM_FRONT_LEFT",
            CameraView::FrontRight => "CAM_FRONT_RIGHT",
            CameraView::Back => "CAM_BACK",
            CameraView::BackLeft => "CAM_BACK_LEFT",
            CameraView::BackRight => "CAM_BACK_RIGHT",
        }
    }

    /// Short name without the `CAM_` prefix, e.g. `FRONT_LEFT`.
    pub fn short_name(self) -> &'static str {
        match self {
            CameraView::Front => "FRONT",
            CameraView::FrontLeft => "FRONT_LEFT",
            CameraView::FrontRight => "FRONT_RIGHT",
            CameraView::Back => "BACK",
            CameraView::BackLeft => "BACK_LEFT",
            CameraView::BackRight => "BACK_RIGHT",
        }
    }

    /// Parse a view name. Accepts both the bare form (`FRONT_LEFT`) and the
    /// dataset form (`CAM_FRONT_LEFT`), case-insensitively.
    pub fn parse_name(name: &str) -> Option<CameraView> {
        let upper = name.trim().to_ascii_uppercase();
        let bare = upper.strip_prefix("CAM_").unwrap_or(&upper);
        match bare {
            "FRONT" => Some(CameraView::Front),
            "FRONT_LEFT" => Some(CameraView::FrontLeft),
            "FRONT_RIGHT" => Some(CameraView::FrontRight),
            "BACK" => Some(CameraView::Back),
            "BACK_LEFT" => Some(CameraView::BackLeft),
            "BACK_RIGHT" => Some(CameraView::BackRight),
            _ => None,
        }
    }
}

impl fmt::Display for CameraView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Task category of a QA record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskCategory {
    Perception,
    Prediction,
    Planning,
    Behavior,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 4] = [
        TaskCategory::Perception,
        TaskCategory::Prediction,
        TaskCategory::Planning,
        TaskCategory::Behavior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskCategory::Perception => "perception",
            TaskCategory::Prediction => "prediction",
            TaskCategory::Planning => "planning",
            TaskCategory::Behavior => "behavior",
        }
    }

    /// Parse a category name case-insensitively, ignoring surrounding
    /// whitespace.
    pub fn parse_name(name: &str) -> Option<TaskCategory> {
        match name.trim().to_ascii_lowercase().as_str() {
            "perception" => Some(TaskCategory::Perception),
            "prediction" => Some(TaskCategory::Prediction),
            "planning" => Some(TaskCategory::Planning),
            "behavior" => Some(TaskCategory::Behavior),
            _ => None,
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskCategory {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<TaskCategory> {
        TaskCategory::parse_name(s).ok_or_else(|| CoreError::UnknownCategory {
            key: s.to_string(),
            context: "category name".to_string(),
        })
    }
}

/// Which training-file flavor an example belongs to: with a reasoning block
/// or answer-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Reason,
    Simple,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Reason => "reason",
            Variant::Simple => "simple",
        })
    }
}

impl FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Variant> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reason" => Ok(Variant::Reason),
            "simple" => Ok(Variant::Simple),
            other => Err(CoreError::InvalidConfig(format!(
                "unknown variant '{other}', expected 'reason' or 'simple'"
            ))),
        }
    }
}

/// A key frame: one timestamp of one scene, with up to six camera images.
///
/// Completeness (all six views present) is checked by [`validate_frame`],
/// not enforced at construction, so partially-mapped datasets can still be
/// loaded and reported on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub scene_id: String,
    pub frame_id: String,
    /// View -> image path, relative to the dataset root.
    pub views: BTreeMap<CameraView, PathBuf>,
}

impl Frame {
    pub fn new(
        scene_id: impl Into<String>,
        frame_id: impl Into<String>,
        views: BTreeMap<CameraView, PathBuf>,
    ) -> Frame {
        Frame {
            scene_id: scene_id.into(),
            frame_id: frame_id.into(),
            views,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.views.len() == 6
    }

    pub fn missing_views(&self) -> Vec<CameraView> {
        canonical_view_order()
            .into_iter()
            .filter(|v| !self.views.contains_key(v))
            .collect()
    }

    /// The six image paths in canonical view order, relative to the dataset
    /// root. Fails with `INCOMPLETE_FRAME` if any view is missing.
    pub fn ordered_view_paths(&self) -> Result<Vec<&Path>> {
        canonical_view_order()
            .into_iter()
            .map(|v| {
                self.views
                    .get(&v)
                    .map(PathBuf::as_path)
                    .ok_or_else(|| CoreError::IncompleteFrame {
                        frame_id: self.frame_id.clone(),
                        view: v.short_name().to_string(),
                    })
            })
            .collect()
    }

    /// The six image paths in canonical view order, joined onto `root`.
    pub fn resolved_views(&self, root: &Path) -> Result<Vec<PathBuf>> {
        Ok(self
            .ordered_view_paths()?
            .into_iter()
            .map(|p| root.join(p))
            .collect())
    }
}

/// Check a frame for missing views and dangling image paths.
///
/// A missing view is an error (the frame cannot feed a six-image prompt);
/// a mapped path that does not exist on disk is a warning (metadata-only
/// workflows remain usable).
pub fn validate_frame(frame: &Frame, dataset_root: &Path) -> Vec<Finding> {
    let mut findings = Vec::new();
    let subject = format!("{}/{}", frame.scene_id, frame.frame_id);
    for view in canonical_view_order() {
        match frame.views.get(&view) {
            None => findings.push(Finding::error(
                "MISSING_VIEW",
                subject.clone(),
                format!("frame has no {view} view"),
            )),
            Some(rel) => {
                let full = dataset_root.join(rel);
                if !full.is_file() {
                    findings.push(Finding::warning(
                        "FILE_NOT_FOUND",
                        subject.clone(),
                        format!("{view} image '{}' does not exist", rel.display()),
                    ));
                }
            }
        }
    }
    findings
}

/// Reference to an object mentioned in QA text, e.g. `<c3>` or
/// `<c3,CAM_BACK,812.0,455.5>`.
///
/// Pixel coordinates only make sense relative to a specific camera image,
/// so `coords` can only be set together with `camera`; the constructors
/// enforce this and deserialization re-checks it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObjectTagWire")]
pub struct ObjectTag {
    id: String,
    camera: Option<CameraView>,
    coords: Option<(f64, f64)>,
}

#[derive(Deserialize)]
struct ObjectTagWire {
    id: String,
    #[serde(default)]
    camera: Option<CameraView>,
    #[serde(default)]
    coords: Option<(f64, f64)>,
}

impl TryFrom<ObjectTagWire> for ObjectTag {
    type Error = CoreError;

    fn try_from(w: ObjectTagWire) -> Result<ObjectTag> {
        match (w.camera, w.coords) {
            (Some(cam), Some(xy)) => ObjectTag::with_location(&w.id, cam, Some(xy)),
            (Some(cam), None) => ObjectTag::with_location(&w.id, cam, None),
            (None, Some(_)) => Err(CoreError::InvalidTag { raw: w.id }),
            (None, None) => ObjectTag::new(&w.id),
        }
    }
}

impl ObjectTag {
    /// True if `id` is a lowercase `c` followed by a positive integer.
    pub fn is_valid_id(id: &str) -> bool {
        let Some(digits) = id.strip_prefix('c') else {
            return false;
        };
        !digits.is_empty()
            && digits.bytes().all(|b| b.is_ascii_digit())
            && digits.bytes().any(|b| b != b'0')
    }

    pub fn new(id: &str) -> Result<ObjectTag> {
        if !Self::is_valid_id(id) {
            return Err(CoreError::InvalidTag { raw: id.to_string() });
        }
        Ok(ObjectTag {
            id: id.to_string(),
            camera: None,
            coords: None,
        })
    }

    pub fn with_location(
        id: &str,
        camera: CameraView,
        coords: Option<(f64, f64)>,
    ) -> Result<ObjectTag> {
        let mut tag = ObjectTag::new(id)?;
        tag.camera = Some(camera);
        tag.coords = coords;
        Ok(tag)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn camera(&self) -> Option<CameraView> {
        self.camera
    }

    pub fn coords(&self) -> Option<(f64, f64)> {
        self.coords
    }
}

/// A single question/answer record tied to a frame.
///
/// `gt_tags` is a cached extraction from `gt_answer`; constructors compute
/// it and deserialization recomputes it, so it can never drift from the
/// answer text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QaRecordWire")]
pub struct QaRecord {
    pub qa_id: String,
    pub scene_id: String,
    pub frame_id: String,
    pub category: TaskCategory,
    pub question: String,
    pub gt_answer: String,
    gt_tags: Vec<ObjectTag>,
}

#[derive(Deserialize)]
struct QaRecordWire {
    qa_id: String,
    scene_id: String,
    frame_id: String,
    category: TaskCategory,
    question: String,
    gt_answer: String,
    // Present in serialized records; ignored and recomputed on load.
    #[serde(default)]
    #[allow(dead_code)]
    gt_tags: serde_json::Value,
}

impl TryFrom<QaRecordWire> for QaRecord {
    type Error = CoreError;

    fn try_from(w: QaRecordWire) -> Result<QaRecord> {
        QaRecord::new(
            w.qa_id, w.scene_id, w.frame_id, w.category, &w.question, &w.gt_answer,
        )
    }
}

impl QaRecord {
    pub fn new(
        qa_id: impl Into<String>,
        scene_id: impl Into<String>,
        frame_id: impl Into<String>,
        category: TaskCategory,
        question: &str,
        gt_answer: &str,
    ) -> Result<QaRecord> {
        let question = question.trim();
        if question.is_empty() {
            return Err(CoreError::EmptyInput);
        }
        let gt_answer = gt_answer.trim();
        if gt_answer.is_empty() {
            return Err(CoreError::EmptyAnswer);
        }
        Ok(QaRecord {
            qa_id: qa_id.into(),
            scene_id: scene_id.into(),
            frame_id: frame_id.into(),
            category,
            question: question.to_string(),
            gt_answer: gt_answer.to_string(),
            gt_tags: tags::extract_tags(gt_answer),
        })
    }

    /// Object tags mentioned in the ground-truth answer.
    pub fn gt_tags(&self) -> &[ObjectTag] {
        &self.gt_tags
    }
}

/// A generated step-by-step reasoning text plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub text: String,
    /// Sentence count per [`split_sentences`]; at least 1.
    pub sentence_count: usize,
    pub category: TaskCategory,
    /// Model that produced the chain.
    pub source_model: String,
}

impl ReasoningChain {
    pub fn new(
        text: &str,
        category: TaskCategory,
        source_model: impl Into<String>,
    ) -> Result<ReasoningChain> {
        let text = text.trim();
        if text.is_empty() {
            return Err(CoreError::EmptyInput);
        }
        Ok(ReasoningChain {
            text: text.to_string(),
            sentence_count: split_sentences(text).len(),
            category,
            source_model: source_model.into(),
        })
    }
}

/// Split text into sentences.
///
/// A boundary is a run of `.`, `!`, or `?` followed by whitespace or the
/// end of the text, so decimal points (`7.5 mph`) never split. Segments
/// without a single alphabetic character — enumeration markers like `1.` —
/// are merged into the following sentence. Non-empty input always yields at
/// least one sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = trimmed.chars().collect();
    let mut raw_segments: Vec<String> = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut run_end = i;
            while run_end < chars.len() && matches!(chars[run_end], '.' | '!' | '?') {
                run_end += 1;
            }
            let at_boundary = run_end == chars.len() || chars[run_end].is_whitespace();
            if at_boundary {
                let seg: String = chars[start..run_end].iter().collect();
                let seg = seg.trim();
                if !seg.is_empty() {
                    raw_segments.push(seg.to_string());
                }
                start = run_end;
            }
            i = run_end;
        } else {
            i += 1;
        }
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let tail = tail.trim();
        if !tail.is_empty() {
            raw_segments.push(tail.to_string());
        }
    }

    // Fold marker-only segments into the sentence that follows them.
    let mut sentences: Vec<String> = Vec::new();
    let mut pending = String::new();
    for seg in raw_segments {
        let has_alpha = seg.chars().any(|c| c.is_alphabetic());
        if has_alpha {
            if pending.is_empty() {
                sentences.push(seg);
            } else {
                pending.push(' ');
                pending.push_str(&seg);
                sentences.push(std::mem::take(&mut pending));
            }
        } else if pending.is_empty() {
            pending = seg;
        } else {
            pending.push(' ');
            pending.push_str(&seg);
        }
    }
    if !pending.is_empty() {
        // Trailing marker-only text: attach to the last sentence, or stand
        // alone if there is nothing else.
        match sentences.last_mut() {
            Some(last) => {
                last.push(' ');
                last.push_str(&pending);
            }
            None => sentences.push(pending),
        }
    }
    sentences
}

/// Number of sentences in `text`: 0 for blank input, otherwise ≥ 1.
pub fn sentence_count(text: &str) -> usize {
    split_sentences(text).len()
}

/// Provenance of a training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub qa_id: String,
    pub scene_id: String,
    pub frame_id: String,
    pub category: TaskCategory,
}

/// One fine-tuning example: system prompt, question, optional reasoning,
/// answer, and the six camera images in canonical order.
///
/// `reasoning` is `Some` exactly for the reason variant; the assembler
/// enforces this when building and exporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub system_prompt: String,
    pub question: String,
    pub reasoning: Option<ReasoningChain>,
    pub answer: String,
    pub image_paths: Vec<PathBuf>,
    pub meta: ExampleMeta,
}

/// Weights for the blended final score. Must be non-negative and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinalWeights {
    pub judge: f64,
    pub language: f64,
    pub r#match: f64,
    pub accuracy: f64,
}

impl Default for FinalWeights {
    fn default() -> Self {
        FinalWeights {
            judge: 0.4,
            language: 0.2,
            r#match: 0.2,
            accuracy: 0.2,
        }
    }
}

impl FinalWeights {
    pub fn sum(&self) -> f64 {
        self.judge + self.language + self.r#match + self.accuracy
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [
            ("judge", self.judge),
            ("language", self.language),
            ("match", self.r#match),
            ("accuracy", self.accuracy),
        ];
        for (name, v) in parts {
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::WeightsInvalid(format!(
                    "weight '{name}' must be a non-negative finite number, got {v}"
                )));
            }
        }
        if (self.sum() - 1.0).abs() > 1e-9 {
            return Err(CoreError::WeightsInvalid(format!(
                "weights must sum to 1.0, got {}",
                self.sum()
            )));
        }
        Ok(())
    }
}

/// Knobs for the text metrics. Defaults reproduce the standard setup:
/// BLEU up to 4-grams without smoothing, ROUGE-L with beta 1.2, CIDEr-D
/// with sigma 6 and a ×10 scale, lowercased tokens with terminal
/// punctuation stripped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub bleu_max_order: usize,
    /// Replacement value for zero n-gram precisions; `None` keeps the
    /// strict behavior where any zero precision zeroes the BLEU score.
    pub bleu_smoothing_epsilon: Option<f64>,
    pub rouge_beta: f64,
    pub cider_sigma: f64,
    pub cider_scale: f64,
    pub lowercase: bool,
    pub strip_terminal_punct: bool,
    pub final_weights: FinalWeights,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            bleu_max_order: 4,
            bleu_smoothing_epsilon: None,
            rouge_beta: 1.2,
            cider_sigma: 6.0,
            cider_scale: 10.0,
            lowercase: true,
            strip_terminal_punct: true,
            final_weights: FinalWeights::default(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bleu_max_order == 0 || self.bleu_max_order > 8 {
            return Err(CoreError::InvalidConfig(format!(
                "bleu_max_order must be between 1 and 8, got {}",
                self.bleu_max_order
            )));
        }
        if let Some(eps) = self.bleu_smoothing_epsilon {
            if !eps.is_finite() || eps <= 0.0 || eps >= 1.0 {
                return Err(CoreError::InvalidConfig(format!(
                    "bleu_smoothing_epsilon must lie in (0, 1), got {eps}"
                )));
            }
        }
        if !self.rouge_beta.is_finite() || self.rouge_beta <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "rouge_beta must be positive, got {}",
                self.rouge_beta
            )));
        }
        if !self.cider_sigma.is_finite() || self.cider_sigma <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "cider_sigma must be positive, got {}",
                self.cider_sigma
            )));
        }
        if !self.cider_scale.is_finite() || self.cider_scale <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "cider_scale must be positive, got {}",
                self.cider_scale
            )));
        }
        self.final_weights.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_front_first_back_last() {
        let order = canonical_view_order();
        assert_eq!(
            order.map(|v| v.short_name()),
            [
                "FRONT",
                "FRONT_LEFT",
                "FRONT_RIGHT",
                "BACK",
                "BACK_LEFT",
                "BACK_RIGHT"
            ]
        );
    }

    #[test]
    fn view_names_parse_with_and_without_prefix() {
        assert_eq!(
            CameraView::parse_name("CAM_FRONT_LEFT"),
            Some(CameraView::FrontLeft)
        );
        assert_eq!(
            CameraView::parse_name("back_right"),
            Some(CameraView::BackRight)
        );
        assert_eq!(CameraView::parse_name(" front "), Some(CameraView::Front));
        assert_eq!(CameraView::parse_name("CAM_TOP"), None);
    }

    #[test]
    fn categories_parse_case_insensitively() {
        assert_eq!(
            TaskCategory::parse_name(" Perception "),
            Some(TaskCategory::Perception)
        );
        assert_eq!(
            TaskCategory::parse_name("BEHAVIOR"),
            Some(TaskCategory::Behavior)
        );
        assert_eq!(TaskCategory::parse_name("driving"), None);
    }

    #[test]
    fn splitter_counts_plain_sentences() {
        assert_eq!(
            split_sentences("Stop at the line. Then go."),
            vec!["Stop at the line.", "Then go."]
        );
        assert_eq!(sentence_count("No terminal punctuation here"), 1);
        assert_eq!(sentence_count(""), 0);
        assert_eq!(sentence_count("   "), 0);
    }

    #[test]
    fn splitter_ignores_decimal_points() {
        assert_eq!(sentence_count("Slow down to 7.5 mph now."), 1);
        assert_eq!(sentence_count("It is 3.14 here. Turn left."), 2);
    }

    #[test]
    fn splitter_merges_enumeration_markers_forward() {
        let got = split_sentences("1. Check the mirrors. 2. Brake gently.");
        assert_eq!(got, vec!["1. Check the mirrors.", "2. Brake gently."]);
        assert_eq!(sentence_count("1. Check the mirrors. 2. Brake gently."), 2);
    }

    #[test]
    fn splitter_handles_punctuation_runs_and_bare_numbers() {
        assert_eq!(sentence_count("Wait!!! Go now."), 2);
        assert_eq!(sentence_count("Really?! Yes."), 2);
        // Non-empty text with no alphabetic sentence still counts as one.
        assert_eq!(sentence_count("123."), 1);
    }

    #[test]
    fn splitter_attaches_trailing_marker_to_last_sentence() {
        assert_eq!(split_sentences("Brake now. 5."), vec!["Brake now. 5."]);
    }

    #[test]
    fn frame_reports_missing_views() {
        let mut views = BTreeMap::new();
        views.insert(CameraView::Front, PathBuf::from("img/front.jpg"));
        let frame = Frame::new("scene-1", "frame-1", views);
        assert!(!frame.is_complete());
        assert_eq!(frame.missing_views().len(), 5);
        let err = frame.ordered_view_paths().unwrap_err();
        assert_eq!(err.code(), "INCOMPLETE_FRAME");
    }

    #[test]
    fn validate_frame_flags_missing_view_and_dangling_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut views = BTreeMap::new();
        for view in canonical_view_order() {
            views.insert(view, PathBuf::from(format!("{}.jpg", view.cam_key())));
        }
        views.remove(&CameraView::BackLeft);
        // Only the front image actually exists.
        std::fs::write(dir.path().join("CAM_FRONT.jpg"), b"x").unwrap();
        let frame = Frame::new("scene-1", "frame-1", views);
        let findings = validate_frame(&frame, dir.path());
        let missing: Vec<_> = findings.iter().filter(|f| f.code == "MISSING_VIEW").collect();
        let dangling: Vec<_> = findings
            .iter()
            .filter(|f| f.code == "FILE_NOT_FOUND")
            .collect();
        assert_eq!(missing.len(), 1);
        assert!(missing[0].is_error());
        assert_eq!(dangling.len(), 4);
        assert!(dangling.iter().all(|f| !f.is_error()));
    }

    #[test]
    fn validate_frame_accepts_complete_frame_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut views = BTreeMap::new();
        for view in canonical_view_order() {
            let name = format!("{}.jpg", view.cam_key());
            std::fs::write(dir.path().join(&name), b"x").unwrap();
            views.insert(view, PathBuf::from(name));
        }
        let frame = Frame::new("scene-1", "frame-1", views);
        assert!(validate_frame(&frame, dir.path()).is_empty());
        assert_eq!(frame.ordered_view_paths().unwrap().len(), 6);
    }

    #[test]
    fn object_tag_ids_must_be_c_plus_positive_integer() {
        assert!(ObjectTag::is_valid_id("c1"));
        assert!(ObjectTag::is_valid_id("c42"));
        assert!(ObjectTag::is_valid_id("c01"));
        assert!(!ObjectTag::is_valid_id("c0"));
        assert!(!ObjectTag::is_valid_id("c"));
        assert!(!ObjectTag::is_valid_id("C3"));
        assert!(!ObjectTag::is_valid_id("c3x"));
        assert!(!ObjectTag::is_valid_id("3"));
        assert!(ObjectTag::new("c0").is_err());
        assert_eq!(ObjectTag::new("c7").unwrap().id(), "c7");
    }

    #[test]
    fn object_tag_coords_require_camera() {
        let tag =
            ObjectTag::with_location("c2", CameraView::Back, Some((812.0, 455.5))).unwrap();
        assert_eq!(tag.camera(), Some(CameraView::Back));
        assert_eq!(tag.coords(), Some((812.0, 455.5)));
        // Deserializing coords without a camera is rejected.
        let bad = serde_json::json!({"id": "c2", "coords": [1.0, 2.0]});
        assert!(serde_json::from_value::<ObjectTag>(bad).is_err());
    }

    #[test]
    fn qa_record_derives_tags_and_round_trips() {
        let rec = QaRecord::new(
            "scene-1/frame-1/perception/0",
            "scene-1",
            "frame-1",
            TaskCategory::Perception,
            "Which objects matter most?",
            "A red car <c1> and a cyclist <c2,CAM_FRONT_RIGHT,700.0,420.0>.",
        )
        .unwrap();
        assert_eq!(rec.gt_tags().len(), 2);
        assert_eq!(rec.gt_tags()[0].id(), "c1");
        assert_eq!(rec.gt_tags()[1].camera(), Some(CameraView::FrontRight));

        let json = serde_json::to_string(&rec).unwrap();
        let back: QaRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn qa_record_rejects_blank_question_or_answer() {
        let q = QaRecord::new("id", "s", "f", TaskCategory::Planning, "  ", "Stop.");
        assert_eq!(q.unwrap_err().code(), "EMPTY_INPUT");
        let a = QaRecord::new("id", "s", "f", TaskCategory::Planning, "What now?", " \n");
        assert_eq!(a.unwrap_err().code(), "EMPTY_ANSWER");
    }

    #[test]
    fn reasoning_chain_counts_sentences() {
        let chain = ReasoningChain::new(
            "The crosswalk is occupied. Braking is the safe option.",
            TaskCategory::Planning,
            "test-model",
        )
        .unwrap();
        assert_eq!(chain.sentence_count, 2);
        assert_eq!(
            ReasoningChain::new("  ", TaskCategory::Planning, "m")
                .unwrap_err()
                .code(),
            "EMPTY_INPUT"
        );
    }

    #[test]
    fn default_metric_config_validates() {
        let cfg = MetricConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.bleu_max_order, 4);
        assert_eq!(cfg.rouge_beta, 1.2);
        assert_eq!(cfg.cider_sigma, 6.0);
        assert_eq!(cfg.cider_scale, 10.0);
        assert_eq!(cfg.bleu_smoothing_epsilon, None);
        assert!((cfg.final_weights.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_must_sum_to_one_and_be_non_negative() {
        let w = FinalWeights {
            judge: 0.5,
            ..FinalWeights::default()
        };
        assert_eq!(w.validate().unwrap_err().code(), "WEIGHTS_INVALID");
        let w = FinalWeights {
            judge: -0.1,
            language: 0.5,
            r#match: 0.3,
            accuracy: 0.3,
        };
        assert_eq!(w.validate().unwrap_err().code(), "WEIGHTS_INVALID");
        FinalWeights::default().validate().unwrap();
    }

    #[test]
    fn metric_config_fills_defaults_from_partial_json() {
        let cfg: MetricConfig = serde_json::from_str(r#"{"rouge_beta": 2.0}"#).unwrap();
        assert_eq!(cfg.rouge_beta, 2.0);
        assert_eq!(cfg.bleu_max_order, 4);
        assert_eq!(cfg.cider_scale, 10.0);
    }
}
