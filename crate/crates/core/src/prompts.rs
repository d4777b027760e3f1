//! Prompt construction: reasoning-generation prompts, fine-tuning /
//! inference prompts, and judge prompts.
//!
//! All text lives in a [`TemplateSet`]. The embedded defaults ship with
//! the crate; any individual piece can be overridden by dropping a file
//! into a template directory (see [`TemplateSet::load_dir`]). Each task
//! category carries its own focus lines and a sentence budget for the
//! generated reasoning, and the budget stated in the template text is
//! kept consistent with the programmatic table by a unit test.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{CoreError, Result};
use crate::gateway::ChatMessage;
use crate::model::{Frame, QaRecord, TaskCategory, Variant};

const PREAMBLE: &str = "You are assisting in developing a reasoning system for an autonomous driving AI. Below is a question and answer pair from the '{category}' category. Your task is to generate a structured, step-by-step reasoning process that logically leads to the provided answer.";

const FOCUS_PERCEPTION: [&str; 4] = [
    "Quickly summarize the observed scene",
    "Identify key objects and their positions",
    "Note immediate visual cues and statuses",
    "Format response within <think> tags using 1 concise sentence",
];

const FOCUS_PREDICTION: [&str; 4] = [
    "Concisely forecast future states based on current data",
    "Consider object motion, momentum, and interactions",
    "Apply basic traffic rules and driver behavior",
    "Format response within <think> tags using 1-2 sentences",
];

const FOCUS_PLANNING: [&str; 4] = [
    "Assess safety and prioritize actions",
    "Evaluate decision options and trade-offs",
    "Consider alternative actions and consequences",
    "Format response within <think> tags using 2-3 sentences",
];

const FOCUS_BEHAVIOR: [&str; 4] = [
    "Analyze motion patterns, speed, and trajectories",
    "Consider environmental factors and multi-view observations",
    "Determine the underlying intent based on dynamic context",
    "Format response within <think> tags using 1-2 concise sentences",
];

const DRIVING_SYSTEM: &str = "You are a driving assistant. You are shown six camera views captured around the ego vehicle, in this order: front, front-left, front-right, back, back-left, back-right. Answer the question about the scene.";

const JUDGE_SYSTEM: &str = "You are an impartial grader for a driving question-answering benchmark. Compare the model answer against the ground-truth answer and rate how well it matches in meaning and completeness.";

const JUDGE_USER: &str = "Question: {question}\nGround-truth answer: {ground_truth}\nModel answer: {candidate}\n\nRate the model answer on a scale from 0 to 100, where 100 means fully equivalent to the ground truth and 0 means entirely wrong. Reply with the integer score first.";

const INSTRUCTION_REASON: &str = "First reason about the scene step by step inside <think> tags, then give your final answer inside <answer> tags.";

const INSTRUCTION_SIMPLE: &str = "Give your final answer inside <answer> tags, with no other text.";

/// Allowed sentence range for generated reasoning, per category.
pub fn sentence_budget(category: TaskCategory) -> (u32, u32) {
    match category {
        TaskCategory::Perception => (1, 1),
        TaskCategory::Prediction => (1, 2),
        TaskCategory::Planning => (2, 3),
        TaskCategory::Behavior => (1, 2),
    }
}

/// One category's rendered prompt pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub category: TaskCategory,
    /// Preamble with the category name substituted in.
    pub preamble: String,
    pub focus_lines: Vec<String>,
    pub sentence_budget: (u32, u32),
}

/// The full set of prompt texts used by generation, inference export, and
/// judging.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    preamble: String,
    focus: BTreeMap<TaskCategory, Vec<String>>,
    pub driving_system: String,
    pub judge_system: String,
    judge_user: String,
    reason_instruction: String,
    simple_instruction: String,
}

impl TemplateSet {
    /// The defaults compiled into the crate.
    pub fn embedded() -> TemplateSet {
        let mut focus = BTreeMap::new();
        focus.insert(
            TaskCategory::Perception,
            FOCUS_PERCEPTION.map(str::to_string).to_vec(),
        );
        focus.insert(
            TaskCategory::Prediction,
            FOCUS_PREDICTION.map(str::to_string).to_vec(),
        );
        focus.insert(
            TaskCategory::Planning,
            FOCUS_PLANNING.map(str::to_string).to_vec(),
        );
        focus.insert(
            TaskCategory::Behavior,
            FOCUS_BEHAVIOR.map(str::to_string).to_vec(),
        );
        TemplateSet {
            preamble: PREAMBLE.to_string(),
            focus,
            driving_system: DRIVING_SYSTEM.to_string(),
            judge_system: JUDGE_SYSTEM.to_string(),
            judge_user: JUDGE_USER.to_string(),
            reason_instruction: INSTRUCTION_REASON.to_string(),
            simple_instruction: INSTRUCTION_SIMPLE.to_string(),
        }
    }

    /// Embedded defaults with per-file overrides from `dir`:
    /// `preamble.txt`, `focus_<category>.txt` (one focus line per line),
    /// `system.txt`, `judge_system.txt`, `judge_user.txt`,
    /// `instruction_reason.txt`, `instruction_simple.txt`. Absent files
    /// keep their defaults.
    pub fn load_dir(dir: &Path) -> Result<TemplateSet> {
        let mut set = TemplateSet::embedded();
        let read = |name: &str| -> Result<Option<String>> {
            let path = dir.join(name);
            if !path.is_file() {
                return Ok(None);
            }
            let text = std::fs::read_to_string(&path)?;
            let text = text.trim_end().to_string();
            if text.trim().is_empty() {
                return Err(CoreError::InvalidConfig(format!(
                    "template file '{}' is empty",
                    path.display()
                )));
            }
            Ok(Some(text))
        };

        if let Some(preamble) = read("preamble.txt")? {
            if !preamble.contains("{category}") {
                return Err(CoreError::InvalidConfig(
                    "preamble.txt must contain the {category} placeholder".to_string(),
                ));
            }
            set.preamble = preamble;
        }
        for category in TaskCategory::ALL {
            if let Some(text) = read(&format!("focus_{category}.txt"))? {
                let lines: Vec<String> = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect();
                set.focus.insert(category, lines);
            }
        }
        if let Some(text) = read("system.txt")? {
            set.driving_system = text;
        }
        if let Some(text) = read("judge_system.txt")? {
            set.judge_system = text;
        }
        if let Some(text) = read("judge_user.txt")? {
            set.judge_user = text;
        }
        if let Some(text) = read("instruction_reason.txt")? {
            set.reason_instruction = text;
        }
        if let Some(text) = read("instruction_simple.txt")? {
            set.simple_instruction = text;
        }
        Ok(set)
    }

    pub fn template_for(&self, category: TaskCategory) -> PromptTemplate {
        PromptTemplate {
            category,
            preamble: self.preamble.replace("{category}", category.name()),
            focus_lines: self.focus[&category].clone(),
            sentence_budget: sentence_budget(category),
        }
    }

    /// The system message for reasoning generation: preamble plus the
    /// category's focus lines as bullets.
    pub fn reasoning_system_text(&self, category: TaskCategory) -> String {
        let template = self.template_for(category);
        let mut out = template.preamble;
        out.push('\n');
        for line in &template.focus_lines {
            let _ = write!(out, "\n- {line}");
        }
        out
    }

    pub fn judge_user_text(&self, question: &str, ground_truth: &str, candidate: &str) -> String {
        self.judge_user
            .replace("{question}", question)
            .replace("{ground_truth}", ground_truth)
            .replace("{candidate}", candidate)
    }

    pub fn instruction(&self, variant: Variant) -> &str {
        match variant {
            Variant::Reason => &self.reason_instruction,
            Variant::Simple => &self.simple_instruction,
        }
    }
}

/// The user-message text for reasoning generation. The ground truth is
/// included on purpose: generation conditions on the known answer.
pub fn reasoning_user_text(record: &QaRecord) -> String {
    format!(
        "Question: {}\nGround truth answer: {}",
        record.question, record.gt_answer
    )
}

/// Build the two-message prompt asking the endpoint to produce a reasoning
/// chain for `record`, attaching the frame's six images in canonical order.
pub fn build_reasoning_prompt(
    record: &QaRecord,
    frame: &Frame,
    dataset_root: &Path,
    templates: &TemplateSet,
) -> Result<Vec<ChatMessage>> {
    let images = frame.resolved_views(dataset_root)?;
    Ok(vec![
        ChatMessage::system(templates.reasoning_system_text(record.category)),
        ChatMessage::user_with_images(reasoning_user_text(record), images),
    ])
}

/// Build the prompt a fine-tuned model would see at inference time: the
/// driving system prompt, the variant's format instruction, the question,
/// and the six images — and never the ground truth.
pub fn build_inference_prompt(
    record: &QaRecord,
    frame: &Frame,
    dataset_root: &Path,
    variant: Variant,
    templates: &TemplateSet,
) -> Result<Vec<ChatMessage>> {
    let images = frame.resolved_views(dataset_root)?;
    let text = format!(
        "{}\n\nQuestion: {}",
        templates.instruction(variant),
        record.question
    );
    Ok(vec![
        ChatMessage::system(templates.driving_system.clone()),
        ChatMessage::user_with_images(text, images),
    ])
}

/// Parse the sentence budget stated in template text, e.g. "using 1-2
/// sentences" or "using 1 concise sentence".
pub fn stated_budget(text: &str) -> Option<(u32, u32)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"using (\d+)(?:-(\d+))?(?: concise)? sentences?").expect("budget regex")
    });
    let caps = re.captures(text)?;
    let low: u32 = caps[1].parse().ok()?;
    let high: u32 = match caps.get(2) {
        Some(m) => m.as_str().parse().ok()?,
        None => low,
    };
    Some((low, high))
}
