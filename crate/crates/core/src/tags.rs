//! Codec for the structured output protocol.
//!
//! Model replies are expected to look like
//! `<think>...</think>\n<answer>...</answer>`, but real outputs drift:
//! markers go missing, blocks repeat, answers appear bare. The parser here
//! never rejects non-empty text — it degrades through fallback modes and
//! records which one was used, so downstream scoring can both use the text
//! and report how well-formed the generation was.
//!
//! Object references use `<cN>` tags, optionally extended with a camera and
//! pixel coordinates: `<c3,CAM_BACK,812.0,455.5>`.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{CameraView, ObjectTag};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// Every protocol marker; useful for asserting that parsed answers are
/// marker-free.
pub const ALL_MARKERS: [&str; 4] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

/// How a reply was recovered.
///
/// `Strict` means a complete `<think>` pair followed by a complete
/// `<answer>` pair — the canonical layout — was found. `FallbackAfterThink`
/// means the think pair was recovered but the answer was not in canonical
/// position (missing, unclosed, or placed before the think block).
/// `FallbackWhole` means no think pair existed and the answer was taken
/// from a lone answer block or from the whole text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    Strict,
    FallbackAfterThink,
    FallbackWhole,
}

impl ParseMode {
    pub fn name(self) -> &'static str {
        match self {
            ParseMode::Strict => "strict",
            ParseMode::FallbackAfterThink => "fallback_after_think",
            ParseMode::FallbackWhole => "fallback_whole",
        }
    }
}

/// Result of parsing one model reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedOutput {
    /// Inner text of the think block, if one was recovered.
    pub think: Option<String>,
    /// The answer text, trimmed, with any stray protocol markers removed.
    pub answer: String,
    /// Object tags mentioned in the answer, first occurrence per id.
    pub tags_in_answer: Vec<ObjectTag>,
    pub parse_mode: ParseMode,
    /// Non-fatal oddities, e.g. `MULTIPLE_ANSWER_BLOCKS`.
    pub warnings: Vec<String>,
}

/// Byte range of a complete `open...close` block: where it starts, the
/// inner text, and the index just past the closing marker.
struct Block {
    inner_start: usize,
    inner_end: usize,
    end: usize,
}

fn find_block(text: &str, open: &str, close: &str) -> Option<Block> {
    let open_at = text.find(open)?;
    let inner_start = open_at + open.len();
    let close_rel = text[inner_start..].find(close)?;
    Some(Block {
        inner_start,
        inner_end: inner_start + close_rel,
        end: inner_start + close_rel + close.len(),
    })
}

/// Remove every protocol marker substring. Runs to a fixpoint because a
/// removal can splice a new marker together (`<th<think>ink>`).
fn strip_markers(text: &str) -> String {
    let mut out = text.to_string();
    loop {
        let mut changed = false;
        for marker in ALL_MARKERS {
            if out.contains(marker) {
                out = out.replace(marker, "");
                changed = true;
            }
        }
        if !changed {
            return out;
        }
    }
}

fn clean_answer(text: &str) -> String {
    strip_markers(text).trim().to_string()
}

/// Parse a model reply into think/answer parts.
///
/// Never fails on non-empty input; the only error is `EMPTY_INPUT` for
/// blank text. When several complete answer blocks are present the first
/// one (in canonical position) wins and a `MULTIPLE_ANSWER_BLOCKS` warning
/// is recorded. The returned answer never contains protocol markers.
pub fn parse_structured(raw: &str) -> Result<ParsedOutput> {
    if raw.trim().is_empty() {
        return Err(CoreError::EmptyInput);
    }

    let mut warnings = Vec::new();
    let think_block = find_block(raw, THINK_OPEN, THINK_CLOSE);

    let (think, answer, parse_mode) = match think_block {
        Some(tb) => {
            let think_text = raw[tb.inner_start..tb.inner_end].trim().to_string();
            let after = &raw[tb.end..];
            match find_block(after, ANSWER_OPEN, ANSWER_CLOSE) {
                Some(ab) => {
                    if find_block(&after[ab.end..], ANSWER_OPEN, ANSWER_CLOSE).is_some() {
                        warnings.push("MULTIPLE_ANSWER_BLOCKS".to_string());
                    }
                    (
                        Some(think_text),
                        clean_answer(&after[ab.inner_start..ab.inner_end]),
                        ParseMode::Strict,
                    )
                }
                None => {
                    // No complete answer block after the think pair; salvage
                    // whatever text follows it.
                    (
                        Some(think_text),
                        clean_answer(after),
                        ParseMode::FallbackAfterThink,
                    )
                }
            }
        }
        None => match find_block(raw, ANSWER_OPEN, ANSWER_CLOSE) {
            Some(ab) => {
                if find_block(&raw[ab.end..], ANSWER_OPEN, ANSWER_CLOSE).is_some() {
                    warnings.push("MULTIPLE_ANSWER_BLOCKS".to_string());
                }
                (
                    None,
                    clean_answer(&raw[ab.inner_start..ab.inner_end]),
                    ParseMode::FallbackWhole,
                )
            }
            None => (None, clean_answer(raw), ParseMode::FallbackWhole),
        },
    };

    let tags_in_answer = extract_tags(&answer);
    Ok(ParsedOutput {
        think,
        answer,
        tags_in_answer,
        parse_mode,
        warnings,
    })
}

fn tag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // A tag candidate is anything shaped like <cDIGITS> or <cDIGITS,...>
    // without nested angle brackets.
    RE.get_or_init(|| Regex::new(r"<(c[0-9]+)((?:,[^<>]*)?)>").expect("tag regex compiles"))
}

/// Extract object tags from text, in order of first occurrence, one entry
/// per id. Malformed candidates (bad id, unknown camera, unparseable
/// coordinates, wrong field count) are skipped and logged at debug level.
pub fn extract_tags(text: &str) -> Vec<ObjectTag> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for caps in tag_regex().captures_iter(text) {
        let id = &caps[1];
        let rest = &caps[2];
        let Some(tag) = parse_tag_candidate(id, rest) else {
            log::debug!("skipping malformed object tag candidate '<{id}{rest}>'");
            continue;
        };
        if seen.insert(tag.id().to_string()) {
            out.push(tag);
        }
    }
    out
}

fn parse_tag_candidate(id: &str, rest: &str) -> Option<ObjectTag> {
    if !ObjectTag::is_valid_id(id) {
        return None;
    }
    if rest.is_empty() {
        return ObjectTag::new(id).ok();
    }
    let fields: Vec<&str> = rest
        .strip_prefix(',')?
        .split(',')
        .map(str::trim)
        .collect();
    match fields.as_slice() {
        [camera] => {
            let cam = CameraView::parse_name(camera)?;
            ObjectTag::with_location(id, cam, None).ok()
        }
        [camera, x, y] => {
            let cam = CameraView::parse_name(camera)?;
            let x: f64 = x.parse().ok()?;
            let y: f64 = y.parse().ok()?;
            if !x.is_finite() || !y.is_finite() {
                return None;
            }
            ObjectTag::with_location(id, cam, Some((x, y))).ok()
        }
        _ => None,
    }
}

/// Render think/answer into the structured wire format.
///
/// The inputs are wrapped verbatim. Fails with `EMPTY_ANSWER` if the answer
/// is blank and with `NESTED_MARKERS` if either part already contains a
/// protocol marker (which would corrupt the framing).
pub fn emit_structured(think: Option<&str>, answer: &str) -> Result<String> {
    if answer.trim().is_empty() {
        return Err(CoreError::EmptyAnswer);
    }
    if ALL_MARKERS.iter().any(|m| answer.contains(m)) {
        return Err(CoreError::NestedMarkers { segment: "answer" });
    }
    match think {
        Some(t) => {
            if ALL_MARKERS.iter().any(|m| t.contains(m)) {
                return Err(CoreError::NestedMarkers { segment: "think" });
            }
            Ok(format!(
                "{THINK_OPEN}{t}{THINK_CLOSE}\n{ANSWER_OPEN}{answer}{ANSWER_CLOSE}"
            ))
        }
        None => Ok(format!("{ANSWER_OPEN}{answer}{ANSWER_CLOSE}")),
    }
}
