//! Prediction loading, LLM judging, and end-to-end evaluation.
//!
//! `eval` turns a predictions JSONL plus the matching QA records into a
//! [`MetricReport`]: corpus metrics overall and per category, bookkeeping
//! about how predictions parsed, and the blended final score. The optional
//! judge scores each pair 0..100 through the gateway at temperature 0;
//! unparseable judge replies are retried with a nudge and bottom out at 0
//! with a finding, never an error.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::config::ToolkitConfig;
use crate::error::{CoreError, Finding, Result};
use crate::gateway::{ChatMessage, CompletionRequest, Gateway};
use crate::metrics::{self, corpus_scores, effective_weights, CorpusScores, EvalPair};
use crate::model::{FinalWeights, MetricConfig, QaRecord, TaskCategory};
use crate::prompts::TemplateSet;
use crate::tags::parse_structured;

/// One line of a predictions file: `{"id": ..., "output": ...}`. Extra
/// fields are tolerated and ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub id: String,
    pub output: String,
}

/// Read a predictions JSONL file. Blank lines are skipped; a malformed
/// line or a duplicated id is an error naming the 1-based line number.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionEntry>> {
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let entry: PredictionEntry =
            serde_json::from_str(line).map_err(|e| CoreError::MalformedPredictions {
                line: idx + 1,
                detail: e.to_string(),
            })?;
        if !seen.insert(entry.id.clone()) {
            return Err(CoreError::MalformedPredictions {
                line: idx + 1,
                detail: format!("duplicate id '{}'", entry.id),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Predictions joined against records, ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPredictions {
    /// One pair per record, in record order. Records without a usable
    /// prediction get an empty candidate (scoring zero) rather than being
    /// dropped, so coverage gaps hurt the score instead of hiding.
    pub pairs: Vec<EvalPair>,
    /// How the parsed outputs decomposed, keyed by parse-mode name.
    pub parse_modes: BTreeMap<String, usize>,
    /// Prediction ids that match no record, in file order.
    pub unknown_ids: Vec<String>,
    /// Records with no prediction line, in record order.
    pub missing_ids: Vec<String>,
    /// Predictions whose output was blank.
    pub empty_output_ids: Vec<String>,
    pub findings: Vec<Finding>,
}

/// Join `entries` to `records` by qa id and parse each output through the
/// marker protocol.
pub fn pair_predictions(
    records: &[QaRecord],
    entries: &[PredictionEntry],
) -> Result<LoadedPredictions> {
    let by_id: HashMap<&str, &PredictionEntry> =
        entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let known: HashSet<&str> = records.iter().map(|r| r.qa_id.as_str()).collect();

    let mut loaded = LoadedPredictions {
        pairs: Vec::with_capacity(records.len()),
        parse_modes: BTreeMap::new(),
        unknown_ids: Vec::new(),
        missing_ids: Vec::new(),
        empty_output_ids: Vec::new(),
        findings: Vec::new(),
    };

    for entry in entries {
        if !known.contains(entry.id.as_str()) {
            loaded.unknown_ids.push(entry.id.clone());
            loaded.findings.push(Finding::warning(
                "UNKNOWN_PREDICTION_ID",
                &entry.id,
                "prediction id matches no record; excluded from scoring",
            ));
        }
    }

    for record in records {
        let candidate = match by_id.get(record.qa_id.as_str()) {
            None => {
                loaded.missing_ids.push(record.qa_id.clone());
                loaded.findings.push(Finding::warning(
                    "MISSING_PREDICTION",
                    &record.qa_id,
                    "no prediction for this record; scored as empty",
                ));
                String::new()
            }
            Some(entry) if entry.output.trim().is_empty() => {
                loaded.empty_output_ids.push(record.qa_id.clone());
                loaded.findings.push(Finding::warning(
                    "EMPTY_OUTPUT",
                    &record.qa_id,
                    "prediction output is blank; scored as empty",
                ));
                String::new()
            }
            Some(entry) => {
                let parsed = parse_structured(&entry.output)?;
                *loaded
                    .parse_modes
                    .entry(parsed.parse_mode.name().to_string())
                    .or_insert(0) += 1;
                for warning in &parsed.warnings {
                    loaded.findings.push(Finding::warning(
                        warning,
                        &record.qa_id,
                        "prediction output parsed with a warning",
                    ));
                }
                parsed.answer
            }
        };
        loaded.pairs.push(
            EvalPair::new(
                &record.qa_id,
                record.category,
                candidate,
                vec![record.gt_answer.clone()],
            )?
            .with_question(&record.question),
        );
    }
    Ok(loaded)
}

/// Convenience: read + join in one step.
pub fn load_predictions(path: &Path, records: &[QaRecord]) -> Result<LoadedPredictions> {
    pair_predictions(records, &read_predictions(path)?)
}

/// One judged pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub qa_id: String,
    /// 0..=100; 0 when the judge failed or never parsed.
    pub score: u32,
    pub attempts: u32,
    /// The judge's last raw reply ("" when the gateway errored).
    pub raw: String,
}

/// First integer token in the reply, accepted only if it is a valid score
/// (at most 100).
pub fn parse_judge_score(text: &str) -> Option<u32> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\d+").expect("integer regex"));
    let m = re.find(text)?;
    let value: u64 = m.as_str().parse().ok()?;
    (value <= 100).then_some(value as u32)
}

/// Judge every pair 0..100 through the gateway. Parse failures are retried
/// up to `judge.max_attempts` times, each retry carrying a reminder message
/// (which also changes the cache key); pairs that never parse — and pairs
/// whose gateway call fails — score 0 with a finding. Verdicts align with
/// `pairs`.
pub fn judge_scores(
    pairs: &[EvalPair],
    gateway: &Gateway,
    templates: &TemplateSet,
    config: &ToolkitConfig,
) -> (Vec<JudgeVerdict>, Vec<Finding>) {
    let jc = &config.judge;
    let mut verdicts: Vec<Option<JudgeVerdict>> = Vec::with_capacity(pairs.len());
    verdicts.resize_with(pairs.len(), || None);
    let mut findings = Vec::new();
    let mut pending: Vec<usize> = (0..pairs.len()).collect();

    for attempt in 1..=jc.max_attempts {
        if pending.is_empty() {
            break;
        }
        let mut wave = Vec::with_capacity(pending.len());
        let mut requests = Vec::with_capacity(pending.len());
        for &i in &pending {
            let pair = &pairs[i];
            let mut messages = vec![
                ChatMessage::system(templates.judge_system.clone()),
                ChatMessage::user(templates.judge_user_text(
                    &pair.question,
                    &pair.references[0],
                    &pair.candidate,
                )),
            ];
            if attempt > 1 {
                messages.push(ChatMessage::user(format!(
                    "Reminder: reply with one integer between 0 and 100. (attempt {attempt})"
                )));
            }
            match CompletionRequest::new(&jc.model, messages, jc.temperature, jc.max_tokens) {
                Ok(request) => {
                    wave.push(i);
                    requests.push(request);
                }
                Err(e) => {
                    verdicts[i] = Some(JudgeVerdict {
                        qa_id: pair.qa_id.clone(),
                        score: 0,
                        attempts: attempt,
                        raw: String::new(),
                    });
                    findings.push(Finding::warning(
                        "JUDGE_ERROR",
                        &pair.qa_id,
                        format!("judge request failed: {e}"),
                    ));
                }
            }
        }
        let results = gateway.complete_batch(&requests, jc.max_in_flight);

        let mut next_pending = Vec::new();
        for (&i, result) in wave.iter().zip(results) {
            let pair = &pairs[i];
            match result {
                Ok(res) => match parse_judge_score(&res.text) {
                    Some(score) => {
                        verdicts[i] = Some(JudgeVerdict {
                            qa_id: pair.qa_id.clone(),
                            score,
                            attempts: attempt,
                            raw: res.text,
                        });
                    }
                    None if attempt == jc.max_attempts => {
                        verdicts[i] = Some(JudgeVerdict {
                            qa_id: pair.qa_id.clone(),
                            score: 0,
                            attempts: attempt,
                            raw: res.text,
                        });
                        findings.push(Finding::warning(
                            "JUDGE_UNPARSEABLE",
                            &pair.qa_id,
                            format!("no integer in 0..=100 after {attempt} attempt(s); scored 0"),
                        ));
                    }
                    None => next_pending.push(i),
                },
                Err(e) => {
                    verdicts[i] = Some(JudgeVerdict {
                        qa_id: pair.qa_id.clone(),
                        score: 0,
                        attempts: attempt,
                        raw: String::new(),
                    });
                    findings.push(Finding::warning(
                        "JUDGE_ERROR",
                        &pair.qa_id,
                        format!("judge call failed: {e}; scored 0"),
                    ));
                }
            }
        }
        pending = next_pending;
    }

    let verdicts = verdicts
        .into_iter()
        .map(|v| v.expect("every pair resolves to a verdict"))
        .collect();
    (verdicts, findings)
}

/// Exact-match stats over the closed-form subset (pairs whose ground truth
/// normalizes to a single token, e.g. yes/no answers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormStats {
    pub count: usize,
    /// `None` when the subset is empty.
    pub accuracy: Option<f64>,
}

/// Everything an evaluation run produces, minus the raw verdicts.
/// Deliberately timestamp-free: the same inputs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pair_count: usize,
    pub judge_enabled: bool,
    /// "judged" or "no-judge".
    pub final_score_mode: String,
    pub overall: CorpusScores,
    pub per_category: BTreeMap<TaskCategory, CorpusScores>,
    pub category_counts: BTreeMap<TaskCategory, usize>,
    pub closed_form: ClosedFormStats,
    pub parse_modes: BTreeMap<String, usize>,
    pub missing_prediction_ids: Vec<String>,
    pub empty_output_ids: Vec<String>,
    pub unknown_prediction_ids: Vec<String>,
    pub weights_configured: FinalWeights,
    pub weights_effective: FinalWeights,
    pub metric_config: MetricConfig,
    pub findings: Vec<Finding>,
}

#[derive(Debug)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Empty when the judge did not run.
    pub verdicts: Vec<JudgeVerdict>,
}

/// Score `entries` against `records`. Pass the gateway and templates to
/// enable the judge; with `None` the judge weight is redistributed over
/// the other components.
pub fn evaluate(
    records: &[QaRecord],
    entries: &[PredictionEntry],
    config: &ToolkitConfig,
    judge: Option<(&Gateway, &TemplateSet)>,
) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(CoreError::EmptyEvalSet);
    }
    let mcfg = &config.metrics;
    mcfg.validate()?;
    // Surface an impossible weight setup before any judging work.
    let weights_effective = effective_weights(&mcfg.final_weights, judge.is_some())?;

    let loaded = pair_predictions(records, entries)?;
    let pairs = &loaded.pairs;
    let mut findings = loaded.findings.clone();

    let judge_enabled = judge.is_some();
    let (verdicts, judge_mean, judge_by_category) = match judge {
        Some((gateway, templates)) => {
            let (verdicts, judge_findings) = judge_scores(pairs, gateway, templates, config);
            findings.extend(judge_findings);
            let mean = mean_score(verdicts.iter().map(|v| v.score));
            let mut grouped: BTreeMap<TaskCategory, Vec<u32>> = BTreeMap::new();
            for (pair, verdict) in pairs.iter().zip(&verdicts) {
                grouped.entry(pair.category).or_default().push(verdict.score);
            }
            let by_category: BTreeMap<TaskCategory, f64> = grouped
                .into_iter()
                .map(|(c, scores)| (c, mean_score(scores.into_iter())))
                .collect();
            (verdicts, Some(mean), by_category)
        }
        None => (Vec::new(), None, BTreeMap::new()),
    };

    let overall = corpus_scores(pairs, mcfg, judge_mean)?;
    let mut per_category = BTreeMap::new();
    let mut category_counts = BTreeMap::new();
    for category in TaskCategory::ALL {
        let subset: Vec<EvalPair> = pairs
            .iter()
            .filter(|p| p.category == category)
            .cloned()
            .collect();
        if subset.is_empty() {
            continue;
        }
        let judge_mean = judge_by_category.get(&category).copied();
        per_category.insert(category, corpus_scores(&subset, mcfg, judge_mean)?);
        category_counts.insert(category, subset.len());
    }

    let closed: Vec<EvalPair> = pairs
        .iter()
        .filter(|p| metrics::normalize_with(&p.references[0], mcfg).len() == 1)
        .cloned()
        .collect();
    let closed_form = ClosedFormStats {
        count: closed.len(),
        accuracy: if closed.is_empty() {
            None
        } else {
            Some(metrics::accuracy(&closed, mcfg)?)
        },
    };

    let report = MetricReport {
        pair_count: pairs.len(),
        judge_enabled,
        final_score_mode: if judge_enabled { "judged" } else { "no-judge" }.to_string(),
        overall,
        per_category,
        category_counts,
        closed_form,
        parse_modes: loaded.parse_modes,
        missing_prediction_ids: loaded.missing_ids,
        empty_output_ids: loaded.empty_output_ids,
        unknown_prediction_ids: loaded.unknown_ids,
        weights_configured: mcfg.final_weights,
        weights_effective,
        metric_config: mcfg.clone(),
        findings,
    };
    Ok(Evaluation { report, verdicts })
}

fn mean_score(scores: impl Iterator<Item = u32>) -> f64 {
    let mut sum = 0u64;
    let mut n = 0u64;
    for s in scores {
        sum += u64::from(s);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}
