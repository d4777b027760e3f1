//! Reasoning-chain generation and training-set assembly.
//!
//! [`ChainGenerator`] drives the completion gateway: one request per QA
//! record, with malformed replies regenerated up to a configurable number
//! of times. Each retry appends a corrective reminder message, which also
//! changes the request's cache key so the retry is not answered from the
//! cache. Usable chains are then combined with the source records into
//! [`TrainingExample`]s and exported as conversation-format JSONL.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ToolkitConfig;
use crate::error::{CoreError, Finding, Result};
use crate::gateway::{ChatMessage, CompletionRequest, Gateway};
use crate::model::{
    ExampleMeta, Frame, QaRecord, ReasoningChain, TaskCategory, TrainingExample, Variant,
};
use crate::prompts::{build_reasoning_prompt, sentence_budget, TemplateSet};
use crate::tags::{emit_structured, parse_structured};

/// How a record's generation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStatus {
    /// Usable chain on the first attempt.
    Ok,
    /// Usable chain after one or more regenerations.
    RetriedOk,
    /// No usable chain; see the findings.
    Failed,
}

/// Result of generating a chain for one QA record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub qa_id: String,
    pub status: GenerationStatus,
    pub chain: Option<ReasoningChain>,
    /// Prompt attempts consumed (1 = no regeneration).
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTally {
    pub ok: usize,
    pub retried: usize,
    pub failed: usize,
}

/// Aggregate view of one generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub total: usize,
    pub ok: usize,
    pub retried: usize,
    pub failed: usize,
    pub per_category: BTreeMap<TaskCategory, CategoryTally>,
    pub failed_ids: Vec<String>,
    /// Billed tokens consumed by this run (cache hits excluded).
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Generates reasoning chains for QA records through a [`Gateway`].
pub struct ChainGenerator<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateSet,
    config: &'a ToolkitConfig,
    dataset_root: &'a Path,
}

impl<'a> ChainGenerator<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateSet,
        config: &'a ToolkitConfig,
        dataset_root: &'a Path,
    ) -> ChainGenerator<'a> {
        ChainGenerator {
            gateway,
            templates,
            config,
            dataset_root,
        }
    }

    fn max_attempts(&self) -> u32 {
        self.config.generation.max_regenerations + 1
    }

    /// The completion request for one record. Attempts past the first carry
    /// an extra reminder message, so their cache key differs from the
    /// original request and a fresh completion is forced.
    pub fn request_for(
        &self,
        record: &QaRecord,
        frame: &Frame,
        attempt: u32,
    ) -> Result<CompletionRequest> {
        let mut messages =
            build_reasoning_prompt(record, frame, self.dataset_root, self.templates)?;
        if attempt > 1 {
            messages.push(ChatMessage::user(format!(
                "Your previous reply could not be used. Answer again: put the \
                 step-by-step reasoning inside a single <think> block, then the \
                 final answer inside a single <answer> block. (attempt {attempt})"
            )));
        }
        CompletionRequest::new(
            &self.config.endpoint.model,
            messages,
            self.config.generation.temperature,
            self.config.generation.max_tokens,
        )
    }

    /// Try to turn a raw completion into a chain. `None` means the reply is
    /// unusable (no non-empty think block) and worth regenerating. Warnings
    /// (e.g. a think outside its sentence budget) ride along.
    fn interpret(&self, record: &QaRecord, text: &str) -> (Option<ReasoningChain>, Vec<Finding>) {
        let Ok(parsed) = parse_structured(text) else {
            return (None, Vec::new());
        };
        let think = parsed.think.as_deref().unwrap_or("").trim().to_string();
        if think.is_empty() {
            return (None, Vec::new());
        }
        let Ok(chain) = ReasoningChain::new(&think, record.category, &self.config.endpoint.model)
        else {
            return (None, Vec::new());
        };
        let mut findings = Vec::new();
        let (low, high) = sentence_budget(record.category);
        let n = chain.sentence_count as u32;
        if !(low..=high).contains(&n) {
            findings.push(Finding::warning(
                "BUDGET_MISMATCH",
                &record.qa_id,
                format!(
                    "reasoning has {n} sentence(s), outside the {low}-{high} budget for {}",
                    record.category
                ),
            ));
        }
        (Some(chain), findings)
    }

    fn failed_outcome(qa_id: &str, attempts: u32, finding: Finding) -> GenerationOutcome {
        GenerationOutcome {
            qa_id: qa_id.to_string(),
            status: GenerationStatus::Failed,
            chain: None,
            attempts,
            findings: vec![finding],
        }
    }

    fn exhausted_finding(&self, qa_id: &str) -> Finding {
        Finding::error(
            "GENERATION_FAILED",
            qa_id,
            format!(
                "no usable <think> block after {} attempt(s)",
                self.max_attempts()
            ),
        )
    }

    /// Generate one chain, waiting on the gateway inline. Gateway errors
    /// (auth, budget, exhausted retries) propagate; merely malformed replies
    /// are retried here and end in a `Failed` outcome, not an `Err`.
    pub fn generate_chain(&self, record: &QaRecord, frame: &Frame) -> Result<GenerationOutcome> {
        for attempt in 1..=self.max_attempts() {
            let request = self.request_for(record, frame, attempt)?;
            let result = self.gateway.complete(&request)?;
            let (chain, findings) = self.interpret(record, &result.text);
            if chain.is_some() {
                let status = if attempt == 1 {
                    GenerationStatus::Ok
                } else {
                    GenerationStatus::RetriedOk
                };
                return Ok(GenerationOutcome {
                    qa_id: record.qa_id.clone(),
                    status,
                    chain,
                    attempts: attempt,
                    findings,
                });
            }
        }
        Ok(Self::failed_outcome(
            &record.qa_id,
            self.max_attempts(),
            self.exhausted_finding(&record.qa_id),
        ))
    }

    /// Generate chains for every record, batching each regeneration wave
    /// through the gateway's worker pool. Unlike [`generate_chain`], gateway
    /// errors here are terminal per record (recorded as a `Failed` outcome)
    /// rather than aborting the whole run. Outcomes align with `records`.
    ///
    /// [`generate_chain`]: ChainGenerator::generate_chain
    pub fn generate_all(
        &self,
        records: &[QaRecord],
        frames: &[Frame],
    ) -> (Vec<GenerationOutcome>, GenerationSummary) {
        let frame_map: HashMap<&str, &Frame> =
            frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
        let usage_before = self.gateway.usage();

        let mut outcomes: Vec<Option<GenerationOutcome>> = Vec::with_capacity(records.len());
        outcomes.resize_with(records.len(), || None);

        let mut pending: Vec<usize> = Vec::new();
        for (i, record) in records.iter().enumerate() {
            if frame_map.contains_key(record.frame_id.as_str()) {
                pending.push(i);
            } else {
                outcomes[i] = Some(Self::failed_outcome(
                    &record.qa_id,
                    0,
                    Finding::error(
                        "MISSING_FRAME",
                        &record.qa_id,
                        format!("frame '{}' is not in the provided set", record.frame_id),
                    ),
                ));
            }
        }

        for attempt in 1..=self.max_attempts() {
            if pending.is_empty() {
                break;
            }
            let mut wave = Vec::with_capacity(pending.len());
            let mut requests = Vec::with_capacity(pending.len());
            for &i in &pending {
                let record = &records[i];
                match self.request_for(record, frame_map[record.frame_id.as_str()], attempt) {
                    Ok(request) => {
                        wave.push(i);
                        requests.push(request);
                    }
                    Err(e) => {
                        outcomes[i] = Some(Self::failed_outcome(
                            &record.qa_id,
                            attempt,
                            Finding::error(e.code(), &record.qa_id, e.to_string()),
                        ));
                    }
                }
            }
            let results = self
                .gateway
                .complete_batch(&requests, self.config.generation.max_in_flight);

            let mut next_pending = Vec::new();
            for (&i, result) in wave.iter().zip(results) {
                let record = &records[i];
                match result {
                    Ok(res) => {
                        let (chain, findings) = self.interpret(record, &res.text);
                        if chain.is_some() {
                            let status = if attempt == 1 {
                                GenerationStatus::Ok
                            } else {
                                GenerationStatus::RetriedOk
                            };
                            outcomes[i] = Some(GenerationOutcome {
                                qa_id: record.qa_id.clone(),
                                status,
                                chain,
                                attempts: attempt,
                                findings,
                            });
                        } else if attempt == self.max_attempts() {
                            outcomes[i] = Some(Self::failed_outcome(
                                &record.qa_id,
                                attempt,
                                self.exhausted_finding(&record.qa_id),
                            ));
                        } else {
                            next_pending.push(i);
                        }
                    }
                    Err(e) => {
                        outcomes[i] = Some(Self::failed_outcome(
                            &record.qa_id,
                            attempt,
                            Finding::error(e.code(), &record.qa_id, e.to_string()),
                        ));
                    }
                }
            }
            pending = next_pending;
        }

        let outcomes: Vec<GenerationOutcome> = outcomes
            .into_iter()
            .map(|o| o.expect("every record resolves to an outcome"))
            .collect();
        let usage_after = self.gateway.usage();
        let summary = summarize(
            records,
            &outcomes,
            usage_after.prompt_tokens - usage_before.prompt_tokens,
            usage_after.completion_tokens - usage_before.completion_tokens,
        );
        (outcomes, summary)
    }
}

fn summarize(
    records: &[QaRecord],
    outcomes: &[GenerationOutcome],
    prompt_tokens: u64,
    completion_tokens: u64,
) -> GenerationSummary {
    let mut summary = GenerationSummary {
        total: outcomes.len(),
        ok: 0,
        retried: 0,
        failed: 0,
        per_category: BTreeMap::new(),
        failed_ids: Vec::new(),
        prompt_tokens,
        completion_tokens,
    };
    for (record, outcome) in records.iter().zip(outcomes) {
        let tally = summary.per_category.entry(record.category).or_default();
        match outcome.status {
            GenerationStatus::Ok => {
                summary.ok += 1;
                tally.ok += 1;
            }
            GenerationStatus::RetriedOk => {
                summary.retried += 1;
                tally.retried += 1;
            }
            GenerationStatus::Failed => {
                summary.failed += 1;
                tally.failed += 1;
                summary.failed_ids.push(outcome.qa_id.clone());
            }
        }
    }
    summary
}

/// Successful chains keyed by QA id, ready for [`assemble_examples`].
pub fn chain_map(outcomes: &[GenerationOutcome]) -> BTreeMap<String, ReasoningChain> {
    outcomes
        .iter()
        .filter_map(|o| o.chain.clone().map(|c| (o.qa_id.clone(), c)))
        .collect()
}

/// Combine records, frames, and (for the reason variant) generated chains
/// into training examples, in record order. The reason variant requires a
/// chain for every record and fails with `MISSING_CHAIN` otherwise.
pub fn assemble_examples(
    records: &[QaRecord],
    frames: &[Frame],
    chains: &BTreeMap<String, ReasoningChain>,
    variant: Variant,
    templates: &TemplateSet,
) -> Result<Vec<TrainingExample>> {
    let frame_map: HashMap<&str, &Frame> =
        frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
    let system_prompt = format!(
        "{}\n\n{}",
        templates.driving_system,
        templates.instruction(variant)
    );
    let mut examples = Vec::with_capacity(records.len());
    for record in records {
        let frame = frame_map.get(record.frame_id.as_str()).ok_or_else(|| {
            CoreError::InvalidConfig(format!(
                "record '{}' references unknown frame '{}'",
                record.qa_id, record.frame_id
            ))
        })?;
        let image_paths: Vec<PathBuf> = frame
            .ordered_view_paths()?
            .into_iter()
            .map(Path::to_path_buf)
            .collect();
        let reasoning = match variant {
            Variant::Reason => Some(
                chains
                    .get(&record.qa_id)
                    .cloned()
                    .ok_or_else(|| CoreError::MissingChain {
                        qa_id: record.qa_id.clone(),
                    })?,
            ),
            Variant::Simple => None,
        };
        examples.push(TrainingExample {
            system_prompt: system_prompt.clone(),
            question: record.question.clone(),
            reasoning,
            answer: record.gt_answer.clone(),
            image_paths,
            meta: ExampleMeta {
                qa_id: record.qa_id.clone(),
                scene_id: record.scene_id.clone(),
                frame_id: record.frame_id.clone(),
                category: record.category,
            },
        });
    }
    Ok(examples)
}

/// One exported JSONL line: id, the six image paths, and a three-turn
/// conversation whose assistant turn is the marker-wrapped target.
pub fn example_json(example: &TrainingExample) -> Result<serde_json::Value> {
    let target = emit_structured(
        example.reasoning.as_ref().map(|c| c.text.as_str()),
        &example.answer,
    )?;
    Ok(serde_json::json!({
        "id": example.meta.qa_id,
        "images": example.image_paths,
        "conversations": [
            { "role": "system", "text": example.system_prompt },
            { "role": "user", "text": example.question },
            { "role": "assistant", "text": target },
        ],
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub path: PathBuf,
    pub lines: usize,
    /// SHA-256 of the file bytes; identical inputs export identically.
    pub sha256: String,
}

/// Write `examples` as one JSONL file for `variant`. Every reason example
/// must carry a chain, and simple examples must not — mixing the two is a
/// wiring bug upstream.
pub fn export_training_file(
    examples: &[TrainingExample],
    variant: Variant,
    path: &Path,
) -> Result<ExportSummary> {
    let mut buffer = Vec::new();
    for example in examples {
        match (variant, &example.reasoning) {
            (Variant::Reason, None) => {
                return Err(CoreError::MissingChain {
                    qa_id: example.meta.qa_id.clone(),
                })
            }
            (Variant::Simple, Some(_)) => {
                return Err(CoreError::InvalidConfig(format!(
                    "simple export got a reasoning chain for '{}'",
                    example.meta.qa_id
                )))
            }
            _ => {}
        }
        serde_json::to_writer(&mut buffer, &example_json(example)?)?;
        buffer.push(b'\n');
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buffer)?;
    Ok(ExportSummary {
        path: path.to_path_buf(),
        lines: examples.len(),
        sha256: hex::encode(Sha256::digest(&buffer)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_mock_responder;
    use crate::gateway::{Gateway, MockReply, MockTransport};
    use crate::ingest::load_dataset;
    use std::path::PathBuf;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    fn fixture() -> crate::ingest::Dataset {
        let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini");
        load_dataset(&root).unwrap()
    }

    fn mock_gateway(transport: Arc<MockTransport>, config: &ToolkitConfig) -> Gateway {
        Gateway::new(transport, config.gateway_config())
    }

    #[test]
    fn generate_all_succeeds_on_first_attempt_with_sane_replies() {
        let ds = fixture();
        let config = ToolkitConfig::default();
        let templates = TemplateSet::embedded();
        let mock = Arc::new(MockTransport::with_responder(default_mock_responder));
        let gateway = mock_gateway(Arc::clone(&mock), &config);
        let generator = ChainGenerator::new(&gateway, &templates, &config, &ds.root);

        let (outcomes, summary) = generator.generate_all(&ds.records, &ds.frames);
        assert_eq!(outcomes.len(), ds.records.len());
        for (record, outcome) in ds.records.iter().zip(&outcomes) {
            assert_eq!(outcome.qa_id, record.qa_id);
            assert_eq!(outcome.status, GenerationStatus::Ok);
            assert_eq!(outcome.attempts, 1);
            let chain = outcome.chain.as_ref().expect("chain present");
            assert_eq!(chain.category, record.category);
            assert!(outcome.findings.is_empty(), "{:?}", outcome.findings);
        }
        assert_eq!(summary.total, 12);
        assert_eq!(summary.ok, 12);
        assert_eq!(summary.failed, 0);
        assert_eq!(summary.per_category.len(), 4);
        assert!(summary.per_category.values().all(|t| t.ok == 3));
        assert_eq!(mock.calls(), 12);
        assert!(summary.completion_tokens > 0);
    }

    #[test]
    fn malformed_reply_is_regenerated_with_a_nudge_message() {
        let ds = fixture();
        let config = ToolkitConfig::default();
        let templates = TemplateSet::embedded();
        let seen: Arc<Mutex<Vec<usize>>> = Arc::new(Mutex::new(Vec::new()));
        let seen_in = Arc::clone(&seen);
        let calls = AtomicUsize::new(0);
        let mock = Arc::new(MockTransport::with_responder(move |req| {
            seen_in.lock().unwrap().push(req.messages.len());
            if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                MockReply::Text("nothing structured here".to_string())
            } else {
                MockReply::Text("<think>A cue is noted.</think>\n<answer>Yes.</answer>".to_string())
            }
        }));
        let gateway = mock_gateway(Arc::clone(&mock), &config);
        let generator = ChainGenerator::new(&gateway, &templates, &config, &ds.root);

        let records = &ds.records[..1];
        let (outcomes, summary) = generator.generate_all(records, &ds.frames);
        assert_eq!(outcomes[0].status, GenerationStatus::RetriedOk);
        assert_eq!(outcomes[0].attempts, 2);
        assert_eq!(outcomes[0].chain.as_ref().unwrap().text, "A cue is noted.");
        assert_eq!(summary.retried, 1);
        // The second request carried the extra reminder message.
        assert_eq!(*seen.lock().unwrap(), vec![2, 3]);

        // The nudge changes the request key, so the retry cannot be
        // answered by a cache entry for the original prompt.
        let frame = ds.frame(&records[0].frame_id).unwrap();
        let first = generator.request_for(&records[0], frame, 1).unwrap();
        let second = generator.request_for(&records[0], frame, 2).unwrap();
        assert_ne!(first.request_key, second.request_key);
    }

    #[test]
    fn persistent_garbage_exhausts_attempts_and_fails() {
        let ds = fixture();
        let config = ToolkitConfig::default();
        let templates = TemplateSet::embedded();
        let mock = Arc::new(MockTransport::fixed("no markers at all"));
        let gateway = mock_gateway(Arc::clone(&mock), &config);
        let generator = ChainGenerator::new(&gateway, &templates, &config, &ds.root);

        let records = &ds.records[..1];
        let (outcomes, summary) = generator.generate_all(records, &ds.frames);
        assert_eq!(outcomes[0].status, GenerationStatus::Failed);
        assert_eq!(outcomes[0].attempts, 3);
        assert!(outcomes[0].chain.is_none());
        assert_eq!(outcomes[0].findings.len(), 1);
        assert_eq!(outcomes[0].findings[0].code, "GENERATION_FAILED");
        assert!(outcomes[0].findings[0].is_error());
        assert_eq!(summary.failed_ids, vec![records[0].qa_id.clone()]);
        assert_eq!(mock.calls(), 3);
    }

    #[test]
    fn gateway_errors_are_terminal_per_record_in_batch_mode() {
        let ds = fixture();
        let config = ToolkitConfig::default();
        let templates = TemplateSet::embedded();
        // A second, good reply is scripted; it must never be requested.
        let mock = Arc::new(MockTransport::scripted(vec![
            MockReply::Status(404, "not found".to_string()),
            MockReply::Text("<think>Fine.</think><answer>ok</answer>".to_string()),
        ]));
        let gateway = mock_gateway(Arc::clone(&mock), &config);
        let generator = ChainGenerator::new(&gateway, &templates, &config, &ds.root);

        let (outcomes, summary) = generator.generate_all(&ds.records[..1], &ds.frames);
        assert_eq!(outcomes[0].status, GenerationStatus::Failed);
        assert!(outcomes[0].findings[0].is_error());
        assert_eq!(summary.failed, 1);
        assert_eq!(mock.calls(), 1, "no regeneration after a gateway error");
    }

    #[test]
    fn generate_chain_propagates_gateway_errors() {
        let ds = fixture();
        let config = ToolkitConfig::default();
        let templates = TemplateSet::embedded();
        let mock = Arc::new(MockTransport::scripted(vec![MockReply::Status(
            404,
            "not found".to_string(),
        )]));
        let gateway = mock_gateway(mock, &config);
        let generator = ChainGenerator::new(&gateway, &templates, &config, &ds.root);

        let record = &ds.records[0];
        let frame = ds.frame(&record.frame_id).unwrap();
        assert!(generator.generate_chain(record, frame).is_err());

        // Content failures, by contrast, end in a Failed outcome, not Err.
        let mock = Arc::new(MockTransport::fixed("garbage"));
        let gateway = mock_gateway(mock, &config);
        let generator = ChainGenerator::new(&gateway, &templates, &config, &ds.root);
        let outcome = generator.generate_chain(record, frame).unwrap();
        assert_eq!(outcome.status, GenerationStatus::Failed);
    }

    #[test]
    fn over_budget_chains_are_kept_with_a_warning() {
        let ds = fixture();
        let config = ToolkitConfig::default();
        let templates = TemplateSet::embedded();
        let mock = Arc::new(MockTransport::fixed(
            "<think>One. Two. Three. Four. Five.</think><answer>ok</answer>",
        ));
        let gateway = mock_gateway(mock, &config);
        let generator = ChainGenerator::new(&gateway, &templates, &config, &ds.root);

        let record = &ds.records[0]; // perception: budget 1-1
        let frame = ds.frame(&record.frame_id).unwrap();
        let outcome = generator.generate_chain(record, frame).unwrap();
        assert_eq!(outcome.status, GenerationStatus::Ok);
        assert_eq!(outcome.chain.as_ref().unwrap().sentence_count, 5);
        assert_eq!(outcome.findings.len(), 1);
        assert_eq!(outcome.findings[0].code, "BUDGET_MISMATCH");
        assert!(!outcome.findings[0].is_error());
    }

    #[test]
    fn warm_cache_rerun_makes_no_new_calls() {
        let ds = fixture();
        let cache = tempfile::tempdir().unwrap();
        let mut config = ToolkitConfig::default();
        config.endpoint.cache_dir = Some(cache.path().to_path_buf());
        let templates = TemplateSet::embedded();
        let mock = Arc::new(MockTransport::with_responder(default_mock_responder));

        let gateway = mock_gateway(Arc::clone(&mock), &config);
        let generator = ChainGenerator::new(&gateway, &templates, &config, &ds.root);
        let (first, _) = generator.generate_all(&ds.records, &ds.frames);
        assert_eq!(mock.calls(), 12);

        // Fresh gateway over the same cache dir: everything replays.
        let gateway = mock_gateway(Arc::clone(&mock), &config);
        let generator = ChainGenerator::new(&gateway, &templates, &config, &ds.root);
        let (second, summary) = generator.generate_all(&ds.records, &ds.frames);
        assert_eq!(mock.calls(), 12, "warm cache must not hit the transport");
        assert_eq!(first, second);
        assert_eq!(summary.prompt_tokens + summary.completion_tokens, 0);
    }

    fn chains_for(ds: &crate::ingest::Dataset) -> BTreeMap<String, ReasoningChain> {
        ds.records
            .iter()
            .map(|r| {
                (
                    r.qa_id.clone(),
                    ReasoningChain::new("The scene is reviewed.", r.category, "m").unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn assemble_builds_ordered_examples_for_both_variants() {
        let ds = fixture();
        let templates = TemplateSet::embedded();
        let chains = chains_for(&ds);

        let reason =
            assemble_examples(&ds.records, &ds.frames, &chains, Variant::Reason, &templates)
                .unwrap();
        assert_eq!(reason.len(), 12);
        for (record, ex) in ds.records.iter().zip(&reason) {
            assert_eq!(ex.meta.qa_id, record.qa_id);
            assert_eq!(ex.question, record.question);
            assert_eq!(ex.answer, record.gt_answer);
            assert!(ex.reasoning.is_some());
            assert_eq!(ex.image_paths.len(), 6);
            assert!(ex.image_paths[0].to_string_lossy().contains("CAM_FRONT.jpg"));
            assert!(ex.system_prompt.contains("<think>"));
        }

        let empty = BTreeMap::new();
        let simple =
            assemble_examples(&ds.records, &ds.frames, &empty, Variant::Simple, &templates)
                .unwrap();
        assert!(simple.iter().all(|ex| ex.reasoning.is_none()));
        assert!(simple[0].system_prompt.contains("<answer>"));
        assert!(!simple[0].system_prompt.contains("<think>"));
    }

    #[test]
    fn assemble_reason_without_a_chain_names_the_record() {
        let ds = fixture();
        let templates = TemplateSet::embedded();
        let mut chains = chains_for(&ds);
        let removed = ds.records[5].qa_id.clone();
        chains.remove(&removed);
        let err =
            assemble_examples(&ds.records, &ds.frames, &chains, Variant::Reason, &templates)
                .unwrap_err();
        assert_eq!(err.code(), "MISSING_CHAIN");
        assert!(err.to_string().contains(&removed));
    }

    #[test]
    fn export_writes_conversation_jsonl_deterministically() {
        let ds = fixture();
        let templates = TemplateSet::embedded();
        let chains = chains_for(&ds);
        let dir = tempfile::tempdir().unwrap();

        let reason =
            assemble_examples(&ds.records, &ds.frames, &chains, Variant::Reason, &templates)
                .unwrap();
        let path = dir.path().join("train_reason.jsonl");
        let summary = export_training_file(&reason, Variant::Reason, &path).unwrap();
        assert_eq!(summary.lines, 12);

        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 12);
        for (record, line) in ds.records.iter().zip(&lines) {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["id"], record.qa_id.as_str());
            assert_eq!(v["images"].as_array().unwrap().len(), 6);
            let conv = v["conversations"].as_array().unwrap();
            assert_eq!(conv.len(), 3);
            assert_eq!(conv[0]["role"], "system");
            assert_eq!(conv[1]["role"], "user");
            assert_eq!(conv[1]["text"], record.question.as_str());
            assert_eq!(conv[2]["role"], "assistant");
            let target = conv[2]["text"].as_str().unwrap();
            assert!(target.starts_with("<think>"));
            assert!(target.contains(&format!("<answer>{}</answer>", record.gt_answer)));
        }

        // Re-export is byte-identical.
        let again = export_training_file(&reason, Variant::Reason, &path).unwrap();
        assert_eq!(again.sha256, summary.sha256);

        // Simple targets carry only the answer block.
        let simple = assemble_examples(
            &ds.records,
            &ds.frames,
            &BTreeMap::new(),
            Variant::Simple,
            &templates,
        )
        .unwrap();
        let simple_path = dir.path().join("train_simple.jsonl");
        export_training_file(&simple, Variant::Simple, &simple_path).unwrap();
        let first_line = std::fs::read_to_string(&simple_path)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        let v: serde_json::Value = serde_json::from_str(&first_line).unwrap();
        let target = v["conversations"][2]["text"].as_str().unwrap();
        assert!(!target.contains("<think>"));
        assert!(target.starts_with("<answer>"));
    }

    #[test]
    fn export_rejects_variant_mismatches() {
        let ds = fixture();
        let templates = TemplateSet::embedded();
        let chains = chains_for(&ds);
        let dir = tempfile::tempdir().unwrap();

        let mut reason =
            assemble_examples(&ds.records, &ds.frames, &chains, Variant::Reason, &templates)
                .unwrap();
        reason[3].reasoning = None;
        let err = export_training_file(&reason, Variant::Reason, &dir.path().join("r.jsonl"))
            .unwrap_err();
        assert_eq!(err.code(), "MISSING_CHAIN");

        let simple = assemble_examples(
            &ds.records,
            &ds.frames,
            &chains,
            Variant::Reason,
            &templates,
        )
        .unwrap();
        let err = export_training_file(&simple, Variant::Simple, &dir.path().join("s.jsonl"))
            .unwrap_err();
        assert_eq!(err.code(), "INVALID_CONFIG");
    }

    #[test]
    fn outcome_serde_round_trips_for_the_chains_file() {
        let outcome = GenerationOutcome {
            qa_id: "scene/frame/perception/0".to_string(),
            status: GenerationStatus::RetriedOk,
            chain: Some(
                ReasoningChain::new("A cue is noted.", TaskCategory::Perception, "m").unwrap(),
            ),
            attempts: 2,
            findings: vec![Finding::warning("BUDGET_MISMATCH", "x", "msg")],
        };
        let line = serde_json::to_string(&outcome).unwrap();
        assert!(line.contains("\"retried_ok\""));
        let back: GenerationOutcome = serde_json::from_str(&line).unwrap();
        assert_eq!(back, outcome);
    }
}
