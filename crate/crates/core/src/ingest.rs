//! Loading the multi-view driving QA index into frames and QA records,
//! plus dataset-level reporting and the seeded train/eval split.
//!
//! The index is a nested JSON map:
//! `{scene_id: {"key_frames": {frame_id: {"image_paths": {...}, "QA":
//! {category: [{"Q": ..., "A": ...}]}}}}}`. Unknown keys inside entries are
//! ignored; unknown camera or category names are hard errors so typos
//! cannot silently drop data. Record identity is synthesized as
//! `scene/frame/category/ordinal` and record order is deterministic:
//! scenes and frames lexicographic, categories in canonical order,
//! ordinals as listed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Finding, Result};
use crate::model::{validate_frame, CameraView, Frame, QaRecord, TaskCategory};

#[derive(Deserialize)]
struct SceneWire {
    #[serde(default)]
    key_frames: BTreeMap<String, FrameWire>,
}

#[derive(Deserialize)]
struct FrameWire {
    #[serde(default)]
    image_paths: BTreeMap<String, String>,
    #[serde(default, rename = "QA")]
    qa: BTreeMap<String, Vec<QaWire>>,
}

#[derive(Deserialize)]
struct QaWire {
    #[serde(rename = "Q")]
    q: String,
    #[serde(rename = "A")]
    a: String,
}

/// Summary counts for a loaded dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scene_count: usize,
    pub frame_count: usize,
    pub complete_frame_count: usize,
    pub qa_count: usize,
    pub per_category: BTreeMap<TaskCategory, usize>,
    pub frames_per_scene: BTreeMap<String, usize>,
}

/// A fully loaded dataset: frames, records, counts, and any per-item
/// findings collected while loading.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Directory that image paths are relative to.
    pub root: PathBuf,
    pub frames: Vec<Frame>,
    pub records: Vec<QaRecord>,
    pub manifest: DatasetManifest,
    pub findings: Vec<Finding>,
}

impl Dataset {
    pub fn frame(&self, frame_id: &str) -> Option<&Frame> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    /// Frame lookup table; frame ids are globally unique after loading.
    pub fn frame_map(&self) -> HashMap<&str, &Frame> {
        self.frames
            .iter()
            .map(|f| (f.frame_id.as_str(), f))
            .collect()
    }
}

/// Load a dataset from `path`, which is either the index JSON file itself
/// or a directory containing `index.json`. Image paths stay relative to
/// the dataset root (the index file's directory).
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (index_path, root) = locate_index(path)?;
    let text = fs::read_to_string(&index_path)?;
    let wire: BTreeMap<String, SceneWire> =
        serde_json::from_str(&text).map_err(|e| CoreError::MalformedIndex {
            path: index_path.display().to_string(),
            detail: e.to_string(),
        })?;

    let mut frames = Vec::new();
    let mut records = Vec::new();
    let mut findings = Vec::new();
    // frame_id -> scene_id, for duplicate detection across scenes.
    let mut seen_frames: HashMap<String, String> = HashMap::new();

    for (scene_id, scene) in &wire {
        for (frame_id, fw) in &scene.key_frames {
            if let Some(other) = seen_frames.insert(frame_id.clone(), scene_id.clone()) {
                return Err(CoreError::DuplicateFrame {
                    frame_id: frame_id.clone(),
                    scene_a: other,
                    scene_b: scene_id.clone(),
                });
            }

            let mut views = BTreeMap::new();
            for (key, rel) in &fw.image_paths {
                let view =
                    CameraView::parse_name(key).ok_or_else(|| CoreError::MalformedIndex {
                        path: index_path.display().to_string(),
                        detail: format!("unknown camera key '{key}' in frame '{frame_id}'"),
                    })?;
                if rel.trim().is_empty() {
                    findings.push(Finding::warning(
                        "EMPTY_IMAGE_PATH",
                        format!("{scene_id}/{frame_id}"),
                        format!("{view} image path is empty; view treated as missing"),
                    ));
                    continue;
                }
                views.insert(view, PathBuf::from(rel));
            }
            frames.push(Frame::new(scene_id.clone(), frame_id.clone(), views));

            // Validate all category keys up front, then iterate in
            // canonical order so record order never depends on key casing.
            let mut by_category: BTreeMap<TaskCategory, &Vec<QaWire>> = BTreeMap::new();
            for (key, list) in &fw.qa {
                let cat =
                    TaskCategory::parse_name(key).ok_or_else(|| CoreError::UnknownCategory {
                        key: key.clone(),
                        context: format!("frame '{frame_id}'"),
                    })?;
                if by_category.insert(cat, list).is_some() {
                    return Err(CoreError::MalformedIndex {
                        path: index_path.display().to_string(),
                        detail: format!(
                            "frame '{frame_id}' lists category '{cat}' more than once"
                        ),
                    });
                }
            }
            for cat in TaskCategory::ALL {
                let Some(list) = by_category.get(&cat) else {
                    continue;
                };
                for (ordinal, qa) in list.iter().enumerate() {
                    let qa_id = format!("{scene_id}/{frame_id}/{cat}/{ordinal}");
                    match QaRecord::new(
                        qa_id.clone(),
                        scene_id.clone(),
                        frame_id.clone(),
                        cat,
                        &qa.q,
                        &qa.a,
                    ) {
                        Ok(rec) => records.push(rec),
                        Err(e) => findings.push(Finding::warning(
                            "EMPTY_QA",
                            qa_id,
                            format!("record skipped: {e}"),
                        )),
                    }
                }
            }
        }
    }

    if records.is_empty() {
        return Err(CoreError::EmptyDataset);
    }

    let manifest = build_manifest(&wire, &frames, &records);
    Ok(Dataset {
        root,
        frames,
        records,
        manifest,
        findings,
    })
}

fn locate_index(path: &Path) -> Result<(PathBuf, PathBuf)> {
    if path.is_dir() {
        let idx = path.join("index.json");
        if !idx.is_file() {
            return Err(CoreError::MalformedIndex {
                path: path.display().to_string(),
                detail: "no index.json in dataset directory".to_string(),
            });
        }
        Ok((idx, path.to_path_buf()))
    } else if path.is_file() {
        let root = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        Ok((path.to_path_buf(), root))
    } else {
        Err(CoreError::MalformedIndex {
            path: path.display().to_string(),
            detail: "path does not exist".to_string(),
        })
    }
}

fn build_manifest(
    wire: &BTreeMap<String, SceneWire>,
    frames: &[Frame],
    records: &[QaRecord],
) -> DatasetManifest {
    let mut per_category: BTreeMap<TaskCategory, usize> =
        TaskCategory::ALL.into_iter().map(|c| (c, 0)).collect();
    for rec in records {
        *per_category.get_mut(&rec.category).expect("all categories") += 1;
    }
    let frames_per_scene = wire
        .iter()
        .map(|(scene, s)| (scene.clone(), s.key_frames.len()))
        .collect();
    DatasetManifest {
        scene_count: wire.len(),
        frame_count: frames.len(),
        complete_frame_count: frames.iter().filter(|f| f.is_complete()).count(),
        qa_count: records.len(),
        per_category,
        frames_per_scene,
    }
}

/// Frame-level integrity checks over a loaded dataset: missing views and
/// dangling image files, plus anything recorded at load time.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Finding> {
    let mut findings = dataset.findings.clone();
    for frame in &dataset.frames {
        findings.extend(validate_frame(frame, &dataset.root));
    }
    findings
}

/// Human-readable dataset summary.
pub fn dataset_report(manifest: &DatasetManifest, findings: &[Finding]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Dataset report");
    let _ = writeln!(out, "  scenes:          {}", manifest.scene_count);
    let _ = writeln!(
        out,
        "  frames:          {} ({} complete)",
        manifest.frame_count, manifest.complete_frame_count
    );
    let _ = writeln!(out, "  qa records:      {}", manifest.qa_count);
    for (cat, count) in &manifest.per_category {
        let _ = writeln!(out, "    {:<14} {}", format!("{cat}:"), count);
    }
    let _ = writeln!(out, "  frames per scene:");
    for (scene, count) in &manifest.frames_per_scene {
        let _ = writeln!(out, "    {scene}: {count}");
    }
    if findings.is_empty() {
        let _ = writeln!(out, "  findings:        none");
    } else {
        let errors = findings.iter().filter(|f| f.is_error()).count();
        let _ = writeln!(
            out,
            "  findings:        {} ({} errors, {} warnings)",
            findings.len(),
            errors,
            findings.len() - errors
        );
        for f in findings {
            let _ = writeln!(
                out,
                "    [{}] {} {}: {}",
                match f.severity {
                    crate::error::Severity::Error => "error",
                    crate::error::Severity::Warning => "warn",
                },
                f.code,
                f.subject,
                f.message
            );
        }
    }
    out
}

/// A frame-disjoint train/eval partition of the QA records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<QaRecord>,
    pub eval: Vec<QaRecord>,
    pub train_frames: Vec<String>,
    pub eval_frames: Vec<String>,
}

/// Split records by frame, deterministically for a given seed.
///
/// All records of one frame land on the same side, so near-duplicate QA
/// about the same moment can never leak across the boundary. The train
/// side receives `round(frames * train_fraction)` frames, clamped so both
/// sides stay non-empty; record order within each side follows the input.
pub fn split_dataset(records: &[QaRecord], train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CoreError::InvalidFraction {
            value: train_fraction,
        });
    }
    if records.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let unique: BTreeSet<&str> = records.iter().map(|r| r.frame_id.as_str()).collect();
    let mut frame_ids: Vec<&str> = unique.into_iter().collect();
    if frame_ids.len() < 2 {
        return Err(CoreError::InvalidConfig(format!(
            "cannot split {} frame(s) into two non-empty sides",
            frame_ids.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    frame_ids.shuffle(&mut rng);
    let n = frame_ids.len();
    let k = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let train_set: HashSet<&str> = frame_ids[..k].iter().copied().collect();

    let (train, eval): (Vec<QaRecord>, Vec<QaRecord>) = records
        .iter()
        .cloned()
        .partition(|r| train_set.contains(r.frame_id.as_str()));

    let mut train_frames: Vec<String> = frame_ids[..k].iter().map(|s| s.to_string()).collect();
    let mut eval_frames: Vec<String> = frame_ids[k..].iter().map(|s| s.to_string()).collect();
    train_frames.sort();
    eval_frames.sort();
    Ok(DatasetSplit {
        train,
        eval,
        train_frames,
        eval_frames,
    })
}
