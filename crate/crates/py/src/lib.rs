//! Python bindings for the reasondrive toolkit.
//!
//! Exposes the dataset loader, the structured-output codec, and the text
//! metrics as a `reasondrive_py` extension module. Structured results
//! cross the boundary as plain dicts/lists (via their JSON form), so the
//! Python side needs no wrapper classes beyond [`Dataset`].

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde_json::Value;

use reasondrive_core::error::CoreError;
use reasondrive_core::eval::read_predictions;
use reasondrive_core::ingest::{dataset_report, load_dataset, split_dataset};
use reasondrive_core::metrics::{corpus_scores, EvalPair};
use reasondrive_core::model::{canonical_view_order, TaskCategory};
use reasondrive_core::{config::ToolkitConfig, metrics, model, tags};

fn core_err(e: CoreError) -> PyErr {
    PyValueError::new_err(format!("[{}] {e}", e.code()))
}

fn json_to_py(py: Python<'_>, value: &Value) -> PyResult<Py<PyAny>> {
    match value {
        Value::Null => Ok(py.None()),
        Value::Bool(b) => b.into_py_any(py),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py_any(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py_any(py)
            }
        }
        Value::String(s) => s.into_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py_any(py)
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (key, item) in map {
                dict.set_item(key, json_to_py(py, item)?)?;
            }
            dict.into_py_any(py)
        }
    }
}

fn serialize_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let json = serde_json::to_value(value)
        .map_err(|e| PyValueError::new_err(format!("serialization failed: {e}")))?;
    json_to_py(py, &json)
}

fn parse_category(name: &str) -> PyResult<TaskCategory> {
    TaskCategory::parse_name(name).ok_or_else(|| {
        PyValueError::new_err(format!(
            "unknown category '{name}' (expected perception, prediction, planning, or behavior)"
        ))
    })
}

/// The six camera keys in canonical order (front row first, back row last).
#[pyfunction]
fn canonical_views() -> Vec<&'static str> {
    canonical_view_order().map(|v| v.cam_key()).to_vec()
}

/// Metric tokenization: lowercase, whitespace split, terminal `.,!?`
/// stripped per token.
#[pyfunction]
fn normalize(text: &str) -> Vec<String> {
    metrics::normalize(text)
}

#[pyfunction]
fn split_sentences(text: &str) -> Vec<String> {
    model::split_sentences(text)
}

/// Parse a `<think>/<answer>` reply into a dict with keys `think`,
/// `answer`, `tags_in_answer`, `parse_mode`, and `warnings`.
#[pyfunction]
fn parse_structured(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    let parsed = tags::parse_structured(text).map_err(core_err)?;
    serialize_to_py(py, &parsed)
}

/// Wrap an answer (and optional reasoning) in protocol markers.
#[pyfunction]
#[pyo3(signature = (answer, think=None))]
fn emit_structured(answer: &str, think: Option<&str>) -> PyResult<String> {
    tags::emit_structured(think, answer).map_err(core_err)
}

/// All `<cN>` object tags in `text`, first occurrence per id.
#[pyfunction]
fn extract_tags(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    serialize_to_py(py, &tags::extract_tags(text))
}

/// `(min, max)` reasoning-sentence budget for a category.
#[pyfunction]
fn sentence_budget(category: &str) -> PyResult<(u32, u32)> {
    Ok(reasondrive_core::prompts::sentence_budget(parse_category(
        category,
    )?))
}

fn pair_from_py(item: &Bound<'_, PyAny>, index: usize) -> PyResult<EvalPair> {
    let field = |name: &str| -> PyResult<String> {
        item.get_item(name)
            .map_err(|_| {
                PyValueError::new_err(format!("pair {index}: missing required key '{name}'"))
            })?
            .extract()
    };
    let category = match item.get_item("category") {
        Ok(v) => parse_category(&v.extract::<String>()?)?,
        Err(_) => TaskCategory::Perception,
    };
    let qa_id = match item.get_item("id") {
        Ok(v) => v.extract()?,
        Err(_) => format!("pair-{index}"),
    };
    let references: Vec<String> = match item.get_item("references") {
        Ok(v) => v.extract()?,
        Err(_) => vec![field("reference")?],
    };
    let pair = EvalPair::new(qa_id, category, field("candidate")?, references)
        .map_err(core_err)?;
    Ok(match item.get_item("question") {
        Ok(v) => pair.with_question(v.extract::<String>()?),
        Err(_) => pair,
    })
}

/// Score candidate/reference pairs with the full metric suite (judge off).
///
/// Each pair is a dict with `candidate` and `references` (or a single
/// `reference`), plus optional `id`, `category`, and `question` keys.
/// Returns the corpus score row as a dict.
#[pyfunction]
fn score_pairs(py: Python<'_>, pairs: Vec<Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
    let pairs: Vec<EvalPair> = pairs
        .iter()
        .enumerate()
        .map(|(i, item)| pair_from_py(item, i))
        .collect::<PyResult<_>>()?;
    let scores = corpus_scores(&pairs, &model::MetricConfig::default(), None).map_err(core_err)?;
    serialize_to_py(py, &scores)
}

/// Evaluate a predictions JSONL file against a dataset (judge off).
///
/// Returns the full score report as a dict — the same structure the CLI
/// writes to `scores.json`.
#[pyfunction]
#[pyo3(signature = (data_root, predictions, config_path=None))]
fn evaluate_predictions(
    py: Python<'_>,
    data_root: PathBuf,
    predictions: PathBuf,
    config_path: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let dataset = load_dataset(&data_root).map_err(core_err)?;
    let entries = read_predictions(&predictions).map_err(core_err)?;
    let config = match config_path {
        Some(path) => ToolkitConfig::load(&path).map_err(core_err)?,
        None => ToolkitConfig::default(),
    };
    let evaluation =
        reasondrive_core::eval::evaluate(&dataset.records, &entries, &config, None)
            .map_err(core_err)?;
    serialize_to_py(py, &evaluation.report)
}

/// A loaded QA dataset: frames, records, manifest, and loader findings.
#[pyclass(frozen, module = "reasondrive_py")]
struct Dataset {
    inner: reasondrive_core::ingest::Dataset,
}

/// Load a dataset from an index JSON file or the directory containing it.
#[pyfunction(name = "load_dataset")]
fn load_dataset_py(path: PathBuf) -> PyResult<Dataset> {
    let inner = load_dataset(&path).map_err(core_err)?;
    Ok(Dataset { inner })
}

#[pymethods]
impl Dataset {
    #[getter]
    fn qa_count(&self) -> usize {
        self.inner.manifest.qa_count
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.manifest.frame_count
    }

    #[getter]
    fn scene_count(&self) -> usize {
        self.inner.manifest.scene_count
    }

    #[getter]
    fn root(&self) -> PathBuf {
        self.inner.root.clone()
    }

    fn manifest(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        serialize_to_py(py, &self.inner.manifest)
    }

    /// All QA records as dicts.
    fn records(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        serialize_to_py(py, &self.inner.records)
    }

    /// Findings collected while loading (missing views, empty QA, ...).
    fn findings(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        serialize_to_py(py, &self.inner.findings)
    }

    /// Human-readable manifest-plus-findings summary.
    fn report(&self) -> String {
        dataset_report(&self.inner.manifest, &self.inner.findings)
    }

    /// Frame-disjoint train/eval split; returns a dict with `train`,
    /// `eval`, `train_frames`, and `eval_frames`.
    #[pyo3(signature = (train_fraction=0.9, seed=7))]
    fn split(&self, py: Python<'_>, train_fraction: f64, seed: u64) -> PyResult<Py<PyAny>> {
        let split =
            split_dataset(&self.inner.records, train_fraction, seed).map_err(core_err)?;
        serialize_to_py(py, &split)
    }

    fn __len__(&self) -> usize {
        self.inner.manifest.qa_count
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(scenes={}, frames={}, qa={})",
            self.inner.manifest.scene_count,
            self.inner.manifest.frame_count,
            self.inner.manifest.qa_count
        )
    }
}

#[pymodule]
fn reasondrive_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Dataset>()?;
    m.add_function(wrap_pyfunction!(canonical_views, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(split_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(parse_structured, m)?)?;
    m.add_function(wrap_pyfunction!(emit_structured, m)?)?;
    m.add_function(wrap_pyfunction!(extract_tags, m)?)?;
    m.add_function(wrap_pyfunction!(sentence_budget, m)?)?;
    m.add_function(wrap_pyfunction!(score_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_predictions, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset_py, m)?)?;
    Ok(())
}
