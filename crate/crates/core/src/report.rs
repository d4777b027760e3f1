//! Rendering evaluation results: the metric table as markdown, and the
//! run directory (`scores.json`, `report.md`, `verdicts.json`).
//!
//! Nothing here captures timestamps or machine state, so identical inputs
//! produce byte-identical outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::eval::{JudgeVerdict, MetricReport};
use crate::metrics::CorpusScores;

const MAX_LISTED: usize = 50;

fn table_row(label: &str, scores: &CorpusScores) -> String {
    let judge = match scores.judge {
        Some(j) => format!("{j:.2}"),
        None => "-".to_string(),
    };
    let bleu: Vec<String> = (0..4)
        .map(|i| {
            scores
                .bleu
                .get(i)
                .map(|b| format!("{b:.4}"))
                .unwrap_or_else(|| "-".to_string())
        })
        .collect();
    format!(
        "| {label} | {:.4} | {judge} | {:.4} | {} | {:.4} | {:.4} | {:.4} |",
        scores.accuracy,
        scores.r#match,
        bleu.join(" | "),
        scores.rouge_l,
        scores.cider,
        scores.r#final,
    )
}

fn push_id_list(out: &mut String, label: &str, ids: &[String]) {
    if ids.is_empty() {
        return;
    }
    let shown: Vec<&str> = ids.iter().take(MAX_LISTED).map(String::as_str).collect();
    let suffix = if ids.len() > MAX_LISTED {
        format!(" … and {} more", ids.len() - MAX_LISTED)
    } else {
        String::new()
    };
    let _ = writeln!(out, "- {label} ({}): {}{suffix}", ids.len(), shown.join(", "));
}

/// Render the whole report as markdown. The table carries the overall row
/// first, then one row per category.
pub fn render_markdown(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str("# Evaluation report\n\n");
    if report.judge_enabled {
        out.push_str("Final score mode: judged\n\n");
    } else {
        out.push_str("Final score mode: no-judge (judge weight redistributed)\n\n");
    }
    let counts: Vec<String> = report
        .category_counts
        .iter()
        .map(|(c, n)| format!("{c} {n}"))
        .collect();
    let _ = writeln!(
        out,
        "Pairs scored: {} ({})\n",
        report.pair_count,
        counts.join(", ")
    );

    out.push_str(
        "| Split | Accuracy | ChatGPT | Match | Bleu_1 | Bleu_2 | Bleu_3 | Bleu_4 | ROUGE_L | CIDEr | Final Score |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    out.push_str(&table_row("overall", &report.overall));
    out.push('\n');
    for (category, scores) in &report.per_category {
        out.push_str(&table_row(category.name(), scores));
        out.push('\n');
    }
    out.push('\n');

    out.push_str("## Weights\n\n");
    let w = &report.weights_configured;
    let _ = writeln!(
        out,
        "- configured: judge {:.4}, language {:.4}, match {:.4}, accuracy {:.4}",
        w.judge, w.language, w.r#match, w.accuracy
    );
    let w = &report.weights_effective;
    let _ = writeln!(
        out,
        "- effective: judge {:.4}, language {:.4}, match {:.4}, accuracy {:.4}",
        w.judge, w.language, w.r#match, w.accuracy
    );
    out.push('\n');

    if report.closed_form.count > 0 {
        out.push_str("## Closed-form subset\n\n");
        let _ = writeln!(
            out,
            "- {} pair(s) with single-token ground truth; exact-match accuracy {:.4}",
            report.closed_form.count,
            report.closed_form.accuracy.unwrap_or(0.0)
        );
        out.push('\n');
    }

    if !report.parse_modes.is_empty() {
        out.push_str("## Prediction parse modes\n\n");
        for (mode, n) in &report.parse_modes {
            let _ = writeln!(out, "- {mode}: {n}");
        }
        out.push('\n');
    }

    if !report.missing_prediction_ids.is_empty()
        || !report.empty_output_ids.is_empty()
        || !report.unknown_prediction_ids.is_empty()
    {
        out.push_str("## Coverage gaps\n\n");
        push_id_list(&mut out, "missing predictions", &report.missing_prediction_ids);
        push_id_list(&mut out, "empty outputs", &report.empty_output_ids);
        push_id_list(&mut out, "unknown ids", &report.unknown_prediction_ids);
        out.push('\n');
    }

    if !report.findings.is_empty() {
        out.push_str("## Findings\n\n");
        for finding in report.findings.iter().take(MAX_LISTED) {
            let _ = writeln!(
                out,
                "- [{}] {} {}: {}",
                if finding.is_error() { "ERROR" } else { "WARNING" },
                finding.code,
                finding.subject,
                finding.message
            );
        }
        if report.findings.len() > MAX_LISTED {
            let _ = writeln!(out, "- … and {} more", report.findings.len() - MAX_LISTED);
        }
        out.push('\n');
    }
    out
}

/// Paths produced by [`write_run_dir`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub scores: PathBuf,
    pub report: PathBuf,
    /// Present only when the judge ran.
    pub verdicts: Option<PathBuf>,
}

/// Write a run directory: `scores.json` (the full [`MetricReport`]),
/// `report.md`, and — when the judge ran — `verdicts.json`.
pub fn write_run_dir(
    dir: &Path,
    report: &MetricReport,
    verdicts: &[JudgeVerdict],
) -> Result<RunPaths> {
    std::fs::create_dir_all(dir)?;

    let scores_path = dir.join("scores.json");
    let mut scores = serde_json::to_string_pretty(report)?;
    scores.push('\n');
    std::fs::write(&scores_path, scores)?;

    let report_path = dir.join("report.md");
    std::fs::write(&report_path, render_markdown(report))?;

    let verdicts_path = if report.judge_enabled {
        let path = dir.join("verdicts.json");
        let mut text = serde_json::to_string_pretty(verdicts)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Some(path)
    } else {
        None
    };

    Ok(RunPaths {
        scores: scores_path,
        report: report_path,
        verdicts: verdicts_path,
    })
}

/// Read back a `scores.json`, accepting either the file itself or the run
/// directory containing it.
pub fn load_scores(path: &Path) -> Result<MetricReport> {
    let file = if path.is_dir() {
        path.join("scores.json")
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(file)?;
    Ok(serde_json::from_str(&text)?)
}
