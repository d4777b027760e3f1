//! `reasondrive` — dataset construction and evaluation for reasoning-
//! augmented driving QA.
//!
//! Subcommands mirror the pipeline: `ingest` validates a dataset and
//! prints its manifest, `split` produces frame-disjoint train/eval record
//! files, `gen-reason` asks the configured endpoint for reasoning chains,
//! `export` writes fine-tuning JSONL for either variant, `eval` scores a
//! predictions file, and `report` re-renders a saved `scores.json`.
//!
//! Exit codes: 0 on success, 1 on operational failure, 2 on usage errors.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use reasondrive_core::assembler::{
    assemble_examples, chain_map, export_training_file, ChainGenerator, GenerationOutcome,
};
use reasondrive_core::config::ToolkitConfig;
use reasondrive_core::eval::{evaluate, read_predictions};
use reasondrive_core::ingest::{
    dataset_report, load_dataset, split_dataset, validate_dataset, Dataset,
};
use reasondrive_core::model::{QaRecord, Variant};
use reasondrive_core::report::{load_scores, render_markdown, write_run_dir};

#[derive(Parser)]
#[command(
    name = "reasondrive",
    version,
    about = "Dataset construction and evaluation for reasoning-augmented driving QA"
)]
struct Cli {
    /// JSON config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Summary output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a dataset, printing its manifest.
    Ingest(IngestArgs),
    /// Split records into frame-disjoint train and eval sets.
    Split(SplitArgs),
    /// Generate reasoning chains for records through the endpoint.
    GenReason(GenReasonArgs),
    /// Export fine-tuning JSONL for one variant.
    Export(ExportArgs),
    /// Score a predictions file against ground truth.
    Eval(EvalArgs),
    /// Re-render a saved scores.json as markdown.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset directory (containing index.json) or the index file itself.
    #[arg(long)]
    data: PathBuf,
    /// Also write the manifest as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    /// Dataset directory (containing index.json) or the index file itself.
    #[arg(long)]
    data: PathBuf,
    /// Fraction of frames assigned to training, strictly between 0 and 1.
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    /// Shuffle seed; the same seed always produces the same split.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Directory for train_records.jsonl, eval_records.jsonl, split.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenReasonArgs {
    /// Dataset directory (containing index.json) or the index file itself.
    #[arg(long)]
    data: PathBuf,
    /// Record subset to generate for (JSONL, e.g. from `split`); defaults
    /// to every record in the dataset.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Output chains file (one JSON outcome per record).
    #[arg(long)]
    out: PathBuf,
    /// Also write the run summary as JSON here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Dataset directory (containing index.json) or the index file itself.
    #[arg(long)]
    data: PathBuf,
    /// Record subset to export (JSONL); defaults to every record.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Which training target to emit: with or without reasoning.
    #[arg(long, value_enum)]
    variant: VariantArg,
    /// Chains file from `gen-reason`; required for the reason variant.
    #[arg(long, required_if_eq("variant", "reason"))]
    chains: Option<PathBuf>,
    /// Output training JSONL path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Reason,
    Simple,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Reason => Variant::Reason,
            VariantArg::Simple => Variant::Simple,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory (containing index.json) or the index file itself.
    #[arg(long)]
    data: PathBuf,
    /// Record subset to score against (JSONL); defaults to every record.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Predictions JSONL: one {"id", "output"} object per line.
    #[arg(long)]
    predictions: PathBuf,
    /// Run directory for scores.json, report.md, verdicts.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Enable the LLM judge (uses the configured endpoint).
    #[arg(long)]
    judge: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// A scores.json file or the run directory containing one.
    #[arg(long)]
    scores: PathBuf,
    /// Write the markdown here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        // A reader closing our stdout (`reasondrive ... | head`) is not an
        // error worth reporting; exit quietly like other line tools.
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|cause| {
        cause
            .downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let config = match &cli.config {
        Some(path) => ToolkitConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ToolkitConfig::default(),
    };
    match &cli.command {
        Command::Ingest(args) => cmd_ingest(args, cli.format),
        Command::Split(args) => cmd_split(args, cli.format),
        Command::GenReason(args) => cmd_gen_reason(args, &config, cli.format),
        Command::Export(args) => cmd_export(args, &config, cli.format),
        Command::Eval(args) => cmd_eval(args, &config, cli.format),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_records_file(path: &Path) -> Result<Vec<QaRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading records {}", path.display()))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: QaRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: bad record", path.display(), idx + 1))?;
        records.push(record);
    }
    if records.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(records)
}

fn records_for(dataset: &Dataset, records: &Option<PathBuf>) -> Result<Vec<QaRecord>> {
    match records {
        Some(path) => load_records_file(path),
        None => Ok(dataset.records.clone()),
    }
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn emit(format: Format, text: String, json: serde_json::Value) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match format {
        Format::Text => writeln!(stdout, "{}", text.trim_end())?,
        Format::Json => writeln!(stdout, "{}", serde_json::to_string_pretty(&json)?)?,
    }
    Ok(())
}

fn cmd_ingest(args: &IngestArgs, format: Format) -> Result<ExitCode> {
    let dataset = load_dataset(&args.data)?;
    let findings = validate_dataset(&dataset);
    if let Some(out) = &args.out {
        write_json(out, &serde_json::to_value(&dataset.manifest)?)?;
    }
    let has_errors = findings.iter().any(|f| f.is_error());
    emit(
        format,
        dataset_report(&dataset.manifest, &findings),
        serde_json::json!({
            "manifest": dataset.manifest,
            "findings": findings,
            "ok": !has_errors,
        }),
    )?;
    Ok(ExitCode::from(u8::from(has_errors)))
}

fn cmd_split(args: &SplitArgs, format: Format) -> Result<ExitCode> {
    let dataset = load_dataset(&args.data)?;
    let split = split_dataset(&dataset.records, args.train_fraction, args.seed)?;
    let train_path = args.out_dir.join("train_records.jsonl");
    let eval_path = args.out_dir.join("eval_records.jsonl");
    write_jsonl(&train_path, &split.train)?;
    write_jsonl(&eval_path, &split.eval)?;
    let summary = serde_json::json!({
        "seed": args.seed,
        "train_fraction": args.train_fraction,
        "train_records": split.train.len(),
        "eval_records": split.eval.len(),
        "train_frames": split.train_frames,
        "eval_frames": split.eval_frames,
        "train_path": train_path,
        "eval_path": eval_path,
    });
    write_json(&args.out_dir.join("split.json"), &summary)?;
    emit(
        format,
        format!(
            "split {} records into {} train / {} eval ({} / {} frames, seed {})",
            split.train.len() + split.eval.len(),
            split.train.len(),
            split.eval.len(),
            split.train_frames.len(),
            split.eval_frames.len(),
            args.seed,
        ),
        summary,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_reason(args: &GenReasonArgs, config: &ToolkitConfig, format: Format) -> Result<ExitCode> {
    let dataset = load_dataset(&args.data)?;
    let records = records_for(&dataset, &args.records)?;
    let templates = config.templates()?;
    let gateway = config.build_gateway()?;
    let generator = ChainGenerator::new(&gateway, &templates, config, &dataset.root);

    let (outcomes, summary) = generator.generate_all(&records, &dataset.frames);
    write_jsonl(&args.out, &outcomes)?;
    let summary_json = serde_json::to_value(&summary)?;
    if let Some(path) = &args.summary {
        write_json(path, &summary_json)?;
    }
    let mut text = format!(
        "generated {}/{} chains ({} retried, {} failed) -> {}",
        summary.ok + summary.retried,
        summary.total,
        summary.retried,
        summary.failed,
        args.out.display(),
    );
    for qa_id in &summary.failed_ids {
        text.push_str(&format!("\nFAILED: {qa_id}"));
    }
    emit(format, text, summary_json)?;
    Ok(ExitCode::from(u8::from(summary.failed > 0)))
}

fn cmd_export(args: &ExportArgs, config: &ToolkitConfig, format: Format) -> Result<ExitCode> {
    let dataset = load_dataset(&args.data)?;
    let records = records_for(&dataset, &args.records)?;
    let variant = Variant::from(args.variant);
    let templates = config.templates()?;

    let chains = match (&args.chains, variant) {
        (Some(path), Variant::Reason) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading chains {}", path.display()))?;
            let mut outcomes = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let outcome: GenerationOutcome = serde_json::from_str(line)
                    .with_context(|| format!("{}:{}: bad outcome", path.display(), idx + 1))?;
                outcomes.push(outcome);
            }
            chain_map(&outcomes)
        }
        _ => Default::default(),
    };

    if variant == Variant::Reason {
        let missing: Vec<&str> = records
            .iter()
            .filter(|r| !chains.contains_key(&r.qa_id))
            .map(|r| r.qa_id.as_str())
            .collect();
        if !missing.is_empty() {
            for qa_id in &missing {
                eprintln!("MISSING_CHAIN: {qa_id}");
            }
            bail!(
                "{} record(s) have no reasoning chain; regenerate before exporting",
                missing.len()
            );
        }
    }

    let examples = assemble_examples(&records, &dataset.frames, &chains, variant, &templates)?;
    let summary = export_training_file(&examples, variant, &args.out)?;
    emit(
        format,
        format!(
            "exported {} example(s) -> {} (sha256 {})",
            summary.lines,
            summary.path.display(),
            summary.sha256,
        ),
        serde_json::to_value(&summary)?,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: &EvalArgs, config: &ToolkitConfig, format: Format) -> Result<ExitCode> {
    let dataset = load_dataset(&args.data)?;
    let records = records_for(&dataset, &args.records)?;
    let entries = read_predictions(&args.predictions)?;

    let evaluation = if args.judge {
        let templates = config.templates()?;
        let gateway = config.build_gateway()?;
        evaluate(&records, &entries, config, Some((&gateway, &templates)))?
    } else {
        evaluate(&records, &entries, config, None)?
    };

    if let Some(dir) = &args.out_dir {
        let paths = write_run_dir(dir, &evaluation.report, &evaluation.verdicts)?;
        log::info!("wrote {}", paths.scores.display());
    }
    emit(
        format,
        render_markdown(&evaluation.report),
        serde_json::to_value(&evaluation.report)?,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: &ReportArgs) -> Result<ExitCode> {
    let report = load_scores(&args.scores)?;
    let markdown = render_markdown(&report);
    match &args.out {
        Some(path) => std::fs::write(path, markdown)?,
        None => std::io::stdout().lock().write_all(markdown.as_bytes())?,
    }
    Ok(ExitCode::SUCCESS)
}
