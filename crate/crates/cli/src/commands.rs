//! Subcommand implementations. Each returns its report so tests can call it
//! directly; the binary only handles argument parsing and printing.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use stancekit::agreement::{agreement_report, AgreementReport};
use stancekit::corpus::{
    load_jsonl, preprocess, save_jsonl, split, Annotation, Dataset, FilterReport, Source, Split, SplitFractions,
};
use stancekit::experiment::run_experiment;
use stancekit::labels::majority;
use stancekit::llmclient::{
    AnnotationRequest, AuditRecord, EndpointConfig, LlmClient, LlmError, ScriptedTransport, SummaryOutcome,
    Transcript, SUMMARIZER_ID,
};
use stancekit::synthetic::{generate, preprocessing_fixture, RemovalPlan, SyntheticConfig};
use stancekit::textmetrics::{score_pair, MetricTriple, SummaryScores};
use stancekit::StanceLabel;

use crate::config::ExperimentConfig;
use crate::report::{markdown_table, RunMetrics, TableRow};
use crate::{version, CliError};

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    load_jsonl(path).map_err(|e| io_error(path, e))
}

fn save(dataset: &Dataset, path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    save_jsonl(dataset, path).map_err(|e| io_error(path, e))
}

pub fn cmd_preprocess(input: &Path, output: &Path) -> Result<FilterReport, CliError> {
    let dataset = load(input)?;
    let (kept, report) = preprocess(&dataset);
    save(&kept, output)?;
    log::info!("kept {} of {} instances", report.kept, report.input);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

pub fn cmd_split(input: &Path, output: &Path, fractions: SplitFractions, seed: u64) -> Result<SplitReport, CliError> {
    let tagged = split(&load(input)?, fractions, seed);
    save(&tagged, output)?;
    Ok(SplitReport {
        train: tagged.with_split(Split::Train).count(),
        validation: tagged.with_split(Split::Validation).count(),
        test: tagged.with_split(Split::Test).count(),
    })
}

pub fn cmd_agreement(input: &Path) -> Result<AgreementReport, CliError> {
    agreement_report(&load(input)?).map_err(|e| CliError::Data(e.to_string()))
}

/// What `run` leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub metrics: RunMetrics,
}

#[derive(Debug, Serialize)]
struct RunInfo<'a> {
    version: String,
    seed: u64,
    rerun: String,
    config: &'a ExperimentConfig,
}

pub const RUN_FILES: [&str; 9] = [
    "config.txt",
    "run_info.json",
    "metrics.json",
    "loss_trace.csv",
    "calibration.json",
    "reliability.csv",
    "checkpoint.json",
    "table.md",
    "table.json",
];

/// Trains, evaluates and calibrates one approach and writes the run
/// directory. The directory contents depend only on the config.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunOutput, CliError> {
    config.validate()?;
    let mut dataset = load(&config.dataset_path)?;
    dataset.source = config.dataset_source;
    if dataset.instances.iter().any(|i| i.split.is_none()) {
        return Err(CliError::Data(format!(
            "{} has instances without a split tag; run `stancekit split` first",
            config.dataset_path.display()
        )));
    }
    let result = run_experiment(&dataset, &config.settings()).map_err(|e| CliError::Data(e.to_string()))?;
    let metrics = RunMetrics::new(config, &result);

    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let config_path = dir.join("config.txt");
    write_file(&config_path, config.to_kv())?;
    write_file(
        &dir.join("run_info.json"),
        to_json(&RunInfo {
            version: version(),
            seed: config.seed,
            rerun: format!("stancekit run --config {}", config_path.display()),
            config,
        }),
    )?;
    write_file(&dir.join("metrics.json"), to_json(&metrics))?;
    let mut trace = String::from("epoch,mean_loss\n");
    for (i, loss) in result.training.loss_trace.iter().enumerate() {
        trace.push_str(&format!("{},{loss}\n", i + 1));
    }
    write_file(&dir.join("loss_trace.csv"), trace)?;
    write_file(&dir.join("calibration.json"), to_json(&result.calibration))?;
    write_file(&dir.join("reliability.csv"), result.calibration.bins_csv())?;
    write_file(&dir.join("checkpoint.json"), to_json(&result.training.state))?;
    let rows = [metrics.row()];
    write_file(&dir.join("table.md"), markdown_table(&rows))?;
    write_file(&dir.join("table.json"), to_json(&rows))?;
    Ok(RunOutput {
        dir: dir.clone(),
        metrics,
    })
}

/// Collects the table rows of finished run directories.
pub fn cmd_report(run_dirs: &[PathBuf]) -> Result<Vec<TableRow>, CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::Usage("no run directories given".into()));
    }
    run_dirs
        .iter()
        .map(|dir| {
            let path = dir.join("metrics.json");
            let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
            let m: RunMetrics = serde_json::from_str(&text).map_err(|e| io_error(&path, e))?;
            Ok(m.row())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextMetricsRow {
    pub line: usize,
    #[serde(flatten)]
    pub scores: SummaryScores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextMetricsTable {
    pub rows: Vec<TextMetricsRow>,
    pub mean: SummaryScores,
}

impl TextMetricsTable {
    pub fn markdown(&self) -> String {
        let mut out = String::from(
            "| Line | ROUGE-1 P | ROUGE-1 R | ROUGE-1 F | ROUGE-2 P | ROUGE-2 R | ROUGE-2 F | ROUGE-L P | ROUGE-L R | ROUGE-L F | BLEU |\n",
        );
        out.push_str(&format!("|{}\n", "---|".repeat(11)));
        let triple = |t: &MetricTriple| format!("{:.4} | {:.4} | {:.4}", t.precision, t.recall, t.f1);
        let line = |label: String, s: &SummaryScores| {
            format!(
                "| {label} | {} | {} | {} | {:.4} |\n",
                triple(&s.rouge1),
                triple(&s.rouge2),
                triple(&s.rouge_l),
                s.bleu
            )
        };
        for r in &self.rows {
            out.push_str(&line(r.line.to_string(), &r.scores));
        }
        out.push_str(&line("mean".into(), &self.mean));
        out
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Scores each candidate line against the reference on the same line.
pub fn cmd_textmetrics(candidates: &Path, references: &Path) -> Result<TextMetricsTable, CliError> {
    let cands = read_lines(candidates)?;
    let refs = read_lines(references)?;
    if cands.len() != refs.len() {
        return Err(CliError::Data(format!(
            "{} candidate lines but {} reference lines",
            cands.len(),
            refs.len()
        )));
    }
    let rows: Vec<TextMetricsRow> = cands
        .iter()
        .zip(&refs)
        .enumerate()
        .map(|(i, (c, r))| TextMetricsRow {
            line: i + 1,
            scores: score_pair(c, r),
        })
        .collect();
    let n = rows.len().max(1) as f64;
    let avg = |f: &dyn Fn(&SummaryScores) -> MetricTriple| {
        let (p, r, f1) = rows.iter().fold((0.0, 0.0, 0.0), |acc, row| {
            let t = f(&row.scores);
            (acc.0 + t.precision, acc.1 + t.recall, acc.2 + t.f1)
        });
        MetricTriple {
            precision: p / n,
            recall: r / n,
            f1: f1 / n,
        }
    };
    let mean = SummaryScores {
        rouge1: avg(&|s| s.rouge1),
        rouge2: avg(&|s| s.rouge2),
        rouge_l: avg(&|s| s.rouge_l),
        bleu: rows.iter().map(|r| r.scores.bleu).sum::<f64>() / n,
    };
    Ok(TextMetricsTable { rows, mean })
}

#[derive(Debug, Clone)]
pub struct AugmentOptions {
    pub input: PathBuf,
    pub output: PathBuf,
    pub audit: PathBuf,
    /// Replay this transcript instead of calling the endpoint.
    pub mock: Option<PathBuf>,
    pub endpoint: EndpointConfig,
    /// One annotator per model; a single model (or none, meaning the
    /// endpoint's) is repeated `annotators` times.
    pub models: Vec<String>,
    pub annotators: usize,
    pub summary_threshold: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlaggedInstance {
    pub instance_id: String,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AugmentReport {
    pub input: usize,
    /// Null documents and broken links are not sent.
    pub skipped: usize,
    pub summarized: usize,
    pub written: usize,
    /// Instances with an unparseable reply; excluded from the output.
    pub flagged: Vec<FlaggedInstance>,
    /// LLM majority label of every written instance (null if none).
    pub maj_lm: BTreeMap<String, Option<StanceLabel>>,
}

fn llm_error(e: LlmError) -> CliError {
    match e {
        LlmError::Config(m) => CliError::Usage(m),
        other => CliError::External(other.to_string()),
    }
}

fn build_panel(opts: &AugmentOptions) -> Result<Vec<LlmClient>, CliError> {
    let names: Vec<String> = match opts.models.as_slice() {
        [] => vec![opts.endpoint.model_name.clone(); opts.annotators],
        [one] => vec![one.clone(); opts.annotators],
        many => many.to_vec(),
    };
    if names.is_empty() {
        return Err(CliError::Usage("at least one annotator is required".into()));
    }
    let mock = match &opts.mock {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            let transcript: Transcript = serde_json::from_str(&text).map_err(|e| io_error(path, e))?;
            Some(Arc::new(ScriptedTransport::new(transcript)))
        }
        None => None,
    };
    names
        .into_iter()
        .map(|model_name| {
            let config = EndpointConfig {
                model_name,
                ..opts.endpoint.clone()
            };
            match &mock {
                Some(t) => LlmClient::new(config, Box::new(t.clone())),
                None => LlmClient::http(config.with_env_key()),
            }
            .map_err(llm_error)
        })
        .collect()
}

/// Summarizes long documents, collects LLM annotations and writes the LLM
/// dataset plus an audit log of every raw reply. Transport failures abort;
/// unparseable replies flag the instance.
pub fn cmd_augment(opts: &AugmentOptions) -> Result<AugmentReport, CliError> {
    let panel = build_panel(opts)?;
    let refs: Vec<&LlmClient> = panel.iter().collect();
    let dataset = load(&opts.input)?;
    let audit_file = File::create(&opts.audit).map_err(|e| io_error(&opts.audit, e))?;
    let mut audit = BufWriter::new(audit_file);
    let mut write_audit = |rec: &AuditRecord| -> Result<(), CliError> {
        serde_json::to_writer(&mut audit, rec).map_err(|e| io_error(&opts.audit, e))?;
        audit.write_all(b"\n").map_err(|e| io_error(&opts.audit, e))?;
        audit.flush().map_err(|e| io_error(&opts.audit, e))
    };

    let mut report = AugmentReport {
        input: dataset.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for inst in &dataset.instances {
        if inst.is_null_document() || inst.is_link_broken() {
            report.skipped += 1;
            continue;
        }
        let mut inst = inst.clone();
        match panel[0].summarize(&inst, opts.summary_threshold).map_err(llm_error)? {
            SummaryOutcome::Unchanged => inst.summary = None,
            SummaryOutcome::Summary { text, call } => {
                write_audit(&AuditRecord {
                    instance_id: inst.id.clone(),
                    annotator_id: SUMMARIZER_ID.to_string(),
                    raw_reply: Some(text.clone()),
                    parsed_label: None,
                    error: None,
                    attempts: call.attempts,
                })?;
                report.summarized += 1;
                inst.summary = Some(text);
            }
        }
        let outcome = stancekit::llmclient::annotate_panel(&AnnotationRequest::from_instance(&inst), &refs);
        for rec in outcome.audit_records() {
            write_audit(&rec)?;
        }
        if let Some(e) = outcome.transport_error() {
            return Err(CliError::External(format!("{}: {e}", inst.id)));
        }
        let Some(set) = outcome.annotation_set() else {
            log::warn!("{}: unparseable reply, instance flagged", inst.id);
            report.flagged.push(FlaggedInstance {
                instance_id: inst.id.clone(),
                errors: outcome
                    .replies
                    .iter()
                    .filter_map(|r| r.label.as_ref().err().map(|e| format!("{}: {e}", r.annotator_id)))
                    .collect(),
            });
            continue;
        };
        report.maj_lm.insert(
            inst.id.clone(),
            majority(&set).ok().and_then(|m| m.label()),
        );
        inst.annotations = set
            .entries()
            .iter()
            .map(|(a, l)| Annotation::stance(a.clone(), *l))
            .collect();
        out.push(inst);
    }
    report.written = out.len();
    let llmd = Dataset {
        instances: out,
        source: Source::Llm,
        provenance: format!("llm annotations of {}", opts.input.display()),
    };
    save(&llmd, &opts.output)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub output: PathBuf,
    pub n_instances: usize,
    pub annotators: usize,
    pub seed: u64,
    pub split: Option<SplitFractions>,
    /// Plants removable instances on top of `n_instances` clean ones.
    pub removals: Option<RemovalPlan>,
}

/// Writes a seeded synthetic corpus; returns its size.
pub fn cmd_synth(opts: &SynthOptions) -> Result<usize, CliError> {
    let mut dataset = match opts.removals {
        Some(plan) => preprocessing_fixture(
            RemovalPlan {
                clean: opts.n_instances,
                ..plan
            },
            opts.seed,
        ),
        None => generate(
            &SyntheticConfig {
                n_instances: opts.n_instances,
                annotators: opts.annotators,
                ..SyntheticConfig::default()
            },
            opts.seed,
        ),
    };
    if let Some(fractions) = opts.split {
        dataset = split(&dataset, fractions, opts.seed);
    }
    save(&dataset, &opts.output)?;
    Ok(dataset.len())
}
