//! Command-line harness: argument definitions, error-to-exit-code mapping
//! and the subcommand implementations in [`commands`].

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use stancekit::corpus::{Source, SplitFractions};
use stancekit::experiment::Approach;
use stancekit::labels::SoftLabelMode;
use stancekit::llmclient::{EndpointConfig, DEFAULT_ANNOTATORS, DEFAULT_SUMMARY_THRESHOLD};
use stancekit::synthetic::RemovalPlan;

pub use commands::*;
pub use config::{ConfigOverrides, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_EXTERNAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("external service error: {0}")]
    External(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::External(_) => EXIT_EXTERNAL,
        }
    }
}

/// Package version plus `git describe` output captured at build time.
pub fn version() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("STANCEKIT_GIT_DESCRIBE"))
}

#[derive(Debug, Parser)]
#[command(name = "stancekit", version = env!("CARGO_PKG_VERSION"), about = "Stance-detection experiments with hard and soft labels")]
pub struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drop null documents, broken links and instances without a majority.
    Preprocess {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Tag instances with train/validation/test splits.
    Split {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// train,validation,test
        #[arg(long, default_value = "0.7,0.15,0.15", value_parser = parse_fractions)]
        fractions: SplitFractions,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Inter-annotator agreement statistics.
    Agreement {
        input: PathBuf,
        /// Also write the report here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Summarize long documents and collect LLM annotations.
    Augment(AugmentArgs),
    /// Train, evaluate and calibrate one approach.
    Run(RunArgs),
    /// ROUGE and BLEU of candidate lines against reference lines.
    Textmetrics {
        candidates: PathBuf,
        references: PathBuf,
        /// Write PREFIX.md and PREFIX.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Combine finished runs into one table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write PREFIX.md and PREFIX.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded synthetic corpus.
    Synth {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(short = 'n', long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 3)]
        annotators: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also tag splits, e.g. 0.7,0.15,0.15.
        #[arg(long, value_parser = parse_fractions)]
        split: Option<SplitFractions>,
        /// Plant removable instances: NULL_DOCS,BROKEN_LINKS,NO_MAJORITY.
        #[arg(long, value_parser = parse_removals)]
        removals: Option<RemovalPlan>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// human or llm
    #[arg(long)]
    pub source: Option<Source>,
    /// baseline or multi_perspective
    #[arg(long)]
    pub approach: Option<Approach>,
    #[arg(long)]
    pub feature_dimension: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// counts or frequencies
    #[arg(long)]
    pub soft_label_mode: Option<SoftLabelMode>,
    #[arg(long)]
    pub calibrate: Option<bool>,
    #[arg(long)]
    pub n_bins: Option<usize>,
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunArgs {
    pub fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            dataset_path: self.dataset.clone(),
            dataset_source: self.source,
            approach: self.approach,
            feature_dimension: self.feature_dimension,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            soft_label_mode: self.soft_label_mode,
            calibrate: self.calibrate,
            n_bins: self.n_bins,
            output_dir: self.output_dir.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    pub input: PathBuf,
    /// LLM-annotated output JSONL.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Audit log of raw replies.
    #[arg(long)]
    pub audit: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Replay a transcript instead of calling the endpoint.
    #[arg(long)]
    pub mock: Option<PathBuf>,
    #[arg(long, default_value = "http://localhost:8000/v1")]
    pub base_url: String,
    /// Repeat to use one model per annotator.
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_ANNOTATORS)]
    pub annotators: usize,
    #[arg(long, default_value_t = DEFAULT_SUMMARY_THRESHOLD)]
    pub summary_threshold: usize,
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: usize,
    #[arg(long, default_value_t = 3)]
    pub max_parallel: usize,
    #[arg(long, default_value_t = 500)]
    pub backoff_ms: u64,
}

impl AugmentArgs {
    pub fn options(&self) -> AugmentOptions {
        let defaults = EndpointConfig::default();
        AugmentOptions {
            input: self.input.clone(),
            output: self.output.clone(),
            audit: self.audit.clone(),
            mock: self.mock.clone(),
            endpoint: EndpointConfig {
                base_url: self.base_url.clone(),
                api_key_env: self.api_key_env.clone(),
                timeout: Duration::from_secs(self.timeout_secs),
                max_retries: self.max_retries,
                max_parallel: self.max_parallel,
                backoff_initial: Duration::from_millis(self.backoff_ms),
                backoff_max: defaults.backoff_max.max(Duration::from_millis(self.backoff_ms)),
                ..defaults
            },
            models: self.models.clone(),
            annotators: self.annotators,
            summary_threshold: self.summary_threshold,
        }
    }
}

fn parse_fractions(s: &str) -> Result<SplitFractions, String> {
    s.parse().map_err(|e: stancekit::corpus::CorpusError| e.to_string())
}

fn parse_removals(s: &str) -> Result<RemovalPlan, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        &[null_document, link_broken, no_majority] => Ok(RemovalPlan {
            clean: 0,
            null_document,
            link_broken,
            no_majority,
        }),
        _ => Err("expected three comma-separated counts".into()),
    }
}

fn write_dual(prefix: &Path, markdown: &str, json: &str) -> Result<(), CliError> {
    let with_ext = |ext: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    for (path, body) in [(with_ext(".md"), markdown), (with_ext(".json"), json)] {
        std::fs::write(&path, body).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn write_optional(path: Option<&Path>, body: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, body).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => Ok(()),
    }
}

/// Runs a parsed command, printing its report to stdout.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Preprocess { input, output } => {
            print!("{}", to_json(&cmd_preprocess(&input, &output)?));
        }
        Command::Split {
            input,
            output,
            fractions,
            seed,
        } => {
            print!("{}", to_json(&cmd_split(&input, &output, fractions, seed)?));
        }
        Command::Agreement { input, output } => {
            let json = to_json(&cmd_agreement(&input)?);
            write_optional(output.as_deref(), &json)?;
            print!("{json}");
        }
        Command::Augment(args) => {
            let json = to_json(&cmd_augment(&args.options())?);
            write_optional(args.report.as_deref(), &json)?;
            print!("{json}");
        }
        Command::Run(args) => {
            let config = config::resolve(args.config.as_deref(), &args.overrides())?;
            let out = cmd_run(&config)?;
            print!("{}", report::markdown_table(&[out.metrics.row()]));
            log::info!("run written to {}", out.dir.display());
        }
        Command::Textmetrics {
            candidates,
            references,
            out,
        } => {
            let table = cmd_textmetrics(&candidates, &references)?;
            let md = table.markdown();
            if let Some(prefix) = out {
                write_dual(&prefix, &md, &to_json(&table))?;
            }
            print!("{md}");
        }
        Command::Report { runs, out } => {
            let rows = cmd_report(&runs)?;
            let md = report::markdown_table(&rows);
            if let Some(prefix) = out {
                write_dual(&prefix, &md, &to_json(&rows))?;
            }
            print!("{md}");
        }
        Command::Synth {
            output,
            instances,
            annotators,
            seed,
            split,
            removals,
        } => {
            let n = cmd_synth(&SynthOptions {
                output,
                n_instances: instances,
                annotators,
                seed,
                split,
                removals,
            })?;
            println!("{{\"instances\": {n}}}");
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("stancekit: {e}");
            e.exit_code()
        }
    }
}
