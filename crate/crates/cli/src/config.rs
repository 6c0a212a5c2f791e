//! Experiment configuration: defaults, an optional flat `key=value` file,
//! and command-line overrides, applied in that order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use stancekit::corpus::Source;
use stancekit::experiment::{Approach, ExperimentSettings};
use stancekit::labels::SoftLabelMode;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset_path: PathBuf,
    pub dataset_source: Source,
    pub approach: Approach,
    pub feature_dimension: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub soft_label_mode: SoftLabelMode,
    pub calibrate: bool,
    pub n_bins: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = ExperimentSettings::default();
        Self {
            dataset_path: PathBuf::new(),
            dataset_source: Source::Human,
            approach: s.approach,
            feature_dimension: s.feature_dimension,
            learning_rate: s.learning_rate,
            epochs: s.epochs,
            batch_size: s.batch_size,
            soft_label_mode: s.soft_label_mode,
            calibrate: s.calibrate,
            n_bins: s.n_bins,
            output_dir: PathBuf::from("runs/latest"),
            seed: s.seed,
        }
    }
}

impl ExperimentConfig {
    pub fn settings(&self) -> ExperimentSettings {
        ExperimentSettings {
            approach: self.approach,
            feature_dimension: self.feature_dimension,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            soft_label_mode: self.soft_label_mode,
            calibrate: self.calibrate,
            n_bins: self.n_bins,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.dataset_path.as_os_str().is_empty() {
            return bad("no dataset given (--dataset or dataset= in the config file)");
        }
        if self.feature_dimension < stancekit::classifier::MIN_DIMENSION {
            return bad(&format!(
                "feature_dimension must be at least {}",
                stancekit::classifier::MIN_DIMENSION
            ));
        }
        if self.n_bins == 0 {
            return bad("n_bins must be at least 1");
        }
        self.settings()
            .train_config()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Name shown in the table's Model column.
    pub fn model_name(&self) -> String {
        format!("linear-bow-{}", self.feature_dimension)
    }

    /// The config as a `key=value` file that [`ConfigOverrides::parse`]
    /// reads back to the same value.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("dataset", self.dataset_path.display().to_string()),
            ("source", source_key(self.dataset_source).to_string()),
            ("approach", self.approach.as_str().to_string()),
            ("feature_dimension", self.feature_dimension.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("soft_label_mode", self.soft_label_mode.to_string()),
            ("calibrate", self.calibrate.to_string()),
            ("n_bins", self.n_bins.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("seed", self.seed.to_string()),
        ] {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

fn source_key(s: Source) -> &'static str {
    match s {
        Source::Human => "human",
        Source::Llm => "llm",
    }
}

/// A partial config. Unset fields leave the layer below untouched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub dataset_path: Option<PathBuf>,
    pub dataset_source: Option<Source>,
    pub approach: Option<Approach>,
    pub feature_dimension: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub soft_label_mode: Option<SoftLabelMode>,
    pub calibrate: Option<bool>,
    pub n_bins: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("config line {line}: bad value for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(CliError::Usage(format!("config line {line}: bad value for {key}: {value:?}"))),
    }
}

impl ConfigOverrides {
    /// Parses `key=value` lines. Blank lines and lines starting with `#` are
    /// ignored; unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut o = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {line}: expected key=value")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dataset" | "dataset_path" => o.dataset_path = Some(PathBuf::from(value)),
                "source" | "dataset_source" => o.dataset_source = Some(parse_value(key, value, line)?),
                "approach" => o.approach = Some(parse_value(key, value, line)?),
                "feature_dimension" => o.feature_dimension = Some(parse_value(key, value, line)?),
                "learning_rate" => o.learning_rate = Some(parse_value(key, value, line)?),
                "epochs" => o.epochs = Some(parse_value(key, value, line)?),
                "batch_size" => o.batch_size = Some(parse_value(key, value, line)?),
                "soft_label_mode" => o.soft_label_mode = Some(parse_value(key, value, line)?),
                "calibrate" => o.calibrate = Some(parse_bool(key, value, line)?),
                "n_bins" => o.n_bins = Some(parse_value(key, value, line)?),
                "output_dir" => o.output_dir = Some(PathBuf::from(value)),
                "seed" => o.seed = Some(parse_value(key, value, line)?),
                other => return Err(CliError::Usage(format!("config line {line}: unknown key {other:?}"))),
            }
        }
        Ok(o)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply(&self, base: &mut ExperimentConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    base.$f = v.clone();
                }
            )*};
        }
        set!(
            dataset_path,
            dataset_source,
            approach,
            feature_dimension,
            learning_rate,
            epochs,
            batch_size,
            soft_label_mode,
            calibrate,
            n_bins,
            output_dir,
            seed
        );
    }
}

/// defaults < file < flags.
pub fn resolve(file: Option<&Path>, flags: &ConfigOverrides) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = file {
        ConfigOverrides::from_file(path)?.apply(&mut config);
    }
    flags.apply(&mut config);
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flags_then_file_then_defaults() {
        let file = ConfigOverrides::parse("# comment\ndataset=a.jsonl\nepochs=7\nseed=3\n\ncalibrate=off\n").unwrap();
        let flags = ConfigOverrides {
            seed: Some(9),
            ..Default::default()
        };
        let mut c = ExperimentConfig::default();
        file.apply(&mut c);
        flags.apply(&mut c);
        assert_eq!(c.epochs, 7);
        assert_eq!(c.seed, 9);
        assert!(!c.calibrate);
        assert_eq!(c.batch_size, ExperimentConfig::default().batch_size);
    }

    #[test]
    fn kv_round_trip() {
        let c = ExperimentConfig {
            dataset_path: "data/x.jsonl".into(),
            approach: Approach::MultiPerspective,
            learning_rate: 0.25,
            dataset_source: Source::Llm,
            ..Default::default()
        };
        let mut back = ExperimentConfig::default();
        ConfigOverrides::parse(&c.to_kv()).unwrap().apply(&mut back);
        assert_eq!(back, c);
    }

    #[test]
    fn bad_lines_are_usage_errors() {
        for text in ["epochs", "epochs=many", "colour=blue", "calibrate=maybe"] {
            assert!(matches!(ConfigOverrides::parse(text), Err(CliError::Usage(_))), "{text}");
        }
    }
}
