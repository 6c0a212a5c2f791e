//! Disaggregated stance datasets: data model, JSONL persistence,
//! preprocessing filters and seeded train/validation/test splitting.
//!
//! One instance per JSONL line:
//!
//! ```text
//! {"id": "d1", "query": "...", "title": "...", "content": "...", "summary": null,
//!  "annotations": [{"annotator": "a_1", "label": "pro"}], "split": "train"}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{majority, AnnotationSet, Majority, StanceLabel};

/// Reserved annotation value marking an inaccessible document.
pub const LINK_BROKEN: &str = "link-broken";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("split fractions must be positive and sum to 1 (got {0}, {1}, {2})")]
    BadFractions(f64, f64, f64),
}

/// A single annotation value: a stance, or the reserved `link-broken` marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnnotationValue {
    Stance(StanceLabel),
    LinkBroken,
}

impl AnnotationValue {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationValue::Stance(l) => l.as_str(),
            AnnotationValue::LinkBroken => LINK_BROKEN,
        }
    }
}

impl FromStr for AnnotationValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case(LINK_BROKEN) {
            return Ok(AnnotationValue::LinkBroken);
        }
        s.parse::<StanceLabel>()
            .map(AnnotationValue::Stance)
            .map_err(|_| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub annotator: String,
    pub value: AnnotationValue,
}

impl Annotation {
    pub fn stance(annotator: impl Into<String>, label: StanceLabel) -> Self {
        Self {
            annotator: annotator.into(),
            value: AnnotationValue::Stance(label),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Whether annotations come from human annotators or LLMs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Human,
    Llm,
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "human" | "hd" => Ok(Source::Human),
            "llm" | "llmd" => Ok(Source::Llm),
            other => Err(format!("unknown dataset source {other:?}")),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Human => "HD",
            Source::Llm => "LLMD",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub query: String,
    pub title: String,
    pub content: String,
    pub summary: Option<String>,
    pub annotations: Vec<Annotation>,
    pub split: Option<Split>,
}

impl Instance {
    pub fn is_link_broken(&self) -> bool {
        self.annotations
            .iter()
            .any(|a| a.value == AnnotationValue::LinkBroken)
    }

    /// Empty (or whitespace-only) content and no summary.
    pub fn is_null_document(&self) -> bool {
        self.content.trim().is_empty() && self.summary.as_deref().is_none_or(|s| s.trim().is_empty())
    }

    /// Stance annotations only; `None` if any annotation is `link-broken`.
    pub fn annotation_set(&self) -> Option<AnnotationSet> {
        let mut set = AnnotationSet::default();
        for a in &self.annotations {
            match a.value {
                AnnotationValue::Stance(l) => set.push(a.annotator.clone(), l),
                AnnotationValue::LinkBroken => return None,
            }
        }
        Some(set)
    }

    pub fn majority(&self) -> Option<StanceLabel> {
        let set = self.annotation_set()?;
        majority(&set).ok().and_then(Majority::label)
    }

    /// Document body fed to models: the summary when present, else title and content.
    pub fn body(&self) -> String {
        match &self.summary {
            Some(s) => s.clone(),
            None if self.title.is_empty() => self.content.clone(),
            None => format!("{} {}", self.title, self.content),
        }
    }

    /// Model input text: query followed by the document body.
    pub fn model_text(&self) -> String {
        format!("{} {}", self.query, self.body())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub source: Source,
    pub provenance: String,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>) -> Self {
        Self {
            instances,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn with_split(&self, split: Split) -> impl Iterator<Item = &Instance> {
        self.instances.iter().filter(move |i| i.split == Some(split))
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for inst in &self.instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(CorpusError::DuplicateId(inst.id.clone()));
            }
        }
        let tagged = self.instances.iter().filter(|i| i.split.is_some()).count();
        if tagged != 0 && tagged != self.instances.len() {
            return Err(CorpusError::Invalid {
                line: 0,
                message: format!(
                    "{tagged} of {} instances carry a split tag; all or none must",
                    self.instances.len()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    annotator: String,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct RawInstance {
    id: String,
    query: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    summary: Option<String>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, serde_json::Value>,
}

/// Non-fatal findings from [`load_jsonl_with_stats`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub unknown_fields: usize,
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let (dataset, stats) = load_jsonl_with_stats(path)?;
    if stats.unknown_fields > 0 {
        log::warn!("ignored {} unknown field(s)", stats.unknown_fields);
    }
    Ok(dataset)
}

pub fn load_jsonl_with_stats(path: impl AsRef<Path>) -> Result<(Dataset, LoadStats), CorpusError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let (mut dataset, stats) = read_jsonl(reader)?;
    dataset.provenance = path.display().to_string();
    Ok((dataset, stats))
}

pub fn read_jsonl(reader: impl BufRead) -> Result<(Dataset, LoadStats), CorpusError> {
    let mut stats = LoadStats::default();
    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let raw: RawInstance = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        stats.unknown_fields += raw.extra.len();
        let inst = from_raw(raw, line_no)?;
        if !seen.insert(inst.id.clone()) {
            return Err(CorpusError::DuplicateId(inst.id));
        }
        instances.push(inst);
    }
    let dataset = Dataset::new(instances);
    dataset.validate()?;
    Ok((dataset, stats))
}

fn from_raw(raw: RawInstance, line: usize) -> Result<Instance, CorpusError> {
    if raw.id.trim().is_empty() {
        return Err(CorpusError::Invalid {
            line,
            message: "empty id".into(),
        });
    }
    if raw.query.trim().is_empty() {
        return Err(CorpusError::Invalid {
            line,
            message: format!("instance {:?} has an empty query", raw.id),
        });
    }
    let annotations = raw
        .annotations
        .into_iter()
        .map(|a| {
            a.label
                .parse::<AnnotationValue>()
                .map(|value| Annotation {
                    annotator: a.annotator,
                    value,
                })
                .map_err(|label| CorpusError::UnknownLabel { line, label })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Instance {
        id: raw.id,
        query: raw.query,
        title: raw.title,
        content: raw.content,
        summary: raw.summary,
        annotations,
        split: raw.split,
    })
}

fn to_raw(inst: &Instance) -> RawInstance {
    RawInstance {
        id: inst.id.clone(),
        query: inst.query.clone(),
        title: inst.title.clone(),
        content: inst.content.clone(),
        summary: inst.summary.clone(),
        annotations: inst
            .annotations
            .iter()
            .map(|a| RawAnnotation {
                annotator: a.annotator.clone(),
                label: a.value.as_str().to_string(),
            })
            .collect(),
        split: inst.split,
        extra: BTreeMap::new(),
    }
}

pub fn write_jsonl(dataset: &Dataset, mut writer: impl Write) -> Result<(), CorpusError> {
    for inst in &dataset.instances {
        let line = serde_json::to_string(&to_raw(inst)).map_err(std::io::Error::from)?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let file = File::create(path)?;
    write_jsonl(dataset, BufWriter::new(file))
}

/// Per-reason removal counts from [`preprocess`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub null_document: usize,
    pub link_broken: usize,
    pub no_majority: usize,
    pub kept: usize,
}

impl FilterReport {
    pub fn removed(&self) -> usize {
        self.null_document + self.link_broken + self.no_majority
    }
}

/// Drops null documents, then link-broken instances, then instances without a
/// strict majority label. Each instance is counted under the first reason
/// that applies. Survivor order is preserved.
pub fn preprocess(dataset: &Dataset) -> (Dataset, FilterReport) {
    let mut report = FilterReport {
        input: dataset.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for inst in &dataset.instances {
        if inst.is_null_document() {
            report.null_document += 1;
        } else if inst.is_link_broken() {
            report.link_broken += 1;
        } else if inst.majority().is_none() {
            report.no_majority += 1;
        } else {
            kept.push(inst.clone());
        }
    }
    report.kept = kept.len();
    let out = Dataset {
        instances: kept,
        source: dataset.source,
        provenance: dataset.provenance.clone(),
    };
    (out, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self, CorpusError> {
        let all_positive = [train, validation, test].iter().all(|f| f.is_finite() && *f > 0.0);
        if !all_positive || (train + validation + test - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadFractions(train, validation, test));
        }
        Ok(Self {
            train,
            validation,
            test,
        })
    }

    /// (train, validation, test) sizes: validation and test are floored and
    /// the remainder goes to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
        let validation = floor(self.validation).min(n);
        let test = floor(self.test).min(n - validation);
        (n - validation - test, validation, test)
    }
}

impl FromStr for SplitFractions {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        match parts.as_slice() {
            [a, b, c] => Self::new(*a, *b, *c),
            _ => Err(CorpusError::BadFractions(f64::NAN, f64::NAN, f64::NAN)),
        }
    }
}

/// Tags every instance with a split. Instance order is unchanged; membership
/// is decided by a seeded shuffle of the indices.
pub fn split(dataset: &Dataset, fractions: SplitFractions, seed: u64) -> Dataset {
    let n = dataset.len();
    let (n_train, n_val, _) = fractions.sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tags = vec![Split::Test; n];
    for (rank, &idx) in order.iter().enumerate() {
        tags[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    let mut out = dataset.clone();
    for (inst, tag) in out.instances.iter_mut().zip(tags) {
        inst.split = Some(tag);
    }
    out
}
