//! The four-class stance label space and the two supervision schemes built
//! on top of it: majority-vote hard labels and softmax soft labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of stance classes.
pub const NUM_CLASSES: usize = 4;

/// A distribution (or supervision vector) over the four stance classes,
/// indexed by [`StanceLabel::code`].
pub type ProbabilityVector = [f64; NUM_CLASSES];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("annotation set is empty")]
    EmptyAnnotations,
    #[error("unknown label string {0:?}")]
    UnknownLabel(String),
    #[error("label code {0} out of range 0..4")]
    BadCode(usize),
}

/// Stance of a document toward a query. Integer codes are fixed and used as
/// the wire encoding everywhere downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StanceLabel {
    Pro = 0,
    Against = 1,
    Neutral = 2,
    NotAbout = 3,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; NUM_CLASSES] = [
        StanceLabel::Pro,
        StanceLabel::Against,
        StanceLabel::Neutral,
        StanceLabel::NotAbout,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Result<Self, LabelError> {
        Self::ALL.get(code).copied().ok_or(LabelError::BadCode(code))
    }

    /// Canonical lowercase wire name.
    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Pro => "pro",
            StanceLabel::Against => "against",
            StanceLabel::Neutral => "neutral",
            StanceLabel::NotAbout => "not-about",
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StanceLabel {
    type Err = LabelError;

    /// Case-insensitive; accepts `not-about`, `not_about` and `not about`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "pro" => Ok(StanceLabel::Pro),
            "against" => Ok(StanceLabel::Against),
            "neutral" => Ok(StanceLabel::Neutral),
            "not-about" | "not_about" | "not about" => Ok(StanceLabel::NotAbout),
            _ => Err(LabelError::UnknownLabel(s.to_string())),
        }
    }
}

/// How annotation counts are turned into a soft label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftLabelMode {
    /// softmax over raw integer counts
    #[default]
    Counts,
    /// softmax over counts divided by the number of annotations
    Frequencies,
}

impl FromStr for SoftLabelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "counts" => Ok(SoftLabelMode::Counts),
            "frequencies" => Ok(SoftLabelMode::Frequencies),
            other => Err(format!("unknown soft label mode {other:?}")),
        }
    }
}

impl fmt::Display for SoftLabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SoftLabelMode::Counts => "counts",
            SoftLabelMode::Frequencies => "frequencies",
        })
    }
}

/// The multiset of labels assigned to one instance, one entry per annotator.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotationSet {
    entries: Vec<(String, StanceLabel)>,
}

impl AnnotationSet {
    pub fn new(entries: Vec<(String, StanceLabel)>) -> Self {
        Self { entries }
    }

    /// Builds a set with synthetic annotator ids `a_1`, `a_2`, ...
    pub fn from_labels(labels: &[StanceLabel]) -> Self {
        Self::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, &l)| (format!("a_{}", i + 1), l))
                .collect(),
        )
    }

    /// Builds a set realizing the given count vector.
    pub fn from_counts(counts: [usize; NUM_CLASSES]) -> Self {
        let labels: Vec<StanceLabel> = StanceLabel::ALL
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, counts[l.code()]))
            .collect();
        Self::from_labels(&labels)
    }

    pub fn push(&mut self, annotator: impl Into<String>, label: StanceLabel) {
        self.entries.push((annotator.into(), label));
    }

    pub fn entries(&self) -> &[(String, StanceLabel)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for (_, label) in &self.entries {
            counts[label.code()] += 1;
        }
        counts
    }

    pub fn is_unanimous(&self) -> bool {
        match self.entries.split_first() {
            Some(((_, first), rest)) => rest.iter().all(|(_, l)| l == first),
            None => false,
        }
    }
}

/// A strict-majority label, or the absence of one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Majority {
    Label(StanceLabel),
    NoMajority,
}

impl Majority {
    pub fn label(self) -> Option<StanceLabel> {
        match self {
            Majority::Label(l) => Some(l),
            Majority::NoMajority => None,
        }
    }
}

/// Returns the label whose count is strictly greater than every other count.
/// Ties for the maximum yield [`Majority::NoMajority`]; there is no
/// tie-breaking.
pub fn majority(annotations: &AnnotationSet) -> Result<Majority, LabelError> {
    if annotations.is_empty() {
        return Err(LabelError::EmptyAnnotations);
    }
    Ok(majority_of_counts(&annotations.counts()))
}

pub fn majority_of_counts(counts: &[usize; NUM_CLASSES]) -> Majority {
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut winners = StanceLabel::ALL.iter().filter(|l| counts[l.code()] == max);
    match (winners.next(), winners.next()) {
        (Some(&l), None) if max > 0 => Majority::Label(l),
        _ => Majority::NoMajority,
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64; NUM_CLASSES]) -> ProbabilityVector {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Soft label with the default [`SoftLabelMode::Counts`] mode.
pub fn soft_label(annotations: &AnnotationSet) -> Result<ProbabilityVector, LabelError> {
    soft_label_with(annotations, SoftLabelMode::Counts)
}

pub fn soft_label_with(
    annotations: &AnnotationSet,
    mode: SoftLabelMode,
) -> Result<ProbabilityVector, LabelError> {
    if annotations.is_empty() {
        return Err(LabelError::EmptyAnnotations);
    }
    let counts = annotations.counts();
    let scale = match mode {
        SoftLabelMode::Counts => 1.0,
        SoftLabelMode::Frequencies => 1.0 / annotations.len() as f64,
    };
    let z = counts.map(|c| c as f64 * scale);
    Ok(softmax(&z))
}

/// One-hot supervision vector. Zero entries are allowed here: this is a
/// target, not a model output.
pub fn one_hot(label: StanceLabel) -> ProbabilityVector {
    let mut v = [0.0; NUM_CLASSES];
    v[label.code()] = 1.0;
    v
}

/// Index of the largest component; the lowest index wins ties.
pub fn argmax(p: &[f64; NUM_CLASSES]) -> StanceLabel {
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if p[k] > p[best] {
            best = k;
        }
    }
    StanceLabel::ALL[best]
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64; NUM_CLASSES]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}
