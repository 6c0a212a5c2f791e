//! Inter-annotator agreement: Fleiss' kappa, pairwise Cohen's kappa, raw
//! pairwise percent agreement and the full-agreement rate.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::labels::{AnnotationSet, StanceLabel, NUM_CLASSES};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgreementError {
    #[error("no items to score")]
    Empty,
    #[error("at least two raters per item are required (got {0})")]
    TooFewRaters(usize),
    #[error("item {item}: counts sum to {got}, expected {expected}")]
    CountMismatch {
        item: usize,
        got: usize,
        expected: usize,
    },
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("instance {0:?} has fewer than two stance annotations")]
    InsufficientAnnotations(String),
}

/// A chance-corrected agreement value, or `Undefined` when expected
/// agreement is 1 (every rating falls in one class). Serializes as a number
/// or the string `"n/a"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Value(f64),
    Undefined,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::Undefined => None,
        }
    }
}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kappa::Value(v) => write!(f, "{v:.4}"),
            Kappa::Undefined => f.write_str("n/a"),
        }
    }
}

impl Serialize for Kappa {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Kappa::Value(v) => s.serialize_f64(*v),
            Kappa::Undefined => s.serialize_str("n/a"),
        }
    }
}

fn chance_corrected(observed: f64, expected: f64) -> Kappa {
    if (1.0 - expected).abs() < 1e-12 {
        Kappa::Undefined
    } else {
        Kappa::Value((observed - expected) / (1.0 - expected))
    }
}

/// Fleiss' kappa over per-item class count vectors with a fixed number of
/// raters per item.
pub fn fleiss_kappa(items: &[[usize; NUM_CLASSES]], n_raters: usize) -> Result<Kappa, AgreementError> {
    if items.is_empty() {
        return Err(AgreementError::Empty);
    }
    if n_raters < 2 {
        return Err(AgreementError::TooFewRaters(n_raters));
    }
    let n = n_raters as f64;
    let mut class_totals = [0usize; NUM_CLASSES];
    let mut p_bar = 0.0;
    for (item, counts) in items.iter().enumerate() {
        let sum: usize = counts.iter().sum();
        if sum != n_raters {
            return Err(AgreementError::CountMismatch {
                item,
                got: sum,
                expected: n_raters,
            });
        }
        let pairs: usize = counts.iter().map(|&c| c * c.saturating_sub(1)).sum();
        p_bar += pairs as f64 / (n * (n - 1.0));
        for (t, c) in class_totals.iter_mut().zip(counts) {
            *t += c;
        }
    }
    p_bar /= items.len() as f64;
    let total = (items.len() * n_raters) as f64;
    let p_e: f64 = class_totals.iter().map(|&t| (t as f64 / total).powi(2)).sum();
    Ok(chance_corrected(p_bar, p_e))
}

/// Cohen's kappa between two aligned label sequences.
pub fn cohen_kappa(a: &[StanceLabel], b: &[StanceLabel]) -> Result<Kappa, AgreementError> {
    if a.len() != b.len() {
        return Err(AgreementError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(AgreementError::Empty);
    }
    let n = a.len() as f64;
    let mut marg_a = [0usize; NUM_CLASSES];
    let mut marg_b = [0usize; NUM_CLASSES];
    let mut agree = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        marg_a[x.code()] += 1;
        marg_b[y.code()] += 1;
        agree += usize::from(x == y);
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = (0..NUM_CLASSES)
        .map(|k| marg_a[k] as f64 * marg_b[k] as f64)
        .sum::<f64>()
        / (n * n);
    Ok(chance_corrected(p_o, p_e))
}

/// Mean over items of the fraction of agreeing rater pairs.
pub fn percent_agreement(sets: &[AnnotationSet]) -> Result<f64, AgreementError> {
    if sets.is_empty() {
        return Err(AgreementError::Empty);
    }
    let mut total = 0.0;
    for set in sets {
        let n = set.len();
        if n < 2 {
            return Err(AgreementError::TooFewRaters(n));
        }
        let pairs: usize = set.counts().iter().map(|&c| c * c.saturating_sub(1)).sum();
        total += pairs as f64 / (n * (n - 1)) as f64;
    }
    Ok(total / sets.len() as f64)
}

fn stance_sets(dataset: &Dataset) -> Result<Vec<AnnotationSet>, AgreementError> {
    dataset
        .instances
        .iter()
        .map(|inst| {
            inst.annotation_set()
                .filter(|s| s.len() >= 2)
                .ok_or_else(|| AgreementError::InsufficientAnnotations(inst.id.clone()))
        })
        .collect()
}

/// Fraction of instances on which every annotator chose the same label.
pub fn full_agreement_rate(dataset: &Dataset) -> Result<f64, AgreementError> {
    let sets = stance_sets(dataset)?;
    if sets.is_empty() {
        return Err(AgreementError::Empty);
    }
    let unanimous = sets.iter().filter(|s| s.is_unanimous()).count();
    Ok(unanimous as f64 / sets.len() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct PairwiseCohen {
    pub annotator_a: String,
    pub annotator_b: String,
    pub shared_items: usize,
    pub kappa: Kappa,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport {
    /// `None` when items do not share a constant rater count.
    pub fleiss_kappa: Option<Kappa>,
    pub fleiss_note: Option<String>,
    pub pairwise_cohen: Vec<PairwiseCohen>,
    /// Pairwise-averaged raw agreement.
    pub percent_agreement: f64,
    pub full_agreement_rate: f64,
    pub n_items: usize,
    /// Constant rater count, when there is one.
    pub n_raters_per_item: Option<usize>,
}

/// Computes every agreement statistic for a dataset. Instances with
/// `link-broken` markers or fewer than two stance annotations are rejected.
pub fn agreement_report(dataset: &Dataset) -> Result<AgreementReport, AgreementError> {
    let sets = stance_sets(dataset)?;
    if sets.is_empty() {
        return Err(AgreementError::Empty);
    }
    let first_len = sets[0].len();
    let constant = sets.iter().all(|s| s.len() == first_len);
    let (fleiss, note) = if constant {
        let counts: Vec<_> = sets.iter().map(AnnotationSet::counts).collect();
        (Some(fleiss_kappa(&counts, first_len)?), None)
    } else {
        (None, Some("rater count varies across items".to_string()))
    };

    // Pair annotators by id over the items they both labeled.
    let mut pairs: BTreeMap<(String, String), (Vec<StanceLabel>, Vec<StanceLabel>)> = BTreeMap::new();
    for set in &sets {
        let mut entries: Vec<_> = set.entries().to_vec();
        entries.sort_by(|x, y| x.0.cmp(&y.0));
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                if entries[i].0 == entries[j].0 {
                    continue;
                }
                let slot = pairs
                    .entry((entries[i].0.clone(), entries[j].0.clone()))
                    .or_default();
                slot.0.push(entries[i].1);
                slot.1.push(entries[j].1);
            }
        }
    }
    let pairwise_cohen = pairs
        .into_iter()
        .map(|((a, b), (la, lb))| {
            let kappa = cohen_kappa(&la, &lb)?;
            Ok(PairwiseCohen {
                annotator_a: a,
                annotator_b: b,
                shared_items: la.len(),
                kappa,
            })
        })
        .collect::<Result<Vec<_>, AgreementError>>()?;

    Ok(AgreementReport {
        fleiss_kappa: fleiss,
        fleiss_note: note,
        pairwise_cohen,
        percent_agreement: percent_agreement(&sets)?,
        full_agreement_rate: full_agreement_rate(dataset)?,
        n_items: sets.len(),
        n_raters_per_item: constant.then_some(first_len),
    })
}
