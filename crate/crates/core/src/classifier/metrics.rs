//! Classification metrics: accuracy, macro precision/recall/F1, average
//! confidence and the confusion matrix.

use serde::{Deserialize, Serialize};

use crate::labels::{argmax, ProbabilityVector, StanceLabel, NUM_CLASSES};
use crate::textmetrics::MetricTriple;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: StanceLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl ClassMetrics {
    pub fn triple(&self) -> MetricTriple {
        MetricTriple::new(self.precision, self.recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Mean of the per-instance maximum probability.
    pub avg_confidence: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    /// Classes with zero support, left out of the macro means.
    pub excluded_classes: Vec<StanceLabel>,
    /// Every instance received the same predicted class.
    pub constant_prediction: bool,
}

/// Mean of the per-instance maximum probability.
pub fn avg_confidence(probabilities: &[ProbabilityVector]) -> f64 {
    if probabilities.is_empty() {
        return 0.0;
    }
    probabilities
        .iter()
        .map(|p| p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / probabilities.len() as f64
}

/// Scores predicted distributions against ground-truth labels.
///
/// # Panics
/// If the slices are empty or differ in length.
pub fn evaluate_probabilities(probabilities: &[ProbabilityVector], truth: &[StanceLabel]) -> EvalReport {
    assert!(!probabilities.is_empty(), "evaluation needs at least one instance");
    assert_eq!(probabilities.len(), truth.len(), "predictions and labels must align");

    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    let predicted: Vec<StanceLabel> = probabilities.iter().map(argmax).collect();
    for (p, t) in predicted.iter().zip(truth) {
        confusion[t.code()][p.code()] += 1;
    }
    let n = truth.len();
    let correct: usize = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();

    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    let mut excluded = Vec::new();
    for label in StanceLabel::ALL {
        let k = label.code();
        let support: usize = confusion[k].iter().sum();
        let predicted_k: usize = (0..NUM_CLASSES).map(|r| confusion[r][k]).sum();
        let tp = confusion[k][k] as f64;
        let precision = if predicted_k == 0 { 0.0 } else { tp / predicted_k as f64 };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        let t = MetricTriple::new(precision, recall);
        if support == 0 {
            excluded.push(label);
        }
        per_class.push(ClassMetrics {
            label,
            precision,
            recall,
            f1: t.f1,
            support,
        });
    }
    let scored: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| scored.iter().map(|c| f(c)).sum::<f64>() / scored.len() as f64;

    EvalReport {
        n,
        accuracy: correct as f64 / n as f64,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        avg_confidence: avg_confidence(probabilities),
        per_class,
        confusion,
        excluded_classes: excluded,
        constant_prediction: predicted.windows(2).all(|w| w[0] == w[1]),
    }
}
