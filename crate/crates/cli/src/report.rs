//! Run metrics as persisted in `metrics.json`, and the comparison table
//! built from them (Markdown and JSON).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use stancekit::classifier::EvalReport;
use stancekit::corpus::Source;
use stancekit::experiment::{Approach, ExperimentResult};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub approach: Approach,
    pub dataset: Source,
    pub model: String,
    pub seed: u64,
    pub calibrate: bool,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Calibrated metrics when `calibrate` is on, otherwise uncalibrated.
    pub headline: EvalReport,
    pub uncalibrated: EvalReport,
    pub calibrated: EvalReport,
    pub temperature: f64,
    pub ece_uncalibrated: f64,
    pub ece_calibrated: f64,
    /// Cross-entropy of uncalibrated test predictions against the
    /// annotators' soft labels.
    pub test_soft_cross_entropy: f64,
    pub final_train_loss: f64,
}

impl RunMetrics {
    pub fn new(config: &ExperimentConfig, result: &ExperimentResult) -> Self {
        Self {
            approach: config.approach,
            dataset: config.dataset_source,
            model: config.model_name(),
            seed: config.seed,
            calibrate: config.calibrate,
            n_train: result.n_train,
            n_validation: result.n_validation,
            n_test: result.n_test,
            headline: result.headline().clone(),
            uncalibrated: result.uncalibrated.clone(),
            calibrated: result.calibrated.clone(),
            temperature: result.calibration.temperature.get(),
            ece_uncalibrated: result.calibration.ece_before,
            ece_calibrated: result.calibration.ece_after,
            test_soft_cross_entropy: result.test_soft_cross_entropy,
            final_train_loss: result.training.loss_trace.last().copied().unwrap_or(f64::NAN),
        }
    }

    pub fn row(&self) -> TableRow {
        let h = &self.headline;
        TableRow {
            approach: self.approach.to_string(),
            dataset: self.dataset.to_string(),
            model: self.model.clone(),
            seed: self.seed,
            accuracy: h.accuracy,
            precision: h.macro_precision,
            recall: h.macro_recall,
            f1: h.macro_f1,
            avg_confidence: h.avg_confidence,
            ece_u: self.ece_uncalibrated,
            ece_c: self.ece_calibrated,
            constant_prediction: h.constant_prediction,
        }
    }
}

/// One table row. Metric fields are fractions; the Markdown rendering shows
/// them as percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub approach: String,
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub avg_confidence: f64,
    pub ece_u: f64,
    pub ece_c: f64,
    pub constant_prediction: bool,
}

pub const TABLE_HEADER: [&str; 10] = [
    "Approach", "Dataset", "Model", "Acc.", "Prec.", "Rec.", "F1", "Avg. Conf.", "ECE U", "ECE C",
];

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

pub fn markdown_table(rows: &[TableRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", TABLE_HEADER.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(TABLE_HEADER.len()));
    for r in rows {
        let model = if r.constant_prediction {
            format!("{} (constant prediction)", r.model)
        } else {
            r.model.clone()
        };
        let cells = [
            r.approach.clone(),
            r.dataset.clone(),
            model,
            pct(r.accuracy),
            pct(r.precision),
            pct(r.recall),
            pct(r.f1),
            pct(r.avg_confidence),
            pct(r.ece_u),
            pct(r.ece_c),
        ];
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}
