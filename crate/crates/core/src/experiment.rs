//! End-to-end training and evaluation of one approach on a split dataset:
//! featurize, train on the train split, fit a temperature on the
//! validation split, and score the test split against majority labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{calibrate, scale, CalibrationError, CalibrationReport, Temperature};
use crate::classifier::{
    evaluate_probabilities, featurize, soft_loss, train, ClassifierError, EvalReport, Example, FeatureVector,
    LossMode, TrainConfig, TrainOutcome,
};
use crate::corpus::{Dataset, Instance, Split};
use crate::labels::{soft_label_with, ProbabilityVector, SoftLabelMode, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("instance {0:?} has no usable majority label; run preprocessing first")]
    NoMajority(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// majority-vote hard labels, cross-entropy loss
    #[default]
    Baseline,
    /// softmax soft labels, soft loss
    MultiPerspective,
}

impl Approach {
    pub fn loss_mode(self) -> LossMode {
        match self {
            Approach::Baseline => LossMode::Hard,
            Approach::MultiPerspective => LossMode::Soft,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Baseline => "baseline",
            Approach::MultiPerspective => "multi_perspective",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Approach::Baseline => "Baseline",
            Approach::MultiPerspective => "Multi-Perspective",
        })
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "baseline" => Ok(Approach::Baseline),
            "multi_perspective" | "multiperspective" => Ok(Approach::MultiPerspective),
            other => Err(format!("unknown approach {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub approach: Approach,
    pub feature_dimension: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub soft_label_mode: SoftLabelMode,
    pub calibrate: bool,
    pub n_bins: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            approach: Approach::Baseline,
            feature_dimension: 1024,
            learning_rate: 0.5,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            soft_label_mode: SoftLabelMode::Counts,
            calibrate: true,
            n_bins: 10,
        }
    }
}

impl ExperimentSettings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            loss_mode: self.approach.loss_mode(),
        }
    }
}

/// Builds training examples (features plus both targets) from instances.
pub fn build_examples<'a>(
    instances: impl IntoIterator<Item = &'a Instance>,
    dimension: usize,
    feature_seed: u64,
    mode: SoftLabelMode,
) -> Result<Vec<Example>, ExperimentError> {
    instances
        .into_iter()
        .map(|inst| {
            let hard = inst.majority().ok_or_else(|| ExperimentError::NoMajority(inst.id.clone()))?;
            let set = inst.annotation_set().ok_or_else(|| ExperimentError::NoMajority(inst.id.clone()))?;
            let soft = soft_label_with(&set, mode).map_err(|_| ExperimentError::NoMajority(inst.id.clone()))?;
            Ok(Example {
                features: featurize(&inst.model_text(), dimension, feature_seed),
                hard,
                soft,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub settings: ExperimentSettings,
    pub training: TrainOutcome,
    /// Test metrics on uncalibrated probabilities.
    pub uncalibrated: EvalReport,
    /// Test metrics on temperature-scaled probabilities.
    pub calibrated: EvalReport,
    pub calibration: CalibrationReport,
    /// Mean cross-entropy of the (uncalibrated) test predictions against the
    /// annotators' soft labels.
    pub test_soft_cross_entropy: f64,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
}

impl ExperimentResult {
    /// Metrics selected by the `calibrate` switch.
    pub fn headline(&self) -> &EvalReport {
        if self.settings.calibrate {
            &self.calibrated
        } else {
            &self.uncalibrated
        }
    }
}

fn split_examples(
    dataset: &Dataset,
    split: Split,
    settings: &ExperimentSettings,
) -> Result<Vec<Example>, ExperimentError> {
    let ex = build_examples(
        dataset.with_split(split),
        settings.feature_dimension,
        settings.seed,
        settings.soft_label_mode,
    )?;
    if ex.is_empty() {
        return Err(ExperimentError::EmptySplit(split.as_str()));
    }
    Ok(ex)
}

pub fn run_experiment(dataset: &Dataset, settings: &ExperimentSettings) -> Result<ExperimentResult, ExperimentError> {
    let train_set = split_examples(dataset, Split::Train, settings)?;
    let val_set = split_examples(dataset, Split::Validation, settings)?;
    let test_set = split_examples(dataset, Split::Test, settings)?;

    let training = train(&train_set, &settings.train_config())?;
    let state = &training.state;
    let logits = |set: &[Example]| -> Result<Vec<[f64; NUM_CLASSES]>, ClassifierError> {
        set.iter().map(|e| state.logits(&e.features)).collect()
    };
    let val_logits = logits(&val_set)?;
    let test_logits = logits(&test_set)?;
    let val_labels: Vec<_> = val_set.iter().map(|e| e.hard).collect();
    let test_labels: Vec<_> = test_set.iter().map(|e| e.hard).collect();

    let calibration = calibrate(&val_logits, &val_labels, &test_logits, &test_labels, settings.n_bins)?;
    let probs_at = |t: Temperature| -> Result<Vec<ProbabilityVector>, CalibrationError> {
        test_logits.iter().map(|z| scale(z, t)).collect()
    };
    let raw = probs_at(Temperature::IDENTITY)?;
    let scaled = probs_at(calibration.temperature)?;
    let soft_ce = raw
        .iter()
        .zip(&test_set)
        .map(|(p, e)| soft_loss(p, &e.soft))
        .sum::<f64>()
        / raw.len() as f64;

    Ok(ExperimentResult {
        settings: *settings,
        uncalibrated: evaluate_probabilities(&raw, &test_labels),
        calibrated: evaluate_probabilities(&scaled, &test_labels),
        calibration,
        test_soft_cross_entropy: soft_ce,
        n_train: train_set.len(),
        n_validation: val_set.len(),
        n_test: test_set.len(),
        training,
    })
}

/// Features of a split, for callers that only need inputs.
pub fn split_features(dataset: &Dataset, split: Split, dimension: usize, seed: u64) -> Vec<FeatureVector> {
    dataset
        .with_split(split)
        .map(|i| featurize(&i.model_text(), dimension, seed))
        .collect()
}
