//! Temperature scaling, validation-set temperature fitting, Expected
//! Calibration Error and reliability-diagram bins.
//!
//! The temperature is fitted by minimizing mean negative log-likelihood: a
//! log-spaced grid over [`T_MIN`, `T_MAX`] that always contains T = 1,
//! followed by golden-section refinement in log T around the best grid
//! point. The result never has higher NLL than T = 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::classifier::avg_confidence;
use crate::classifier::hard_loss;
use crate::labels::{softmax, ProbabilityVector, StanceLabel, NUM_CLASSES};

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
/// Grid size, T = 1 included.
pub const GRID_POINTS: usize = 64;
/// Golden-section stopping width in log T.
pub const LOG_T_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("logits must be finite")]
    NonFiniteLogits,
    #[error("validation set is empty")]
    Empty,
    #[error("{0} logit vectors but {1} labels")]
    Misaligned(usize, usize),
    #[error("number of bins must be at least 1")]
    NoBins,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub const IDENTITY: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self, CalibrationError> {
        if t.is_finite() && t > 0.0 {
            Ok(Self(t))
        } else {
            Err(CalibrationError::BadTemperature(t))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// softmax(logits / t). Preserves the argmax for every t > 0.
pub fn scale(logits: &[f64; NUM_CLASSES], t: Temperature) -> Result<ProbabilityVector, CalibrationError> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(CalibrationError::NonFiniteLogits);
    }
    if t.0 == 1.0 {
        return Ok(softmax(logits));
    }
    Ok(softmax(&logits.map(|z| z / t.0)))
}

/// Mean NLL of temperature-scaled probabilities.
pub fn nll(logits: &[[f64; NUM_CLASSES]], labels: &[StanceLabel], t: Temperature) -> Result<f64, CalibrationError> {
    check_aligned(logits.len(), labels.len())?;
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        total += hard_loss(&scale(z, t)?, y);
    }
    Ok(total / logits.len() as f64)
}

fn check_aligned(n: usize, m: usize) -> Result<(), CalibrationError> {
    if n != m {
        return Err(CalibrationError::Misaligned(n, m));
    }
    if n == 0 {
        return Err(CalibrationError::Empty);
    }
    Ok(())
}

/// The search grid: `GRID_POINTS` log-spaced points over [`T_MIN`, `T_MAX`],
/// with the point nearest T = 1 replaced by exactly 1. Sorted ascending.
pub fn temperature_grid() -> Vec<f64> {
    let (lo, hi) = (T_MIN.ln(), T_MAX.ln());
    let m = GRID_POINTS;
    let mut grid: Vec<f64> = (0..m)
        .map(|i| (lo + (hi - lo) * i as f64 / (m - 1) as f64).exp())
        .collect();
    let nearest = (0..m)
        .min_by(|&a, &b| grid[a].ln().abs().total_cmp(&grid[b].ln().abs()))
        .expect("non-empty grid");
    grid[nearest] = 1.0;
    grid
}

/// Returns the temperature minimizing validation NLL.
pub fn fit_temperature(
    val_logits: &[[f64; NUM_CLASSES]],
    val_labels: &[StanceLabel],
) -> Result<Temperature, CalibrationError> {
    check_aligned(val_logits.len(), val_labels.len())?;
    let objective = |log_t: f64| nll(val_logits, val_labels, Temperature(log_t.exp()));

    let grid = temperature_grid();
    let mut best = (0usize, f64::INFINITY);
    for (i, &t) in grid.iter().enumerate() {
        let v = nll(val_logits, val_labels, Temperature(t))?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let (i, grid_nll) = best;
    let mut lo = grid[i.saturating_sub(1)].ln();
    let mut hi = grid[(i + 1).min(grid.len() - 1)].ln();

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (objective(c)?, objective(d)?);
    while hi - lo > LOG_T_TOLERANCE {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = objective(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = objective(d)?;
        }
    }
    let refined = (lo + hi) / 2.0;
    let refined_nll = objective(refined)?;
    if refined_nll < grid_nll {
        Ok(Temperature(refined.exp()))
    } else {
        Ok(Temperature(grid[i]))
    }
}

/// One equal-width confidence bin. `lower` is exclusive except for the first
/// bin, which is closed at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub empirical_accuracy: f64,
}

fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let width = n_bins as f64;
    let mut idx = ((confidence * width).ceil() as usize).saturating_sub(1).min(n_bins - 1);
    while idx > 0 && confidence <= idx as f64 / width {
        idx -= 1;
    }
    while idx + 1 < n_bins && confidence > (idx + 1) as f64 / width {
        idx += 1;
    }
    idx
}

/// Expected Calibration Error over `n_bins` equal-width confidence bins, with
/// confidence the maximum probability and correctness its argmax.
pub fn ece(
    probabilities: &[ProbabilityVector],
    labels: &[StanceLabel],
    n_bins: usize,
) -> Result<(f64, Vec<ReliabilityBin>), CalibrationError> {
    check_aligned(probabilities.len(), labels.len())?;
    if n_bins == 0 {
        return Err(CalibrationError::NoBins);
    }
    let mut sums = vec![(0usize, 0.0f64, 0usize); n_bins];
    for (p, &y) in probabilities.iter().zip(labels) {
        let pred = crate::labels::argmax(p);
        let conf = p[pred.code()];
        let slot = &mut sums[bin_index(conf, n_bins)];
        slot.0 += 1;
        slot.1 += conf;
        slot.2 += usize::from(pred == y);
    }
    let n = probabilities.len() as f64;
    let mut total = 0.0;
    let bins = sums
        .iter()
        .enumerate()
        .map(|(b, &(count, conf_sum, correct))| {
            let (mean_confidence, empirical_accuracy) = if count == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum / count as f64, correct as f64 / count as f64)
            };
            total += count as f64 / n * (empirical_accuracy - mean_confidence).abs();
            ReliabilityBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count,
                mean_confidence,
                empirical_accuracy,
            }
        })
        .collect();
    Ok((total, bins))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub temperature: Temperature,
    pub nll_before: f64,
    pub nll_after: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub avg_confidence_before: f64,
    pub avg_confidence_after: f64,
    /// Reliability bins after scaling.
    pub bins: Vec<ReliabilityBin>,
    pub bins_before: Vec<ReliabilityBin>,
}

impl CalibrationReport {
    /// Reliability bins as CSV (`stage,lower,upper,count,mean_confidence,empirical_accuracy`).
    pub fn bins_csv(&self) -> String {
        let mut out = String::from("stage,lower,upper,count,mean_confidence,empirical_accuracy\n");
        for (stage, bins) in [("uncalibrated", &self.bins_before), ("calibrated", &self.bins)] {
            for b in bins {
                out.push_str(&format!(
                    "{stage},{},{},{},{},{}\n",
                    b.lower, b.upper, b.count, b.mean_confidence, b.empirical_accuracy
                ));
            }
        }
        out
    }
}

/// Fits T on validation logits and reports NLL, ECE and confidence on the
/// evaluation logits before and after scaling.
pub fn calibrate(
    val_logits: &[[f64; NUM_CLASSES]],
    val_labels: &[StanceLabel],
    eval_logits: &[[f64; NUM_CLASSES]],
    eval_labels: &[StanceLabel],
    n_bins: usize,
) -> Result<CalibrationReport, CalibrationError> {
    let t = fit_temperature(val_logits, val_labels)?;
    check_aligned(eval_logits.len(), eval_labels.len())?;
    let before: Vec<_> = eval_logits
        .iter()
        .map(|z| scale(z, Temperature::IDENTITY))
        .collect::<Result<_, _>>()?;
    let after: Vec<_> = eval_logits.iter().map(|z| scale(z, t)).collect::<Result<_, _>>()?;
    let (ece_before, bins_before) = ece(&before, eval_labels, n_bins)?;
    let (ece_after, bins) = ece(&after, eval_labels, n_bins)?;
    Ok(CalibrationReport {
        temperature: t,
        nll_before: nll(eval_logits, eval_labels, Temperature::IDENTITY)?,
        nll_after: nll(eval_logits, eval_labels, t)?,
        ece_before,
        ece_after,
        avg_confidence_before: avg_confidence(&before),
        avg_confidence_after: avg_confidence(&after),
        bins,
        bins_before,
    })
}
