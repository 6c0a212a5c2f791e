//! Linear softmax classifier over hashed text features, trained by
//! mini-batch gradient descent on either hard cross-entropy (majority
//! labels) or soft cross-entropy (annotator label distributions).

mod features;
mod metrics;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{featurize, token_bucket, FeatureVector, MIN_DIMENSION};
pub use metrics::{avg_confidence, evaluate_probabilities, ClassMetrics, EvalReport};

use crate::labels::{one_hot, softmax, ProbabilityVector, StanceLabel, NUM_CLASSES};

/// Floor applied to probabilities inside the logarithm of the losses.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("feature dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyData,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// cross-entropy against the one-hot majority label
    #[default]
    Hard,
    /// cross-entropy against the soft label
    Soft,
}

impl FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "hard" => Ok(LossMode::Hard),
            "soft" => Ok(LossMode::Soft),
            other => Err(format!("unknown loss mode {other:?}")),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Hard => "hard",
            LossMode::Soft => "soft",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 6,
            batch_size: 8,
            seed: 0,
            loss_mode: LossMode::Hard,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ClassifierError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(ClassifierError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ClassifierError::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Weights (row-major, one row of `dimension` per class) and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierState {
    pub dimension: usize,
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_CLASSES],
    pub config: TrainConfig,
    /// Seed used by [`featurize`] for the inputs this model was trained on.
    pub feature_seed: u64,
}

impl ClassifierState {
    pub fn zeros(dimension: usize, config: TrainConfig) -> Self {
        Self {
            dimension,
            weights: vec![0.0; NUM_CLASSES * dimension],
            bias: [0.0; NUM_CLASSES],
            config,
            feature_seed: config.seed,
        }
    }

    fn check(&self, x: &FeatureVector) -> Result<(), ClassifierError> {
        if x.dimension() != self.dimension {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dimension,
                got: x.dimension(),
            });
        }
        Ok(())
    }

    /// Wx + b.
    pub fn logits(&self, x: &FeatureVector) -> Result<[f64; NUM_CLASSES], ClassifierError> {
        self.check(x)?;
        let mut z = self.bias;
        for (k, zk) in z.iter_mut().enumerate() {
            let row = &self.weights[k * self.dimension..(k + 1) * self.dimension];
            *zk += x.entries().iter().map(|&(i, v)| row[i] * v).sum::<f64>();
        }
        Ok(z)
    }

    pub fn forward(&self, x: &FeatureVector) -> Result<ProbabilityVector, ClassifierError> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|w| w.is_finite())
    }
}

/// softmax(Wx + b).
pub fn forward(state: &ClassifierState, x: &FeatureVector) -> Result<ProbabilityVector, ClassifierError> {
    state.forward(x)
}

/// −log p[y], with p floored at [`LOG_FLOOR`].
pub fn hard_loss(p: &ProbabilityVector, y: StanceLabel) -> f64 {
    -p[y.code()].max(LOG_FLOOR).ln()
}

/// Cross-entropy −Σ target[c] log p[c], with p floored at [`LOG_FLOOR`].
pub fn soft_loss(p: &ProbabilityVector, target: &ProbabilityVector) -> f64 {
    -target
        .iter()
        .zip(p)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, q)| t * q.max(LOG_FLOOR).ln())
        .sum::<f64>()
}

/// One training example with both supervision targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub hard: StanceLabel,
    pub soft: ProbabilityVector,
}

impl Example {
    pub fn target(&self, mode: LossMode) -> ProbabilityVector {
        match mode {
            LossMode::Hard => one_hot(self.hard),
            LossMode::Soft => self.soft,
        }
    }

    pub fn loss(&self, p: &ProbabilityVector, mode: LossMode) -> f64 {
        match mode {
            LossMode::Hard => hard_loss(p, self.hard),
            LossMode::Soft => soft_loss(p, &self.soft),
        }
    }
}

/// Gradient of the mean batch loss with respect to weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_CLASSES],
    /// Mean batch loss at the current parameters.
    pub loss: f64,
}

/// Mean loss of `state` over `batch`.
pub fn mean_loss(state: &ClassifierState, batch: &[Example], mode: LossMode) -> Result<f64, ClassifierError> {
    if batch.is_empty() {
        return Err(ClassifierError::EmptyData);
    }
    let mut total = 0.0;
    for ex in batch {
        total += ex.loss(&state.forward(&ex.features)?, mode);
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of the mean cross-entropy: ∂L/∂z = p − target per
/// example, pushed through the linear layer and averaged.
pub fn gradient(state: &ClassifierState, batch: &[Example], mode: LossMode) -> Result<Gradient, ClassifierError> {
    if batch.is_empty() {
        return Err(ClassifierError::EmptyData);
    }
    let d = state.dimension;
    let mut g = Gradient {
        weights: vec![0.0; NUM_CLASSES * d],
        bias: [0.0; NUM_CLASSES],
        loss: 0.0,
    };
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        let p = state.forward(&ex.features)?;
        g.loss += ex.loss(&p, mode) * scale;
        let t = ex.target(mode);
        for k in 0..NUM_CLASSES {
            let dz = (p[k] - t[k]) * scale;
            g.bias[k] += dz;
            let row = &mut g.weights[k * d..(k + 1) * d];
            for &(i, v) in ex.features.entries() {
                row[i] += dz * v;
            }
        }
    }
    Ok(g)
}

/// A trained model and its per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: ClassifierState,
    pub loss_trace: Vec<f64>,
}

/// Plain mini-batch gradient descent from zero-initialized parameters. Each
/// epoch visits the data in an order drawn from a generator seeded with
/// `config.seed`; the loss trace holds the mean loss over all of `data`
/// after each epoch.
pub fn train(data: &[Example], config: &TrainConfig) -> Result<TrainOutcome, ClassifierError> {
    config.validate()?;
    let first = data.first().ok_or(ClassifierError::EmptyData)?;
    let dimension = first.features.dimension();
    if let Some(bad) = data.iter().find(|e| e.features.dimension() != dimension) {
        return Err(ClassifierError::DimensionMismatch {
            expected: dimension,
            got: bad.features.dimension(),
        });
    }

    let mut state = ClassifierState::zeros(dimension, *config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let g = gradient(&state, &batch, config.loss_mode)?;
            if !g.loss.is_finite() {
                return Err(ClassifierError::Diverged { epoch, batch: b });
            }
            for (w, dw) in state.weights.iter_mut().zip(&g.weights) {
                *w -= config.learning_rate * dw;
            }
            for (w, dw) in state.bias.iter_mut().zip(&g.bias) {
                *w -= config.learning_rate * dw;
            }
            if !state.is_finite() {
                return Err(ClassifierError::Diverged { epoch, batch: b });
            }
        }
        let loss = mean_loss(&state, data, config.loss_mode)?;
        if !loss.is_finite() {
            return Err(ClassifierError::Diverged {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
            });
        }
        log::debug!("epoch {epoch}: mean loss {loss:.6}");
        loss_trace.push(loss);
    }
    Ok(TrainOutcome { state, loss_trace })
}

/// Scores `state` on `data` against `truth`.
pub fn evaluate(
    state: &ClassifierState,
    data: &[FeatureVector],
    truth: &[StanceLabel],
) -> Result<EvalReport, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyData);
    }
    let probs = data
        .iter()
        .map(|x| state.forward(x))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(evaluate_probabilities(&probs, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{entropy, StanceLabel::*};
    use proptest::prelude::*;
    use rand::Rng;

    fn dense(v: &[f64]) -> FeatureVector {
        FeatureVector::from_dense(v).unwrap()
    }

    #[test]
    fn forward_examples() {
        let s = ClassifierState::zeros(16, TrainConfig::default());
        let x = featurize("any text at all", 16, 0);
        for p in s.forward(&x).unwrap() {
            assert!((p - 0.25).abs() < 1e-15);
        }

        let mut s = ClassifierState::zeros(16, TrainConfig::default());
        s.bias = [1.0, 0.0, 0.0, 0.0];
        let p = s.forward(&FeatureVector::zeros(16)).unwrap();
        // 30-digit reference: (0.47536689, 0.17487770, 0.17487770, 0.17487770)
        for (got, want) in p.iter().zip([0.4754, 0.1749, 0.1749, 0.1749]) {
            assert!((got - want).abs() < 1e-4);
        }

        let err = s.forward(&FeatureVector::zeros(32)).unwrap_err();
        assert_eq!(err, ClassifierError::DimensionMismatch { expected: 16, got: 32 });
    }

    #[test]
    fn shift_invariance() {
        let mut s = ClassifierState::zeros(2, TrainConfig::default());
        s.weights = vec![0.3, -1.0, 2.0, 0.1, -0.5, 0.5, 1.5, 0.0];
        s.bias = [0.1, 0.2, -0.3, 0.0];
        let x = dense(&[0.7, -0.2]);
        let p = s.forward(&x).unwrap();
        s.bias = s.bias.map(|b| b + 42.0);
        let q = s.forward(&x).unwrap();
        for (a, b) in p.iter().zip(q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_loss_examples() {
        assert_eq!(hard_loss(&[1.0, 0.0, 0.0, 0.0], Pro), 0.0);
        assert!((hard_loss(&[0.25; 4], Neutral) - 4f64.ln()).abs() < 1e-15);
        assert!((hard_loss(&[0.5, 0.3, 0.1, 0.1], Pro) - 2f64.ln()).abs() < 1e-15);
        // floored rather than infinite
        assert!((hard_loss(&[1.0, 0.0, 0.0, 0.0], Against) + LOG_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn soft_loss_examples() {
        let p = [0.5, 0.3, 0.1, 0.1];
        assert_eq!(soft_loss(&p, &one_hot(Pro)), hard_loss(&p, Pro));
        assert!((soft_loss(&[0.25; 4], &[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        let t = [0.6103, 0.2245, 0.0826, 0.0826];
        assert!((soft_loss(&[0.25; 4], &t) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_zero_at_target() {
        let s = ClassifierState::zeros(4, TrainConfig::default());
        let ex = Example {
            features: dense(&[1.0, 0.5, 0.0, -0.5]),
            hard: Pro,
            soft: [0.25; 4],
        };
        let g = gradient(&s, &[ex], LossMode::Soft).unwrap();
        assert!(g.weights.iter().chain(&g.bias).all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_closed_form_for_uniform_prediction() {
        let s = ClassifierState::zeros(3, TrainConfig::default());
        let x = [0.2, -1.0, 0.5];
        let ex = Example {
            features: dense(&x),
            hard: Pro,
            soft: one_hot(Pro),
        };
        let g = gradient(&s, &[ex], LossMode::Hard).unwrap();
        let dz = [0.25 - 1.0, 0.25, 0.25, 0.25];
        for k in 0..4 {
            assert!((g.bias[k] - dz[k]).abs() < 1e-15);
            for i in 0..3 {
                assert!((g.weights[k * 3 + i] - dz[k] * x[i]).abs() < 1e-15);
            }
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, d: usize) -> ClassifierState {
        let mut s = ClassifierState::zeros(d, TrainConfig::default());
        for w in &mut s.weights {
            *w = rng.gen_range(-1.0..1.0);
        }
        for b in &mut s.bias {
            *b = rng.gen_range(-1.0..1.0);
        }
        s
    }

    fn random_batch(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Example> {
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let z: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
                Example {
                    features: dense(&x),
                    hard: StanceLabel::ALL[rng.gen_range(0..4)],
                    soft: softmax(&z),
                }
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for trial in 0..10 {
            let d = 5;
            let s = random_state(&mut rng, d);
            let batch = random_batch(&mut rng, d, 4);
            let mode = if trial % 2 == 0 { LossMode::Hard } else { LossMode::Soft };
            let g = gradient(&s, &batch, mode).unwrap();
            for idx in 0..s.weights.len() {
                let mut plus = s.clone();
                plus.weights[idx] += h;
                let mut minus = s.clone();
                minus.weights[idx] -= h;
                let fd = (mean_loss(&plus, &batch, mode).unwrap() - mean_loss(&minus, &batch, mode).unwrap()) / (2.0 * h);
                let a = g.weights[idx];
                assert!((a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1e-3), "{a} vs {fd}");
            }
        }
    }

    #[test]
    fn learns_separable_two_class_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<Example> = (0..200)
            .map(|i| {
                let label = if i % 2 == 0 { Pro } else { Against };
                let sign = if label == Pro { 1.0 } else { -1.0 };
                let x: Vec<f64> = (0..16)
                    .map(|j| if j == 0 { sign * rng.gen_range(0.2..1.0) } else { rng.gen_range(-1.0..1.0) })
                    .collect();
                Example {
                    features: dense(&x),
                    hard: label,
                    soft: one_hot(label),
                }
            })
            .collect();
        let config = TrainConfig {
            learning_rate: 0.5,
            epochs: 50,
            batch_size: 8,
            seed: 3,
            loss_mode: LossMode::Hard,
        };
        let out = train(&data, &config).unwrap();
        let xs: Vec<_> = data.iter().map(|e| e.features.clone()).collect();
        let truth: Vec<_> = data.iter().map(|e| e.hard).collect();
        let report = evaluate(&out.state, &xs, &truth).unwrap();
        assert!(report.accuracy > 0.95, "{}", report.accuracy);
        assert_eq!(out.loss_trace.len(), 50);
    }

    #[test]
    fn single_point_loss_decreases() {
        let ex = Example {
            features: dense(&[0.5, -0.25, 1.0, 0.0]),
            hard: Neutral,
            soft: one_hot(Neutral),
        };
        let config = TrainConfig {
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 1,
            seed: 0,
            loss_mode: LossMode::Hard,
        };
        let out = train(&[ex], &config).unwrap();
        assert!(out.loss_trace.windows(2).all(|w| w[1] < w[0]), "{:?}", out.loss_trace);
        assert!(out.loss_trace[0] < 4f64.ln());
    }

    #[test]
    fn soft_mode_with_one_hot_targets_matches_hard_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut data = random_batch(&mut rng, 8, 40);
        for ex in &mut data {
            ex.soft = one_hot(ex.hard);
        }
        let hard = TrainConfig {
            learning_rate: 0.3,
            epochs: 7,
            batch_size: 6,
            seed: 4,
            loss_mode: LossMode::Hard,
        };
        let soft = TrainConfig {
            loss_mode: LossMode::Soft,
            ..hard
        };
        let a = train(&data, &hard).unwrap();
        let b = train(&data, &soft).unwrap();
        for (x, y) in a.state.weights.iter().zip(&b.state.weights) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in a.loss_trace.iter().zip(&b.loss_trace) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_batch(&mut rng, 6, 30);
        let config = TrainConfig {
            loss_mode: LossMode::Soft,
            seed: 17,
            ..TrainConfig::default()
        };
        let a = train(&data, &config).unwrap();
        let b = train(&data, &config).unwrap();
        assert_eq!(
            a.loss_trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.loss_trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn rejects_bad_config_and_data() {
        let config = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&[], &config), Err(ClassifierError::InvalidConfig(_))));
        assert_eq!(train(&[], &TrainConfig::default()), Err(ClassifierError::EmptyData));
        let data = vec![
            Example { features: FeatureVector::zeros(16), hard: Pro, soft: one_hot(Pro) },
            Example { features: FeatureVector::zeros(32), hard: Pro, soft: one_hot(Pro) },
        ];
        assert!(matches!(train(&data, &TrainConfig::default()), Err(ClassifierError::DimensionMismatch { .. })));
    }

    #[test]
    fn divergence_is_reported() {
        let data = vec![Example {
            features: dense(&[1e300, 1e300]),
            hard: Pro,
            soft: one_hot(Pro),
        }];
        let config = TrainConfig {
            learning_rate: 1e10,
            epochs: 3,
            batch_size: 1,
            seed: 0,
            loss_mode: LossMode::Hard,
        };
        assert!(matches!(train(&data, &config), Err(ClassifierError::Diverged { .. })));
    }

    fn arb_distribution() -> impl Strategy<Value = ProbabilityVector> {
        prop::array::uniform4(-4.0f64..4.0).prop_map(|z| softmax(&z))
    }

    proptest! {
        #[test]
        fn one_hot_reduction(p in arb_distribution(), k in 0usize..4) {
            let y = StanceLabel::ALL[k];
            prop_assert!((soft_loss(&p, &one_hot(y)) - hard_loss(&p, y)).abs() <= 1e-12);
        }

        #[test]
        fn gibbs_inequality(p in arb_distribution(), t in arb_distribution()) {
            prop_assert!(soft_loss(&p, &t) >= entropy(&t) - 1e-12);
            prop_assert!((soft_loss(&t, &t) - entropy(&t)).abs() < 1e-12);
        }

        #[test]
        fn forward_is_a_positive_distribution(z in prop::array::uniform4(-30.0f64..30.0)) {
            let mut s = ClassifierState::zeros(16, TrainConfig::default());
            s.bias = z;
            let p = s.forward(&FeatureVector::zeros(16)).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v > 0.0));
        }
    }
}
