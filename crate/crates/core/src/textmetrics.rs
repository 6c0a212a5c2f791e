//! Single-reference summary metrics: ROUGE-1/2/L, BLEU, and a greedy
//! token-embedding similarity score computed from precomputed vectors.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smoothing value substituted for zero clipped n-gram matches in BLEU.
pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TextMetricError {
    #[error("ROUGE-N supports n = 1 or 2, got {0}")]
    UnsupportedOrder(usize),
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("embedding matrix is empty")]
    EmptyEmbeddings,
    #[error("token {0} has a zero-norm vector")]
    ZeroNorm(usize),
    #[error("embedding rows ({rows}) do not match tokens ({tokens}) or have ragged width")]
    Shape { rows: usize, tokens: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricTriple {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    fn from_overlap(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        let ratio = |total: usize| if total == 0 { 0.0 } else { overlap as f64 / total as f64 };
        Self::new(ratio(cand_total), ratio(ref_total))
    }
}

/// Lowercases and splits on any non-alphanumeric character.
pub fn normalize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped overlap and the candidate/reference n-gram totals.
fn clipped_overlap(cand: &[String], reference: &[String], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let overlap = c
        .iter()
        .map(|(gram, &count)| count.min(r.get(gram).copied().unwrap_or(0)))
        .sum();
    (overlap, c.values().sum(), r.values().sum())
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<MetricTriple, TextMetricError> {
    if !(1..=2).contains(&n) {
        return Err(TextMetricError::UnsupportedOrder(n));
    }
    let (overlap, c, r) = clipped_overlap(&normalize(candidate), &normalize(reference), n);
    Ok(MetricTriple::from_overlap(overlap, c, r))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> MetricTriple {
    let c = normalize(candidate);
    let r = normalize(reference);
    MetricTriple::from_overlap(lcs_len(&c, &r), c.len(), r.len())
}

/// Sentence BLEU against one reference: uniform-weight geometric mean of
/// clipped n-gram precisions times the brevity penalty. Zero matches are
/// replaced by [`BLEU_EPSILON`]; orders longer than the candidate are left
/// out of the mean.
pub fn bleu(candidate: &str, reference: &str, max_n: usize) -> f64 {
    let c = normalize(candidate);
    let r = normalize(reference);
    if c.is_empty() || max_n == 0 {
        return 0.0;
    }
    let orders = max_n.min(c.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let (overlap, total, _) = clipped_overlap(&c, &r, n);
        let matched = if overlap == 0 { BLEU_EPSILON } else { overlap as f64 };
        log_sum += (matched / total as f64).ln();
    }
    let brevity = if c.len() < r.len() {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    } else {
        1.0
    };
    (brevity * (log_sum / orders as f64).exp()).clamp(0.0, 1.0)
}

/// Token strings with one embedding row each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddings {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl TokenEmbeddings {
    pub fn new(tokens: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self, TextMetricError> {
        let e = Self { tokens, vectors };
        e.validate()?;
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), TextMetricError> {
        let d = self.dim();
        if self.vectors.len() != self.tokens.len() || d == 0 || self.vectors.iter().any(|v| v.len() != d) {
            return Err(TextMetricError::Shape {
                rows: self.vectors.len(),
                tokens: self.tokens.len(),
            });
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, TextMetricError> {
        let e: Self = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        e.validate()?;
        Ok(e)
    }
}

fn unit_rows(e: &TokenEmbeddings) -> Result<Vec<Vec<f64>>, TextMetricError> {
    e.vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                Err(TextMetricError::ZeroNorm(i))
            } else {
                Ok(v.iter().map(|x| x / norm).collect())
            }
        })
        .collect()
}

/// Greedy matching: each candidate token takes its best cosine match among
/// reference tokens (precision) and vice versa (recall).
pub fn greedy_embedding_score(
    candidate: &TokenEmbeddings,
    reference: &TokenEmbeddings,
) -> Result<MetricTriple, TextMetricError> {
    if candidate.vectors.is_empty() || reference.vectors.is_empty() {
        return Err(TextMetricError::EmptyEmbeddings);
    }
    candidate.validate()?;
    reference.validate()?;
    if candidate.dim() != reference.dim() {
        return Err(TextMetricError::DimensionMismatch(candidate.dim(), reference.dim()));
    }
    let c = unit_rows(candidate)?;
    let r = unit_rows(reference)?;
    let sim: Vec<Vec<f64>> = c
        .iter()
        .map(|x| r.iter().map(|y| x.iter().zip(y).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let precision = sim
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / c.len() as f64;
    let recall = (0..r.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / r.len() as f64;
    Ok(MetricTriple::new(precision, recall))
}

/// All n-gram metrics for one candidate/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryScores {
    pub rouge1: MetricTriple,
    pub rouge2: MetricTriple,
    pub rouge_l: MetricTriple,
    pub bleu: f64,
}

pub fn score_pair(candidate: &str, reference: &str) -> SummaryScores {
    SummaryScores {
        rouge1: rouge_n(candidate, reference, 1).expect("order 1 is supported"),
        rouge2: rouge_n(candidate, reference, 2).expect("order 2 is supported"),
        rouge_l: rouge_l(candidate, reference),
        bleu: bleu(candidate, reference, 4),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: MetricTriple, p: f64, r: f64, f: f64) {
        assert!((a.precision - p).abs() < 1e-9, "{a:?}");
        assert!((a.recall - r).abs() < 1e-9, "{a:?}");
        assert!((a.f1 - f).abs() < 1e-9, "{a:?}");
    }

    #[test]
    fn normalizer() {
        assert_eq!(normalize("The Cat, sat!  on-the mat."), ["the", "cat", "sat", "on", "the", "mat"]);
        assert!(normalize(" ,.; ").is_empty());
    }

    #[test]
    fn rouge_n_examples() {
        close(rouge_n("a b c", "a b c", 1).unwrap(), 1.0, 1.0, 1.0);
        close(rouge_n("a b c", "a b c", 2).unwrap(), 1.0, 1.0, 1.0);
        let t = 2.0 / 3.0;
        close(rouge_n("the cat sat", "the cat ran", 1).unwrap(), t, t, t);
        // bigrams: {the cat, cat sat} vs {the cat, cat ran} → overlap 1 of 2
        close(rouge_n("the cat sat", "the cat ran", 2).unwrap(), 0.5, 0.5, 0.5);
        close(rouge_n("x y", "p q", 1).unwrap(), 0.0, 0.0, 0.0);
        close(rouge_n("", "p q", 1).unwrap(), 0.0, 0.0, 0.0);
        assert!(matches!(rouge_n("a", "a", 3), Err(TextMetricError::UnsupportedOrder(3))));
    }

    #[test]
    fn rouge_n_clips_repeats() {
        // candidate unigrams: the×3, cat; reference: the, cat → overlap 2
        close(rouge_n("the the the cat", "the cat", 1).unwrap(), 0.5, 1.0, 2.0 / 3.0);
    }

    #[test]
    fn rouge_l_examples() {
        close(rouge_l("a b c", "a b c"), 1.0, 1.0, 1.0);
        close(rouge_l("a b c d", "a c b d"), 0.75, 0.75, 0.75);
        close(rouge_l("", "a b"), 0.0, 0.0, 0.0);
        // LCS("a b c d e", "b d") = 2
        close(rouge_l("a b c d e", "b d"), 0.4, 1.0, 2.0 * 0.4 / 1.4);
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu("the cat sat on the mat", "the cat sat on the mat", 4), 1.0);
        assert_eq!(bleu("one", "one", 4), 1.0);
        assert_eq!(bleu("", "the cat", 4), 0.0);

        // p1 = min(4,1)/4 = 1/4; p2..p4 have no matches over 3, 2, 1 n-grams.
        // |cand| = 4 > |ref| = 2, so no brevity penalty.
        let eps = BLEU_EPSILON;
        let expected = ((0.25f64.ln() + (eps / 3.0).ln() + (eps / 2.0).ln() + eps.ln()) / 4.0).exp();
        let got = bleu("the the the the", "the cat", 4);
        assert!((got - expected).abs() < 1e-18, "{got} vs {expected}");
        assert!((bleu("the the the the", "the cat", 1) - 0.25).abs() < 1e-15);

        // brevity: cand "the cat" vs ref "the cat sat on" → BP = exp(1 - 4/2)
        let got = bleu("the cat", "the cat sat on", 2);
        assert!((got - (-1.0f64).exp()).abs() < 1e-12, "{got}");
    }

    #[test]
    fn embedding_examples() {
        let e = TokenEmbeddings::new(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 2.0], vec![-0.5, 3.0]],
        )
        .unwrap();
        close(greedy_embedding_score(&e, &e).unwrap(), 1.0, 1.0, 1.0);

        let x = TokenEmbeddings::new(vec!["x".into()], vec![vec![1.0, 0.0]]).unwrap();
        let y = TokenEmbeddings::new(vec!["y".into()], vec![vec![0.0, 1.0]]).unwrap();
        close(greedy_embedding_score(&x, &y).unwrap(), 0.0, 0.0, 0.0);

        // cand rows c1 = (1,0), c2 = (1,1); ref rows r1 = (1,0), r2 = (0,1).
        // cos table: c1·r1 = 1, c1·r2 = 0, c2·r1 = 1/√2, c2·r2 = 1/√2.
        // precision = (1 + 1/√2) / 2; recall = (max(1, 1/√2) + max(0, 1/√2)) / 2 = (1 + 1/√2) / 2.
        let c = TokenEmbeddings::new(vec!["c1".into(), "c2".into()], vec![vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let r = TokenEmbeddings::new(vec!["r1".into(), "r2".into()], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let h = (1.0 + std::f64::consts::FRAC_1_SQRT_2) / 2.0;
        close(greedy_embedding_score(&c, &r).unwrap(), h, h, h);

        // asymmetric: cand = [r1], ref = [r1, r2] → precision 1, recall 1/2
        let single = TokenEmbeddings::new(vec!["r1".into()], vec![vec![1.0, 0.0]]).unwrap();
        close(greedy_embedding_score(&single, &r).unwrap(), 1.0, 0.5, 2.0 / 3.0);
    }

    #[test]
    fn embedding_errors() {
        let a = TokenEmbeddings::new(vec!["a".into()], vec![vec![1.0, 0.0]]).unwrap();
        let b = TokenEmbeddings::new(vec!["b".into()], vec![vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            greedy_embedding_score(&a, &b),
            Err(TextMetricError::DimensionMismatch(2, 3))
        ));
        let z = TokenEmbeddings::new(vec!["z".into()], vec![vec![0.0, 0.0]]).unwrap();
        assert!(matches!(greedy_embedding_score(&a, &z), Err(TextMetricError::ZeroNorm(0))));
        assert!(TokenEmbeddings::new(vec!["a".into(), "b".into()], vec![vec![1.0]]).is_err());
    }

    fn text() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "The", "cat"]), 0..12)
            .prop_map(|v| v.join(" "))
    }

    proptest! {
        #[test]
        fn metrics_bounded(c in text(), r in text()) {
            for t in [rouge_n(&c, &r, 1).unwrap(), rouge_n(&c, &r, 2).unwrap(), rouge_l(&c, &r)] {
                for v in [t.precision, t.recall, t.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let b = bleu(&c, &r, 4);
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn swap_exchanges_precision_and_recall(c in text(), r in text()) {
            for (x, y) in [
                (rouge_n(&c, &r, 1).unwrap(), rouge_n(&r, &c, 1).unwrap()),
                (rouge_n(&c, &r, 2).unwrap(), rouge_n(&r, &c, 2).unwrap()),
                (rouge_l(&c, &r), rouge_l(&r, &c)),
            ] {
                prop_assert!((x.precision - y.recall).abs() < 1e-12);
                prop_assert!((x.recall - y.precision).abs() < 1e-12);
                prop_assert!((x.f1 - y.f1).abs() < 1e-12);
            }
        }

        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once.join(" ")), once);
        }
    }
}
