//! Hashed bag-of-words features.

use serde::{Deserialize, Serialize};

use crate::textmetrics::normalize;

/// Smallest feature dimension accepted by [`featurize`].
pub const MIN_DIMENSION: usize = 16;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Sparse feature vector with sorted, unique indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    dimension: usize,
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    /// Builds a vector from (index, value) pairs. Duplicate indices are summed,
    /// zeros dropped. Returns `None` if an index is out of range or a value is
    /// not finite.
    pub fn from_pairs(dimension: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Option<Self> {
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (i, v) in pairs {
            if i >= dimension || !v.is_finite() {
                return None;
            }
            entries.push((i, v));
        }
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Some(Self {
            dimension,
            entries: merged,
        })
    }

    pub fn from_dense(values: &[f64]) -> Option<Self> {
        Self::from_pairs(values.len(), values.iter().copied().enumerate())
    }

    pub fn zeros(dimension: usize) -> Self {
        Self {
            dimension,
            entries: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn cosine(&self, other: &FeatureVector) -> f64 {
        let n = self.norm() * other.norm();
        if n == 0.0 {
            0.0
        } else {
            self.dot(other) / n
        }
    }
}

/// Seeded FNV-1a with a final avalanche step.
fn hash_token(token: &str, seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Bucket a normalized token hashes to.
pub fn token_bucket(token: &str, dimension: usize, seed: u64) -> usize {
    (hash_token(token, seed) % dimension as u64) as usize
}

/// L2-normalized hashed term counts over the normalized tokens of `text`.
/// Empty text gives the zero vector.
///
/// # Panics
/// If `dimension` is below [`MIN_DIMENSION`].
pub fn featurize(text: &str, dimension: usize, seed: u64) -> FeatureVector {
    assert!(dimension >= MIN_DIMENSION, "feature dimension must be at least {MIN_DIMENSION}");
    let pairs = normalize(text)
        .into_iter()
        .map(|t| (token_bucket(&t, dimension, seed), 1.0));
    let mut v = FeatureVector::from_pairs(dimension, pairs).expect("buckets are in range");
    let norm = v.norm();
    if norm > 0.0 {
        for e in &mut v.entries {
            e.1 /= norm;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn empty_text_is_zero() {
        assert!(featurize("", 64, 1).is_zero());
        assert!(featurize(" .,! ", 64, 1).is_zero());
    }

    #[test]
    fn deterministic_and_normalized() {
        let a = featurize("Vaccines should be mandatory", 128, 3);
        let b = featurize("Vaccines should be mandatory", 128, 3);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!(a.entries().iter().all(|e| e.0 < 128));
    }

    #[test]
    fn seed_changes_buckets() {
        let a: Vec<usize> = ["alpha", "beta", "gamma", "delta"].iter().map(|t| token_bucket(t, 1 << 20, 1)).collect();
        let b: Vec<usize> = ["alpha", "beta", "gamma", "delta"].iter().map(|t| token_bucket(t, 1 << 20, 2)).collect();
        assert_ne!(a, b);
    }

    // Oracle: list each token's bucket explicitly and compute the cosine of
    // the two count histograms by hand.
    #[test]
    fn disjoint_vocabularies_have_zero_cosine_unless_buckets_collide() {
        let dim = 4096;
        let seed = 11;
        let left = ["school", "uniforms", "improve", "discipline"];
        let right = ["nuclear", "energy", "is", "safe"];
        let hist = |toks: &[&str]| {
            let mut m: BTreeMap<usize, f64> = BTreeMap::new();
            for t in toks {
                *m.entry(token_bucket(t, dim, seed)).or_default() += 1.0;
            }
            m
        };
        let (hl, hr) = (hist(&left), hist(&right));
        let dot: f64 = hl.iter().map(|(k, v)| v * hr.get(k).copied().unwrap_or(0.0)).sum();
        let norm = |h: &BTreeMap<usize, f64>| h.values().map(|v| v * v).sum::<f64>().sqrt();
        let expected = dot / (norm(&hl) * norm(&hr));

        let got = featurize(&left.join(" "), dim, seed).cosine(&featurize(&right.join(" "), dim, seed));
        assert!((got - expected).abs() < 1e-12);
        assert_eq!(expected, 0.0, "no collisions expected for this vocabulary: {hl:?} {hr:?}");
    }

    #[test]
    fn from_pairs_rejects_bad_input() {
        assert!(FeatureVector::from_pairs(4, [(4, 1.0)]).is_none());
        assert!(FeatureVector::from_pairs(4, [(1, f64::NAN)]).is_none());
        let v = FeatureVector::from_pairs(4, [(2, 1.0), (0, 2.0), (2, 0.5)]).unwrap();
        assert_eq!(v.entries(), &[(0, 2.0), (2, 1.5)]);
    }
}
