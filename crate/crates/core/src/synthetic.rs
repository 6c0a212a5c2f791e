//! Seeded synthetic stance corpora.
//!
//! Each document has a latent distribution over the four stances. Its words
//! are drawn from per-stance vocabularies in proportion to that distribution
//! (plus shared filler), and each annotator samples a label from the same
//! distribution. Clusters therefore overlap in feature space, and annotator
//! disagreement tracks how mixed a document is.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{split, Annotation, AnnotationValue, Dataset, Instance, Source, SplitFractions};
use crate::labels::{majority_of_counts, Majority, StanceLabel, NUM_CLASSES};

const QUERIES: [&str; 6] = [
    "should school uniforms be mandatory",
    "is nuclear energy safe",
    "should vaccines be required for school children",
    "is social media harmful to teenagers",
    "should the minimum wage be raised",
    "is homework beneficial for students",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_instances: usize,
    pub annotators: usize,
    /// Range of the latent weight on the document's dominant stance.
    pub dominant_weight: (f64, f64),
    pub words_per_class: usize,
    pub filler_words: usize,
    pub doc_len: (usize, usize),
    /// Fraction of document tokens drawn from stance vocabularies.
    pub topical_fraction: f64,
    /// Keep only instances with a strict annotator majority.
    pub require_majority: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_instances: 600,
            annotators: 3,
            dominant_weight: (0.4, 0.75),
            words_per_class: 40,
            filler_words: 200,
            doc_len: (12, 30),
            topical_fraction: 0.35,
            require_majority: true,
        }
    }
}

fn class_word(class: usize, i: usize) -> String {
    const STEMS: [&str; NUM_CLASSES] = ["sup", "opp", "bal", "off"];
    format!("{}{i}", STEMS[class])
}

fn filler_word(i: usize) -> String {
    format!("w{i}")
}

/// One generated document before it becomes an [`Instance`].
#[derive(Debug, Clone)]
pub struct LatentDocument {
    pub stance_weights: [f64; NUM_CLASSES],
    pub labels: Vec<StanceLabel>,
    pub text: String,
    pub query: String,
}

fn latent_weights(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> [f64; NUM_CLASSES] {
    let dominant = rng.gen_range(0..NUM_CLASSES);
    let w = rng.gen_range(cfg.dominant_weight.0..=cfg.dominant_weight.1);
    let mut rest: [f64; NUM_CLASSES] = std::array::from_fn(|_| rng.gen_range(0.05..1.0));
    rest[dominant] = 0.0;
    let total: f64 = rest.iter().sum();
    let mut out = rest.map(|r| (1.0 - w) * r / total);
    out[dominant] = w;
    out
}

fn generate_document(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> LatentDocument {
    let weights = latent_weights(rng, cfg);
    let pick = WeightedIndex::new(weights).expect("positive weights");
    let len = rng.gen_range(cfg.doc_len.0..=cfg.doc_len.1);
    let words: Vec<String> = (0..len)
        .map(|_| {
            if rng.gen_bool(cfg.topical_fraction) {
                class_word(pick.sample(rng), rng.gen_range(0..cfg.words_per_class))
            } else {
                filler_word(rng.gen_range(0..cfg.filler_words))
            }
        })
        .collect();
    let labels = (0..cfg.annotators)
        .map(|_| StanceLabel::ALL[pick.sample(rng)])
        .collect();
    LatentDocument {
        stance_weights: weights,
        labels,
        text: words.join(" "),
        query: QUERIES.choose(rng).expect("non-empty").to_string(),
    }
}

/// Generates `cfg.n_instances` instances with ids `syn-00000`, ...
pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(cfg.n_instances);
    while instances.len() < cfg.n_instances {
        let doc = generate_document(&mut rng, cfg);
        let mut counts = [0usize; NUM_CLASSES];
        for l in &doc.labels {
            counts[l.code()] += 1;
        }
        if cfg.require_majority && majority_of_counts(&counts) == Majority::NoMajority {
            continue;
        }
        instances.push(Instance {
            id: format!("syn-{:05}", instances.len()),
            query: doc.query,
            title: String::new(),
            content: doc.text,
            summary: None,
            annotations: doc
                .labels
                .iter()
                .enumerate()
                .map(|(i, &l)| Annotation::stance(format!("a_{}", i + 1), l))
                .collect(),
            split: None,
        });
    }
    Dataset {
        instances,
        source: Source::Human,
        provenance: format!("synthetic seed={seed}"),
    }
}

/// [`generate`] followed by a seeded split.
pub fn generate_split(cfg: &SyntheticConfig, fractions: SplitFractions, seed: u64) -> Dataset {
    split(&generate(cfg, seed), fractions, seed)
}

/// Planted removal reasons for a preprocessing fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalPlan {
    pub clean: usize,
    pub null_document: usize,
    pub link_broken: usize,
    pub no_majority: usize,
}

/// A corpus with exactly the planned number of instances per removal reason,
/// interleaved deterministically.
pub fn preprocessing_fixture(plan: RemovalPlan, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SyntheticConfig {
        require_majority: true,
        ..SyntheticConfig::default()
    };
    let base = generate(
        &SyntheticConfig {
            n_instances: plan.clean + plan.null_document + plan.link_broken + plan.no_majority,
            ..cfg
        },
        seed,
    );
    let mut kinds: Vec<u8> = std::iter::repeat_n(0, plan.clean)
        .chain(std::iter::repeat_n(1, plan.null_document))
        .chain(std::iter::repeat_n(2, plan.link_broken))
        .chain(std::iter::repeat_n(3, plan.no_majority))
        .collect();
    kinds.shuffle(&mut rng);
    let instances = base
        .instances
        .into_iter()
        .zip(kinds)
        .map(|(mut inst, kind)| {
            match kind {
                1 => inst.content.clear(),
                2 => {
                    let slot = rng.gen_range(0..inst.annotations.len());
                    inst.annotations[slot].value = AnnotationValue::LinkBroken;
                }
                3 => {
                    let mut labels = StanceLabel::ALL.to_vec();
                    labels.shuffle(&mut rng);
                    for (a, l) in inst.annotations.iter_mut().zip(labels) {
                        a.value = AnnotationValue::Stance(l);
                    }
                }
                _ => {}
            }
            inst
        })
        .collect();
    Dataset {
        instances,
        source: Source::Human,
        provenance: format!("preprocessing fixture seed={seed}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::preprocess;
    use crate::labels::{entropy, soft_label};

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig {
            n_instances: 50,
            ..SyntheticConfig::default()
        };
        assert_eq!(generate(&cfg, 4), generate(&cfg, 4));
        assert_ne!(generate(&cfg, 4), generate(&cfg, 5));
    }

    #[test]
    fn every_instance_has_a_majority() {
        let d = generate(&SyntheticConfig::default(), 1);
        assert_eq!(d.len(), 600);
        assert!(d.instances.iter().all(|i| i.majority().is_some()));
        let (_, report) = preprocess(&d);
        assert_eq!(report.removed(), 0);
    }

    #[test]
    fn default_corpus_is_ambiguous() {
        let d = generate(&SyntheticConfig::default(), 2);
        let high = d
            .instances
            .iter()
            .filter(|i| entropy(&soft_label(&i.annotation_set().unwrap()).unwrap()) >= 0.8)
            .count();
        assert!(high * 2 >= d.len(), "{high} of {}", d.len());
    }

    #[test]
    fn fixture_plants_exact_counts() {
        let plan = RemovalPlan {
            clean: 20,
            null_document: 3,
            link_broken: 4,
            no_majority: 5,
        };
        let d = preprocessing_fixture(plan, 9);
        let (out, report) = preprocess(&d);
        assert_eq!(report.null_document, 3);
        assert_eq!(report.link_broken, 4);
        assert_eq!(report.no_majority, 5);
        assert_eq!(out.len(), 20);
    }
}
