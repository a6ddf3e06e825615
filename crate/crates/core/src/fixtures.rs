//! Synthetic QA data with a planted rationale.
//!
//! Every context is a few sentences of nonsense filler words. In answerable
//! samples, the question's keywords are written next to each other in exactly
//! one sentence, and that phrase is the answer. Keywords come from syllables
//! that never occur in filler words, so a keyword can only appear where it was
//! planted.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_squad_json, Answer, DatasetError, RawQaRecord, DEFAULT_ABBREVIATIONS};
use crate::model::{
    AnswerabilityModel, BagEmbeddingModel, BagModelSpec, KeywordOracle, Link, ModelError, Pooling,
};
use crate::text::normalize_word;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),
    #[error("vocabulary too small: {0}")]
    VocabularyTooSmall(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("writing {path}: {message}")]
    Write { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub n_samples: usize,
    /// Sentence counts are uniform on `min_sentences..=max_sentences`.
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Filler words per sentence, uniform on `min_words..=max_words`.
    pub min_words: usize,
    pub max_words: usize,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    pub n_keywords: usize,
    pub frac_unanswerable: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n_samples: 100,
            min_sentences: 3,
            max_sentences: 7,
            min_words: 4,
            max_words: 10,
            vocab_size: 200,
            n_keywords: 2,
            frac_unanswerable: 0.2,
            seed: 0,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: &str| Err(FixtureError::InvalidSpec(m.to_string()));
        if self.n_samples == 0 {
            return bad("n_samples must be positive");
        }
        if self.min_sentences < 2 || self.min_sentences > self.max_sentences {
            return bad("need 2 <= min_sentences <= max_sentences");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("need 1 <= min_words <= max_words");
        }
        if self.n_keywords == 0 {
            return bad("n_keywords must be positive");
        }
        if !(0.0..=1.0).contains(&self.frac_unanswerable) {
            return bad("frac_unanswerable must lie in [0, 1]");
        }
        if self.vocab_size < 2 {
            return Err(FixtureError::VocabularyTooSmall(format!(
                "vocab_size {} leaves no room for varied filler",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub records: Vec<RawQaRecord>,
    /// Question text to its keywords.
    pub keyword_map: BTreeMap<String, Vec<String>>,
    /// Sentence index holding the keywords, `None` for unanswerable records.
    pub planted: Vec<Option<usize>>,
    pub filler_vocab: Vec<String>,
}

impl Fixture {
    pub fn oracle(&self) -> Result<KeywordOracle, ModelError> {
        crate::model::keyword_oracle_model(
            self.keyword_map
                .clone()
                .into_iter()
                .collect::<HashMap<_, _>>(),
        )
    }

    pub fn keywords(&self) -> impl Iterator<Item = &String> {
        let mut all: Vec<&String> = self.keyword_map.values().flatten().collect();
        all.sort();
        all.dedup();
        all.into_iter()
    }
}

const FILLER_ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const KEYWORD_ONSETS: &[&str] = &["j", "w", "y", "x"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

fn syllables(onsets: &[&str]) -> Vec<String> {
    onsets
        .iter()
        .flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}")))
        .collect()
}

fn words(syl: &[String], parts: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    for _ in 0..parts {
        out = out
            .iter()
            .flat_map(|prefix| syl.iter().map(move |s| format!("{prefix}{s}")))
            .collect();
    }
    out
}

fn filler_pool() -> Vec<String> {
    let syl = syllables(FILLER_ONSETS);
    let mut pool = words(&syl, 2);
    pool.extend(words(&syl, 3));
    pool.retain(|w| !DEFAULT_ABBREVIATIONS.contains(&w.as_str()));
    pool
}

/// Keywords: three syllables, the middle one from a reserved onset set.
fn keyword_pool() -> Vec<String> {
    let filler = syllables(FILLER_ONSETS);
    let reserved = syllables(KEYWORD_ONSETS);
    let mut pool = Vec::new();
    for a in &filler {
        for b in &reserved {
            for c in VOWELS {
                pool.push(format!("{a}{b}{c}n"));
            }
        }
    }
    pool
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn generate_fixture(spec: &FixtureSpec) -> Result<Fixture, FixtureError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut filler = filler_pool();
    if spec.vocab_size > filler.len() {
        return Err(FixtureError::VocabularyTooSmall(format!(
            "asked for {} filler words, only {} available",
            spec.vocab_size,
            filler.len()
        )));
    }
    filler.shuffle(&mut rng);
    filler.truncate(spec.vocab_size);
    filler.sort();

    let keyword_pool = keyword_pool();
    if spec.n_keywords > keyword_pool.len() {
        return Err(FixtureError::VocabularyTooSmall(format!(
            "asked for {} keywords per question, only {} available",
            spec.n_keywords,
            keyword_pool.len()
        )));
    }

    let n_negative = (spec.frac_unanswerable * spec.n_samples as f64).round() as usize;
    let mut negative = vec![false; spec.n_samples];
    negative[..n_negative].fill(true);
    negative.shuffle(&mut rng);

    let mut records = Vec::with_capacity(spec.n_samples);
    let mut keyword_map = BTreeMap::new();
    let mut planted = Vec::with_capacity(spec.n_samples);

    for (i, &is_negative) in negative.iter().enumerate() {
        let keywords: Vec<String> = keyword_pool
            .choose_multiple(&mut rng, spec.n_keywords)
            .cloned()
            .collect();
        let question = format!("Question {i}: where are {}?", keywords.join(" and "));
        let n_sentences = rng.random_range(spec.min_sentences..=spec.max_sentences);
        let target = (!is_negative).then(|| rng.random_range(0..n_sentences));

        let mut context = String::new();
        let mut answer = None;
        for s in 0..n_sentences {
            let n_words = rng.random_range(spec.min_words..=spec.max_words);
            let mut sentence: Vec<String> = (0..n_words)
                .map(|_| {
                    filler
                        .choose(&mut rng)
                        .expect("non-empty vocabulary")
                        .clone()
                })
                .collect();
            // Keywords go after the first word so they stay lowercase.
            let slot = (target == Some(s)).then(|| rng.random_range(1..=sentence.len()));
            if let Some(slot) = slot {
                sentence.splice(slot..slot, keywords.iter().cloned());
            }
            sentence[0] = capitalize(&sentence[0]);

            if s > 0 {
                context.push(' ');
            }
            for (w, word) in sentence.iter().enumerate() {
                if w > 0 {
                    context.push(' ');
                }
                if Some(w) == slot {
                    answer = Some(context.chars().count());
                }
                context.push_str(word);
            }
            context.push('.');
        }

        let answers = answer
            .map(|start| {
                vec![Answer {
                    text: keywords.join(" "),
                    answer_start: start,
                }]
            })
            .unwrap_or_default();
        records.push(RawQaRecord {
            id: format!("fx{:x}-{i:05}", spec.seed),
            question: question.clone(),
            context,
            is_impossible: is_negative,
            answers,
        });
        keyword_map.insert(question, keywords);
        planted.push(target);
    }

    Ok(Fixture {
        records,
        keyword_map,
        planted,
        filler_vocab: filler,
    })
}

/// Parameters for the bag-of-embeddings model that accompanies a fixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BagFixtureParams {
    pub dim: usize,
    /// Projection `w . e` of every keyword embedding.
    pub keyword_score: f64,
    /// Projection of filler embeddings; each word gets this plus a small jitter.
    pub filler_score: f64,
    pub jitter: f64,
    pub pooling: Pooling,
    pub seed: u64,
}

impl Default for BagFixtureParams {
    fn default() -> Self {
        Self {
            dim: 8,
            keyword_score: 6.0,
            filler_score: -0.5,
            jitter: 0.1,
            pooling: Pooling::Mean,
            seed: 0,
        }
    }
}

/// A logistic bag model whose embeddings make keywords push towards
/// "answerable" and filler words push away. The bias is placed halfway between
/// the average pooled scores of answerable and unanswerable contexts.
pub fn bag_model_for_fixture(
    fixture: &Fixture,
    params: &BagFixtureParams,
) -> Result<BagModelSpec, FixtureError> {
    if params.dim == 0 {
        return Err(FixtureError::InvalidSpec("dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let weights: Vec<f64> = (0..params.dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let norm2: f64 = weights.iter().map(|w| w * w).sum();

    // Random direction with its projection on `weights` pinned to `score`.
    let embed = |rng: &mut ChaCha8Rng, score: f64| -> Vec<f64> {
        let noise: Vec<f64> = (0..params.dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let proj: f64 = noise.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
        noise
            .iter()
            .zip(&weights)
            .map(|(n, w)| n + (score - proj) / norm2 * w)
            .collect()
    };

    let mut vocab = BTreeMap::new();
    for word in &fixture.filler_vocab {
        let jitter = params.jitter * (2.0 * rng.random::<f64>() - 1.0);
        vocab.insert(word.clone(), embed(&mut rng, params.filler_score + jitter));
    }
    for word in fixture.keywords() {
        vocab.insert(normalize_word(word), embed(&mut rng, params.keyword_score));
    }

    let mut spec = BagModelSpec {
        vocab,
        weights,
        bias: 0.0,
        link: Link::Identity,
        pooling: params.pooling,
    };
    let raw = BagEmbeddingModel::from_spec(spec.clone())?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for rec in &fixture.records {
        let score = raw.predict_proba(&rec.question, &rec.context)?;
        if rec.is_answerable() {
            pos.push(score);
        } else {
            neg.push(score);
        }
    }
    let avg = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let midpoint = match (avg(&pos), avg(&neg)) {
        (Some(p), Some(n)) => (p + n) / 2.0,
        (Some(p), None) => p - 1.0,
        (None, Some(n)) => n + 1.0,
        (None, None) => 0.0,
    };
    spec.bias = -midpoint;
    spec.link = Link::Logistic;
    Ok(spec)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FixtureError> {
    let err = |message: String| FixtureError::Write {
        path: path.display().to_string(),
        message,
    };
    let json = serde_json::to_string_pretty(value).map_err(|e| err(e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| err(e.to_string()))
}

pub const DATASET_FILE: &str = "dataset.json";
pub const KEYWORDS_FILE: &str = "keywords.json";
pub const BAG_MODEL_FILE: &str = "bag_model.json";

/// Write the dataset, keyword side-car and bag model into `dir`.
pub fn write_fixture(
    dir: &Path,
    fixture: &Fixture,
    bag: &BagModelSpec,
) -> Result<(), FixtureError> {
    fs::create_dir_all(dir).map_err(|e| FixtureError::Write {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    write_squad_json(&dir.join(DATASET_FILE), "fixture", &fixture.records)?;
    write_json(&dir.join(KEYWORDS_FILE), &fixture.keyword_map)?;
    write_json(&dir.join(BAG_MODEL_FILE), bag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_squad_json, prepare_samples, RuleSegmenter};
    use std::collections::HashSet;

    #[test]
    fn counts_and_offsets() {
        let f = generate_fixture(&FixtureSpec::default()).unwrap();
        assert_eq!(f.records.len(), 100);
        assert_eq!(f.records.iter().filter(|r| r.is_answerable()).count(), 80);
        for r in &f.records {
            r.validate().unwrap();
        }
    }

    #[test]
    fn pools_are_disjoint_and_avoid_abbreviations() {
        let filler: HashSet<String> = filler_pool().into_iter().collect();
        assert!(keyword_pool().iter().all(|k| !filler.contains(k)));
        assert!(DEFAULT_ABBREVIATIONS.iter().all(|a| !filler.contains(*a)));
        // No filler word contains a reserved syllable onset.
        assert!(filler.iter().all(|w| !w.contains(['j', 'w', 'y', 'x'])));
    }

    #[test]
    fn ground_truth_recovers_planted_sentence() {
        let f = generate_fixture(&FixtureSpec {
            n_samples: 300,
            seed: 11,
            ..FixtureSpec::default()
        })
        .unwrap();
        let samples = prepare_samples(f.records.clone(), &RuleSegmenter::default()).unwrap();
        for (s, p) in samples.iter().zip(&f.planted) {
            assert_eq!(s.gt_sentence, *p);
            assert!(!s.is_flagged());
            assert!((3..=7).contains(&s.n_sentences()));
        }
    }

    #[test]
    fn oracle_is_exact() {
        let f = generate_fixture(&FixtureSpec::default()).unwrap();
        let oracle = f.oracle().unwrap();
        for r in &f.records {
            let p = oracle.predict_proba(&r.question, &r.context).unwrap();
            assert_eq!(p == 1.0, r.is_answerable());
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = FixtureSpec::default();
        assert_eq!(
            generate_fixture(&spec).unwrap(),
            generate_fixture(&spec).unwrap()
        );
        let other = FixtureSpec { seed: 1, ..spec };
        assert_ne!(
            generate_fixture(&spec).unwrap().records,
            generate_fixture(&other).unwrap().records
        );
    }

    #[test]
    fn loader_round_trip() {
        let f = generate_fixture(&FixtureSpec::default()).unwrap();
        let bag = bag_model_for_fixture(&f, &BagFixtureParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &f, &bag).unwrap();
        let loaded = load_squad_json(&dir.path().join(DATASET_FILE), "fixture").unwrap();
        assert_eq!(loaded, f.records);
        let keywords: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&fs::read_to_string(dir.path().join(KEYWORDS_FILE)).unwrap())
                .unwrap();
        assert_eq!(keywords, f.keyword_map);
        let reloaded: BagModelSpec =
            serde_json::from_str(&fs::read_to_string(dir.path().join(BAG_MODEL_FILE)).unwrap())
                .unwrap();
        assert_eq!(reloaded, bag);
    }

    #[test]
    fn bag_model_separates_classes() {
        let f = generate_fixture(&FixtureSpec {
            n_samples: 200,
            ..FixtureSpec::default()
        })
        .unwrap();
        let model = BagEmbeddingModel::from_spec(
            bag_model_for_fixture(&f, &BagFixtureParams::default()).unwrap(),
        )
        .unwrap();
        let correct = f
            .records
            .iter()
            .filter(|r| {
                (model.predict_proba(&r.question, &r.context).unwrap() >= 0.5) == r.is_answerable()
            })
            .count();
        assert!(correct as f64 / 200.0 > 0.8, "accuracy {correct}/200");
    }

    #[test]
    fn rejects_bad_specs() {
        let base = FixtureSpec::default();
        assert!(generate_fixture(&FixtureSpec {
            min_sentences: 1,
            ..base.clone()
        })
        .is_err());
        assert!(matches!(
            generate_fixture(&FixtureSpec {
                vocab_size: 1_000_000,
                ..base.clone()
            }),
            Err(FixtureError::VocabularyTooSmall(_))
        ));
        assert!(matches!(
            generate_fixture(&FixtureSpec {
                vocab_size: 1,
                ..base.clone()
            }),
            Err(FixtureError::VocabularyTooSmall(_))
        ));
        assert!(generate_fixture(&FixtureSpec {
            frac_unanswerable: 1.5,
            ..base
        })
        .is_err());
    }
}
