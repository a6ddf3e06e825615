//! Sentence-level scoring of attributions against the ground-truth sentence.
//!
//! Three views of one attribution are scored:
//!
//! * **IoU** of a selected sentence set against the ground-truth sentence.
//!   With a single argmax selection this is 0 or 1 and its mean is the
//!   detection accuracy.
//! * **HPD**, `1/k` for the rank `k` of the ground truth in the ranking by
//!   decreasing score: the precision of the smallest top-k that contains it.
//! * **SNR**, `(s_gt - mean(s_rest))^2 / var(s_rest)` with the population
//!   variance of the other sentences' scores. Undefined (reported as `None`)
//!   with fewer than two other sentences or when they are all equal.
//!
//! All three are averaged over samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::TokenAttribution;
use crate::dataset::SentenceSpan;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("token {text:?} at {start}..{end} lies outside every sentence")]
    Unassigned {
        text: String,
        start: usize,
        end: usize,
    },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("ground-truth index {index} out of range for {len} sentences")]
    GroundTruthOutOfRange { index: usize, len: usize },
    #[error("selection must contain at least one sentence")]
    EmptySelection,
    #[error("sentence score {0} is not finite")]
    NonFinite(f64),
    #[error("no sentences to score")]
    NoSentences,
    #[error("cannot aggregate an empty record list")]
    EmptyRecords,
    #[error("aggregation {0:?} cannot be applied to token scores")]
    BadAggregation(Aggregation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Max,
    /// The interpreter produced sentence scores directly.
    Native,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Sum => "sum",
            Aggregation::Max => "max",
            Aggregation::Native => "native",
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "max" => Ok(Aggregation::Max),
            "native" => Ok(Aggregation::Native),
            other => Err(format!(
                "unknown aggregation {other:?} (expected sum, max or native)"
            )),
        }
    }
}

/// How equal scores are ordered when ranking.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Ground truth goes after every non-GT sentence it ties with.
    #[default]
    Pessimistic,
    /// Ground truth goes before every sentence it ties with.
    Optimistic,
    /// Ties keep sentence order.
    Positional,
}

impl std::str::FromStr for TieRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pessimistic" => Ok(TieRule::Pessimistic),
            "optimistic" => Ok(TieRule::Optimistic),
            "positional" => Ok(TieRule::Positional),
            other => Err(format!("unknown tie rule {other:?}")),
        }
    }
}

/// One score per sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceAttribution {
    pub scores: Vec<f64>,
    pub aggregation: Aggregation,
    pub source: String,
}

impl SentenceAttribution {
    pub fn new(
        scores: Vec<f64>,
        aggregation: Aggregation,
        source: &str,
    ) -> Result<Self, MetricError> {
        if scores.is_empty() {
            return Err(MetricError::NoSentences);
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(MetricError::NonFinite(*bad));
        }
        Ok(Self {
            scores,
            aggregation,
            source: source.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Roll token scores up to sentences. A token belongs to the sentence
/// containing its start offset.
pub fn aggregate_to_sentences(
    t: &TokenAttribution,
    sentences: &[SentenceSpan],
    mode: Aggregation,
) -> Result<SentenceAttribution, MetricError> {
    if sentences.is_empty() {
        return Err(MetricError::NoSentences);
    }
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); sentences.len()];
    for (token, score) in t.tokens.iter().zip(&t.scores) {
        let candidate = sentences.partition_point(|s| s.start <= token.start);
        let sentence = candidate
            .checked_sub(1)
            .filter(|&i| sentences[i].contains(token.start))
            .ok_or_else(|| MetricError::Unassigned {
                text: token.text.clone(),
                start: token.start,
                end: token.end,
            })?;
        members[sentence].push(*score);
    }

    let scores = match mode {
        Aggregation::Sum => members.iter().map(|m| m.iter().sum()).collect(),
        Aggregation::Max => {
            let maxima: Vec<Option<f64>> = members
                .iter()
                .map(|m| m.iter().copied().reduce(f64::max))
                .collect();
            let floor = maxima
                .iter()
                .flatten()
                .copied()
                .reduce(f64::min)
                .map_or(0.0, |m| m - 1.0);
            maxima.into_iter().map(|m| m.unwrap_or(floor)).collect()
        }
        Aggregation::Native => return Err(MetricError::BadAggregation(mode)),
    };
    SentenceAttribution::new(scores, mode, &t.method_tag)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionVector(Vec<bool>);

impl SelectionVector {
    pub fn new(selected: Vec<bool>) -> Result<Self, MetricError> {
        if !selected.iter().any(|s| *s) {
            return Err(MetricError::EmptySelection);
        }
        Ok(Self(selected))
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

/// One-hot vector marking the ground-truth sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthVector {
    len: usize,
    index: usize,
}

impl GroundTruthVector {
    pub fn new(len: usize, index: usize) -> Result<Self, MetricError> {
        if index >= len {
            return Err(MetricError::GroundTruthOutOfRange { index, len });
        }
        Ok(Self { len, index })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn to_vec(&self) -> Vec<bool> {
        (0..self.len).map(|i| i == self.index).collect()
    }
}

fn check_len(scores: &SentenceAttribution, gt: &GroundTruthVector) -> Result<(), MetricError> {
    if scores.len() != gt.len() {
        return Err(MetricError::LengthMismatch {
            left: scores.len(),
            right: gt.len(),
        });
    }
    Ok(())
}

/// Single top-scoring sentence, with ties broken by `tie`.
pub fn argmax_selection(
    scores: &SentenceAttribution,
    gt: &GroundTruthVector,
    tie: TieRule,
) -> Result<SelectionVector, MetricError> {
    check_len(scores, gt)?;
    let best = scores
        .scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..scores.len())
        .filter(|&i| scores.scores[i] == best)
        .collect();
    let chosen = match tie {
        TieRule::Positional => tied[0],
        TieRule::Optimistic => {
            if tied.contains(&gt.index()) {
                gt.index()
            } else {
                tied[0]
            }
        }
        TieRule::Pessimistic => tied
            .iter()
            .copied()
            .find(|&i| i != gt.index())
            .unwrap_or(tied[0]),
    };
    SelectionVector::new((0..scores.len()).map(|i| i == chosen).collect())
}

/// `|s ∧ g| / |s ∨ g|`.
pub fn iou(selection: &SelectionVector, gt: &GroundTruthVector) -> Result<f64, MetricError> {
    if selection.0.len() != gt.len() {
        return Err(MetricError::LengthMismatch {
            left: selection.0.len(),
            right: gt.len(),
        });
    }
    let union = selection
        .0
        .iter()
        .enumerate()
        .filter(|(i, s)| **s || *i == gt.index())
        .count();
    let inter = usize::from(selection.0[gt.index()]);
    Ok(inter as f64 / union as f64)
}

/// 1-based rank of the ground-truth sentence by decreasing score.
pub fn rank_of_gt(
    scores: &SentenceAttribution,
    gt: &GroundTruthVector,
    tie: TieRule,
) -> Result<usize, MetricError> {
    check_len(scores, gt)?;
    let g = gt.index();
    let target = scores.scores[g];
    let mut rank = 1;
    for (i, &s) in scores.scores.iter().enumerate() {
        if i == g {
            continue;
        }
        let ahead = s > target
            || (s == target
                && match tie {
                    TieRule::Pessimistic => true,
                    TieRule::Optimistic => false,
                    TieRule::Positional => i < g,
                });
        rank += usize::from(ahead);
    }
    Ok(rank)
}

pub fn hpd(
    scores: &SentenceAttribution,
    gt: &GroundTruthVector,
    tie: TieRule,
) -> Result<f64, MetricError> {
    Ok(1.0 / rank_of_gt(scores, gt, tie)? as f64)
}

pub fn snr(
    scores: &SentenceAttribution,
    gt: &GroundTruthVector,
) -> Result<Option<f64>, MetricError> {
    check_len(scores, gt)?;
    let rest: Vec<f64> = scores
        .scores
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != gt.index())
        .map(|(_, s)| *s)
        .collect();
    if rest.len() < 2 || rest.iter().all(|s| *s == rest[0]) {
        return Ok(None);
    }
    let m = rest.len() as f64;
    let mean = rest.iter().sum::<f64>() / m;
    let var = rest.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / m;
    if var == 0.0 {
        return Ok(None);
    }
    let signal = scores.scores[gt.index()] - mean;
    Ok(Some(signal * signal / var))
}

/// All metrics for one sample under one interpreter/aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub sample_id: String,
    pub iou: f64,
    pub hpd: f64,
    /// `None` when SNR is undefined for this sample.
    pub snr: Option<f64>,
    pub rank_of_gt: usize,
}

/// Score one sample. `selection` overrides the argmax selection when the
/// interpreter supplies its own sentence set.
pub fn score_sample(
    sample_id: &str,
    scores: &SentenceAttribution,
    gt: &GroundTruthVector,
    tie: TieRule,
    selection: Option<&SelectionVector>,
) -> Result<MetricRecord, MetricError> {
    let argmax;
    let selection = match selection {
        Some(s) => s,
        None => {
            argmax = argmax_selection(scores, gt, tie)?;
            &argmax
        }
    };
    let rank = rank_of_gt(scores, gt, tie)?;
    Ok(MetricRecord {
        sample_id: sample_id.to_string(),
        iou: iou(selection, gt)?,
        hpd: 1.0 / rank as f64,
        snr: snr(scores, gt)?,
        rank_of_gt: rank,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub iou_mean: f64,
    pub hpd_mean: f64,
    pub snr_mean: Option<f64>,
    pub n_samples: usize,
    pub n_snr_excluded: usize,
}

pub fn aggregate_mean(records: &[MetricRecord]) -> Result<MetricSummary, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyRecords);
    }
    let n = records.len() as f64;
    let snrs: Vec<f64> = records.iter().filter_map(|r| r.snr).collect();
    Ok(MetricSummary {
        iou_mean: records.iter().map(|r| r.iou).sum::<f64>() / n,
        hpd_mean: records.iter().map(|r| r.hpd).sum::<f64>() / n,
        snr_mean: (!snrs.is_empty()).then(|| snrs.iter().sum::<f64>() / snrs.len() as f64),
        n_samples: records.len(),
        n_snr_excluded: records.len() - snrs.len(),
    })
}
