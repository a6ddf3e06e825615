//! Checks that the ground-truth sentence carries the prediction.
//!
//! Comprehensiveness removes the sentence and measures the drop in the
//! answerable probability; sufficiency keeps only that sentence. Both are
//! reported as `p(modified) - p(original)`, so a negative value means the
//! probability fell.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Sample, SentenceSpan};
use crate::model::AnswerabilityModel;
use crate::text::CharIndex;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("sentence index {index} out of range for {len} sentences")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("cannot remove the only sentence of a context")]
    SingleSentence,
    #[error("sentence span {start}..{end} does not fit the context")]
    BadSpan { start: usize, end: usize },
}

fn span_bytes(idx: &CharIndex, span: &SentenceSpan) -> Result<(usize, usize), VerifyError> {
    let bad = || VerifyError::BadSpan {
        start: span.start,
        end: span.end,
    };
    let start = idx.byte_offset(span.start).ok_or_else(bad)?;
    let end = idx.byte_offset(span.end).ok_or_else(bad)?;
    if start > end {
        return Err(bad());
    }
    Ok((start, end))
}

fn lookup(sentences: &[SentenceSpan], index: usize) -> Result<&SentenceSpan, VerifyError> {
    sentences.get(index).ok_or(VerifyError::IndexOutOfRange {
        index,
        len: sentences.len(),
    })
}

/// Cut sentence `index` out of `context`. The text on either side is joined
/// with a single space.
pub fn remove_sentence(
    context: &str,
    sentences: &[SentenceSpan],
    index: usize,
) -> Result<String, VerifyError> {
    let span = lookup(sentences, index)?;
    if sentences.len() < 2 {
        return Err(VerifyError::SingleSentence);
    }
    let (start, end) = span_bytes(&CharIndex::new(context), span)?;
    let before = context[..start].trim_end();
    let after = context[end..].trim_start();
    Ok(match (before.is_empty(), after.is_empty()) {
        (true, _) => after.trim_end().to_string(),
        (_, true) => before.trim_start().to_string(),
        _ => format!("{} {}", before.trim_start(), after.trim_end()),
    })
}

/// The text of sentence `index` alone.
pub fn keep_only_sentence(
    context: &str,
    sentences: &[SentenceSpan],
    index: usize,
) -> Result<String, VerifyError> {
    let span = lookup(sentences, index)?;
    let (start, end) = span_bytes(&CharIndex::new(context), span)?;
    Ok(context[start..end].to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub sample_id: String,
    pub p_full: f64,
    /// `None` for single-sentence contexts.
    pub p_without_gt: Option<f64>,
    pub p_only_gt: f64,
    pub delta_comprehensiveness: Option<f64>,
    pub delta_sufficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub mean_delta_comprehensiveness: Option<f64>,
    pub mean_delta_sufficiency: Option<f64>,
    pub mean_p_full: Option<f64>,
    /// Samples with a record.
    pub n_samples: usize,
    /// Samples skipped because the model failed or no ground truth was set.
    pub n_skipped: usize,
    /// Records without a comprehensiveness value (one-sentence contexts).
    pub n_single_sentence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub summary: VerificationSummary,
    pub records: Vec<VerificationRecord>,
}

pub fn verify_one(model: &dyn AnswerabilityModel, sample: &Sample) -> Option<VerificationRecord> {
    let gt = sample.gt_sentence?;
    let (q, c) = (sample.question(), sample.context());
    let p_full = model.predict_proba(q, c).ok()?;
    let only = keep_only_sentence(c, &sample.sentences, gt).ok()?;
    let p_only_gt = model.predict_proba(q, &only).ok()?;
    let p_without_gt = match remove_sentence(c, &sample.sentences, gt) {
        Ok(text) => Some(model.predict_proba(q, &text).ok()?),
        Err(VerifyError::SingleSentence) => None,
        Err(_) => return None,
    };
    Some(VerificationRecord {
        sample_id: sample.id().to_string(),
        p_full,
        p_without_gt,
        p_only_gt,
        delta_comprehensiveness: p_without_gt.map(|p| p - p_full),
        delta_sufficiency: p_only_gt - p_full,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Run both experiments over `samples`, which should be true positives.
pub fn verify_ground_truth(model: &dyn AnswerabilityModel, samples: &[Sample]) -> Verification {
    let records: Vec<VerificationRecord> = samples
        .iter()
        .filter_map(|s| verify_one(model, s))
        .collect();
    summarize(&records, samples.len())
}

/// Means over already computed records; `n_input` counts every sample tried.
pub fn summarize(records: &[VerificationRecord], n_input: usize) -> Verification {
    let summary = VerificationSummary {
        mean_delta_comprehensiveness: mean(
            records.iter().filter_map(|r| r.delta_comprehensiveness),
        ),
        mean_delta_sufficiency: mean(records.iter().map(|r| r.delta_sufficiency)),
        mean_p_full: mean(records.iter().map(|r| r.p_full)),
        n_samples: records.len(),
        n_skipped: n_input - records.len(),
        n_single_sentence: records.iter().filter(|r| r.p_without_gt.is_none()).count(),
    };
    Verification {
        summary,
        records: records.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{derive_ground_truth, segment_sentences, Answer, RawQaRecord};
    use crate::model::ModelError;
    use proptest::prelude::*;

    fn sentence_texts(text: &str) -> Vec<String> {
        segment_sentences(text)
            .iter()
            .map(|s| {
                crate::text::char_slice(text, s.start, s.end)
                    .unwrap()
                    .to_string()
            })
            .collect()
    }

    #[test]
    fn remove_examples() {
        let c = "A. B. C.";
        let s = segment_sentences(c);
        assert_eq!(remove_sentence(c, &s, 1).unwrap(), "A. C.");
        assert_eq!(remove_sentence(c, &s, 0).unwrap(), "B. C.");
        assert_eq!(remove_sentence(c, &s, 2).unwrap(), "A. B.");
        assert_eq!(
            remove_sentence("Alone here.", &segment_sentences("Alone here."), 0),
            Err(VerifyError::SingleSentence)
        );
        assert!(matches!(
            remove_sentence(c, &s, 3),
            Err(VerifyError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn keep_examples() {
        let c = "A. B. C.";
        let s = segment_sentences(c);
        assert_eq!(keep_only_sentence(c, &s, 1).unwrap(), "B.");
        let one = "Just one sentence.";
        assert_eq!(
            keep_only_sentence(one, &segment_sentences(one), 0).unwrap(),
            one
        );
    }

    #[test]
    fn whitespace_at_junction_collapses() {
        let c = "First one.\n\n  Second one.\t Third one.";
        let s = segment_sentences(c);
        assert_eq!(remove_sentence(c, &s, 1).unwrap(), "First one. Third one.");
    }

    #[test]
    fn multibyte_offsets() {
        let c = "Zoë sang. Über alles. Fin.";
        let s = segment_sentences(c);
        assert_eq!(keep_only_sentence(c, &s, 1).unwrap(), "Über alles.");
        assert_eq!(remove_sentence(c, &s, 1).unwrap(), "Zoë sang. Fin.");
    }

    struct Counting;

    impl AnswerabilityModel for Counting {
        fn predict_proba(&self, _q: &str, context: &str) -> Result<f64, ModelError> {
            if context.contains("boom") {
                return Err(ModelError::Protocol("boom".into()));
            }
            Ok(if context.contains("key") { 0.9 } else { 0.2 })
        }
    }

    fn sample(id: &str, context: &str, answer: &str) -> Sample {
        let start = context.find(answer).unwrap();
        let rec = RawQaRecord {
            id: id.into(),
            question: "q".into(),
            context: context.into(),
            is_impossible: false,
            answers: vec![Answer {
                text: answer.into(),
                answer_start: context[..start].chars().count(),
            }],
        };
        derive_ground_truth(rec.clone(), segment_sentences(&rec.context)).unwrap()
    }

    #[test]
    fn summary_counts() {
        let samples = vec![
            sample("a", "Some filler. The key is here. More filler.", "key"),
            sample("b", "Only the key.", "key"),
            sample("c", "A boom happens. The key again.", "key"),
        ];
        let before = samples.clone();
        let v = verify_ground_truth(&Counting, &samples);
        assert_eq!(samples, before);
        assert_eq!(v.records.len(), 2);
        let s = v.summary;
        assert_eq!(s.n_samples, 2);
        assert_eq!(s.n_skipped, 1);
        assert_eq!(s.n_single_sentence, 1);
        assert!((s.mean_delta_comprehensiveness.unwrap() - (0.2 - 0.9)).abs() < 1e-12);
        assert_eq!(s.mean_delta_sufficiency, Some(0.0));
        assert!((s.mean_p_full.unwrap() - 0.9).abs() < 1e-12);
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-z]{1,6}"
    }

    fn sentence() -> impl Strategy<Value = String> {
        (
            ("[A-Z][a-z]{0,5}"),
            prop::collection::vec(word(), 0..5),
            prop::sample::select(vec![".", "!", "?"]),
        )
            .prop_map(|(first, rest, end)| {
                let mut s = first;
                for w in rest {
                    s.push(' ');
                    s.push_str(&w);
                }
                s.push_str(end);
                s
            })
    }

    fn context() -> impl Strategy<Value = (String, usize)> {
        (
            prop::collection::vec(sentence(), 2..7),
            prop::collection::vec(prop::sample::select(vec![" ", "  ", "\n", " \t"]), 6),
        )
            .prop_flat_map(|(sents, seps)| {
                let mut text = String::new();
                for (i, s) in sents.iter().enumerate() {
                    if i > 0 {
                        text.push_str(seps[i - 1]);
                    }
                    text.push_str(s);
                }
                let n = sents.len();
                (Just(text), 0..n)
            })
    }

    proptest! {
        #[test]
        fn removal_round_trips_through_segmentation((c, i) in context()) {
            let spans = segment_sentences(&c);
            let mut expected = sentence_texts(&c);
            prop_assume!(expected.len() >= 2 && i < expected.len());
            expected.remove(i);
            let removed = remove_sentence(&c, &spans, i).unwrap();
            prop_assert_eq!(sentence_texts(&removed), expected);
        }

        #[test]
        fn remove_and_keep_partition_characters((c, i) in context()) {
            let spans = segment_sentences(&c);
            prop_assume!(spans.len() >= 2 && i < spans.len());
            let joined = format!("{}{}", remove_sentence(&c, &spans, i).unwrap(), keep_only_sentence(&c, &spans, i).unwrap());
            let mut a: Vec<char> = joined.chars().filter(|ch| !ch.is_whitespace()).collect();
            let mut b: Vec<char> = c.chars().filter(|ch| !ch.is_whitespace()).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }
}
