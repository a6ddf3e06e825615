use serde::{Deserialize, Serialize};

use super::{DatasetError, Sample};

/// Descriptive statistics in the layout of a dataset summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_samples_used: usize,
    pub avg_sentences: f64,
    pub accuracy: f64,
    /// `None` when there are no answerable samples.
    pub recall: Option<f64>,
}

impl DatasetStats {
    /// Replace the sample count and sentence average with those of the set
    /// actually used for interpretation (typically the true positives),
    /// keeping accuracy and recall from the full prediction set.
    pub fn with_used(mut self, used: &[Sample]) -> Self {
        self.n_samples_used = used.len();
        if !used.is_empty() {
            self.avg_sentences = mean_sentences(used);
        }
        self
    }
}

fn mean_sentences(samples: &[Sample]) -> f64 {
    samples.iter().map(|s| s.n_sentences() as f64).sum::<f64>() / samples.len() as f64
}

/// Whitespace word count of question plus context. Stands in for a model
/// tokenizer when none is available; subword tokenizers yield more tokens.
pub fn whitespace_length(question: &str, context: &str) -> usize {
    question.split_whitespace().count() + context.split_whitespace().count()
}

/// Split samples into those within the token budget and those over it,
/// preserving order in both.
pub fn partition_by_length<F>(
    samples: Vec<Sample>,
    length_fn: F,
    max_tokens: usize,
) -> (Vec<Sample>, Vec<Sample>)
where
    F: Fn(&str, &str) -> usize,
{
    samples
        .into_iter()
        .partition(|s| length_fn(s.question(), s.context()) <= max_tokens)
}

pub fn filter_by_length<F>(samples: Vec<Sample>, length_fn: F, max_tokens: usize) -> Vec<Sample>
where
    F: Fn(&str, &str) -> usize,
{
    partition_by_length(samples, length_fn, max_tokens).0
}

/// Accuracy over all samples, recall over the answerable ones.
/// `predictions[i]` is true when sample `i` was predicted answerable.
pub fn compute_stats(
    samples: &[Sample],
    predictions: &[bool],
) -> Result<DatasetStats, DatasetError> {
    if samples.len() != predictions.len() {
        return Err(DatasetError::LengthMismatch {
            samples: samples.len(),
            predictions: predictions.len(),
        });
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyInput);
    }

    let mut correct = 0usize;
    let mut positives = 0usize;
    let mut true_positives = 0usize;
    for (sample, &predicted) in samples.iter().zip(predictions) {
        let answerable = sample.gt_sentence.is_some();
        if answerable == predicted {
            correct += 1;
        }
        if answerable {
            positives += 1;
            if predicted {
                true_positives += 1;
            }
        }
    }

    Ok(DatasetStats {
        n_samples_used: samples.len(),
        avg_sentences: mean_sentences(samples),
        accuracy: correct as f64 / samples.len() as f64,
        recall: (positives > 0).then(|| true_positives as f64 / positives as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{derive_ground_truth, segment_sentences, Answer, RawQaRecord};
    use proptest::prelude::*;

    fn sample(n_sentences: usize, answerable: bool, words_per_sentence: usize) -> Sample {
        let sentence = format!("{}.", vec!["Word"; words_per_sentence].join(" "));
        let context = vec![sentence; n_sentences].join(" ");
        let record = RawQaRecord {
            id: format!("s{n_sentences}"),
            question: "Which word?".into(),
            is_impossible: !answerable,
            answers: if answerable {
                vec![Answer {
                    text: "Word".into(),
                    answer_start: 0,
                }]
            } else {
                vec![]
            },
            context,
        };
        let spans = segment_sentences(&record.context);
        derive_ground_truth(record, spans).unwrap()
    }

    #[test]
    fn all_correct_is_full_accuracy() {
        let samples = vec![sample(2, true, 1), sample(3, false, 1)];
        let stats = compute_stats(&samples, &[true, false]).unwrap();
        assert_eq!(stats.accuracy, 1.0);
        assert_eq!(stats.recall, Some(1.0));
    }

    #[test]
    fn all_positive_dataset_has_recall_equal_to_accuracy() {
        let samples = vec![sample(2, true, 1), sample(3, true, 1), sample(4, true, 1)];
        let stats = compute_stats(&samples, &[true, false, true]).unwrap();
        assert_eq!(Some(stats.accuracy), stats.recall);
    }

    #[test]
    fn average_sentences() {
        let samples = vec![sample(4, true, 1), sample(6, true, 1)];
        let stats = compute_stats(&samples, &[true, true]).unwrap();
        assert_eq!(stats.avg_sentences, 5.0);
    }

    #[test]
    fn recall_missing_without_positives() {
        let samples = vec![sample(2, false, 1)];
        assert_eq!(compute_stats(&samples, &[false]).unwrap().recall, None);
        assert!(matches!(
            compute_stats(&samples, &[]),
            Err(DatasetError::LengthMismatch { .. })
        ));
        assert!(matches!(
            compute_stats(&[], &[]),
            Err(DatasetError::EmptyInput)
        ));
    }

    #[test]
    fn length_filter_boundary() {
        // "Which word?" is 2 words; 511 context words gives 513 in total.
        let long = sample(1, true, 511);
        let ok = sample(1, true, 510);
        let kept = filter_by_length(vec![long, ok.clone()], whitespace_length, 512);
        assert_eq!(kept, vec![ok]);
        assert!(filter_by_length(vec![], whitespace_length, 512).is_empty());
        let all = vec![sample(1, true, 600), sample(2, true, 3)];
        assert_eq!(
            filter_by_length(all.clone(), whitespace_length, usize::MAX),
            all
        );
    }

    proptest! {
        #[test]
        fn larger_budget_keeps_a_superset(lens in prop::collection::vec(1usize..40, 0..12), a in 0usize..50, b in 0usize..50) {
            let samples: Vec<Sample> = lens.iter().map(|&l| sample(1, true, l)).collect();
            let (lo, hi) = (a.min(b), a.max(b));
            let small = filter_by_length(samples.clone(), whitespace_length, lo);
            let large = filter_by_length(samples, whitespace_length, hi);
            prop_assert!(small.iter().all(|s| large.contains(s)));
        }
    }
}
