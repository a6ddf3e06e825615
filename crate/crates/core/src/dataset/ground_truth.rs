use super::{DatasetError, RawQaRecord, Sample, SampleFlag, SentenceSegmenter, SentenceSpan};

/// Attach the ground-truth sentence to a record: the sentence holding the
/// first answer's start offset.
///
/// An offset inside inter-sentence whitespace goes to the following sentence;
/// one past the last sentence goes to the last sentence and is flagged.
pub fn derive_ground_truth(
    record: RawQaRecord,
    sentences: Vec<SentenceSpan>,
) -> Result<Sample, DatasetError> {
    if sentences.is_empty() {
        return Err(DatasetError::EmptyContext { id: record.id });
    }

    let mut flags = Vec::new();
    let gt_sentence = match record.answers.first() {
        None => None,
        Some(answer) => {
            let offset = answer.answer_start;
            let index = match sentences.iter().position(|s| s.contains(offset)) {
                Some(i) => i,
                None => match sentences.iter().position(|s| s.start > offset) {
                    Some(i) => i,
                    None => {
                        flags.push(SampleFlag::SnappedPastEnd);
                        sentences.len() - 1
                    }
                },
            };
            let answer_last = offset + crate::text::char_len(answer.text.trim_end());
            if !flags.contains(&SampleFlag::SnappedPastEnd) && answer_last > sentences[index].end {
                flags.push(SampleFlag::BoundaryCrossing);
            }
            Some(index)
        }
    };

    Ok(Sample {
        record,
        sentences,
        gt_sentence,
        flags,
    })
}

/// Segment and label a batch of records with one segmenter.
pub fn prepare_samples(
    records: Vec<RawQaRecord>,
    segmenter: &dyn SentenceSegmenter,
) -> Result<Vec<Sample>, DatasetError> {
    records
        .into_iter()
        .map(|record| {
            let sentences = segmenter.segment(&record.context);
            derive_ground_truth(record, sentences)
        })
        .collect()
}
