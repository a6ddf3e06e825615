//! Extractive QA data: loading, sentence segmentation, ground-truth labels.
//!
//! A [`RawQaRecord`] is one question over one context. Segmenting the context
//! and locating the first answer's start offset turns it into a [`Sample`]
//! whose `gt_sentence` is the sentence the answer lives in. Unanswerable
//! records keep `gt_sentence = None`.

mod cache;
mod ground_truth;
mod loader;
mod segment;
mod stats;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{read_cache, write_cache, CachedSample};
pub use ground_truth::{derive_ground_truth, prepare_samples};
pub use loader::{load_squad_json, parse_squad_json, write_squad_json};
pub use segment::{segment_sentences, RuleSegmenter, SentenceSegmenter, DEFAULT_ABBREVIATIONS};
pub use stats::{
    compute_stats, filter_by_length, partition_by_length, whitespace_length, DatasetStats,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {source_name} at `{json_path}`: {message}")]
    Parse {
        source_name: String,
        json_path: String,
        message: String,
    },
    #[error("{split}: {} record(s) failed validation: {}", .ids.len(), .ids.join(", "))]
    Validation {
        split: String,
        ids: Vec<String>,
        details: Vec<String>,
    },
    #[error("record {id}: context contains no sentences")]
    EmptyContext { id: String },
    #[error("{samples} samples but {predictions} predictions")]
    LengthMismatch { samples: usize, predictions: usize },
    #[error("statistics requested over an empty sample list")]
    EmptyInput,
    #[error("serializing {what}: {message}")]
    Serialize { what: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Character offset of the answer inside the context.
    pub answer_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawQaRecord {
    pub id: String,
    pub question: String,
    pub context: String,
    pub is_impossible: bool,
    pub answers: Vec<Answer>,
}

impl RawQaRecord {
    pub fn is_answerable(&self) -> bool {
        !self.answers.is_empty()
    }

    /// Check the record-level invariants: every answer occurs verbatim at its
    /// offset, and `is_impossible` agrees with the answer list.
    pub fn validate(&self) -> Result<(), String> {
        if self.is_impossible == self.is_answerable() {
            return Err(format!(
                "is_impossible = {} but {} answer(s) given",
                self.is_impossible,
                self.answers.len()
            ));
        }
        let index = crate::text::CharIndex::new(&self.context);
        for answer in &self.answers {
            let end = answer.answer_start + crate::text::char_len(&answer.text);
            match index.slice(&self.context, answer.answer_start, end) {
                Some(found) if found == answer.text => {}
                Some(found) => {
                    return Err(format!(
                        "answer {:?} at {} does not match context text {:?}",
                        answer.text, answer.answer_start, found
                    ))
                }
                None => {
                    return Err(format!(
                        "answer {:?} at {} runs past the end of the context",
                        answer.text, answer.answer_start
                    ))
                }
            }
        }
        Ok(())
    }
}

/// A sentence as a half-open character range `[start, end)` of its context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl SentenceSpan {
    pub fn contains(&self, offset: usize) -> bool {
        self.start <= offset && offset < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFlag {
    /// The first answer continues past the end of its sentence.
    BoundaryCrossing,
    /// The answer started after the last sentence and was assigned to it.
    SnappedPastEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub record: RawQaRecord,
    pub sentences: Vec<SentenceSpan>,
    pub gt_sentence: Option<usize>,
    pub flags: Vec<SampleFlag>,
}

impl Sample {
    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn question(&self) -> &str {
        &self.record.question
    }

    pub fn context(&self) -> &str {
        &self.record.context
    }

    pub fn n_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    /// Text of sentence `index`, if it exists.
    pub fn sentence_text(&self, index: usize) -> Option<&str> {
        let span = self.sentences.get(index)?;
        crate::text::char_slice(&self.record.context, span.start, span.end)
    }
}
