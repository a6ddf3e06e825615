//! Models seen as answerability classifiers.
//!
//! With the question held fixed, any QA system becomes a binary classifier over
//! contexts: "is the answer in here?". [`AnswerabilityModel`] is that view.
//! [`GradientModel`] adds embedding-level access for gradient interpreters.

mod bag;
mod external;
mod keyword;
mod spans;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;

pub use bag::{
    bag_embedding_model, linear_embedding_model, BagEmbeddingModel, BagModelSpec, Link, Pooling,
};
pub use external::{align_tokens, ExternalModel, MODEL_CMD_ENV};
pub use keyword::{keyword_oracle_model, KeywordOracle};
pub use spans::{answerability_from_spans, SpanDistributions};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no keywords registered for question {0:?}")]
    UnknownQuestion(String),
    #[error("invalid span distributions: {0}")]
    InvalidDistribution(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("embedding shape mismatch: expected {expected} columns, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("model endpoint: {0}")]
    Endpoint(String),
    #[error("model protocol: {0}")]
    Protocol(String),
}

/// A context token with its half-open character span in the context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Whitespace tokenization with character spans.
pub fn whitespace_tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let mut pos = 0;
    for c in text.chars() {
        if c.is_whitespace() {
            if let Some((start, word)) = current.take() {
                tokens.push(Token {
                    text: word,
                    start,
                    end: pos,
                });
            }
        } else {
            current
                .get_or_insert_with(|| (pos, String::new()))
                .1
                .push(c);
        }
        pos += 1;
    }
    if let Some((start, word)) = current {
        tokens.push(Token {
            text: word,
            start,
            end: pos,
        });
    }
    tokens
}

/// The classifier `g(C)`: probability that the fixed question is answerable
/// from `context`.
pub trait AnswerabilityModel: Send + Sync {
    fn predict_proba(&self, question: &str, context: &str) -> Result<f64, ModelError>;

    /// Context tokens with character spans. Defaults to whitespace splitting.
    fn tokenize(&self, context: &str) -> Vec<Token> {
        whitespace_tokenize(context)
    }

    /// Input length as the model counts it. Defaults to a whitespace word
    /// count, which undercounts subword tokenizers.
    fn token_length(&self, question: &str, context: &str) -> usize {
        crate::dataset::whitespace_length(question, context)
    }
}

/// An answerability model whose context-token embeddings can be read,
/// replaced, and differentiated against. Question tokens stay fixed.
pub trait GradientModel: AnswerabilityModel {
    /// Embedding matrix, one row per token.
    fn embed(&self, tokens: &[Token]) -> Array2<f64>;

    fn proba_from_embeddings(
        &self,
        question: &str,
        embeddings: ArrayView2<f64>,
    ) -> Result<f64, ModelError>;

    /// Gradient of the answerable-class probability with respect to every
    /// embedding coordinate; same shape as `embeddings`.
    fn gradient(
        &self,
        question: &str,
        embeddings: ArrayView2<f64>,
    ) -> Result<Array2<f64>, ModelError>;
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Threshold every sample's probability (`p >= threshold` is answerable).
/// A failure on one sample is reported in its slot and does not stop the batch.
pub fn predict_batch(
    model: &dyn AnswerabilityModel,
    samples: &[Sample],
    threshold: f64,
) -> Result<Vec<Result<bool, ModelError>>, ModelError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ModelError::InvalidParameter(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(samples
        .iter()
        .map(|s| {
            model
                .predict_proba(s.question(), s.context())
                .map(|p| p >= threshold)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{derive_ground_truth, segment_sentences, RawQaRecord};

    struct Fixed(f64);

    impl AnswerabilityModel for Fixed {
        fn predict_proba(&self, question: &str, _context: &str) -> Result<f64, ModelError> {
            if question == "fail" {
                Err(ModelError::Endpoint("boom".into()))
            } else {
                Ok(self.0)
            }
        }
    }

    fn sample(question: &str) -> Sample {
        let record = RawQaRecord {
            id: question.into(),
            question: question.into(),
            context: "Some text.".into(),
            is_impossible: true,
            answers: vec![],
        };
        let spans = segment_sentences(&record.context);
        derive_ground_truth(record, spans).unwrap()
    }

    #[test]
    fn tokenizer_spans_are_characters() {
        let toks = whitespace_tokenize("  Où est  Paris? ");
        let spans: Vec<_> = toks
            .iter()
            .map(|t| (t.text.as_str(), t.start, t.end))
            .collect();
        assert_eq!(spans, vec![("Où", 2, 4), ("est", 5, 8), ("Paris?", 10, 16)]);
    }

    #[test]
    fn threshold_convention() {
        let s = [sample("a")];
        assert!(predict_batch(&Fixed(0.94), &s, 0.5).unwrap()[0]
            .as_ref()
            .unwrap());
        assert!(predict_batch(&Fixed(0.5), &s, 0.5).unwrap()[0]
            .as_ref()
            .unwrap());
        assert!(!predict_batch(&Fixed(0.49), &s, 0.5).unwrap()[0]
            .as_ref()
            .unwrap());
        assert!(predict_batch(&Fixed(0.5), &[], 0.5).unwrap().is_empty());
        assert!(predict_batch(&Fixed(0.5), &s, 1.0).is_err());
    }

    #[test]
    fn failures_are_isolated() {
        let batch = [sample("a"), sample("fail"), sample("b")];
        let out = predict_batch(&Fixed(0.9), &batch, 0.5).unwrap();
        assert!(out[0].is_ok() && out[1].is_err() && out[2].is_ok());
    }
}
