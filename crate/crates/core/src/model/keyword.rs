use std::collections::{HashMap, HashSet};

use super::{AnswerabilityModel, ModelError};
use crate::text::normalize_word;

/// Deterministic fixture: a question is answerable exactly when all of its
/// keywords occur in the context as whole words (case-insensitive).
#[derive(Debug, Clone)]
pub struct KeywordOracle {
    keywords: HashMap<String, Vec<String>>,
}

/// Build the oracle from a question → keywords map. Every keyword set must be
/// non-empty.
pub fn keyword_oracle_model(
    keyword_map: HashMap<String, Vec<String>>,
) -> Result<KeywordOracle, ModelError> {
    let mut keywords = HashMap::with_capacity(keyword_map.len());
    for (question, words) in keyword_map {
        let normalized: Vec<String> = words
            .iter()
            .map(|w| normalize_word(w))
            .filter(|w| !w.is_empty())
            .collect();
        if normalized.is_empty() {
            return Err(ModelError::InvalidParameter(format!(
                "empty keyword set for question {question:?}"
            )));
        }
        keywords.insert(question, normalized);
    }
    Ok(KeywordOracle { keywords })
}

impl KeywordOracle {
    pub fn keywords(&self, question: &str) -> Option<&[String]> {
        self.keywords.get(question).map(Vec::as_slice)
    }
}

impl AnswerabilityModel for KeywordOracle {
    fn predict_proba(&self, question: &str, context: &str) -> Result<f64, ModelError> {
        let wanted = self
            .keywords
            .get(question)
            .ok_or_else(|| ModelError::UnknownQuestion(question.to_string()))?;
        let present: HashSet<String> = context.split_whitespace().map(normalize_word).collect();
        Ok(if wanted.iter().all(|k| present.contains(k)) {
            1.0
        } else {
            0.0
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::segment_sentences;
    use crate::verify::remove_sentence;

    fn oracle() -> KeywordOracle {
        let mut map = HashMap::new();
        map.insert(
            "What is the capital?".to_string(),
            vec!["capital".to_string(), "France".to_string()],
        );
        keyword_oracle_model(map).unwrap()
    }

    #[test]
    fn all_keywords_present() {
        let p = oracle()
            .predict_proba("What is the capital?", "Paris is the Capital of France.")
            .unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn missing_keyword() {
        let p = oracle()
            .predict_proba("What is the capital?", "Paris is the capital.")
            .unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn whole_words_only() {
        let p = oracle()
            .predict_proba("What is the capital?", "Capitals of Frances.")
            .unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn removing_keyword_sentence_flips() {
        let ctx = "It rains. The capital of France is Paris. Dogs bark.";
        let q = "What is the capital?";
        assert_eq!(oracle().predict_proba(q, ctx).unwrap(), 1.0);
        let spans = segment_sentences(ctx);
        let without = remove_sentence(ctx, &spans, 1).unwrap();
        assert_eq!(oracle().predict_proba(q, &without).unwrap(), 0.0);
    }

    #[test]
    fn permuting_sentences_keeps_prediction() {
        let q = "What is the capital?";
        let a = oracle()
            .predict_proba(q, "Dogs bark. France has a capital.")
            .unwrap();
        let b = oracle()
            .predict_proba(q, "France has a capital. Dogs bark.")
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_question_and_empty_sets() {
        assert!(matches!(
            oracle().predict_proba("Who?", "x"),
            Err(ModelError::UnknownQuestion(_))
        ));
        let mut map = HashMap::new();
        map.insert("q".to_string(), vec!["...".to_string()]);
        assert!(keyword_oracle_model(map).is_err());
    }
}
