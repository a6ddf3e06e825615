use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, Token};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("context has no tokens")]
    NoTokens,
    #[error("only {kept} perturbation(s) produced a model response, need at least {needed}")]
    TooFewResponses { kept: usize, needed: usize },
    #[error("interpreter {0:?} requires gradient access, which this model does not provide")]
    NeedsGradients(String),
    #[error("interpreter returned {got} sentence scores for {expected} sentences")]
    WrongLength { expected: usize, got: usize },
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
}

/// Per-token importance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAttribution {
    pub tokens: Vec<Token>,
    pub scores: Vec<f64>,
    pub method_tag: String,
    pub params: BTreeMap<String, serde_json::Value>,
}

impl TokenAttribution {
    pub fn new(
        tokens: Vec<Token>,
        scores: Vec<f64>,
        method_tag: &str,
    ) -> Result<Self, InterpretError> {
        if tokens.len() != scores.len() {
            return Err(InterpretError::WrongLength {
                expected: tokens.len(),
                got: scores.len(),
            });
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(InterpretError::NonFinite(i));
        }
        Ok(Self {
            tokens,
            scores,
            method_tag: method_tag.to_string(),
            params: BTreeMap::new(),
        })
    }

    pub fn with_param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}
