//! Differentiable bag-of-embeddings fixture.
//!
//! `p = link(w · pool(E) + b)` over looked-up token embeddings `E`. Mean
//! pooling gives every token the same gradient `p(1-p) w / n`; attention
//! pooling (softmax over `w · e_t`) makes the gradient token-dependent, which
//! is what a gradient interpreter needs to single out a token.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{AnswerabilityModel, GradientModel, ModelError, Token};
use crate::text::normalize_word;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Logistic,
    /// Output is the raw score; exactly linear in the embeddings under mean
    /// pooling. Not a probability.
    Identity,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Attention,
}

/// On-disk description of a bag model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagModelSpec {
    pub vocab: BTreeMap<String, Vec<f64>>,
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(default)]
    pub link: Link,
    #[serde(default)]
    pub pooling: Pooling,
}

#[derive(Debug, Clone)]
pub struct BagEmbeddingModel {
    vocab: HashMap<String, Array1<f64>>,
    weights: Array1<f64>,
    bias: f64,
    link: Link,
    pooling: Pooling,
}

/// Logistic link, mean pooling.
pub fn bag_embedding_model(
    vocab: HashMap<String, Vec<f64>>,
    weights: Vec<f64>,
    bias: f64,
) -> Result<BagEmbeddingModel, ModelError> {
    BagEmbeddingModel::new(vocab, weights, bias, Link::Logistic, Pooling::Mean)
}

/// Identity link, mean pooling: `f(E) = w · mean(E) + b`.
pub fn linear_embedding_model(
    vocab: HashMap<String, Vec<f64>>,
    weights: Vec<f64>,
    bias: f64,
) -> Result<BagEmbeddingModel, ModelError> {
    BagEmbeddingModel::new(vocab, weights, bias, Link::Identity, Pooling::Mean)
}

impl BagEmbeddingModel {
    pub fn new(
        vocab: HashMap<String, Vec<f64>>,
        weights: Vec<f64>,
        bias: f64,
        link: Link,
        pooling: Pooling,
    ) -> Result<Self, ModelError> {
        let d = weights.len();
        if d == 0 {
            return Err(ModelError::InvalidParameter(
                "weights must be non-empty".into(),
            ));
        }
        let mut table = HashMap::with_capacity(vocab.len());
        for (word, v) in vocab {
            if v.len() != d {
                return Err(ModelError::InvalidParameter(format!(
                    "embedding for {word:?} has dimension {}, weights have {d}",
                    v.len()
                )));
            }
            table.insert(normalize_word(&word), Array1::from(v));
        }
        Ok(Self {
            vocab: table,
            weights: Array1::from(weights),
            bias,
            link,
            pooling,
        })
    }

    pub fn from_spec(spec: BagModelSpec) -> Result<Self, ModelError> {
        Self::new(
            spec.vocab.into_iter().collect(),
            spec.weights,
            spec.bias,
            spec.link,
            spec.pooling,
        )
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn check(&self, embeddings: &ArrayView2<f64>) -> Result<(), ModelError> {
        if embeddings.ncols() != self.dim() {
            return Err(ModelError::Shape {
                expected: self.dim(),
                got: embeddings.ncols(),
            });
        }
        Ok(())
    }

    fn apply_link(&self, z: f64) -> (f64, f64) {
        match self.link {
            Link::Logistic => {
                let p = 1.0 / (1.0 + (-z).exp());
                (p, p * (1.0 - p))
            }
            Link::Identity => (z, 1.0),
        }
    }

    /// Pre-link score and the per-token factor `c_t` with `dz/de_t = c_t w`.
    fn score(&self, embeddings: &ArrayView2<f64>) -> (f64, Array1<f64>) {
        let n = embeddings.nrows();
        if n == 0 {
            return (self.bias, Array1::zeros(0));
        }
        let proj = embeddings.dot(&self.weights);
        match self.pooling {
            Pooling::Mean => (
                proj.sum() / n as f64 + self.bias,
                Array1::from_elem(n, 1.0 / n as f64),
            ),
            Pooling::Attention => {
                let max = proj.fold(f64::NEG_INFINITY, |m, &s| m.max(s));
                let exp = proj.mapv(|s| (s - max).exp());
                let alpha = &exp / exp.sum();
                let pooled = alpha.dot(&proj);
                let factor = &alpha * &proj.mapv(|s| 1.0 + s - pooled);
                (pooled + self.bias, factor)
            }
        }
    }
}

impl AnswerabilityModel for BagEmbeddingModel {
    fn predict_proba(&self, question: &str, context: &str) -> Result<f64, ModelError> {
        let tokens = self.tokenize(context);
        self.proba_from_embeddings(question, self.embed(&tokens).view())
    }
}

impl GradientModel for BagEmbeddingModel {
    fn embed(&self, tokens: &[Token]) -> Array2<f64> {
        let mut out = Array2::zeros((tokens.len(), self.dim()));
        for (mut row, token) in out.axis_iter_mut(Axis(0)).zip(tokens) {
            if let Some(v) = self.vocab.get(&normalize_word(&token.text)) {
                row.assign(v);
            }
        }
        out
    }

    fn proba_from_embeddings(
        &self,
        _question: &str,
        embeddings: ArrayView2<f64>,
    ) -> Result<f64, ModelError> {
        self.check(&embeddings)?;
        Ok(self.apply_link(self.score(&embeddings).0).0)
    }

    fn gradient(
        &self,
        _question: &str,
        embeddings: ArrayView2<f64>,
    ) -> Result<Array2<f64>, ModelError> {
        self.check(&embeddings)?;
        let (z, factor) = self.score(&embeddings);
        let (_, dlink) = self.apply_link(z);
        let mut grad = Array2::zeros(embeddings.raw_dim());
        for (mut row, c) in grad.axis_iter_mut(Axis(0)).zip(factor.iter()) {
            row.assign(&(&self.weights * (dlink * c)));
        }
        Ok(grad)
    }
}
