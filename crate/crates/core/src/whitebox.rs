//! Gradient attributions over context-token embeddings.
//!
//! All three methods reduce an `n_tokens × d` matrix to one score per token by
//! summing over the embedding dimension (optionally summing absolute values).

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attribution::{InterpretError, TokenAttribution};
use crate::model::{GradientModel, Token};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimAggregation {
    #[default]
    Sum,
    AbsSum,
}

impl DimAggregation {
    fn tag(self) -> &'static str {
        match self {
            DimAggregation::Sum => "sum",
            DimAggregation::AbsSum => "abs_sum",
        }
    }
}

/// Collapse the embedding dimension.
pub fn reduce_dims(matrix: ArrayView2<f64>, dims: DimAggregation) -> Vec<f64> {
    match dims {
        DimAggregation::Sum => matrix.sum_axis(Axis(1)).to_vec(),
        DimAggregation::AbsSum => matrix.mapv(f64::abs).sum_axis(Axis(1)).to_vec(),
    }
}

/// IG starting point.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// All-zero embedding matrix.
    #[default]
    Zero,
    /// Every token replaced by this embedding (e.g. a padding token).
    Token(Vec<f64>),
}

impl Baseline {
    pub fn matrix(&self, rows: usize, cols: usize) -> Result<Array2<f64>, InterpretError> {
        match self {
            Baseline::Zero => Ok(Array2::zeros((rows, cols))),
            Baseline::Token(v) if v.len() == cols => {
                let row = ArrayView2::from_shape((1, cols), v).expect("length checked");
                Ok(row
                    .broadcast((rows, cols))
                    .expect("broadcast one row")
                    .to_owned())
            }
            Baseline::Token(v) => Err(InterpretError::InvalidParameter(format!(
                "baseline embedding has dimension {}, model uses {cols}",
                v.len()
            ))),
        }
    }
}

fn embed_context(
    model: &dyn GradientModel,
    context: &str,
) -> Result<(Vec<Token>, Array2<f64>), InterpretError> {
    let tokens = model.tokenize(context);
    if tokens.is_empty() {
        return Err(InterpretError::NoTokens);
    }
    let emb = model.embed(&tokens);
    Ok((tokens, emb))
}

/// Token scores from a gradient already computed elsewhere (e.g. by an
/// external model process).
pub fn saliency_from_gradient(
    tokens: Vec<Token>,
    gradient: ArrayView2<f64>,
    dims: DimAggregation,
) -> Result<TokenAttribution, InterpretError> {
    if tokens.is_empty() {
        return Err(InterpretError::NoTokens);
    }
    let scores = reduce_dims(gradient, dims);
    Ok(TokenAttribution::new(tokens, scores, "saliency")?.with_param("dims", dims.tag()))
}

/// Plain gradient of the answerable probability, summed per token.
pub fn saliency(
    model: &dyn GradientModel,
    question: &str,
    context: &str,
    dims: DimAggregation,
) -> Result<TokenAttribution, InterpretError> {
    let (tokens, emb) = embed_context(model, context)?;
    let grad = model.gradient(question, emb.view())?;
    saliency_from_gradient(tokens, grad.view(), dims)
}

/// Set SmoothGrad's sigma as a fraction of the embedding value range.
pub fn sigma_from_fraction(embeddings: ArrayView2<f64>, fraction: f64) -> f64 {
    let (lo, hi) = embeddings
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if lo.is_finite() && hi.is_finite() {
        fraction * (hi - lo)
    } else {
        0.0
    }
}

/// Saliency averaged over `n_samples` copies of the embeddings with i.i.d.
/// `N(0, sigma^2)` noise on every coordinate.
pub fn smoothgrad(
    model: &dyn GradientModel,
    question: &str,
    context: &str,
    n_samples: usize,
    sigma: f64,
    seed: u64,
    dims: DimAggregation,
) -> Result<TokenAttribution, InterpretError> {
    if n_samples == 0 {
        return Err(InterpretError::InvalidParameter(
            "smoothgrad needs n_samples >= 1".into(),
        ));
    }
    let noise = Normal::new(0.0, sigma)
        .map_err(|e| InterpretError::InvalidParameter(format!("sigma {sigma}: {e}")))?;
    let (tokens, emb) = embed_context(model, context)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Running mean: identical per-sample scores average back bit-exactly.
    let mut mean = vec![0.0; tokens.len()];
    for k in 0..n_samples {
        let noisy = emb.mapv(|x| x + noise.sample(&mut rng));
        let grad = model.gradient(question, noisy.view())?;
        let scores = reduce_dims(grad.view(), dims);
        let weight = 1.0 / (k + 1) as f64;
        for (m, s) in mean.iter_mut().zip(scores) {
            *m += (s - *m) * weight;
        }
    }

    Ok(TokenAttribution::new(tokens, mean, "smoothgrad")?
        .with_param("n_samples", n_samples)
        .with_param("sigma", sigma)
        .with_param("seed", seed)
        .with_param("dims", dims.tag()))
}

/// Per-coordinate integrated gradients from `baseline` to `input` with the
/// midpoint rule: `(x - x0) * mean_k grad(x0 + (k + 1/2)/n (x - x0))`.
pub fn integrated_gradients_matrix(
    model: &dyn GradientModel,
    question: &str,
    input: ArrayView2<f64>,
    baseline: ArrayView2<f64>,
    n_steps: usize,
) -> Result<Array2<f64>, InterpretError> {
    if n_steps == 0 {
        return Err(InterpretError::InvalidParameter(
            "integrated gradients needs n_steps >= 1".into(),
        ));
    }
    if input.raw_dim() != baseline.raw_dim() {
        return Err(InterpretError::InvalidParameter(
            "baseline shape differs from input".into(),
        ));
    }
    let diff = &input - &baseline;
    let mut total = Array2::<f64>::zeros(input.raw_dim());
    for k in 0..n_steps {
        let alpha = (k as f64 + 0.5) / n_steps as f64;
        let point = &baseline + &(&diff * alpha);
        total += &model.gradient(question, point.view())?;
    }
    Ok(diff * total / n_steps as f64)
}

pub fn integrated_gradients(
    model: &dyn GradientModel,
    question: &str,
    context: &str,
    n_steps: usize,
    baseline: &Baseline,
    dims: DimAggregation,
) -> Result<TokenAttribution, InterpretError> {
    let (tokens, emb) = embed_context(model, context)?;
    let base = baseline.matrix(emb.nrows(), emb.ncols())?;
    let attr = integrated_gradients_matrix(model, question, emb.view(), base.view(), n_steps)?;
    let baseline_tag = match baseline {
        Baseline::Zero => "zero",
        Baseline::Token(_) => "token",
    };
    Ok(TokenAttribution::new(
        tokens,
        reduce_dims(attr.view(), dims),
        "integrated_gradients",
    )?
    .with_param("n_steps", n_steps)
    .with_param("baseline", baseline_tag)
    .with_param("dims", dims.tag()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        bag_embedding_model, linear_embedding_model, AnswerabilityModel, BagEmbeddingModel, Pooling,
    };
    use std::collections::HashMap;

    fn vocab() -> HashMap<String, Vec<f64>> {
        [
            ("capital", vec![2.0, 1.5, 0.5]),
            ("the", vec![0.1, -0.2, 0.0]),
            ("of", vec![-0.3, 0.1, 0.2]),
            ("rain", vec![0.0, 0.4, -0.6]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn logistic() -> BagEmbeddingModel {
        bag_embedding_model(vocab(), vec![1.0, 0.8, 0.3], -0.4).unwrap()
    }

    fn linear() -> BagEmbeddingModel {
        linear_embedding_model(vocab(), vec![1.0, 0.8, 0.3], -0.4).unwrap()
    }

    const CTX: &str = "the rain of the capital";

    #[test]
    fn zero_weights_zero_saliency() {
        let model = bag_embedding_model(vocab(), vec![0.0; 3], 0.0).unwrap();
        let attr = saliency(&model, "q", CTX, DimAggregation::Sum).unwrap();
        assert_eq!(attr.scores, vec![0.0; 5]);
        assert_eq!(attr.tokens.len(), 5);
    }

    #[test]
    fn attention_pooling_singles_out_keyword() {
        let model = logistic().with_pooling(Pooling::Attention);
        let attr = saliency(&model, "q", CTX, DimAggregation::Sum).unwrap();
        let best = attr
            .scores
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<_> = attr
            .scores
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == best)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(winners, vec![4]);
    }

    #[test]
    fn mean_pooling_saliency_is_uniform() {
        // dz/de_t = w / n for every token, so the keyword cannot stand out.
        let attr = saliency(&logistic(), "q", CTX, DimAggregation::Sum).unwrap();
        assert!(attr.scores.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn saliency_matches_finite_differences_of_token_shift() {
        // Shifting every coordinate of token t by h changes f by h * sum_d grad[t][d].
        let model = logistic().with_pooling(Pooling::Attention);
        let tokens = model.tokenize(CTX);
        let emb = model.embed(&tokens);
        let attr = saliency(&model, "q", CTX, DimAggregation::Sum).unwrap();
        let h = 1e-4;
        for t in 0..tokens.len() {
            let mut plus = emb.clone();
            let mut minus = emb.clone();
            plus.row_mut(t).mapv_inplace(|x| x + h);
            minus.row_mut(t).mapv_inplace(|x| x - h);
            let fd = (model.proba_from_embeddings("q", plus.view()).unwrap()
                - model.proba_from_embeddings("q", minus.view()).unwrap())
                / (2.0 * h);
            let rel = (fd - attr.scores[t]).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-4, "token {t}: fd {fd} vs {}", attr.scores[t]);
        }
    }

    #[test]
    fn smoothgrad_without_noise_is_saliency() {
        let model = logistic().with_pooling(Pooling::Attention);
        let s = saliency(&model, "q", CTX, DimAggregation::Sum).unwrap();
        for n in [1, 3, 7] {
            let sg = smoothgrad(&model, "q", CTX, n, 0.0, 11, DimAggregation::Sum).unwrap();
            assert_eq!(sg.scores, s.scores);
        }
    }

    #[test]
    fn smoothgrad_single_sample_is_saliency_at_noisy_point() {
        let model = logistic().with_pooling(Pooling::Attention);
        let sigma = 0.3;
        let sg = smoothgrad(&model, "q", CTX, 1, sigma, 5, DimAggregation::Sum).unwrap();
        let emb = model.embed(&model.tokenize(CTX));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, sigma).unwrap();
        let noisy = emb.mapv(|x| x + normal.sample(&mut rng));
        let expected = reduce_dims(
            model.gradient("q", noisy.view()).unwrap().view(),
            DimAggregation::Sum,
        );
        assert_eq!(sg.scores, expected);
    }

    #[test]
    fn smoothgrad_on_linear_model_ignores_noise() {
        let s = saliency(&linear(), "q", CTX, DimAggregation::Sum).unwrap();
        let sg = smoothgrad(&linear(), "q", CTX, 9, 2.5, 1, DimAggregation::Sum).unwrap();
        for (a, b) in s.scores.iter().zip(&sg.scores) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothgrad_is_seed_deterministic() {
        let model = logistic().with_pooling(Pooling::Attention);
        let a = smoothgrad(&model, "q", CTX, 5, 0.5, 42, DimAggregation::Sum).unwrap();
        let b = smoothgrad(&model, "q", CTX, 5, 0.5, 42, DimAggregation::Sum).unwrap();
        assert_eq!(a, b);
        assert!(smoothgrad(&model, "q", CTX, 0, 0.5, 42, DimAggregation::Sum).is_err());
    }

    #[test]
    fn ig_at_baseline_is_zero() {
        let model = logistic();
        let emb = model.embed(&model.tokenize(CTX));
        let attr = integrated_gradients_matrix(&model, "q", emb.view(), emb.view(), 16).unwrap();
        assert!(attr.iter().all(|x| *x == 0.0));
        assert!(integrated_gradients_matrix(&model, "q", emb.view(), emb.view(), 0).is_err());
    }

    #[test]
    fn ig_completeness_on_logistic_fixture() {
        let model = logistic().with_pooling(Pooling::Attention);
        let emb = model.embed(&model.tokenize(CTX));
        let base = Array2::zeros(emb.raw_dim());
        let attr = integrated_gradients_matrix(&model, "q", emb.view(), base.view(), 128).unwrap();
        let delta = model.proba_from_embeddings("q", emb.view()).unwrap()
            - model.proba_from_embeddings("q", base.view()).unwrap();
        assert!((attr.sum() - delta).abs() <= 0.01 * delta.abs());
    }

    #[test]
    fn ig_on_linear_model_is_input_times_gradient() {
        let model = linear();
        let emb = model.embed(&model.tokenize(CTX));
        let grad = model.gradient("q", emb.view()).unwrap();
        for steps in [2, 3, 50] {
            let ig = integrated_gradients(
                &model,
                "q",
                CTX,
                steps,
                &Baseline::Zero,
                DimAggregation::Sum,
            )
            .unwrap();
            let expected = reduce_dims((&emb * &grad).view(), DimAggregation::Sum);
            for (a, b) in ig.scores.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn token_baseline_broadcasts() {
        let base = Baseline::Token(vec![1.0, 2.0]).matrix(3, 2).unwrap();
        assert_eq!(base.row(2).to_vec(), vec![1.0, 2.0]);
        assert!(Baseline::Token(vec![1.0]).matrix(3, 2).is_err());
    }

    #[test]
    fn abs_sum_flag() {
        let grad = ndarray::arr2(&[[1.0, -3.0], [0.5, 0.5]]);
        assert_eq!(
            reduce_dims(grad.view(), DimAggregation::Sum),
            vec![-2.0, 1.0]
        );
        assert_eq!(
            reduce_dims(grad.view(), DimAggregation::AbsSum),
            vec![4.0, 1.0]
        );
    }

    #[test]
    fn empty_context_is_an_error() {
        assert!(matches!(
            saliency(&logistic(), "q", "   ", DimAggregation::Sum),
            Err(InterpretError::NoTokens)
        ));
    }
}
