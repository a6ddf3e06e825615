//! Perturbation-based local surrogates and the random baseline.
//!
//! LIME and Kernel SHAP share one pipeline: drop random subsets of tokens,
//! query the model on the shortened texts, weight each perturbation by its
//! proximity to the original, and fit a weighted LASSO from keep-masks to
//! probabilities. The coefficients are the token scores. The two methods
//! differ only in the proximity kernel.

mod lasso;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{InterpretError, TokenAttribution};
use crate::dataset::SentenceSpan;
use crate::model::{AnswerabilityModel, Token};
use crate::text::CharIndex;

pub use lasso::{fit_weighted_lasso, LassoConfig, SurrogateFit};

/// Weight standing in for the infinite Shapley-kernel weight of the empty and
/// full coalitions.
pub const SHAP_ENDPOINT_WEIGHT: f64 = 1e6;

pub const DEFAULT_KERNEL_WIDTH: f64 = 0.25;

/// Keep-masks with model responses and regression weights, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    /// `true` = unit kept.
    pub masks: Array2<bool>,
    pub responses: Vec<f64>,
    pub weights: Vec<f64>,
}

/// What a mask entry switches on and off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationUnit {
    #[default]
    Token,
    Sentence,
}

/// Random keep-masks. Row 0 keeps everything; every other row keeps a count
/// drawn uniformly from `1..=n_tokens`, at positions drawn without
/// replacement.
pub fn perturb(
    n_tokens: usize,
    n_perturbations: usize,
    seed: u64,
) -> Result<Array2<bool>, InterpretError> {
    if n_tokens == 0 {
        return Err(InterpretError::NoTokens);
    }
    if n_perturbations == 0 {
        return Err(InterpretError::InvalidParameter(
            "n_perturbations must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Array2::from_elem((n_perturbations, n_tokens), false);
    masks.row_mut(0).fill(true);
    for r in 1..n_perturbations {
        let keep = rng.random_range(1..=n_tokens);
        for pos in rand::seq::index::sample(&mut rng, n_tokens, keep) {
            masks[[r, pos]] = true;
        }
    }
    Ok(masks)
}

/// Every one of the `2^n` keep-masks, full coalition first.
pub fn all_coalitions(n_tokens: usize) -> Result<Array2<bool>, InterpretError> {
    if n_tokens == 0 {
        return Err(InterpretError::NoTokens);
    }
    if n_tokens > 20 {
        return Err(InterpretError::InvalidParameter(format!(
            "refusing to enumerate 2^{n_tokens} coalitions"
        )));
    }
    let total = 1usize << n_tokens;
    let full = total - 1;
    let order = std::iter::once(full).chain((0..full).rev());
    let mut masks = Array2::from_elem((total, n_tokens), false);
    for (r, bits) in order.enumerate() {
        for j in 0..n_tokens {
            masks[[r, j]] = bits >> j & 1 == 1;
        }
    }
    Ok(masks)
}

/// Remove masked-out units from `context`. Surviving units keep their original
/// text (including attached punctuation) and are joined by single spaces.
pub fn apply_mask(context: &str, units: &[Token], mask: &[bool]) -> String {
    let index = CharIndex::new(context);
    let mut out = String::new();
    for (unit, keep) in units.iter().zip(mask) {
        if !keep {
            continue;
        }
        let piece = index
            .slice(context, unit.start, unit.end)
            .unwrap_or(&unit.text);
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(piece);
    }
    out
}

/// Whole sentences as perturbation units.
pub fn sentence_units(context: &str, sentences: &[SentenceSpan]) -> Vec<Token> {
    let index = CharIndex::new(context);
    sentences
        .iter()
        .map(|s| Token {
            text: index
                .slice(context, s.start, s.end)
                .unwrap_or_default()
                .to_string(),
            start: s.start,
            end: s.end,
        })
        .collect()
}

/// LIME proximity: `exp(-D^2 / width^2)` with `D` the cosine distance from the
/// all-ones mask.
pub fn lime_kernel(mask: &[bool], kernel_width: f64) -> f64 {
    let n = mask.len() as f64;
    let kept = mask.iter().filter(|m| **m).count() as f64;
    let distance = if kept == 0.0 {
        1.0
    } else {
        1.0 - (kept / n).sqrt()
    };
    (-(distance * distance) / (kernel_width * kernel_width)).exp()
}

/// Shapley kernel `(M - 1) / (C(M, z) z (M - z))` for a mask keeping `z` of
/// `M` units; the empty and full coalitions get [`SHAP_ENDPOINT_WEIGHT`].
pub fn shap_kernel(m: usize, z: usize) -> f64 {
    if z == 0 || z >= m {
        return SHAP_ENDPOINT_WEIGHT;
    }
    (m - 1) as f64 / (binomial(m, z) * z as f64 * (m - z) as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_perturbations: usize,
    pub kernel_width: f64,
    pub lasso: LassoConfig,
    pub seed: u64,
}

impl LimeConfig {
    pub fn new(n_perturbations: usize, seed: u64) -> Self {
        Self {
            n_perturbations,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            lasso: LassoConfig::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapConfig {
    pub n_perturbations: usize,
    pub lasso: LassoConfig,
    pub seed: u64,
    /// Use all `2^M` coalitions instead of random masks.
    pub exhaustive: bool,
}

impl ShapConfig {
    pub fn new(n_perturbations: usize, seed: u64) -> Self {
        Self {
            n_perturbations,
            lasso: LassoConfig::default(),
            seed,
            exhaustive: false,
        }
    }
}

/// Query the model on every mask, dropping rows where it fails.
pub fn collect_responses(
    model: &dyn AnswerabilityModel,
    question: &str,
    context: &str,
    units: &[Token],
    masks: &Array2<bool>,
    weight_fn: impl Fn(&[bool]) -> f64,
) -> Result<PerturbationSet, InterpretError> {
    let mut kept_rows = Vec::new();
    let mut responses = Vec::new();
    let mut weights = Vec::new();
    for (r, row) in masks.rows().into_iter().enumerate() {
        let mask = row.to_vec();
        let text = apply_mask(context, units, &mask);
        if let Ok(p) = model.predict_proba(question, &text) {
            kept_rows.push(r);
            responses.push(p);
            weights.push(weight_fn(&mask));
        }
    }
    if kept_rows.len() < 2 {
        return Err(InterpretError::TooFewResponses {
            kept: kept_rows.len(),
            needed: 2,
        });
    }
    let kept = masks.select(ndarray::Axis(0), &kept_rows);
    Ok(PerturbationSet {
        masks: kept,
        responses,
        weights,
    })
}

pub fn fit_surrogate(
    set: &PerturbationSet,
    cfg: &LassoConfig,
) -> Result<SurrogateFit, InterpretError> {
    let design = set.masks.mapv(|m| if m { 1.0 } else { 0.0 });
    fit_weighted_lasso(design.view(), &set.responses, &set.weights, cfg)
}

fn check_budget(n: usize) -> Result<(), InterpretError> {
    if n < 2 {
        return Err(InterpretError::InvalidParameter(
            "need at least 2 perturbations".into(),
        ));
    }
    Ok(())
}

/// LIME over explicit units (tokens or sentences).
pub fn lime_explain_units(
    model: &dyn AnswerabilityModel,
    question: &str,
    context: &str,
    units: Vec<Token>,
    cfg: &LimeConfig,
) -> Result<(TokenAttribution, SurrogateFit), InterpretError> {
    check_budget(cfg.n_perturbations)?;
    if !(cfg.kernel_width > 0.0) {
        return Err(InterpretError::InvalidParameter(
            "kernel_width must be positive".into(),
        ));
    }
    let masks = perturb(units.len(), cfg.n_perturbations, cfg.seed)?;
    let set = collect_responses(model, question, context, &units, &masks, |m| {
        lime_kernel(m, cfg.kernel_width)
    })?;
    let fit = fit_surrogate(&set, &cfg.lasso)?;
    let attr = TokenAttribution::new(units, fit.coefficients.clone(), "lime")?
        .with_param("n_perturbations", cfg.n_perturbations)
        .with_param("kernel_width", cfg.kernel_width)
        .with_param("lambda", cfg.lasso.lambda)
        .with_param("seed", cfg.seed);
    Ok((attr, fit))
}

pub fn lime_explain(
    model: &dyn AnswerabilityModel,
    question: &str,
    context: &str,
    cfg: &LimeConfig,
) -> Result<TokenAttribution, InterpretError> {
    let units = model.tokenize(context);
    lime_explain_units(model, question, context, units, cfg).map(|(a, _)| a)
}

pub fn kernel_shap_explain_units(
    model: &dyn AnswerabilityModel,
    question: &str,
    context: &str,
    units: Vec<Token>,
    cfg: &ShapConfig,
) -> Result<(TokenAttribution, SurrogateFit), InterpretError> {
    let masks = if cfg.exhaustive {
        all_coalitions(units.len())?
    } else {
        check_budget(cfg.n_perturbations)?;
        perturb(units.len(), cfg.n_perturbations, cfg.seed)?
    };
    let m = units.len();
    let set = collect_responses(model, question, context, &units, &masks, |mask| {
        shap_kernel(m, mask.iter().filter(|k| **k).count())
    })?;
    let fit = fit_surrogate(&set, &cfg.lasso)?;
    let attr = TokenAttribution::new(units, fit.coefficients.clone(), "kernel_shap")?
        .with_param(
            "n_perturbations",
            if cfg.exhaustive {
                masks.nrows()
            } else {
                cfg.n_perturbations
            },
        )
        .with_param("lambda", cfg.lasso.lambda)
        .with_param("seed", cfg.seed)
        .with_param("exhaustive", cfg.exhaustive);
    Ok((attr, fit))
}

pub fn kernel_shap_explain(
    model: &dyn AnswerabilityModel,
    question: &str,
    context: &str,
    cfg: &ShapConfig,
) -> Result<TokenAttribution, InterpretError> {
    let units = model.tokenize(context);
    kernel_shap_explain_units(model, question, context, units, cfg).map(|(a, _)| a)
}

/// Random sentence ordering: a uniform permutation of `0..n_sentences`.
pub fn random_baseline(n_sentences: usize, seed: u64) -> Vec<f64> {
    random_baseline_with(n_sentences, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_baseline_with<R: Rng + ?Sized>(n_sentences: usize, rng: &mut R) -> Vec<f64> {
    let mut scores: Vec<f64> = (0..n_sentences).map(|i| i as f64).collect();
    scores.shuffle(rng);
    scores
}
