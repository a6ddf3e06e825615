use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::config::{InterpreterConfig, ModelConfig, ModelKind, RunConfig};
use super::HarnessError;
use crate::attribution::{InterpretError, TokenAttribution};
use crate::blackbox::{
    kernel_shap_explain_units, lime_explain_units, random_baseline, sentence_units, LassoConfig,
    LimeConfig, PerturbationUnit, ShapConfig,
};
use crate::dataset::Sample;
use crate::model::{
    AnswerabilityModel, BagEmbeddingModel, BagModelSpec, ExternalModel, GradientModel,
    KeywordOracle,
};
use crate::whitebox::{
    integrated_gradients, saliency, saliency_from_gradient, sigma_from_fraction, smoothgrad,
};

/// A model instance the harness can hand to interpreters.
#[derive(Debug)]
pub enum LoadedModel {
    Keyword(KeywordOracle),
    Bag(BagEmbeddingModel),
    External(ExternalModel),
}

impl LoadedModel {
    pub fn answerability(&self) -> &dyn AnswerabilityModel {
        match self {
            LoadedModel::Keyword(m) => m,
            LoadedModel::Bag(m) => m,
            LoadedModel::External(m) => m,
        }
    }

    pub fn gradient(&self) -> Option<&dyn GradientModel> {
        match self {
            LoadedModel::Bag(m) => Some(m),
            _ => None,
        }
    }

    fn load(config: &RunConfig) -> Result<Self, HarnessError> {
        let model: &ModelConfig = &config.model;
        let read = |what: &str| -> Result<String, HarnessError> {
            let path = model
                .path
                .as_ref()
                .ok_or_else(|| HarnessError::Config(format!("model kind {what} needs `path`")))?;
            let path = config.resolve(path);
            std::fs::read_to_string(&path).map_err(|e| HarnessError::io(path, e))
        };
        let parse_err = |what: &str, e: serde_json::Error| HarnessError::Format {
            what: what.to_string(),
            message: e.to_string(),
        };
        Ok(match model.kind {
            ModelKind::KeywordOracle => {
                let map: HashMap<String, Vec<String>> =
                    serde_json::from_str(&read("keyword_oracle")?)
                        .map_err(|e| parse_err("keyword map", e))?;
                LoadedModel::Keyword(crate::model::keyword_oracle_model(map)?)
            }
            ModelKind::BagEmbedding => {
                let spec: BagModelSpec = serde_json::from_str(&read("bag_embedding")?)
                    .map_err(|e| parse_err("bag model", e))?;
                LoadedModel::Bag(BagEmbeddingModel::from_spec(spec)?)
            }
            ModelKind::External => {
                let spawned = match &model.command {
                    Some(cmd) => ExternalModel::spawn(cmd),
                    None => ExternalModel::from_env(),
                };
                LoadedModel::External(
                    spawned.map_err(|e| HarnessError::ModelUnreachable(e.to_string()))?,
                )
            }
        })
    }
}

/// One model per worker for external processes; a single shared instance for
/// in-process models.
#[derive(Debug)]
pub struct ModelPool {
    models: Vec<LoadedModel>,
}

impl ModelPool {
    pub fn load(config: &RunConfig, workers: usize) -> Result<Self, HarnessError> {
        let copies = if config.model.kind == ModelKind::External {
            workers.max(1)
        } else {
            1
        };
        let models = (0..copies)
            .map(|_| LoadedModel::load(config))
            .collect::<Result<_, _>>()?;
        Ok(Self { models })
    }

    pub fn single(model: LoadedModel) -> Self {
        Self {
            models: vec![model],
        }
    }

    /// The model owned by the current worker thread.
    pub fn get(&self) -> &LoadedModel {
        let slot = rayon::current_thread_index().unwrap_or(0) % self.models.len();
        &self.models[slot]
    }
}

pub enum InterpreterOutput {
    Tokens(TokenAttribution),
    /// One score per sentence, already aggregated.
    Sentences(Vec<f64>),
}

pub struct ExplainRequest<'a> {
    pub model: &'a LoadedModel,
    pub sample: &'a Sample,
    pub params: &'a InterpreterConfig,
    /// Seed for this sample, derived from the interpreter seed.
    pub seed: u64,
}

pub trait Interpreter: Send + Sync {
    /// Whether the interpreter draws random numbers and so needs a seed.
    fn stochastic(&self, _params: &InterpreterConfig) -> bool {
        false
    }

    /// The sample budget reported alongside the cell (perturbations, noise
    /// samples or integration steps).
    fn budget(&self, _params: &InterpreterConfig) -> Option<usize> {
        None
    }

    fn validate(&self, _params: &InterpreterConfig) -> Result<(), String> {
        Ok(())
    }

    /// True when the interpreter scores sentences directly, so no token
    /// aggregation applies.
    fn sentence_level(&self, _params: &InterpreterConfig) -> bool {
        false
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<InterpreterOutput, InterpretError>;
}

/// Plug-in contract: `(model, question, context)` to one score per sentence.
pub type SentenceScoreFn =
    dyn Fn(&dyn AnswerabilityModel, &str, &str) -> Result<Vec<f64>, InterpretError> + Send + Sync;

struct FnInterpreter(Arc<SentenceScoreFn>);

impl Interpreter for FnInterpreter {
    fn sentence_level(&self, _params: &InterpreterConfig) -> bool {
        true
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<InterpreterOutput, InterpretError> {
        let scores = (self.0)(
            req.model.answerability(),
            req.sample.question(),
            req.sample.context(),
        )?;
        Ok(InterpreterOutput::Sentences(scores))
    }
}

fn gradient_model<'a>(req: &ExplainRequest<'a>) -> Result<&'a dyn GradientModel, InterpretError> {
    req.model
        .gradient()
        .ok_or_else(|| InterpretError::NeedsGradients(req.params.name.clone()))
}

struct Saliency;

impl Interpreter for Saliency {
    fn explain(&self, req: &ExplainRequest<'_>) -> Result<InterpreterOutput, InterpretError> {
        let (q, c) = (req.sample.question(), req.sample.context());
        let attr = match req.model {
            LoadedModel::External(m) => {
                let (tokens, grad) = m.input_gradient(q, c)?;
                saliency_from_gradient(tokens, grad.view(), req.params.dims())?
            }
            _ => saliency(gradient_model(req)?, q, c, req.params.dims())?,
        };
        Ok(InterpreterOutput::Tokens(attr))
    }
}

struct SmoothGrad;

const DEFAULT_SMOOTHGRAD_SAMPLES: usize = 5;
const DEFAULT_IG_STEPS: usize = 50;
const DEFAULT_PERTURBATIONS: usize = 100;

impl Interpreter for SmoothGrad {
    fn stochastic(&self, _params: &InterpreterConfig) -> bool {
        true
    }

    fn budget(&self, params: &InterpreterConfig) -> Option<usize> {
        Some(params.n_samples.unwrap_or(DEFAULT_SMOOTHGRAD_SAMPLES))
    }

    fn validate(&self, params: &InterpreterConfig) -> Result<(), String> {
        match (params.sigma, params.sigma_fraction) {
            (Some(_), Some(_)) => Err("set either sigma or sigma_fraction, not both".into()),
            (None, None) => Err("smoothgrad needs sigma or sigma_fraction".into()),
            (Some(s), None) | (None, Some(s)) if !(s >= 0.0) => {
                Err(format!("noise level {s} must be >= 0"))
            }
            _ => Ok(()),
        }
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<InterpreterOutput, InterpretError> {
        let model = gradient_model(req)?;
        let (q, c) = (req.sample.question(), req.sample.context());
        let sigma = match (req.params.sigma, req.params.sigma_fraction) {
            (Some(s), _) => s,
            (None, Some(f)) => sigma_from_fraction(model.embed(&model.tokenize(c)).view(), f),
            (None, None) => {
                return Err(InterpretError::InvalidParameter(
                    "smoothgrad needs sigma".into(),
                ))
            }
        };
        let n = self
            .budget(req.params)
            .unwrap_or(DEFAULT_SMOOTHGRAD_SAMPLES);
        Ok(InterpreterOutput::Tokens(smoothgrad(
            model,
            q,
            c,
            n,
            sigma,
            req.seed,
            req.params.dims(),
        )?))
    }
}

struct IntegratedGradients;

impl Interpreter for IntegratedGradients {
    fn budget(&self, params: &InterpreterConfig) -> Option<usize> {
        Some(params.n_steps.unwrap_or(DEFAULT_IG_STEPS))
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<InterpreterOutput, InterpretError> {
        let model = gradient_model(req)?;
        let baseline = req.params.baseline.clone().unwrap_or_default();
        let n = self.budget(req.params).unwrap_or(DEFAULT_IG_STEPS);
        Ok(InterpreterOutput::Tokens(integrated_gradients(
            model,
            req.sample.question(),
            req.sample.context(),
            n,
            &baseline,
            req.params.dims(),
        )?))
    }
}

fn lasso(params: &InterpreterConfig) -> LassoConfig {
    params
        .lambda
        .map(LassoConfig::with_lambda)
        .unwrap_or_default()
}

/// Run a surrogate over tokens or sentences; sentence units come back as
/// sentence scores directly.
fn surrogate(
    req: &ExplainRequest<'_>,
    run: impl FnOnce(Vec<crate::model::Token>) -> Result<TokenAttribution, InterpretError>,
) -> Result<InterpreterOutput, InterpretError> {
    let model = req.model.answerability();
    match req.params.unit.unwrap_or_default() {
        PerturbationUnit::Token => Ok(InterpreterOutput::Tokens(run(
            model.tokenize(req.sample.context())
        )?)),
        PerturbationUnit::Sentence => {
            let units = sentence_units(req.sample.context(), &req.sample.sentences);
            Ok(InterpreterOutput::Sentences(run(units)?.scores))
        }
    }
}

struct Lime;

impl Interpreter for Lime {
    fn sentence_level(&self, params: &InterpreterConfig) -> bool {
        params.unit == Some(PerturbationUnit::Sentence)
    }

    fn stochastic(&self, _params: &InterpreterConfig) -> bool {
        true
    }

    fn budget(&self, params: &InterpreterConfig) -> Option<usize> {
        Some(params.n_perturbations.unwrap_or(DEFAULT_PERTURBATIONS))
    }

    fn validate(&self, params: &InterpreterConfig) -> Result<(), String> {
        if self.budget(params) < Some(2) {
            return Err("lime needs n_perturbations >= 2".into());
        }
        if !(params.kernel_width() > 0.0) {
            return Err("kernel_width must be positive".into());
        }
        Ok(())
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<InterpreterOutput, InterpretError> {
        let cfg = LimeConfig {
            n_perturbations: self.budget(req.params).unwrap_or(DEFAULT_PERTURBATIONS),
            kernel_width: req.params.kernel_width(),
            lasso: lasso(req.params),
            seed: req.seed,
        };
        let model = req.model.answerability();
        let (q, c) = (req.sample.question(), req.sample.context());
        surrogate(req, |units| {
            lime_explain_units(model, q, c, units, &cfg).map(|(a, _)| a)
        })
    }
}

struct KernelShap;

impl Interpreter for KernelShap {
    fn sentence_level(&self, params: &InterpreterConfig) -> bool {
        params.unit == Some(PerturbationUnit::Sentence)
    }

    fn stochastic(&self, params: &InterpreterConfig) -> bool {
        !params.exhaustive.unwrap_or(false)
    }

    fn budget(&self, params: &InterpreterConfig) -> Option<usize> {
        if params.exhaustive.unwrap_or(false) {
            None
        } else {
            Some(params.n_perturbations.unwrap_or(DEFAULT_PERTURBATIONS))
        }
    }

    fn validate(&self, params: &InterpreterConfig) -> Result<(), String> {
        match self.budget(params) {
            Some(n) if n < 2 => Err("kernel_shap needs n_perturbations >= 2".into()),
            _ => Ok(()),
        }
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<InterpreterOutput, InterpretError> {
        let cfg = ShapConfig {
            n_perturbations: self.budget(req.params).unwrap_or(DEFAULT_PERTURBATIONS),
            lasso: lasso(req.params),
            seed: req.seed,
            exhaustive: req.params.exhaustive.unwrap_or(false),
        };
        let model = req.model.answerability();
        let (q, c) = (req.sample.question(), req.sample.context());
        surrogate(req, |units| {
            kernel_shap_explain_units(model, q, c, units, &cfg).map(|(a, _)| a)
        })
    }
}

struct Random;

impl Interpreter for Random {
    fn sentence_level(&self, _params: &InterpreterConfig) -> bool {
        true
    }

    fn stochastic(&self, _params: &InterpreterConfig) -> bool {
        true
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<InterpreterOutput, InterpretError> {
        Ok(InterpreterOutput::Sentences(random_baseline(
            req.sample.n_sentences(),
            req.seed,
        )))
    }
}

/// Interpreters by name.
#[derive(Clone)]
pub struct Registry {
    entries: BTreeMap<String, Arc<dyn Interpreter>>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// `saliency`, `smoothgrad`, `integrated_gradients`, `lime`,
    /// `kernel_shap` and `random`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("saliency", Saliency);
        r.register("smoothgrad", SmoothGrad);
        r.register("integrated_gradients", IntegratedGradients);
        r.register("lime", Lime);
        r.register("kernel_shap", KernelShap);
        r.register("random", Random);
        r
    }

    /// Add or replace an interpreter.
    pub fn register(&mut self, name: &str, interpreter: impl Interpreter + 'static) {
        self.entries.insert(name.to_string(), Arc::new(interpreter));
    }

    /// Register a function returning one score per sentence of the context.
    pub fn register_fn<F>(&mut self, name: &str, f: F)
    where
        F: Fn(&dyn AnswerabilityModel, &str, &str) -> Result<Vec<f64>, InterpretError>
            + Send
            + Sync
            + 'static,
    {
        self.register(name, FnInterpreter(Arc::new(f)));
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Interpreter>> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Check that every configured interpreter exists, has its seed when it
    /// needs one, and accepts its parameters. Cell keys must be unique.
    pub fn validate(&self, config: &RunConfig) -> Result<(), HarnessError> {
        let mut keys = std::collections::HashSet::new();
        for params in &config.interpreters {
            let interp = self
                .get(&params.name)
                .ok_or_else(|| HarnessError::Unregistered(params.name.clone()))?;
            if interp.stochastic(params) && params.seed.is_none() {
                return Err(HarnessError::Config(format!(
                    "interpreter {:?} needs a seed",
                    params.label()
                )));
            }
            interp.validate(params).map_err(|m| {
                HarnessError::Config(format!("interpreter {:?}: {m}", params.label()))
            })?;
            if !keys.insert((params.label().to_string(), interp.budget(params))) {
                return Err(HarnessError::Config(format!(
                    "interpreter {:?} appears twice with the same budget; give one a distinct label",
                    params.label()
                )));
            }
        }
        if config.aggregations.is_empty() {
            return Err(HarnessError::Config(
                "aggregations must not be empty".into(),
            ));
        }
        Ok(())
    }
}
