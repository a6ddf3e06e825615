use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qaeval::fixtures::{
    bag_model_for_fixture, generate_fixture, write_fixture, BagFixtureParams, FixtureSpec,
    BAG_MODEL_FILE, DATASET_FILE, KEYWORDS_FILE,
};
use qaeval::harness::{
    emit_report, load_report, prepare_from_config, render_csv, render_json, render_markdown,
    run_experiment, run_verification, DatasetConfig, ExecutionConfig, InterpreterConfig,
    ModelConfig, ModelKind, OutputConfig, Registry, ReportFormat, RunConfig,
};
use qaeval::metrics::{Aggregation, TieRule};
use qaeval::model::{Pooling, MODEL_CMD_ENV};
use qaeval::verify::VerificationSummary;

/// Benchmark interpretability methods on extractive QA data.
#[derive(Debug, Parser)]
#[command(name = "qaeval", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured interpreter and write records and reports.
    Run(RunArgs),
    /// Ground-truth verification only.
    Verify(RunArgs),
    /// Dataset statistics and sample dispositions.
    Stats(RunArgs),
    /// Re-render a saved JSON report.
    Report(ReportArgs),
    /// Write a synthetic dataset with planted rationales.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    KeywordOracle,
    BagEmbedding,
    External,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::KeywordOracle => ModelKind::KeywordOracle,
            KindArg::BagEmbedding => ModelKind::BagEmbedding,
            KindArg::External => ModelKind::External,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolingArg {
    Mean,
    Attention,
}

/// Run configuration. Flags override the config file.
#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// SQuAD-format JSON file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    dataset_name: Option<String>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    include_flagged: bool,
    #[arg(long, value_enum)]
    model_kind: Option<KindArg>,
    /// Keyword map or bag-model JSON.
    #[arg(long)]
    model_path: Option<PathBuf>,
    /// Command for an external model process.
    #[arg(long, env = MODEL_CMD_ENV)]
    model_command: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Interpreter names; replaces the configured list.
    #[arg(long = "interpreter")]
    interpreters: Vec<String>,
    /// Seed for interpreters that have none.
    #[arg(long)]
    seed: Option<u64>,
    /// Budget for perturbation interpreters that have none.
    #[arg(long)]
    n_perturbations: Option<usize>,
    #[arg(long = "aggregation")]
    aggregations: Vec<Aggregation>,
    #[arg(long)]
    tie_rule: Option<TieRule>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long = "format")]
    formats: Vec<ReportFormat>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_error_rate: Option<f64>,
    /// Skip ground-truth verification during `run`.
    #[arg(long)]
    no_verify: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// A report.json written by `run`.
    input: PathBuf,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    /// Write here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    /// Directory to create.
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_samples: usize,
    #[arg(long, default_value_t = 3)]
    min_sentences: usize,
    #[arg(long, default_value_t = 7)]
    max_sentences: usize,
    #[arg(long, default_value_t = 4)]
    min_words: usize,
    #[arg(long, default_value_t = 10)]
    max_words: usize,
    #[arg(long, default_value_t = 200)]
    vocab_size: usize,
    #[arg(long, default_value_t = 2)]
    n_keywords: usize,
    #[arg(long, default_value_t = 0.2)]
    frac_unanswerable: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pooling of the side-car bag model.
    #[arg(long, value_enum, default_value = "mean")]
    pooling: PoolingArg,
}

const STOCHASTIC: [&str; 4] = ["smoothgrad", "lime", "kernel_shap", "random"];

impl RunArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let (Some(dataset), Some(kind)) = (&self.dataset, self.model_kind) else {
                    bail!("without --config, both --dataset and --model-kind are required");
                };
                RunConfig {
                    dataset: DatasetConfig {
                        path: dataset.clone(),
                        name: "dataset".into(),
                        max_tokens: 512,
                        include_flagged: false,
                    },
                    model: ModelConfig {
                        kind: kind.into(),
                        path: None,
                        command: None,
                        threshold: qaeval::model::DEFAULT_THRESHOLD,
                    },
                    interpreters: Vec::new(),
                    aggregations: vec![Aggregation::Sum, Aggregation::Max],
                    tie_rule: TieRule::default(),
                    output: OutputConfig::default(),
                    execution: ExecutionConfig::default(),
                    base_dir: std::env::current_dir()?,
                }
            }
        };
        // Paths given on the command line are relative to the working directory.
        let cwd = std::env::current_dir()?;
        let here = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                cwd.join(p)
            }
        };
        if let Some(p) = &self.dataset {
            config.dataset.path = here(p);
        }
        if let Some(n) = &self.dataset_name {
            config.dataset.name = n.clone();
        }
        if let Some(n) = self.max_tokens {
            config.dataset.max_tokens = n;
        }
        config.dataset.include_flagged |= self.include_flagged;
        if let Some(k) = self.model_kind {
            config.model.kind = k.into();
        }
        if let Some(p) = &self.model_path {
            config.model.path = Some(here(p));
        }
        if let Some(c) = &self.model_command {
            if config.model.command.is_none() || self.model_kind.is_some() {
                config.model.command = Some(c.clone());
            }
        }
        if let Some(t) = self.threshold {
            config.model.threshold = t;
        }
        if !self.interpreters.is_empty() {
            config.interpreters = self
                .interpreters
                .iter()
                .map(|n| InterpreterConfig::new(n))
                .collect();
        }
        for i in &mut config.interpreters {
            if i.seed.is_none() && STOCHASTIC.contains(&i.name.as_str()) {
                i.seed = self.seed;
            }
            if i.n_perturbations.is_none() && matches!(i.name.as_str(), "lime" | "kernel_shap") {
                i.n_perturbations = self.n_perturbations;
            }
        }
        if !self.aggregations.is_empty() {
            config.aggregations = self.aggregations.clone();
        }
        if let Some(t) = self.tie_rule {
            config.tie_rule = t;
        }
        if let Some(o) = &self.output {
            config.output.dir = here(o);
        }
        if !self.formats.is_empty() {
            config.output.formats = self.formats.clone();
        }
        if let Some(w) = self.workers {
            config.execution.workers = w;
        }
        if let Some(r) = self.max_error_rate {
            config.execution.max_error_rate = r;
        }
        if self.no_verify {
            config.execution.verify = false;
        }
        Ok(config)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |v| format!("{v:.4}"))
}

fn verification_text(v: &VerificationSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "comprehensiveness (remove ground truth): {}",
        fmt_opt(v.mean_delta_comprehensiveness)
    );
    let _ = writeln!(
        out,
        "sufficiency (keep only ground truth):    {}",
        fmt_opt(v.mean_delta_sufficiency)
    );
    let _ = writeln!(
        out,
        "mean p(answerable): {}; samples {}, skipped {}, single-sentence {}",
        fmt_opt(v.mean_p_full),
        v.n_samples,
        v.n_skipped,
        v.n_single_sentence
    );
    out
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let config = args.build()?;
    let report = run_experiment(&config, &Registry::with_builtins())?;
    for c in &report.cells {
        eprintln!(
            "{:<24} {:<6} {:>6}  IoU {}  HPD {}  SNR {}  n={} errors={}{}",
            c.interpreter,
            c.aggregation.as_str(),
            c.n_perturbations.map(|n| n.to_string()).unwrap_or_default(),
            fmt_opt(c.iou_mean),
            fmt_opt(c.hpd_mean),
            fmt_opt(c.snr_mean),
            c.n_samples,
            c.n_errors,
            if c.aborted { "  ABORTED" } else { "" }
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("results written to {}", config.output_dir().display());
    Ok(if report.any_aborted() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_verify(args: &RunArgs) -> Result<ExitCode> {
    let config = args.build()?;
    let (prepared, v) = run_verification(&config)?;
    print!("{}", verification_text(&v.summary));
    for w in &prepared.warnings {
        eprintln!("warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_stats(args: &RunArgs) -> Result<ExitCode> {
    let config = args.build()?;
    let prepared = prepare_from_config(&config)?;
    let c = &prepared.counts;
    match &prepared.stats {
        Some(s) => {
            println!("samples used:        {}", s.n_samples_used);
            println!("avg. sentences:      {:.2}", s.avg_sentences);
            println!("accuracy:            {:.4}", s.accuracy);
            println!("recall:              {}", fmt_opt(s.recall));
        }
        None => println!("no statistics: no sample received a prediction"),
    }
    println!(
        "dispositions: used {}, filtered by length {}, filtered by flag {}, not a true positive {}, errored {}",
        c.used, c.filtered_length, c.filtered_flag, c.non_tp, c.errored
    );
    println!(
        "confusion: tp {}, fp {}, tn {}, fn {}",
        c.confusion.tp, c.confusion.fp, c.confusion.tn, c.confusion.fn_
    );
    for w in &prepared.warnings {
        eprintln!("warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: &ReportArgs) -> Result<ExitCode> {
    let report = load_report(&args.input)?;
    match &args.output {
        Some(path) => emit_report(&report, args.format, path)?,
        None => print!(
            "{}",
            match args.format {
                ReportFormat::Json => render_json(&report)?,
                ReportFormat::Csv => render_csv(&report)?,
                ReportFormat::Markdown => render_markdown(&report),
            }
        ),
    }
    Ok(if report.any_aborted() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

const FIXTURE_CONFIG: &str = r#"[dataset]
path = "dataset.json"
name = "fixture"

[model]
kind = "bag_embedding"
path = "bag_model.json"

[[interpreters]]
name = "saliency"

[[interpreters]]
name = "integrated_gradients"

[[interpreters]]
name = "lime"
seed = 0
n_perturbations = 100

[[interpreters]]
name = "kernel_shap"
seed = 0
n_perturbations = 100

[[interpreters]]
name = "random"
seed = 0

[output]
dir = "results"
"#;

fn cmd_fixture(args: &FixtureArgs) -> Result<ExitCode> {
    let spec = FixtureSpec {
        n_samples: args.n_samples,
        min_sentences: args.min_sentences,
        max_sentences: args.max_sentences,
        min_words: args.min_words,
        max_words: args.max_words,
        vocab_size: args.vocab_size,
        n_keywords: args.n_keywords,
        frac_unanswerable: args.frac_unanswerable,
        seed: args.seed,
    };
    let fixture = generate_fixture(&spec)?;
    let params = BagFixtureParams {
        pooling: match args.pooling {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::Attention => Pooling::Attention,
        },
        seed: args.seed,
        ..BagFixtureParams::default()
    };
    let bag = bag_model_for_fixture(&fixture, &params)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_fixture(&args.out, &fixture, &bag)?;
    let config_path = args.out.join("config.toml");
    std::fs::write(&config_path, FIXTURE_CONFIG)
        .with_context(|| format!("writing {}", config_path.display()))?;
    eprintln!(
        "wrote {} samples to {}: {DATASET_FILE}, {KEYWORDS_FILE}, {BAG_MODEL_FILE}, config.toml",
        fixture.records.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Report(a) => cmd_report(a),
        Command::Fixture(a) => cmd_fixture(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
