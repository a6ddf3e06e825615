use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::registry::{ExplainRequest, InterpreterOutput, ModelPool, Registry};
use super::report::{emit_report, CellReport, ExperimentReport};
use super::HarnessError;
use crate::dataset::{
    compute_stats, load_squad_json, prepare_samples, DatasetStats, RuleSegmenter, Sample,
};
use crate::metrics::{
    aggregate_mean, aggregate_to_sentences, score_sample, Aggregation, GroundTruthVector,
    SentenceAttribution,
};
use crate::model::ModelError;
use crate::verify::{summarize, verify_one, Verification, VerificationRecord};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const DISPOSITIONS_FILE: &str = "dispositions.jsonl";
pub const VERIFICATION_FILE: &str = "verification.jsonl";
/// Report file stem; the extension follows the format.
pub const REPORT_FILE: &str = "report";

/// Where each input sample ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Used,
    FilteredLength,
    FilteredFlag,
    NonTp,
    Errored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispositionRecord {
    pub sample_id: String,
    pub disposition: Disposition,
    pub answerable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Confusion matrix of answerability predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DispositionCounts {
    pub used: usize,
    pub filtered_length: usize,
    pub filtered_flag: usize,
    pub non_tp: usize,
    pub errored: usize,
    /// Over samples that were predicted and not flagged.
    pub confusion: Confusion,
}

impl DispositionCounts {
    pub fn total(&self) -> usize {
        self.used + self.filtered_length + self.filtered_flag + self.non_tp + self.errored
    }

    fn from_records(records: &[DispositionRecord]) -> Self {
        let mut c = Self::default();
        for r in records {
            *match r.disposition {
                Disposition::Used => &mut c.used,
                Disposition::FilteredLength => &mut c.filtered_length,
                Disposition::FilteredFlag => &mut c.filtered_flag,
                Disposition::NonTp => &mut c.non_tp,
                Disposition::Errored => &mut c.errored,
            } += 1;
            if let (Some(p), Disposition::Used | Disposition::NonTp) = (r.prediction, r.disposition)
            {
                let slot = match (r.answerable, p) {
                    (true, true) => &mut c.confusion.tp,
                    (false, true) => &mut c.confusion.fp,
                    (false, false) => &mut c.confusion.tn,
                    (true, false) => &mut c.confusion.fn_,
                };
                *slot += 1;
            }
        }
        c
    }
}

/// Keep samples that have a ground truth and were predicted answerable.
pub fn select_true_positives(
    samples: &[Sample],
    predictions: &[bool],
) -> Result<Vec<Sample>, HarnessError> {
    check_aligned(samples, predictions)?;
    Ok(samples
        .iter()
        .zip(predictions)
        .filter(|(s, p)| s.gt_sentence.is_some() && **p)
        .map(|(s, _)| s.clone())
        .collect())
}

pub fn classify_predictions(
    samples: &[Sample],
    predictions: &[bool],
) -> Result<Confusion, HarnessError> {
    check_aligned(samples, predictions)?;
    let mut c = Confusion::default();
    for (s, &p) in samples.iter().zip(predictions) {
        match (s.gt_sentence.is_some(), p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn check_aligned(samples: &[Sample], predictions: &[bool]) -> Result<(), HarnessError> {
    if samples.len() != predictions.len() {
        return Err(crate::dataset::DatasetError::LengthMismatch {
            samples: samples.len(),
            predictions: predictions.len(),
        }
        .into());
    }
    Ok(())
}

/// Seed for one sample: a separate ChaCha stream per sample index, so results
/// do not depend on scheduling order.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

/// The dataset after filtering, prediction and true-positive selection.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    /// True positives with their index in the input file.
    pub used: Vec<(usize, Sample)>,
    /// One record per input sample, in input order.
    pub dispositions: Vec<DispositionRecord>,
    pub counts: DispositionCounts,
    pub stats: Option<DatasetStats>,
    pub warnings: Vec<String>,
}

fn build_thread_pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Load, filter and predict. Order: length filter, prediction, statistics,
/// flag filter, true-positive selection.
pub fn prepare(
    config: &RunConfig,
    models: &ModelPool,
    threads: &rayon::ThreadPool,
) -> Result<PreparedRun, HarnessError> {
    let records = load_squad_json(&config.resolve(&config.dataset.path), &config.dataset.name)?;
    let samples = prepare_samples(records, &RuleSegmenter::default())?;
    let n_input = samples.len();

    let model = models.get().answerability();
    let max_tokens = config.dataset.max_tokens;
    let (kept, too_long): (Vec<(usize, Sample)>, Vec<(usize, Sample)>) = samples
        .into_iter()
        .enumerate()
        .partition(|(_, s)| model.token_length(s.question(), s.context()) <= max_tokens);

    let threshold = config.model.threshold;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(HarnessError::Config(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let predictions: Vec<Result<bool, ModelError>> = threads.install(|| {
        kept.par_iter()
            .map(|(_, s)| {
                models
                    .get()
                    .answerability()
                    .predict_proba(s.question(), s.context())
                    .map(|p| p >= threshold)
            })
            .collect()
    });
    if !predictions.is_empty()
        && predictions
            .iter()
            .all(|p| matches!(p, Err(ModelError::Endpoint(_))))
    {
        let first = predictions
            .iter()
            .find_map(|p| p.as_ref().err())
            .expect("non-empty");
        return Err(HarnessError::ModelUnreachable(first.to_string()));
    }

    let mut dispositions: Vec<Option<DispositionRecord>> = vec![None; n_input];
    for (i, s) in &too_long {
        dispositions[*i] = Some(DispositionRecord {
            sample_id: s.id().to_string(),
            disposition: Disposition::FilteredLength,
            answerable: s.gt_sentence.is_some(),
            prediction: None,
            detail: Some(format!("over {max_tokens} tokens")),
        });
    }

    let mut predicted: Vec<(usize, Sample, bool)> = Vec::new();
    for ((i, s), p) in kept.into_iter().zip(predictions) {
        match p {
            Ok(p) => predicted.push((i, s, p)),
            Err(e) => {
                dispositions[i] = Some(DispositionRecord {
                    sample_id: s.id().to_string(),
                    disposition: Disposition::Errored,
                    answerable: s.gt_sentence.is_some(),
                    prediction: None,
                    detail: Some(e.to_string()),
                })
            }
        }
    }

    let mut warnings = Vec::new();
    let stats_samples: Vec<Sample> = predicted.iter().map(|(_, s, _)| s.clone()).collect();
    let stats_preds: Vec<bool> = predicted.iter().map(|(_, _, p)| *p).collect();
    let stats = if stats_samples.is_empty() {
        warnings.push("no sample received a prediction; statistics are empty".to_string());
        None
    } else {
        Some(compute_stats(&stats_samples, &stats_preds)?)
    };

    let mut used = Vec::new();
    for (i, s, p) in predicted {
        let answerable = s.gt_sentence.is_some();
        let disposition = if s.is_flagged() && !config.dataset.include_flagged {
            Disposition::FilteredFlag
        } else if answerable && p {
            Disposition::Used
        } else {
            Disposition::NonTp
        };
        let detail = match disposition {
            Disposition::FilteredFlag => Some(
                s.flags
                    .iter()
                    .map(|f| {
                        serde_json::to_value(f)
                            .ok()
                            .and_then(|v| v.as_str().map(String::from))
                            .unwrap_or_default()
                    })
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            _ => None,
        };
        dispositions[i] = Some(DispositionRecord {
            sample_id: s.id().to_string(),
            disposition,
            answerable,
            prediction: Some(p),
            detail,
        });
        if disposition == Disposition::Used {
            used.push((i, s));
        }
    }

    let dispositions: Vec<DispositionRecord> = dispositions
        .into_iter()
        .map(|d| d.expect("every sample gets a disposition"))
        .collect();
    let counts = DispositionCounts::from_records(&dispositions);
    let stats =
        stats.map(|s| s.with_used(&used.iter().map(|(_, s)| s.clone()).collect::<Vec<_>>()));
    if used.is_empty() {
        warnings.push("no true positives: every cell is empty".to_string());
    }
    Ok(PreparedRun {
        used,
        dispositions,
        counts,
        stats,
        warnings,
    })
}

/// One line of the per-sample record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub interpreter: String,
    pub aggregation: Aggregation,
    pub n_perturbations: Option<usize>,
    pub sample_id: String,
    pub n_sentences: usize,
    pub gt_sentence: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hpd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_of_gt: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn score_one(
    output: &Result<InterpreterOutput, String>,
    sample: &Sample,
    aggregation: Aggregation,
    config: &RunConfig,
) -> Result<(Vec<f64>, crate::metrics::MetricRecord), String> {
    let gt_index = sample.gt_sentence.ok_or("sample has no ground truth")?;
    let gt = GroundTruthVector::new(sample.n_sentences(), gt_index).map_err(|e| e.to_string())?;
    let sentence_scores = match output.as_ref().map_err(Clone::clone)? {
        InterpreterOutput::Tokens(t) => {
            aggregate_to_sentences(t, &sample.sentences, aggregation).map_err(|e| e.to_string())?
        }
        InterpreterOutput::Sentences(scores) => {
            if scores.len() != sample.n_sentences() {
                return Err(crate::attribution::InterpretError::WrongLength {
                    expected: sample.n_sentences(),
                    got: scores.len(),
                }
                .to_string());
            }
            SentenceAttribution::new(scores.clone(), Aggregation::Native, "plugin")
                .map_err(|e| e.to_string())?
        }
    };
    let metrics = score_sample(sample.id(), &sentence_scores, &gt, config.tie_rule, None)
        .map_err(|e| e.to_string())?;
    Ok((sentence_scores.scores, metrics))
}

struct CellRun {
    cell: CellReport,
    records: Vec<SampleRecord>,
}

fn run_interpreter(
    config: &RunConfig,
    registry: &Registry,
    params: &super::InterpreterConfig,
    prepared: &PreparedRun,
    models: &ModelPool,
    threads: &rayon::ThreadPool,
) -> Result<Vec<CellRun>, HarnessError> {
    let interp = registry
        .get(&params.name)
        .ok_or_else(|| HarnessError::Unregistered(params.name.clone()))?;
    let sentence_level = interp.sentence_level(params);
    let budget = interp.budget(params);

    let start = Instant::now();
    let outputs: Vec<Result<InterpreterOutput, String>> = threads.install(|| {
        prepared
            .used
            .par_iter()
            .map(|(index, sample)| {
                let req = ExplainRequest {
                    model: models.get(),
                    sample,
                    params,
                    seed: params
                        .seed
                        .map_or(0, |base| sample_seed(base, *index as u64)),
                };
                interp.explain(&req).map_err(|e| e.to_string())
            })
            .collect()
    });
    let seconds = start.elapsed().as_secs_f64();

    let aggregations = if sentence_level {
        vec![Aggregation::Native]
    } else {
        config.aggregations.clone()
    };
    let mut cells = Vec::new();
    for aggregation in aggregations {
        let mut records = Vec::with_capacity(outputs.len());
        let mut metrics = Vec::new();
        for (output, (_, sample)) in outputs.iter().zip(&prepared.used) {
            let mut record = SampleRecord {
                interpreter: params.label().to_string(),
                aggregation,
                n_perturbations: budget,
                sample_id: sample.id().to_string(),
                n_sentences: sample.n_sentences(),
                gt_sentence: sample.gt_sentence.unwrap_or(0),
                scores: None,
                iou: None,
                hpd: None,
                snr: None,
                rank_of_gt: None,
                error: None,
            };
            match score_one(output, sample, aggregation, config) {
                Ok((scores, m)) => {
                    record.scores = Some(scores);
                    record.iou = Some(m.iou);
                    record.hpd = Some(m.hpd);
                    record.snr = m.snr;
                    record.rank_of_gt = Some(m.rank_of_gt);
                    metrics.push(m);
                }
                Err(e) => record.error = Some(e),
            }
            records.push(record);
        }
        let n_errors = records.len() - metrics.len();
        let aborted = !records.is_empty()
            && n_errors as f64 / records.len() as f64 > config.execution.max_error_rate;
        let summary = if aborted {
            None
        } else {
            aggregate_mean(&metrics).ok()
        };
        cells.push(CellRun {
            cell: CellReport {
                interpreter: params.label().to_string(),
                aggregation,
                n_perturbations: budget,
                iou_mean: summary.as_ref().map(|s| s.iou_mean),
                hpd_mean: summary.as_ref().map(|s| s.hpd_mean),
                snr_mean: summary.as_ref().and_then(|s| s.snr_mean),
                n_samples: metrics.len(),
                n_snr_excluded: summary.as_ref().map_or(0, |s| s.n_snr_excluded),
                n_errors,
                seconds,
                aborted,
            },
            records,
        });
    }
    Ok(cells)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| HarnessError::Format {
            what: path.display().to_string(),
            message: e.to_string(),
        })?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    file.write_all(&out).map_err(|e| HarnessError::io(path, e))
}

fn verify_used(
    prepared: &PreparedRun,
    models: &ModelPool,
    threads: &rayon::ThreadPool,
) -> Verification {
    let rows: Vec<Option<VerificationRecord>> = threads.install(|| {
        prepared
            .used
            .par_iter()
            .map(|(_, s)| verify_one(models.get().answerability(), s))
            .collect()
    });
    let rows: Vec<VerificationRecord> = rows.into_iter().flatten().collect();
    summarize(&rows, prepared.used.len())
}

/// Load the model and run [`prepare`] with the configured worker count.
pub fn prepare_from_config(config: &RunConfig) -> Result<PreparedRun, HarnessError> {
    let threads = build_thread_pool(config.execution.workers)?;
    let models = ModelPool::load(config, threads.current_num_threads())?;
    prepare(config, &models, &threads)
}

/// Ground-truth verification alone: prepare the true positives, run both
/// experiments and write the verification and disposition files.
pub fn run_verification(config: &RunConfig) -> Result<(PreparedRun, Verification), HarnessError> {
    let threads = build_thread_pool(config.execution.workers)?;
    let models = ModelPool::load(config, threads.current_num_threads())?;
    let prepared = prepare(config, &models, &threads)?;
    let verification = verify_used(&prepared, &models, &threads);
    let dir = config.output_dir();
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    write_jsonl(&dir.join(VERIFICATION_FILE), &verification.records)?;
    write_jsonl(&dir.join(DISPOSITIONS_FILE), &prepared.dispositions)?;
    Ok((prepared, verification))
}

/// Execute `config` and write records, dispositions, verification records
/// and the report into the output directory.
///
/// Per-sample records are a deterministic function of the config. The report
/// additionally carries wall-clock timings.
pub fn run_experiment(
    config: &RunConfig,
    registry: &Registry,
) -> Result<ExperimentReport, HarnessError> {
    registry.validate(config)?;
    let threads = build_thread_pool(config.execution.workers)?;
    let models = ModelPool::load(config, threads.current_num_threads())?;
    let prepared = prepare(config, &models, &threads)?;

    let mut warnings = prepared.warnings.clone();
    let mut cells = Vec::new();
    let mut records = Vec::new();
    for params in &config.interpreters {
        for run in run_interpreter(config, registry, params, &prepared, &models, &threads)? {
            if run.cell.aborted {
                warnings.push(format!(
                    "cell {} / {} aborted: {} of {} samples failed",
                    run.cell.interpreter,
                    run.cell.aggregation.as_str(),
                    run.cell.n_errors,
                    run.records.len()
                ));
            }
            cells.push(run.cell);
            records.extend(run.records);
        }
    }

    let verification = if config.execution.verify && !prepared.used.is_empty() {
        Some(verify_used(&prepared, &models, &threads))
    } else {
        None
    };

    let mut snapshot = config.clone();
    snapshot.base_dir = Default::default();
    let report = ExperimentReport {
        config: snapshot,
        stats: prepared.stats.clone(),
        dispositions: prepared.counts.clone(),
        cells,
        verification: verification.as_ref().map(|v| v.summary.clone()),
        warnings,
    };

    let dir = config.output_dir();
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    write_jsonl(&dir.join(RECORDS_FILE), &records)?;
    write_jsonl(&dir.join(DISPOSITIONS_FILE), &prepared.dispositions)?;
    if let Some(v) = &verification {
        write_jsonl(&dir.join(VERIFICATION_FILE), &v.records)?;
    }
    for format in &config.output.formats {
        emit_report(
            &report,
            *format,
            &dir.join(format!("{REPORT_FILE}.{}", format.extension())),
        )?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{derive_ground_truth, segment_sentences, Answer, RawQaRecord};
    use proptest::prelude::*;

    fn sample(i: usize, answerable: bool) -> Sample {
        let context = "First part here. Second part there.".to_string();
        let rec = RawQaRecord {
            id: format!("s{i}"),
            question: "q".into(),
            is_impossible: !answerable,
            answers: if answerable {
                vec![Answer {
                    text: "Second".into(),
                    answer_start: 17,
                }]
            } else {
                vec![]
            },
            context,
        };
        let spans = segment_sentences(&rec.context);
        derive_ground_truth(rec, spans).unwrap()
    }

    #[test]
    fn true_positive_examples() {
        let samples = vec![
            sample(0, true),
            sample(1, true),
            sample(2, false),
            sample(3, false),
        ];
        let preds = vec![true, false, true, false];
        let tp = select_true_positives(&samples, &preds).unwrap();
        assert_eq!(tp.iter().map(|s| s.id()).collect::<Vec<_>>(), vec!["s0"]);
        let c = classify_predictions(&samples, &preds).unwrap();
        assert_eq!(
            c,
            Confusion {
                tp: 1,
                fn_: 1,
                fp: 1,
                tn: 1
            }
        );
        assert!(select_true_positives(&samples, &preds[..3]).is_err());
    }

    #[test]
    fn seeds_differ_per_sample_and_are_stable() {
        assert_eq!(sample_seed(7, 3), sample_seed(7, 3));
        assert_ne!(sample_seed(7, 3), sample_seed(7, 4));
        assert_ne!(sample_seed(7, 3), sample_seed(8, 3));
    }

    proptest! {
        #[test]
        fn used_set_is_answerable_and_predicted(labels in prop::collection::vec((any::<bool>(), any::<bool>()), 0..60)) {
            let samples: Vec<Sample> = labels.iter().enumerate().map(|(i, (a, _))| sample(i, *a)).collect();
            let preds: Vec<bool> = labels.iter().map(|(_, p)| *p).collect();
            let tp = select_true_positives(&samples, &preds).unwrap();
            let expected: Vec<String> = labels
                .iter()
                .enumerate()
                .filter(|(_, (a, p))| *a && *p)
                .map(|(i, _)| format!("s{i}"))
                .collect();
            prop_assert_eq!(tp.iter().map(|s| s.id().to_string()).collect::<Vec<_>>(), expected);
            let c = classify_predictions(&samples, &preds).unwrap();
            prop_assert_eq!(c.tp + c.fp + c.tn + c.fn_, samples.len());
            prop_assert_eq!(c.tp, tp.len());
        }
    }
}
