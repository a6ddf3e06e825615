use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ReportFormat, RunConfig};
use super::run::DispositionCounts;
use super::HarnessError;
use crate::dataset::DatasetStats;
use crate::metrics::Aggregation;
use crate::verify::VerificationSummary;

/// Means for one (interpreter, aggregation, budget) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub interpreter: String,
    pub aggregation: Aggregation,
    pub n_perturbations: Option<usize>,
    pub iou_mean: Option<f64>,
    pub hpd_mean: Option<f64>,
    pub snr_mean: Option<f64>,
    pub n_samples: usize,
    pub n_snr_excluded: usize,
    pub n_errors: usize,
    /// Wall-clock time of the interpreter over all samples. Informational.
    pub seconds: f64,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: RunConfig,
    pub stats: Option<DatasetStats>,
    pub dispositions: DispositionCounts,
    pub cells: Vec<CellReport>,
    pub verification: Option<VerificationSummary>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub fn any_aborted(&self) -> bool {
        self.cells.iter().any(|c| c.aborted)
    }

    pub fn cell(
        &self,
        interpreter: &str,
        aggregation: Aggregation,
        n_perturbations: Option<usize>,
    ) -> Option<&CellReport> {
        self.cells.iter().find(|c| {
            c.interpreter == interpreter
                && c.aggregation == aggregation
                && c.n_perturbations == n_perturbations
        })
    }
}

fn format_err(what: &str, message: impl ToString) -> HarnessError {
    HarnessError::Format {
        what: what.to_string(),
        message: message.to_string(),
    }
}

pub fn render_json(report: &ExperimentReport) -> Result<String, HarnessError> {
    serde_json::to_string_pretty(report)
        .map(|s| s + "\n")
        .map_err(|e| format_err("report json", e))
}

const METRICS: [(&str, &str); 3] = [("iou", "IoU"), ("hpd", "HPD"), ("snr", "SNR")];

fn metric(cell: &CellReport, key: &str) -> Option<f64> {
    match key {
        "iou" => cell.iou_mean,
        "hpd" => cell.hpd_mean,
        _ => cell.snr_mean,
    }
}

/// One row per cell and metric.
pub fn render_csv(report: &ExperimentReport) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "interpreter",
        "aggregation",
        "n_perturbations",
        "metric",
        "value",
        "n_samples",
        "n_snr_excluded",
        "n_errors",
        "aborted",
    ])
    .map_err(|e| format_err("report csv", e))?;
    for cell in &report.cells {
        for (key, _) in METRICS {
            w.write_record([
                cell.interpreter.clone(),
                cell.aggregation.as_str().to_string(),
                cell.n_perturbations
                    .map(|n| n.to_string())
                    .unwrap_or_default(),
                key.to_string(),
                metric(cell, key).map(|v| v.to_string()).unwrap_or_default(),
                cell.n_samples.to_string(),
                cell.n_snr_excluded.to_string(),
                cell.n_errors.to_string(),
                cell.aborted.to_string(),
            ])
            .map_err(|e| format_err("report csv", e))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| format_err("report csv", e))?;
    String::from_utf8(bytes).map_err(|e| format_err("report csv", e))
}

fn column_name(aggregation: Aggregation, budget: Option<usize>) -> String {
    match budget {
        Some(n) => format!("{} ({n})", aggregation.as_str()),
        None => aggregation.as_str().to_string(),
    }
}

/// One table per metric: interpreters down, (aggregation, budget) across.
pub fn render_markdown(report: &ExperimentReport) -> String {
    let mut rows: Vec<&str> = Vec::new();
    let mut columns: Vec<(Aggregation, Option<usize>)> = Vec::new();
    let mut by_key: BTreeMap<(&str, Aggregation, Option<usize>), &CellReport> = BTreeMap::new();
    for cell in &report.cells {
        if !rows.contains(&cell.interpreter.as_str()) {
            rows.push(&cell.interpreter);
        }
        let col = (cell.aggregation, cell.n_perturbations);
        if !columns.contains(&col) {
            columns.push(col);
        }
        by_key.insert(
            (&cell.interpreter, cell.aggregation, cell.n_perturbations),
            cell,
        );
    }

    let mut out = String::new();
    let _ = writeln!(out, "# Results: {}\n", report.config.dataset.name);
    if let Some(s) = &report.stats {
        let recall = s.recall.map_or("n/a".to_string(), |r| format!("{r:.4}"));
        let _ = writeln!(
            out,
            "Samples used: {} | avg. sentences: {:.2} | accuracy: {:.4} | recall: {recall}\n",
            s.n_samples_used, s.avg_sentences, s.accuracy
        );
    }
    for (key, title) in METRICS {
        let _ = writeln!(out, "## {title} Results\n");
        let header: Vec<String> = columns.iter().map(|(a, b)| column_name(*a, *b)).collect();
        let _ = writeln!(out, "| Interpreter | {} |", header.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(columns.len()));
        for row in &rows {
            let values: Vec<String> = columns
                .iter()
                .map(|(a, b)| match by_key.get(&(*row, *a, *b)) {
                    None => "".to_string(),
                    Some(c) if c.aborted => "aborted".to_string(),
                    Some(c) => metric(c, key).map_or("n/a".to_string(), |v| format!("{v:.4}")),
                })
                .collect();
            let _ = writeln!(out, "| {row} | {} |", values.join(" | "));
        }
        out.push('\n');
    }
    if let Some(v) = &report.verification {
        let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "## Ground-truth verification\n");
        let _ = writeln!(out, "| Experiment | Mean change in probability |");
        let _ = writeln!(out, "|---|---|");
        let _ = writeln!(
            out,
            "| Remove ground truth (comprehensiveness) | {} |",
            fmt(v.mean_delta_comprehensiveness)
        );
        let _ = writeln!(
            out,
            "| Keep only ground truth (sufficiency) | {} |",
            fmt(v.mean_delta_sufficiency)
        );
        let _ = writeln!(
            out,
            "\nMean probability on used samples: {}. Samples: {}, skipped: {}, single-sentence: {}.\n",
            fmt(v.mean_p_full),
            v.n_samples,
            v.n_skipped,
            v.n_single_sentence
        );
    }
    for w in &report.warnings {
        let _ = writeln!(out, "> warning: {w}");
    }
    out
}

pub fn emit_report(
    report: &ExperimentReport,
    format: ReportFormat,
    path: &Path,
) -> Result<(), HarnessError> {
    let text = match format {
        ReportFormat::Json => render_json(report)?,
        ReportFormat::Csv => render_csv(report)?,
        ReportFormat::Markdown => render_markdown(report),
    };
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn load_report(path: &Path) -> Result<ExperimentReport, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| format_err(&path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{DatasetConfig, InterpreterConfig, ModelConfig, ModelKind};

    fn cell(
        interpreter: &str,
        aggregation: Aggregation,
        budget: Option<usize>,
        iou: f64,
    ) -> CellReport {
        CellReport {
            interpreter: interpreter.into(),
            aggregation,
            n_perturbations: budget,
            iou_mean: Some(iou),
            hpd_mean: Some(0.5),
            snr_mean: None,
            n_samples: 10,
            n_snr_excluded: 10,
            n_errors: 0,
            seconds: 0.25,
            aborted: false,
        }
    }

    fn report() -> ExperimentReport {
        ExperimentReport {
            config: RunConfig {
                dataset: DatasetConfig {
                    path: "data.json".into(),
                    name: "toy".into(),
                    max_tokens: 512,
                    include_flagged: false,
                },
                model: ModelConfig {
                    kind: ModelKind::KeywordOracle,
                    path: Some("kw.json".into()),
                    command: None,
                    threshold: 0.5,
                },
                interpreters: vec![
                    InterpreterConfig::new("saliency"),
                    InterpreterConfig::new("lime"),
                ],
                aggregations: vec![Aggregation::Sum, Aggregation::Max],
                tie_rule: Default::default(),
                output: Default::default(),
                execution: Default::default(),
                base_dir: Default::default(),
            },
            stats: Some(DatasetStats {
                n_samples_used: 10,
                avg_sentences: 4.2,
                accuracy: 0.9,
                recall: Some(0.8),
            }),
            dispositions: Default::default(),
            cells: vec![
                cell("saliency", Aggregation::Sum, None, 0.1 + 0.2),
                cell("saliency", Aggregation::Max, None, 1.0 / 3.0),
                cell("lime", Aggregation::Sum, None, 0.7),
                cell("lime", Aggregation::Max, None, 0.6),
            ],
            verification: None,
            warnings: vec![],
        }
    }

    #[test]
    fn json_round_trip() {
        let r = report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        emit_report(&r, ReportFormat::Json, &path).unwrap();
        assert_eq!(load_report(&path).unwrap(), r);
    }

    #[test]
    fn csv_has_a_row_per_cell_and_metric() {
        let text = render_csv(&report()).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 2 * 3);
    }

    #[test]
    fn markdown_has_a_row_per_interpreter() {
        let md = render_markdown(&report());
        let iou = md.split("## HPD").next().unwrap();
        let rows: Vec<&str> = iou
            .lines()
            .filter(|l| l.starts_with("| ") && !l.starts_with("| Interpreter"))
            .collect();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].starts_with("| saliency | 0.3000 | 0.3333 |"));
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("r.md");
        assert!(emit_report(&report(), ReportFormat::Markdown, &path).is_err());
    }
}
