use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Answer, DatasetError, RawQaRecord};

#[derive(Debug, Serialize, Deserialize)]
struct SquadFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
    data: Vec<SquadArticle>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    // SQuADShifts omits the flag; every question there is answerable.
    #[serde(default)]
    is_impossible: bool,
    answers: Vec<SquadAnswer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

/// Load a SQuAD v2 style JSON file into one record per question.
pub fn load_squad_json(path: &Path, split_name: &str) -> Result<Vec<RawQaRecord>, DatasetError> {
    let raw = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_squad_json(
        &raw,
        &format!("{} ({})", path.display(), split_name),
        split_name,
    )
}

/// Parse SQuAD v2 JSON from memory. `source_name` only feeds error messages.
pub fn parse_squad_json(
    raw: &str,
    source_name: &str,
    split_name: &str,
) -> Result<Vec<RawQaRecord>, DatasetError> {
    let mut de = serde_json::Deserializer::from_str(raw);
    let file: SquadFile =
        serde_path_to_error::deserialize(&mut de).map_err(|err| DatasetError::Parse {
            source_name: source_name.to_string(),
            json_path: err.path().to_string(),
            message: err.inner().to_string(),
        })?;

    let mut records = Vec::new();
    for article in file.data {
        for paragraph in article.paragraphs {
            for qa in paragraph.qas {
                records.push(RawQaRecord {
                    id: qa.id,
                    question: qa.question,
                    context: paragraph.context.clone(),
                    is_impossible: qa.is_impossible,
                    answers: qa
                        .answers
                        .into_iter()
                        .map(|a| Answer {
                            text: a.text,
                            answer_start: a.answer_start,
                        })
                        .collect(),
                });
            }
        }
    }

    let mut ids = Vec::new();
    let mut details = Vec::new();
    for record in &records {
        if let Err(detail) = record.validate() {
            ids.push(record.id.clone());
            details.push(format!("{}: {}", record.id, detail));
        }
    }
    if !ids.is_empty() {
        return Err(DatasetError::Validation {
            split: split_name.to_string(),
            ids,
            details,
        });
    }
    Ok(records)
}

/// Write records back out as SQuAD v2 JSON. Consecutive records sharing a
/// context are grouped into one paragraph under a single article.
pub fn write_squad_json(
    path: &Path,
    title: &str,
    records: &[RawQaRecord],
) -> Result<(), DatasetError> {
    let mut paragraphs: Vec<SquadParagraph> = Vec::new();
    for record in records {
        let qa = SquadQa {
            id: record.id.clone(),
            question: record.question.clone(),
            is_impossible: record.is_impossible,
            answers: record
                .answers
                .iter()
                .map(|a| SquadAnswer {
                    text: a.text.clone(),
                    answer_start: a.answer_start,
                })
                .collect(),
        };
        match paragraphs.last_mut() {
            Some(last) if last.context == record.context => last.qas.push(qa),
            _ => paragraphs.push(SquadParagraph {
                context: record.context.clone(),
                qas: vec![qa],
            }),
        }
    }
    let file = SquadFile {
        version: Some("v2.0".to_string()),
        data: vec![SquadArticle {
            title: title.to_string(),
            paragraphs,
        }],
    };
    let json = serde_json::to_string(&file).map_err(|e| DatasetError::Serialize {
        what: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(path, json).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}
