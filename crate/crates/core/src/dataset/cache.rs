//! Normalized sample cache: one JSON object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Answer, DatasetError, RawQaRecord, Sample, SampleFlag, SentenceSpan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedSample {
    pub id: String,
    pub question: String,
    pub context: String,
    pub sentence_spans: Vec<SentenceSpan>,
    pub gt_sentence: Option<usize>,
    pub flags: Vec<SampleFlag>,
    // Not strictly needed downstream, but keeps `Sample` reconstructible.
    #[serde(default)]
    pub answers: Vec<Answer>,
}

impl From<&Sample> for CachedSample {
    fn from(s: &Sample) -> Self {
        Self {
            id: s.record.id.clone(),
            question: s.record.question.clone(),
            context: s.record.context.clone(),
            sentence_spans: s.sentences.clone(),
            gt_sentence: s.gt_sentence,
            flags: s.flags.clone(),
            answers: s.record.answers.clone(),
        }
    }
}

impl From<CachedSample> for Sample {
    fn from(c: CachedSample) -> Self {
        Sample {
            record: RawQaRecord {
                id: c.id,
                question: c.question,
                context: c.context,
                is_impossible: c.answers.is_empty(),
                answers: c.answers,
            },
            sentences: c.sentence_spans,
            gt_sentence: c.gt_sentence,
            flags: c.flags,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_cache(path: &Path, samples: &[Sample]) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for sample in samples {
        let line = serde_json::to_string(&CachedSample::from(sample)).map_err(|e| {
            DatasetError::Serialize {
                what: sample.id().to_string(),
                message: e.to_string(),
            }
        })?;
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_cache(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut de = serde_json::Deserializer::from_str(&line);
        let cached: CachedSample =
            serde_path_to_error::deserialize(&mut de).map_err(|e| DatasetError::Parse {
                source_name: format!("{}:{}", path.display(), lineno + 1),
                json_path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        samples.push(cached.into());
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{derive_ground_truth, segment_sentences};

    #[test]
    fn cache_round_trip() {
        let record = RawQaRecord {
            id: "x1".into(),
            question: "Who?".into(),
            context: "Ann ran. Bob sat.".into(),
            is_impossible: false,
            answers: vec![Answer {
                text: "Bob".into(),
                answer_start: 9,
            }],
        };
        let spans = segment_sentences(&record.context);
        let sample = derive_ground_truth(record, spans).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        write_cache(&path, std::slice::from_ref(&sample)).unwrap();
        let line = std::fs::read_to_string(&path).unwrap();
        for field in [
            "\"id\"",
            "\"question\"",
            "\"context\"",
            "\"sentence_spans\"",
            "\"gt_sentence\"",
            "\"flags\"",
        ] {
            assert!(line.contains(field), "missing {field}");
        }
        assert_eq!(read_cache(&path).unwrap(), vec![sample]);
    }
}
