//! Line-delimited corpus records:
//! `{"id": "...", "triples": [{"h": .., "r": .., "t": ..}], "text": ".."}`.
//! `id` defaults to the 1-based line number and `text` is optional.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use imag_core::dataset::{Sample, Triple, TripleSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub h: String,
    pub r: String,
    pub t: String,
}

impl From<&Triple> for TripleRecord {
    fn from(t: &Triple) -> Self {
        TripleRecord {
            h: t.head.clone(),
            r: t.relation.clone(),
            t: t.tail.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub triples: Vec<TripleRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl SampleRecord {
    pub fn from_sample(s: &Sample) -> Self {
        SampleRecord {
            id: Some(s.id.clone()),
            triples: s.triples.iter().map(TripleRecord::from).collect(),
            text: s.text.as_ref().map(|t| t.join(" ")),
        }
    }
}

pub fn triple_set(records: &[TripleRecord]) -> imag_core::Result<TripleSet> {
    let triples = records
        .iter()
        .map(|t| Triple::new(&t.h, &t.r, &t.t))
        .collect::<imag_core::Result<Vec<_>>>()?;
    TripleSet::new(triples)
}

/// Parses records in order; `name` labels errors.
pub fn parse_corpus<R: BufRead>(reader: R, name: &str) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(Path::new(name), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: name.to_string(),
            line: line_no,
            message,
        };
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let set = triple_set(&rec.triples).map_err(|e| parse_err(e.to_string()))?;
        let id = rec.id.unwrap_or_else(|| line_no.to_string());
        out.push(Sample::new(&id, set, rec.text.as_deref()));
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), &path.display().to_string())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus(path: &Path, samples: &[Sample]) -> Result<()> {
    write_jsonl(path, samples.iter().map(SampleRecord::from_sample))
}
