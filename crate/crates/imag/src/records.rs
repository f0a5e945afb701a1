//! Generation records, one JSON object per line:
//! `{"id", "input", "output_tokens", "per_step_entropy"}`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use imag_core::dataset::{flatten_triples, tokenize_field, Sample, TripleSet};
use imag_core::model::{Ablation, Model};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{triple_set, TripleRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputRecord {
    Triples { triples: Vec<TripleRecord> },
    Entity { entity: String },
}

impl InputRecord {
    pub fn from_triples(set: &TripleSet) -> Self {
        InputRecord::Triples {
            triples: set.iter().map(TripleRecord::from).collect(),
        }
    }

    /// Encoder tokens for this input.
    pub fn tokens(&self) -> Result<Vec<String>> {
        let tokens = match self {
            InputRecord::Triples { triples } => flatten_triples(&triple_set(triples)?),
            InputRecord::Entity { entity } => tokenize_field(entity),
        };
        if tokens.is_empty() {
            return Err(Error::Validation("input has no tokens".into()));
        }
        Ok(tokens)
    }

    /// Entities whose one-triple sentences make up the pseudo-target.
    pub fn entities(&self) -> Result<Vec<String>> {
        match self {
            InputRecord::Triples { triples } => Ok(triple_set(triples)?
                .entities()
                .into_iter()
                .map(String::from)
                .collect()),
            InputRecord::Entity { entity } => Ok(vec![entity.clone()]),
        }
    }

    pub fn triple_set(&self) -> Result<Option<TripleSet>> {
        match self {
            InputRecord::Triples { triples } => Ok(Some(triple_set(triples)?)),
            InputRecord::Entity { .. } => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub input: InputRecord,
    pub output_tokens: Vec<String>,
    pub per_step_entropy: Vec<f64>,
}

/// One input to generate from.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub id: String,
    pub input: InputRecord,
}

impl GenerationRequest {
    pub fn from_sample(s: &Sample) -> Self {
        GenerationRequest {
            id: s.id.clone(),
            input: InputRecord::from_triples(&s.triples),
        }
    }

    pub fn entity(name: &str) -> Self {
        GenerationRequest {
            id: "1".into(),
            input: InputRecord::Entity { entity: name.into() },
        }
    }
}

/// Greedy generation for every request, in parallel, in input order.
pub fn generate_all(
    model: &Model,
    requests: &[GenerationRequest],
    ablation: Ablation,
    max_len: usize,
) -> Result<Vec<GenerationRecord>> {
    requests
        .par_iter()
        .map(|req| {
            let g = model.generate(&req.input.tokens()?, ablation, max_len)?;
            Ok(GenerationRecord {
                id: req.id.clone(),
                input: req.input.clone(),
                output_tokens: g.tokens,
                per_step_entropy: g.entropies,
            })
        })
        .collect()
}

/// Reads and checks a generations file: ids must be unique and each record
/// needs one entropy per emitted token, plus one for EOS when it was reached.
pub fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: name.clone(),
            line: i + 1,
            message,
        };
        let rec: GenerationRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let (n, m) = (rec.output_tokens.len(), rec.per_step_entropy.len());
        if m != n && m != n + 1 {
            return Err(err(format!("{n} output tokens but {m} entropies")));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(err(format!("duplicate id {:?}", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}
