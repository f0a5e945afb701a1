//! Writing a derived split to disk.

use std::fs;
use std::path::Path;

use imag_core::dataset::{derive_itg_split, ItgSplit, PartitionStats, Sample, SplitFractions};
use serde::Serialize;

use crate::corpus::write_corpus;
use crate::error::{Error, Result};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const DEV_FILE: &str = "dev.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const ONE_TRIPLE_FILE: &str = "one_triple.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct StatsRecord {
    pub pairs: usize,
    pub avg_triples: f64,
    pub avg_target_len: Option<f64>,
}

impl From<PartitionStats> for StatsRecord {
    fn from(s: PartitionStats) -> Self {
        StatsRecord {
            pairs: s.pairs,
            avg_triples: s.avg_triples,
            avg_target_len: s.avg_target_len,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub seed: u64,
    pub dev_frac: f64,
    pub test_frac: f64,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub one_triple: Vec<String>,
    pub stats: [StatsRecord; 3],
}

fn ids(samples: &[Sample]) -> Vec<String> {
    samples.iter().map(|s| s.id.clone()).collect()
}

impl Manifest {
    pub fn new(split: &ItgSplit, fractions: SplitFractions) -> Self {
        Manifest {
            seed: split.seed,
            dev_frac: fractions.dev,
            test_frac: fractions.test,
            train: ids(&split.train),
            dev: ids(&split.dev),
            test: ids(&split.test),
            one_triple: ids(&split.one_triple),
            stats: split.stats().map(StatsRecord::from),
        }
    }
}

/// Train/dev/test statistics as an aligned table.
pub fn stats_table(split: &ItgSplit) -> String {
    let mut out = format!("{:<6} {:>8} {:>12} {:>14}\n", "split", "pairs", "avg_triples", "avg_target_len");
    for (name, s) in ["train", "dev", "test"].iter().zip(split.stats()) {
        let len = s.avg_target_len.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        out += &format!("{:<6} {:>8} {:>12.3} {:>14}\n", name, s.pairs, s.avg_triples, len);
    }
    out
}

/// Derives the split and writes the four partitions plus `manifest.json`.
pub fn derive_to_dir(corpus: &[Sample], seed: u64, fractions: SplitFractions, out: &Path) -> Result<ItgSplit> {
    let split = derive_itg_split(corpus, seed, fractions)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_corpus(&out.join(TRAIN_FILE), &split.train)?;
    write_corpus(&out.join(DEV_FILE), &split.dev)?;
    write_corpus(&out.join(TEST_FILE), &split.test)?;
    write_corpus(&out.join(ONE_TRIPLE_FILE), &split.one_triple)?;
    let manifest = Manifest::new(&split, fractions);
    let path = out.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(split)
}
