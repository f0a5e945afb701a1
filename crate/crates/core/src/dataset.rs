//! Triples, samples and the corpus-level transforms: split derivation,
//! flattening, random triple dropping, padding and pseudo-target assembly.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vocab::PAD_TOKEN;

/// Splits an entity or relation string on whitespace and underscores.
pub fn tokenize_field(s: &str) -> Vec<String> {
    s.split(|c: char| c.is_whitespace() || c == '_')
        .filter(|t| !t.is_empty())
        .map(ToString::to_string)
        .collect()
}

/// Whitespace tokenisation of target text.
pub fn tokenize_text(s: &str) -> Vec<String> {
    s.split_whitespace().map(ToString::to_string).collect()
}

/// A ⟨head, relation, tail⟩ fact. The raw strings are kept because entity
/// matching (pseudo-targets, acquisition analysis) is on the untokenised form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    head_tokens: Vec<String>,
    relation_tokens: Vec<String>,
    tail_tokens: Vec<String>,
}

impl Triple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Result<Self> {
        let head_tokens = tokenize_field(head);
        let relation_tokens = tokenize_field(relation);
        let tail_tokens = tokenize_field(tail);
        if head_tokens.is_empty() {
            return Err(Error::EmptyField("head"));
        }
        if relation_tokens.is_empty() {
            return Err(Error::EmptyField("relation"));
        }
        if tail_tokens.is_empty() {
            return Err(Error::EmptyField("tail"));
        }
        Ok(Triple {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: tail.to_string(),
            head_tokens,
            relation_tokens,
            tail_tokens,
        })
    }

    pub fn head_tokens(&self) -> &[String] {
        &self.head_tokens
    }

    pub fn relation_tokens(&self) -> &[String] {
        &self.relation_tokens
    }

    pub fn tail_tokens(&self) -> &[String] {
        &self.tail_tokens
    }

    /// Head, relation and tail tokens in order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.head_tokens
            .iter()
            .chain(&self.relation_tokens)
            .chain(&self.tail_tokens)
            .map(String::as_str)
    }
}

/// A non-empty ordered list of triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleSet(Vec<Triple>);

impl TripleSet {
    pub fn new(triples: Vec<Triple>) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::EmptyTripleSet);
        }
        Ok(TripleSet(triples))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Triple> {
        self.0.iter()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.0
    }

    /// Distinct head and tail entity strings, in order of first appearance.
    pub fn entities(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.0 {
            for e in [t.head.as_str(), t.tail.as_str()] {
                if !out.contains(&e) {
                    out.push(e);
                }
            }
        }
        out
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|t| t.relation.as_str())
    }
}

/// A (triples, text) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub triples: TripleSet,
    pub text: Option<Vec<String>>,
}

impl Sample {
    pub fn new(id: &str, triples: TripleSet, text: Option<&str>) -> Self {
        Sample {
            id: id.to_string(),
            triples,
            text: text.map(tokenize_text).filter(|t| !t.is_empty()),
        }
    }

    pub fn text_len(&self) -> usize {
        self.text.as_ref().map_or(0, Vec::len)
    }
}

/// Concatenates `h₁ r₁ t₁ … h_c r_c t_c` tokens with no separators.
pub fn flatten_triples(set: &TripleSet) -> Vec<String> {
    set.iter()
        .flat_map(|t| t.tokens().map(ToString::to_string))
        .collect()
}

/// Keeps each triple independently with probability `zeta`; when every triple
/// would be dropped, one is kept uniformly at random. Order is preserved.
pub fn drop_triples<R: Rng + ?Sized>(set: &TripleSet, zeta: f64, rng: &mut R) -> Result<TripleSet> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::Config(alloc::format!(
            "preserve ratio zeta must be in (0, 1], got {zeta}"
        )));
    }
    let mut kept: Vec<Triple> = set
        .iter()
        .filter(|_| rng.gen::<f64>() < zeta)
        .cloned()
        .collect();
    if kept.is_empty() {
        let i = rng.gen_range(0..set.len());
        kept.push(set.0[i].clone());
    }
    TripleSet::new(kept)
}

/// Appends `<pad>` until the sequence has at least `k` tokens.
pub fn pad_to_min_length(tokens: &[String], k: usize) -> Vec<String> {
    let mut out = tokens.to_vec();
    while out.len() < k.max(1) {
        out.push(PAD_TOKEN.to_string());
    }
    out
}

/// Concatenates, in corpus order, the texts of every one-triple sample whose
/// head or tail equals one of `entities` exactly.
pub fn build_pseudo_target(entities: &[&str], one_triple_corpus: &[Sample]) -> Vec<String> {
    let mut out = Vec::new();
    for sample in one_triple_corpus {
        let Some(text) = &sample.text else { continue };
        let matched = sample
            .triples
            .iter()
            .any(|t| entities.contains(&t.head.as_str()) || entities.contains(&t.tail.as_str()));
        if matched {
            out.extend(text.iter().cloned());
        }
    }
    out
}

/// Dev and test sizes as fractions of the full corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    /// 706 and 1,501 pairs out of 35,815.
    fn default() -> Self {
        SplitFractions {
            dev: 706.0 / 35_815.0,
            test: 1_501.0 / 35_815.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionStats {
    pub pairs: usize,
    pub avg_triples: f64,
    /// Mean target word count; `None` when the partition stores no text.
    pub avg_target_len: Option<f64>,
}

impl PartitionStats {
    pub fn of(samples: &[Sample]) -> Self {
        let pairs = samples.len();
        let denom = pairs.max(1) as f64;
        let avg_triples = samples.iter().map(|s| s.triples.len()).sum::<usize>() as f64 / denom;
        let with_text: Vec<usize> = samples
            .iter()
            .filter(|s| s.text.is_some())
            .map(Sample::text_len)
            .collect();
        let avg_target_len = if with_text.is_empty() {
            None
        } else {
            Some(with_text.iter().sum::<usize>() as f64 / with_text.len() as f64)
        };
        PartitionStats {
            pairs,
            avg_triples,
            avg_target_len,
        }
    }
}

/// Training split for informative generation.
///
/// `train` holds every sample with two or more triples. Dev and test are
/// drawn from the remaining (single-triple) samples and carry no text; the
/// rest of the single-triple samples form `one_triple`, the pool that
/// pseudo-targets are built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ItgSplit {
    pub seed: u64,
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
    pub one_triple: Vec<Sample>,
}

impl ItgSplit {
    pub fn stats(&self) -> [PartitionStats; 3] {
        [
            PartitionStats::of(&self.train),
            PartitionStats::of(&self.dev),
            PartitionStats::of(&self.test),
        ]
    }
}

pub fn derive_itg_split(corpus: &[Sample], seed: u64, fractions: SplitFractions) -> Result<ItgSplit> {
    if corpus.is_empty() {
        return Err(Error::Config("corpus is empty".into()));
    }
    if !(0.0..=1.0).contains(&fractions.dev) || !(0.0..=1.0).contains(&fractions.test) {
        return Err(Error::Config("split fractions must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut rest): (Vec<Sample>, Vec<Sample>) =
        corpus.iter().cloned().partition(|s| s.triples.len() >= 2);
    if train.is_empty() {
        return Err(Error::NoMultiTripleSamples);
    }
    train.shuffle(&mut rng);
    rest.shuffle(&mut rng);

    let total = corpus.len() as f64;
    let n_dev = (libm::round(fractions.dev * total) as usize).min(rest.len());
    let n_test = (libm::round(fractions.test * total) as usize).min(rest.len() - n_dev);
    let mut rest = rest.into_iter();
    let strip = |mut s: Sample| {
        s.text = None;
        s
    };
    let dev: Vec<Sample> = rest.by_ref().take(n_dev).map(strip).collect();
    let test: Vec<Sample> = rest.by_ref().take(n_test).map(strip).collect();
    let one_triple: Vec<Sample> = rest.collect();
    Ok(ItgSplit {
        seed,
        train,
        dev,
        test,
        one_triple,
    })
}
