//! Automatic metrics against pseudo-targets, and the acquisition analysis
//! relating memory-retrieved relations to training co-occurrence.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Sample, TripleSet};
use crate::error::{Error, Result};
use crate::repetition::lrns;

/// Lowercases and splits punctuation off into separate tokens.
pub fn normalize(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for tok in tokens {
        let mut word = String::new();
        for ch in tok.chars() {
            if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace()) {
                if !word.is_empty() {
                    out.push(core::mem::take(&mut word));
                }
                out.push(ch.to_lowercase().collect());
            } else {
                word.extend(ch.to_lowercase());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// [`normalize`] over whitespace-separated words.
pub fn metric_tokens(text: &str) -> Vec<String> {
    let words: Vec<String> = text.split_whitespace().map(String::from).collect();
    normalize(&words)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }

    fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        if candidate == 0 || reference == 0 {
            return RougeScore::default();
        }
        RougeScore::new(overlap as f64 / candidate as f64, overlap as f64 / reference as f64)
    }
}

fn count<'a, I: IntoIterator<Item = Vec<&'a str>>>(units: I) -> BTreeMap<Vec<&'a str>, usize> {
    let mut m = BTreeMap::new();
    for u in units {
        *m.entry(u).or_insert(0) += 1;
    }
    m
}

fn clipped_overlap(a: &BTreeMap<Vec<&str>, usize>, b: &BTreeMap<Vec<&str>, usize>) -> usize {
    a.iter().map(|(k, &c)| c.min(b.get(k).copied().unwrap_or(0))).sum()
}

fn ngrams(tokens: &[String], n: usize) -> BTreeMap<Vec<&str>, usize> {
    if tokens.len() < n {
        return BTreeMap::new();
    }
    count(tokens.windows(n).map(|w| w.iter().map(String::as_str).collect()))
}

/// Clipped n-gram overlap.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> RougeScore {
    let n = n.max(1);
    let (c, r) = (ngrams(candidate, n), ngrams(reference, n));
    let total = |m: &BTreeMap<Vec<&str>, usize>| m.values().sum::<usize>();
    RougeScore::from_counts(clipped_overlap(&c, &r), total(&c), total(&r))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(candidate: &[String], reference: &[String]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Maximum number of words allowed between the two words of a skip-bigram.
pub const SU_MAX_GAP: usize = 4;

fn su4_units(tokens: &[String]) -> BTreeMap<Vec<&str>, usize> {
    let mut units: Vec<Vec<&str>> = tokens.iter().map(|t| vec![t.as_str()]).collect();
    for i in 0..tokens.len() {
        for j in i + 1..tokens.len().min(i + SU_MAX_GAP + 2) {
            units.push(vec![tokens[i].as_str(), tokens[j].as_str()]);
        }
    }
    count(units)
}

/// Unigrams plus skip-bigrams with at most four intervening words.
pub fn rouge_su4(candidate: &[String], reference: &[String]) -> RougeScore {
    let (c, r) = (su4_units(candidate), su4_units(reference));
    let total = |m: &BTreeMap<Vec<&str>, usize>| m.values().sum::<usize>();
    RougeScore::from_counts(clipped_overlap(&c, &r), total(&c), total(&r))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SentenceStats {
    pub len: usize,
    pub lrnsr: f64,
    pub drate: f64,
}

pub fn sentence_stats(tokens: &[String]) -> SentenceStats {
    let m = tokens.len();
    if m == 0 {
        return SentenceStats::default();
    }
    let repeated = lrns(tokens).map_or(0, |r| r.len());
    let distinct = tokens.iter().collect::<BTreeSet<_>>().len();
    SentenceStats {
        len: m,
        lrnsr: repeated as f64 / m as f64,
        drate: distinct as f64 / m as f64,
    }
}

/// Covering threshold as a fraction `num / den` of the sentence's words.
pub const COVER_NUM: usize = 4;
pub const COVER_DEN: usize = 5;

/// Whether `generated` contains at least 80% of `sentence`'s words
/// (multiset intersection, exact integer comparison).
pub fn covers(generated: &[String], sentence: &[String]) -> bool {
    if sentence.is_empty() {
        return false;
    }
    let mut pool: BTreeMap<&str, usize> = BTreeMap::new();
    for t in generated {
        *pool.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut inter = 0;
    for t in sentence {
        if let Some(c) = pool.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                inter += 1;
            }
        }
    }
    inter * COVER_DEN >= sentence.len() * COVER_NUM
}

/// Metrics of one (generation, pseudo-target) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairMetrics {
    /// `None` when the pseudo-target is empty.
    pub rouge: Option<[RougeScore; 3]>,
    pub stats: SentenceStats,
}

pub fn pair_metrics(generated: &[String], pseudo_target: &[String]) -> PairMetrics {
    let rouge = (!pseudo_target.is_empty()).then(|| {
        [
            rouge_l(generated, pseudo_target),
            rouge_n(generated, pseudo_target, 2),
            rouge_su4(generated, pseudo_target),
        ]
    });
    PairMetrics {
        rouge,
        stats: sentence_stats(generated),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalReport {
    pub rouge_l: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_su4: RougeScore,
    pub len: f64,
    pub lrnsr: f64,
    pub drate: f64,
    pub pairs: usize,
    /// Pairs left out of the ROUGE averages.
    pub empty_targets: usize,
}

fn mean_score(scores: &[RougeScore]) -> RougeScore {
    if scores.is_empty() {
        return RougeScore::default();
    }
    let n = scores.len() as f64;
    RougeScore {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    }
}

impl EvalReport {
    /// Arithmetic means, reduced in the given order.
    pub fn from_pairs(pairs: &[PairMetrics]) -> Self {
        let scored: Vec<[RougeScore; 3]> = pairs.iter().filter_map(|p| p.rouge).collect();
        let pick = |i: usize| -> Vec<RougeScore> { scored.iter().map(|s| s[i]).collect() };
        let n = pairs.len().max(1) as f64;
        EvalReport {
            rouge_l: mean_score(&pick(0)),
            rouge_2: mean_score(&pick(1)),
            rouge_su4: mean_score(&pick(2)),
            len: pairs.iter().map(|p| p.stats.len as f64).sum::<f64>() / n,
            lrnsr: pairs.iter().map(|p| p.stats.lrnsr).sum::<f64>() / n,
            drate: pairs.iter().map(|p| p.stats.drate).sum::<f64>() / n,
            pairs: pairs.len(),
            empty_targets: pairs.len() - scored.len(),
        }
    }

    /// Values in table order: R/P/F for L, 2, SU4, then LEN, LRNSR, DRATE.
    pub fn row(&self) -> [f64; 12] {
        let s = [self.rouge_l, self.rouge_2, self.rouge_su4];
        [
            s[0].recall,
            s[0].precision,
            s[0].f1,
            s[1].recall,
            s[1].precision,
            s[1].f1,
            s[2].recall,
            s[2].precision,
            s[2].f1,
            self.len,
            self.lrnsr,
            self.drate,
        ]
    }
}

pub const EVAL_COLUMNS: [&str; 12] = [
    "R_L", "P_L", "F_L", "R_2", "P_2", "F_2", "R_SU4", "P_SU4", "F_SU4", "LEN", "LRNSR", "DRATE",
];

pub fn evaluate_corpus(generations: &[Vec<String>], pseudo_targets: &[Vec<String>]) -> Result<EvalReport> {
    if generations.len() != pseudo_targets.len() {
        return Err(Error::Alignment {
            left: generations.len(),
            right: pseudo_targets.len(),
        });
    }
    let pairs: Vec<PairMetrics> = generations
        .iter()
        .zip(pseudo_targets)
        .map(|(g, t)| pair_metrics(g, t))
        .collect();
    Ok(EvalReport::from_pairs(&pairs))
}

/// A Pearson coefficient, or 0 with `undefined` set when fewer than two
/// points or a constant series make it meaningless.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Correlation {
    pub value: f64,
    pub undefined: bool,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Correlation {
    let n = xs.len().min(ys.len());
    let undefined = Correlation {
        value: 0.0,
        undefined: true,
    };
    if n < 2 {
        return undefined;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return undefined;
    }
    Correlation {
        value: (sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0),
        undefined: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AcquisitionReport {
    pub cr: f64,
    pub pc: Correlation,
    pub cc: Correlation,
    pub ar: f64,
    /// (input relation, covered relation) pairs, with multiplicity.
    pub pairs: usize,
    /// Covered relations over all generations, with multiplicity.
    pub covered: usize,
    /// Set when there were no pairs, so CR is a placeholder 0.
    pub cr_undefined: bool,
}

impl AcquisitionReport {
    pub fn row(&self) -> [f64; 4] {
        [self.cr, self.pc.value, self.cc.value, self.ar]
    }
}

pub const ACQUISITION_COLUMNS: [&str; 4] = ["CR", "PC", "CC", "AR"];

/// Relation statistics of the training split.
#[derive(Debug, Clone, Default)]
pub struct CooccurrenceIndex {
    /// Number of training triple sets containing both relations (keys sorted).
    pairs: BTreeMap<(String, String), usize>,
    /// Number of training triples carrying each relation.
    frequency: BTreeMap<String, usize>,
}

impl CooccurrenceIndex {
    pub fn build(train: &[Sample]) -> Self {
        let mut index = CooccurrenceIndex::default();
        for s in train {
            let rels: BTreeSet<&str> = s.triples.relations().collect();
            for r in s.triples.relations() {
                *index.frequency.entry(r.into()).or_insert(0) += 1;
            }
            for a in &rels {
                for b in &rels {
                    if a <= b {
                        *index.pairs.entry(((*a).into(), (*b).into())).or_insert(0) += 1;
                    }
                }
            }
        }
        index
    }

    pub fn cooccurrence(&self, a: &str, b: &str) -> usize {
        let key = if a <= b { (a.into(), b.into()) } else { (b.into(), a.into()) };
        self.pairs.get(&key).copied().unwrap_or(0)
    }

    pub fn frequency(&self, r: &str) -> usize {
        self.frequency.get(r).copied().unwrap_or(0)
    }
}

/// Relations of every one-triple sample whose sentence `generated` covers.
/// Both sides are compared after [`normalize`].
pub fn covered_relations<'a>(generated: &[String], one_triple: &'a [Sample]) -> Vec<&'a str> {
    let generated = normalize(generated);
    one_triple
        .iter()
        .filter(|s| s.text.as_ref().is_some_and(|t| covers(&generated, &normalize(t))))
        .flat_map(|s| s.triples.relations())
        .collect()
}

pub fn acquisition_analysis(
    generations: &[Vec<String>],
    inputs: &[TripleSet],
    one_triple: &[Sample],
    train: &[Sample],
) -> Result<AcquisitionReport> {
    if generations.len() != inputs.len() {
        return Err(Error::Alignment {
            left: generations.len(),
            right: inputs.len(),
        });
    }
    let index = CooccurrenceIndex::build(train);
    let mut pair_counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut covered_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let (mut pairs, mut hits, mut covered, mut novel, mut input_triples) = (0, 0, 0, 0, 0);
    for (generated, input) in generations.iter().zip(inputs) {
        let input_rels: Vec<&str> = input.relations().collect();
        input_triples += input.len();
        for r_hat in covered_relations(generated, one_triple) {
            covered += 1;
            *covered_counts.entry(r_hat).or_insert(0) += 1;
            if !input_rels.contains(&r_hat) {
                novel += 1;
            }
            for &r in &input_rels {
                pairs += 1;
                *pair_counts.entry((r, r_hat)).or_insert(0) += 1;
                if index.cooccurrence(r, r_hat) > 0 {
                    hits += 1;
                }
            }
        }
    }
    let (px, py): (Vec<f64>, Vec<f64>) = pair_counts
        .iter()
        .map(|(&(a, b), &c)| (c as f64, index.cooccurrence(a, b) as f64))
        .unzip();
    let (cx, cy): (Vec<f64>, Vec<f64>) = covered_counts
        .iter()
        .map(|(&r, &c)| (c as f64, index.frequency(r) as f64))
        .unzip();
    Ok(AcquisitionReport {
        cr: if pairs > 0 { hits as f64 / pairs as f64 } else { 0.0 },
        pc: pearson(&px, &py),
        cc: pearson(&cx, &cy),
        ar: if input_triples > 0 {
            novel as f64 / input_triples as f64
        } else {
            0.0
        },
        pairs,
        covered,
        cr_undefined: pairs == 0,
    })
}
