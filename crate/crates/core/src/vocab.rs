//! Token ↔ id mapping with fixed reserved ids, plus the per-sample extended
//! vocabulary used by the copy mechanism.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::dataset::Sample;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SEP: u32 = 4;

pub const PAD_TOKEN: &str = "<pad>";
pub const RESERVED: [&str; 5] = [PAD_TOKEN, "<bos>", "<eos>", "<unk>", "<sep>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: BTreeMap<String, u32>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::reserved_only()
    }
}

impl Vocabulary {
    pub fn reserved_only() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|t| t.to_string()).collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { ids, tokens }
    }

    /// Counts tokens over every triple and text; keeps those seen at least
    /// `min_freq` times, ordered by frequency (descending) then lexicographically.
    pub fn build(samples: &[Sample], min_freq: usize) -> Self {
        let min_freq = min_freq.max(1);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for sample in samples {
            for triple in sample.triples.iter() {
                for tok in triple.tokens() {
                    *counts.entry(tok).or_default() += 1;
                }
            }
            if let Some(text) = &sample.text {
                for tok in text {
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq && !RESERVED.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut vocab = Self::reserved_only();
        for (tok, _) in kept {
            vocab.push(tok);
        }
        vocab
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < RESERVED.len()
            || tokens.iter().zip(RESERVED.iter()).any(|(a, b)| a != b)
        {
            return Err(Error::Config("vocabulary must start with the reserved tokens".into()));
        }
        let mut vocab = Self::reserved_only();
        for tok in &tokens[RESERVED.len()..] {
            if vocab.ids.contains_key(tok) {
                return Err(Error::Config(alloc::format!("duplicate vocabulary token {tok:?}")));
            }
            vocab.push(tok);
        }
        Ok(vocab)
    }

    fn push(&mut self, tok: &str) {
        let id = self.tokens.len() as u32;
        self.tokens.push(tok.to_string());
        self.ids.insert(tok.to_string(), id);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.ids.contains_key(tok)
    }

    /// Id of `tok`, or [`UNK`].
    pub fn id(&self, tok: &str) -> u32 {
        self.ids.get(tok).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Source ids where out-of-vocabulary words get fresh ids `|V|, |V|+1, …`
    /// (one per distinct surface form), so the copy mechanism can emit them.
    pub fn encode_source(&self, tokens: &[String]) -> SourceEncoding {
        let mut oov: Vec<String> = Vec::new();
        let ids = tokens
            .iter()
            .map(|t| match self.ids.get(t.as_str()) {
                Some(&id) => id,
                None => {
                    let pos = oov.iter().position(|o| o == t).unwrap_or_else(|| {
                        oov.push(t.clone());
                        oov.len() - 1
                    });
                    (self.len() + pos) as u32
                }
            })
            .collect();
        SourceEncoding { ids, oov }
    }

    /// Target ids: in-vocabulary words map normally, OOV words that occur in
    /// the source map to their extended id, anything else to [`UNK`].
    pub fn encode_target(&self, tokens: &[String], source: &SourceEncoding) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| match self.ids.get(t.as_str()) {
                Some(&id) => id,
                None => source
                    .oov
                    .iter()
                    .position(|o| o == t)
                    .map_or(UNK, |p| (self.len() + p) as u32),
            })
            .collect()
    }

    /// Surface form of an (extended) id.
    pub fn decode_token<'a>(&'a self, id: u32, source: &'a SourceEncoding) -> &'a str {
        match self.token(id) {
            Some(t) => t,
            None => source
                .oov
                .get(id as usize - self.len())
                .map_or(RESERVED[UNK as usize], String::as_str),
        }
    }
}

/// Source token ids over the extended vocabulary of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SourceEncoding {
    pub ids: Vec<u32>,
    pub oov: Vec<String>,
}

impl SourceEncoding {
    /// Size of the extended vocabulary for this sample.
    pub fn extended_len(&self, vocab: &Vocabulary) -> usize {
        vocab.len() + self.oov.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Sample, Triple, TripleSet};
    use alloc::vec;

    fn sample(text: &str) -> Sample {
        let t = Triple::new("x", "r", "y").unwrap();
        Sample::new("s", TripleSet::new(vec![t]).unwrap(), Some(text))
    }

    #[test]
    fn min_freq_filters_rare_tokens() {
        let v = Vocabulary::build(&[sample("a a b")], 2);
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::build(&[sample("hello world")], 1);
        for (i, tok) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(tok), i as u32);
        }
        assert_eq!(v.token(EOS), Some("<eos>"));
    }

    #[test]
    fn build_is_deterministic_and_frequency_ordered() {
        let corpus = [sample("b b c a a a"), sample("c d")];
        let v1 = Vocabulary::build(&corpus, 1);
        let v2 = Vocabulary::build(&corpus, 1);
        assert_eq!(v1, v2);
        // a ×3 first; b, c ×2 tie broken lexicographically
        assert_eq!(&v1.tokens()[5..8], &["a", "b", "c"]);
        assert_eq!(Vocabulary::from_tokens(v1.tokens().iter().cloned()).unwrap(), v1);
    }

    #[test]
    fn copy_extension_round_trips_oov_words() {
        let v = Vocabulary::build(&[sample("known")], 1);
        let src: Vec<String> = ["known", "Zork", "Zork", "Quux"].iter().map(|s| s.to_string()).collect();
        let enc = v.encode_source(&src);
        assert_eq!(enc.oov, vec!["Zork".to_string(), "Quux".to_string()]);
        assert_eq!(enc.ids[1], enc.ids[2]);
        let tgt = v.encode_target(&["Quux".into(), "Nope".into()], &enc);
        assert_eq!(tgt[0] as usize, v.len() + 1);
        assert_eq!(tgt[1], UNK);
        assert_eq!(v.decode_token(tgt[0], &enc), "Quux");
    }
}
