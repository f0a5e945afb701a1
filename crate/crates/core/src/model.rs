//! The assembled generator: shared embedding, optional information memory,
//! and the attention-copy encoder-decoder.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, NodeId};
use crate::dataset::pad_to_min_length;
use crate::error::{Error, Result};
use crate::memory::{MemoryParams, MemoryReadout};
use crate::params::{ParamId, ParamStore};
use crate::seq2seq::{self, CopySource, Decoded, DecodeOptions, EncoderState, Feed, GenNodes, GenParams};
use crate::tensor::Tensor;
use crate::vocab::{SourceEncoding, Vocabulary, EOS, PAD, UNK};

pub const EMBEDDING_NAME: &str = "emb";

/// Which system is being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    /// Memory-augmented generator trained on dropped triples.
    #[default]
    Imag,
    /// Plain encoder-decoder trained on dropped triples.
    S2s,
    /// Plain encoder-decoder trained on full triple sets.
    S2sf,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Imag => "imag",
            ModelKind::S2s => "s2s",
            ModelKind::S2sf => "s2sf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "imag" => Ok(ModelKind::Imag),
            "s2s" => Ok(ModelKind::S2s),
            "s2sf" => Ok(ModelKind::S2sf),
            _ => Err(Error::Config(alloc::format!("unknown model kind {s:?}"))),
        }
    }

    pub fn has_memory(self) -> bool {
        self == ModelKind::Imag
    }

    /// Whether training inputs are subsampled.
    pub fn drops_triples(self) -> bool {
        self != ModelKind::S2sf
    }
}

/// What the encoder sees at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    /// `X = [E; C]`
    #[default]
    Full,
    /// `X = E`
    WoMemory,
    /// `X = C`; queries are still computed from the input.
    WoSource,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::WoMemory => "wo_memory",
            Ablation::WoSource => "wo_source",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "wo_memory" => Ok(Ablation::WoMemory),
            "wo_source" => Ok(Ablation::WoSource),
            _ => Err(Error::Config(alloc::format!("unknown ablation mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// `e`
    pub dim: usize,
    /// `k`
    pub window: usize,
    /// `l`
    pub slots: usize,
    pub kind: ModelKind,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.slots == 0 {
            return Err(Error::Config("e, k and l must all be at least 1".into()));
        }
        Ok(())
    }
}

/// One input sequence ready for the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedInput {
    /// Tokens after padding to the window length.
    pub tokens: Vec<String>,
    /// Ids looked up in the embedding table (OOV → UNK).
    pub embed_ids: Vec<usize>,
    /// Extended ids used by the copy mechanism.
    pub source: SourceEncoding,
}

impl PreparedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// The encoder side of one forward pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub nodes: GenNodes,
    pub emb: NodeId,
    pub encoder: EncoderState,
    pub copy: CopySource,
    pub memory: Option<MemoryReadout>,
}

/// Output of [`Model::generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Emitted ids, EOS excluded.
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
    /// Entropy of every step's distribution, including the EOS step.
    pub entropies: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub emb: ParamId,
    pub memory: Option<MemoryParams>,
    pub gen: GenParams,
}

impl Model {
    /// Registers every parameter, uniformly initialized from `seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (e, v) = (config.dim, vocab.len());
        let emb = params.register_uniform(EMBEDDING_NAME, &[v, e], &mut rng);
        let memory = if config.kind.has_memory() {
            Some(MemoryParams::register(&mut params, e, config.window, config.slots, &mut rng)?)
        } else {
            None
        };
        let gen = GenParams::register(&mut params, v, e, &mut rng)?;
        Ok(Model {
            config,
            vocab,
            params,
            emb,
            memory,
            gen,
        })
    }

    /// Replaces every parameter value; each must be present with the
    /// architecture's shape.
    pub fn load_params<I>(&mut self, tensors: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, Tensor)>,
    {
        let mut seen = Vec::new();
        for (name, value) in tensors {
            self.params.load(&name, value)?;
            seen.push(name);
        }
        for (_, p) in self.params.iter() {
            if !seen.contains(&p.name) {
                return Err(Error::MissingTensor(p.name.clone()));
            }
        }
        Ok(())
    }

    /// Pads to the window length and encodes against the vocabulary.
    pub fn prepare(&self, tokens: &[String]) -> Result<PreparedInput> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let tokens = pad_to_min_length(tokens, self.config.window);
        let source = self.vocab.encode_source(&tokens);
        let v = self.vocab.len() as u32;
        let embed_ids = source
            .ids
            .iter()
            .map(|&id| if id < v { id as usize } else { UNK as usize })
            .collect();
        Ok(PreparedInput {
            tokens,
            embed_ids,
            source,
        })
    }

    /// Target ids (copy-extended where possible) followed by EOS.
    pub fn targets(&self, text: &[String], input: &PreparedInput) -> Vec<u32> {
        let mut ids = self.vocab.encode_target(text, &input.source);
        ids.push(EOS);
        ids
    }

    /// Builds `X` for the ablation mode and runs the encoder.
    pub fn encode(&self, graph: &mut Graph, input: &PreparedInput, ablation: Ablation) -> Result<Encoded> {
        if input.is_empty() {
            return Err(Error::EmptyInput);
        }
        let nodes = self.gen.nodes(graph, &self.params);
        let emb = graph.param(&self.params, self.emb);
        let e = graph.embed(emb, &input.embed_ids)?;
        let readout = match &self.memory {
            Some(mem) => Some(mem.read(graph, &self.params, e)?),
            None if ablation == Ablation::WoSource => {
                return Err(Error::Config("wo_source needs a model with memory".into()));
            }
            None => None,
        };
        let x = match (ablation, &readout) {
            (Ablation::Full, Some(r)) => r.x,
            (Ablation::WoSource, Some(r)) => r.c,
            _ => e,
        };
        let encoder = seq2seq::encode(graph, &nodes, x)?;
        let copy = if ablation == Ablation::WoSource {
            CopySource {
                positions: Vec::new(),
                ids: Vec::new(),
                extended_len: input.source.extended_len(&self.vocab),
            }
        } else {
            let (positions, ids) = input
                .source
                .ids
                .iter()
                .enumerate()
                .filter(|(_, &id)| id != PAD)
                .map(|(i, &id)| (i, id as usize))
                .unzip();
            CopySource {
                positions,
                ids,
                extended_len: input.source.extended_len(&self.vocab),
            }
        };
        Ok(Encoded {
            nodes,
            emb,
            encoder,
            copy,
            memory: readout,
        })
    }

    pub fn decode(&self, graph: &mut Graph, enc: &Encoded, feed: Feed<'_>, options: DecodeOptions) -> Result<Decoded> {
        seq2seq::decode(graph, &enc.nodes, &enc.encoder, enc.emb, &enc.copy, feed, options)
    }

    /// Greedy decoding until EOS or `max_len` steps.
    pub fn generate(&self, tokens: &[String], ablation: Ablation, max_len: usize) -> Result<Generation> {
        let input = self.prepare(tokens)?;
        let mut graph = Graph::new();
        let enc = self.encode(&mut graph, &input, ablation)?;
        let options = DecodeOptions {
            max_len,
            stop_at_eos: true,
        };
        let decoded = self.decode(&mut graph, &enc, Feed::Greedy, options)?;
        let entropies = seq2seq::step_entropies(&graph, &decoded);
        let ids: Vec<u32> = decoded.tokens.iter().copied().take_while(|&t| t != EOS).collect();
        let tokens = ids
            .iter()
            .map(|&id| self.vocab.decode_token(id, &input.source).to_string())
            .collect();
        Ok(Generation { ids, tokens, entropies })
    }

    /// The memory slot distribution `W` for an input, if the model has memory.
    pub fn slot_distribution(&self, tokens: &[String]) -> Result<Option<Tensor>> {
        let Some(mem) = &self.memory else {
            return Ok(None);
        };
        let input = self.prepare(tokens)?;
        let mut graph = Graph::new();
        let emb = graph.param(&self.params, self.emb);
        let e = graph.embed(emb, &input.embed_ids)?;
        let r = mem.read(&mut graph, &self.params, e)?;
        Ok(Some(graph.value(r.w).clone()))
    }
}
