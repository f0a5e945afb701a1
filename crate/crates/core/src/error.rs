use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("input of length {len} is shorter than the window length {window}")]
    InputTooShort { len: usize, window: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("function under check is not deterministic (baseline {first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },
    #[error("triple has an empty {0}")]
    EmptyField(&'static str),
    #[error("sample {0} has no text")]
    MissingText(String),
    #[error("triple set must contain at least one triple")]
    EmptyTripleSet,
    #[error("no sample has two or more triples")]
    NoMultiTripleSamples,
    #[error("empty input sequence")]
    EmptyInput,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("alignment error: {left} vs {right} items")]
    Alignment { left: usize, right: usize },
    #[error("non-finite loss {loss} at step {step} (stage {stage})")]
    NonFinite { step: usize, stage: u8, loss: f64 },
    #[error("incompatible parameters: tensor {name} has shape {found:?}, expected {expected:?}")]
    IncompatibleTensor {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("missing tensor {0}")]
    MissingTensor(String),
}
