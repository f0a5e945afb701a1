//! Memory-augmented generator for informative KB-to-text generation.
//!
//! The crate is `no_std` (it needs `alloc`) and carries everything that is
//! pure computation: a small reverse-mode autodiff tape, the triple/dataset
//! transforms, the key-value information memory, the attention-and-copy
//! LSTM encoder-decoder, the repetition penalties, the two-stage training
//! loop and the automatic metrics. File formats, corpus parsing and the
//! command line live in the `imag` crate.

#![no_std]

extern crate alloc;

pub mod autograd;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod lstm;
pub mod math;
pub mod memory;
pub mod model;
pub mod params;
pub mod repetition;
pub mod seq2seq;
pub mod tensor;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
pub use tensor::Tensor;
