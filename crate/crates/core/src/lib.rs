//! Core of the knowledge-graph-modality pipeline.
//!
//! Everything here is pure computation over in-memory data and builds
//! without the standard library: wikitext annotation, the embedding store,
//! TransE training, the text-to-graph mapper, the frozen toy language model
//! with its KG adapter, and the statement-judging evaluation logic. File
//! formats, configuration and the command line live in the `kgmod` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod corpus;
pub mod evalharness;
pub mod gradsuite;
pub mod kgstore;
pub mod modality;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod text2graph;
pub mod transe;

pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator used for every random draw in the crate.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
