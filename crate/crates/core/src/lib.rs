//! Offline retrieval-augmented tutoring engine.
//!
//! The pipeline splits local plain-text documents into fixed token windows
//! ([`corpus`]), embeds them ([`embedding`]), stores them in an exact flat
//! cosine index ([`vectorstore`]), formats prompts ([`promptkit`]) and hands
//! them to a small language model backend ([`model`]). The [`eval`] module
//! runs multiple-choice accuracy experiments over MMLU-format data and
//! [`service`] exposes the chat loop over HTTP and the command line.
//!
//! Vector math is generic over [`Scalar`]; the aliases below fix the common
//! choices.

pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod mmlu;
pub mod model;
pub mod promptkit;
pub mod scalar;
pub mod service;
pub mod transport;
pub mod vectorstore;

pub use corpus::{Chunk, ChunkingConfig, Document};
pub use embedding::{EmbedderDescriptor, EmbeddingVector, ReferenceEmbedder};
pub use mmlu::MCQuestion;
pub use scalar::Scalar;
pub use vectorstore::{RetrievalConfig, RetrievedChunk, VectorIndex};

/// Embedding stored in single precision, the on-disk representation.
pub type Embedding = EmbeddingVector<f32>;
/// Embedding kept in double precision.
pub type Embedding64 = EmbeddingVector<f64>;
/// Index over single-precision vectors; this is what `save`/`load` round-trip bit-exactly.
pub type Index = VectorIndex<f32>;
/// Index over double-precision vectors.
pub type Index64 = VectorIndex<f64>;

/// Embedding dimension of the all-MiniLM class sentence encoders.
pub const DEFAULT_DIM: usize = 384;
