//! Flat exact cosine index.
//!
//! Entries keep insertion order, which doubles as the tie-breaker: among equal
//! scores the entry added first ranks higher. Queries scan every entry.
//!
//! On disk an index is a directory with three files:
//!
//! * `meta.json`: format version, dimension, count, embedder id and the
//!   chunking parameters the corpus was split with;
//! * `chunks.jsonl`: one chunk record per line in insertion order;
//! * `vectors.f32`: `count × dim` little-endian `f32`, row `i` belonging to
//!   line `i` of `chunks.jsonl`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Chunk, ChunkingConfig};
use crate::embedding::{EmbedderDescriptor, EmbeddingError, EmbeddingVector};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const VECTORS_FILE: &str = "vectors.f32";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate chunk id {0:?}")]
    DuplicateId(String),
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("retrieval k must be at least 1")]
    InvalidK,
    #[error("embedder mismatch: index was built with {index:?} (dim {index_dim}), got {given:?} (dim {given_dim})")]
    EmbedderMismatch {
        index: String,
        index_dim: usize,
        given: String,
        given_dim: usize,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index at {}: field `{field}`: {message}", path.display())]
    Corrupt {
        path: PathBuf,
        field: String,
        message: String,
    },
}

fn corrupt(path: &Path, field: &str, message: impl Into<String>) -> StoreError {
    StoreError::Corrupt {
        path: path.to_path_buf(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 2 }
    }
}

impl RetrievalConfig {
    pub fn new(k: usize) -> Result<Self, StoreError> {
        if k == 0 {
            return Err(StoreError::InvalidK);
        }
        Ok(Self { k })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub chunk_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Contents of `meta.json`. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub format_version: u32,
    pub dim: usize,
    pub count: usize,
    pub embedder_id: String,
    pub chunk_size_tokens: usize,
    pub overlap_tokens: usize,
}

/// Chunking parameters recorded with an index. A knowledge base built
/// directly from question items has no token windows and records
/// `chunk_size_tokens == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkingProvenance {
    Windows(ChunkingConfig),
    QuestionItems,
}

impl ChunkingProvenance {
    fn to_fields(self) -> (usize, usize) {
        match self {
            ChunkingProvenance::Windows(c) => (c.chunk_size_tokens, c.overlap_tokens),
            ChunkingProvenance::QuestionItems => (0, 0),
        }
    }

    fn from_fields(size: usize, overlap: usize) -> Option<Self> {
        if size == 0 {
            return (overlap == 0).then_some(ChunkingProvenance::QuestionItems);
        }
        ChunkingConfig::new(size, overlap)
            .ok()
            .map(ChunkingProvenance::Windows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex<S> {
    descriptor: EmbedderDescriptor,
    chunking: ChunkingProvenance,
    chunks: Vec<Chunk>,
    vectors: Vec<EmbeddingVector<S>>,
    positions: HashMap<String, usize>,
}

impl<S: Scalar> VectorIndex<S> {
    pub fn new(descriptor: EmbedderDescriptor, chunking: ChunkingProvenance) -> Self {
        Self {
            descriptor,
            chunking,
            chunks: Vec::new(),
            vectors: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn descriptor(&self) -> &EmbedderDescriptor {
        &self.descriptor
    }

    pub fn chunking(&self) -> ChunkingProvenance {
        self.chunking
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.positions.get(id).map(|&i| &self.chunks[i])
    }

    pub fn vector(&self, id: &str) -> Option<&EmbeddingVector<S>> {
        self.positions.get(id).map(|&i| &self.vectors[i])
    }

    /// `(chunk, vector)` pairs in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&Chunk, &EmbeddingVector<S>)> {
        self.chunks.iter().zip(&self.vectors)
    }

    pub fn add(&mut self, chunk: Chunk, vector: EmbeddingVector<S>) -> Result<(), StoreError> {
        if vector.dim() != self.descriptor.dim {
            return Err(StoreError::DimMismatch {
                expected: self.descriptor.dim,
                actual: vector.dim(),
            });
        }
        if self.positions.contains_key(&chunk.id) {
            return Err(StoreError::DuplicateId(chunk.id));
        }
        self.positions.insert(chunk.id.clone(), self.chunks.len());
        self.chunks.push(chunk);
        self.vectors.push(vector);
        Ok(())
    }

    /// Fails unless `given` is the embedder this index was built with.
    pub fn ensure_embedder(&self, given: &EmbedderDescriptor) -> Result<(), StoreError> {
        if given != &self.descriptor {
            return Err(StoreError::EmbedderMismatch {
                index: self.descriptor.id.clone(),
                index_dim: self.descriptor.dim,
                given: given.id.clone(),
                given_dim: given.dim,
            });
        }
        Ok(())
    }

    /// Top-k entries by cosine similarity, ties broken by insertion order.
    pub fn query(
        &self,
        qvec: &EmbeddingVector<S>,
        cfg: &RetrievalConfig,
    ) -> Result<Vec<RetrievedChunk>, StoreError> {
        if cfg.k == 0 {
            return Err(StoreError::InvalidK);
        }
        if qvec.dim() != self.descriptor.dim {
            return Err(StoreError::DimMismatch {
                expected: self.descriptor.dim,
                actual: qvec.dim(),
            });
        }
        let mut scored: Vec<(f64, usize)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (clamp_score(qvec.dot(v)), i))
            .collect();
        let k = cfg.k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        let by_rank = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_rank);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(r, (score, i))| RetrievedChunk {
                chunk_id: self.chunks[i].id.clone(),
                score,
                rank: r + 1,
            })
            .collect())
    }

    pub fn meta(&self) -> IndexMeta {
        let (chunk_size_tokens, overlap_tokens) = self.chunking.to_fields();
        IndexMeta {
            format_version: FORMAT_VERSION,
            dim: self.descriptor.dim,
            count: self.len(),
            embedder_id: self.descriptor.id.clone(),
            chunk_size_tokens,
            overlap_tokens,
        }
    }

    /// Writes the index directory, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;

        let meta_path = dir.join(META_FILE);
        let meta = serde_json::to_string_pretty(&self.meta()).expect("meta serializes");
        fs::write(&meta_path, meta + "\n").map_err(io_err(&meta_path))?;

        let chunks_path = dir.join(CHUNKS_FILE);
        let mut w = BufWriter::new(fs::File::create(&chunks_path).map_err(io_err(&chunks_path))?);
        for chunk in &self.chunks {
            serde_json::to_writer(&mut w, &ChunkRecord::from(chunk))
                .map_err(|e| io_err(&chunks_path)(e.into()))?;
            w.write_all(b"\n").map_err(io_err(&chunks_path))?;
        }
        w.flush().map_err(io_err(&chunks_path))?;

        let vectors_path = dir.join(VECTORS_FILE);
        let mut w =
            BufWriter::new(fs::File::create(&vectors_path).map_err(io_err(&vectors_path))?);
        for v in &self.vectors {
            for x in v.values() {
                w.write_all(&x.to_f32_storage().to_le_bytes())
                    .map_err(io_err(&vectors_path))?;
            }
        }
        w.flush().map_err(io_err(&vectors_path))?;
        Ok(())
    }

    /// Reads and validates an index directory. Any inconsistency fails the
    /// whole load; no partial index is returned.
    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let meta_path = dir.join(META_FILE);
        let raw = fs::read(&meta_path).map_err(io_err(&meta_path))?;
        let meta: IndexMeta = serde_json::from_slice(&raw)
            .map_err(|e| corrupt(&meta_path, "meta.json", e.to_string()))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(corrupt(
                &meta_path,
                "format_version",
                format!("unsupported version {}", meta.format_version),
            ));
        }
        if meta.dim == 0 {
            return Err(corrupt(&meta_path, "dim", "must be positive"));
        }
        let chunking = ChunkingProvenance::from_fields(meta.chunk_size_tokens, meta.overlap_tokens)
            .ok_or_else(|| {
                corrupt(
                    &meta_path,
                    "overlap_tokens",
                    "must be smaller than chunk_size_tokens",
                )
            })?;

        let chunks_path = dir.join(CHUNKS_FILE);
        let file = fs::File::open(&chunks_path).map_err(io_err(&chunks_path))?;
        let mut chunks = Vec::with_capacity(meta.count);
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&chunks_path))?;
            if line.is_empty() {
                continue;
            }
            let rec: ChunkRecord = serde_json::from_str(&line)
                .map_err(|e| corrupt(&chunks_path, &format!("line {}", i + 1), e.to_string()))?;
            chunks.push(Chunk::from(rec));
        }
        if chunks.len() != meta.count {
            return Err(corrupt(
                &meta_path,
                "count",
                format!("meta says {}, chunks.jsonl has {}", meta.count, chunks.len()),
            ));
        }

        let vectors_path = dir.join(VECTORS_FILE);
        let bytes = fs::read(&vectors_path).map_err(io_err(&vectors_path))?;
        let expected = meta
            .count
            .checked_mul(meta.dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| corrupt(&meta_path, "count", "size overflow"))?;
        if bytes.len() != expected {
            return Err(corrupt(
                &vectors_path,
                "vectors.f32",
                format!(
                    "expected {expected} bytes for {} × {} f32, found {}",
                    meta.count,
                    meta.dim,
                    bytes.len()
                ),
            ));
        }

        let descriptor = EmbedderDescriptor {
            id: meta.embedder_id.clone(),
            dim: meta.dim,
        };
        let mut index = Self::new(descriptor, chunking);
        for (row, (chunk, raw)) in chunks
            .into_iter()
            .zip(bytes.chunks_exact(meta.dim * 4))
            .enumerate()
        {
            let values: Vec<S> = raw
                .chunks_exact(4)
                .map(|b| S::from_f32_storage(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            let vector = EmbeddingVector::from_normalized(values).map_err(|e: EmbeddingError| {
                corrupt(&vectors_path, &format!("row {row}"), e.to_string())
            })?;
            index.add(chunk, vector).map_err(|e| match e {
                StoreError::DuplicateId(id) => {
                    corrupt(&chunks_path, "id", format!("duplicate chunk id {id:?}"))
                }
                other => other,
            })?;
        }
        Ok(index)
    }
}

/// Cosine similarity of two stored embeddings. Inputs are unit or zero, so
/// this is a clamped dot product; a zero vector scores 0.
pub fn cosine_similarity<S: Scalar>(
    a: &EmbeddingVector<S>,
    b: &EmbeddingVector<S>,
) -> Result<f64, StoreError> {
    if a.dim() != b.dim() {
        return Err(StoreError::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(clamp_score(a.dot(b)))
}

fn clamp_score(s: f64) -> f64 {
    s.clamp(-1.0, 1.0)
}

#[derive(Serialize, Deserialize)]
struct ChunkRecord {
    id: String,
    document_id: String,
    ordinal: usize,
    token_start: usize,
    token_count: usize,
    text: String,
}

impl From<&Chunk> for ChunkRecord {
    fn from(c: &Chunk) -> Self {
        Self {
            id: c.id.clone(),
            document_id: c.document_id.clone(),
            ordinal: c.ordinal,
            token_start: c.token_start,
            token_count: c.token_count,
            text: c.text.clone(),
        }
    }
}

impl From<ChunkRecord> for Chunk {
    fn from(r: ChunkRecord) -> Self {
        Self {
            id: r.id,
            document_id: r.document_id,
            ordinal: r.ordinal,
            token_start: r.token_start,
            token_count: r.token_count,
            text: r.text,
        }
    }
}
