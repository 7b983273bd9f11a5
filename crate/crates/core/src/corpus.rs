//! Documents, tokenization and fixed-window chunking.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::mmlu::MCQuestion;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub source_path: PathBuf,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub chunk_size_tokens: usize,
    pub overlap_tokens: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_size_tokens: 300,
            overlap_tokens: 0,
        }
    }
}

impl ChunkingConfig {
    pub fn new(chunk_size_tokens: usize, overlap_tokens: usize) -> Result<Self, CorpusError> {
        let cfg = Self {
            chunk_size_tokens,
            overlap_tokens,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.chunk_size_tokens == 0 {
            return Err(CorpusError::InvalidConfig(
                "chunk_size_tokens must be positive".into(),
            ));
        }
        if self.overlap_tokens >= self.chunk_size_tokens {
            return Err(CorpusError::InvalidConfig(format!(
                "overlap_tokens ({}) must be smaller than chunk_size_tokens ({})",
                self.overlap_tokens, self.chunk_size_tokens
            )));
        }
        Ok(())
    }

    fn step(&self) -> usize {
        self.chunk_size_tokens - self.overlap_tokens
    }
}

/// A contiguous token window of a document; the unit of retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub document_id: String,
    pub ordinal: usize,
    pub token_start: usize,
    pub token_count: usize,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid chunking config: {0}")]
    InvalidConfig(String),
    #[error("corpus directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("{} file(s) failed to load: {}", .0.len(), summarize(.0))]
    Load(Vec<LoadFailure>),
}

#[derive(Debug)]
pub struct LoadFailure {
    pub path: PathBuf,
    pub reason: String,
}

fn summarize(failures: &[LoadFailure]) -> String {
    failures
        .iter()
        .map(|f| format!("{}: {}", f.path.display(), f.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

/// A token together with its byte span in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Rule-based tokenizer used for chunk boundaries, the reference embedder
/// and the mock model.
///
/// Tokens are maximal runs of alphanumeric characters, or single
/// non-whitespace characters otherwise. Whitespace is dropped but the byte
/// spans make the original text recoverable.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            run_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = run_start.take() {
            tokens.push(Token {
                text: &text[s..i],
                start: s,
                end: i,
            });
        }
        if !c.is_whitespace() {
            let end = i + c.len_utf8();
            tokens.push(Token {
                text: &text[i..end],
                start: i,
                end,
            });
        }
    }
    if let Some(s) = run_start {
        tokens.push(Token {
            text: &text[s..],
            start: s,
            end: text.len(),
        });
    }
    tokens
}

/// Token strings only.
pub fn token_strs(text: &str) -> Vec<&str> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

/// Lowercased token strings, as used by bag-of-token consumers.
pub fn lowercase_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .map(|t| t.text.to_lowercase())
        .collect()
}

pub fn chunk_id(document_id: &str, ordinal: usize) -> String {
    format!("{document_id}#{ordinal}")
}

/// Splits a document into windows of `chunk_size_tokens` tokens advancing by
/// `chunk_size_tokens - overlap_tokens`. The final window holds the remainder.
pub fn chunk_document(doc: &Document, cfg: &ChunkingConfig) -> Result<Vec<Chunk>, CorpusError> {
    cfg.validate()?;
    let tokens = tokenize(&doc.text);
    let n = tokens.len();
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + cfg.chunk_size_tokens).min(n);
        let ordinal = chunks.len();
        chunks.push(Chunk {
            id: chunk_id(&doc.id, ordinal),
            document_id: doc.id.clone(),
            ordinal,
            token_start: start,
            token_count: end - start,
            text: doc.text[tokens[start].start..tokens[end - 1].end].to_string(),
        });
        if end == n {
            break;
        }
        start += cfg.step();
    }
    Ok(chunks)
}

/// Chunks every document in order.
pub fn chunk_corpus(docs: &[Document], cfg: &ChunkingConfig) -> Result<Vec<Chunk>, CorpusError> {
    let mut out = Vec::new();
    for doc in docs {
        out.extend(chunk_document(doc, cfg)?);
    }
    Ok(out)
}

/// Loads every `.txt` file under `dir`, recursively, sorted by relative path.
///
/// Failures are collected so a single bad file reports together with all
/// the others instead of stopping at the first.
pub fn load_corpus(dir: &Path) -> Result<Vec<Document>, CorpusError> {
    if !dir.is_dir() {
        return Err(CorpusError::MissingDir(dir.to_path_buf()));
    }
    let mut docs = Vec::new();
    let mut failures = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                failures.push(LoadFailure {
                    path: e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.into()),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().is_none_or(|e| e != "txt") {
            continue;
        }
        let rel = path.strip_prefix(dir).unwrap_or(path);
        let id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                failures.push(LoadFailure {
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let text = match String::from_utf8(bytes) {
            Ok(t) => t,
            Err(e) => {
                failures.push(LoadFailure {
                    path: path.to_path_buf(),
                    reason: format!("not valid UTF-8 ({})", e.utf8_error()),
                });
                continue;
            }
        };
        let title = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| id.clone());
        docs.push(Document {
            id,
            title,
            source_path: path.to_path_buf(),
            text,
        });
    }
    if !failures.is_empty() {
        return Err(CorpusError::Load(failures));
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(docs)
}

/// Renders an MMLU item as a knowledge-base chunk: the question, the four
/// labelled options, and the gold answer text on the last line.
pub fn mmlu_chunk_text(q: &MCQuestion) -> String {
    let mut text = String::with_capacity(q.question.len() + 64);
    text.push_str(&q.question);
    for (label, option) in ["A", "B", "C", "D"].iter().zip(&q.options) {
        text.push('\n');
        text.push_str(label);
        text.push_str(". ");
        text.push_str(option);
    }
    text.push_str("\nAnswer: ");
    text.push_str(q.gold_text());
    text
}

/// One chunk per question, keyed by the question id.
pub fn build_mmlu_kb(questions: &[MCQuestion]) -> Vec<Chunk> {
    questions
        .iter()
        .enumerate()
        .map(|(ordinal, q)| {
            let text = mmlu_chunk_text(q);
            Chunk {
                id: q.id.clone(),
                document_id: q.subject.clone(),
                ordinal,
                token_start: 0,
                token_count: tokenize(&text).len(),
                text,
            }
        })
        .collect()
}
