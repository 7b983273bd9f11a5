//! The deployable tutor: ingestion, the retrieve → format → generate loop,
//! chat sessions, the HTTP API and the command line.

pub mod cli;
pub mod config;
pub mod http;
pub mod sessions;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{chunk_corpus, build_mmlu_kb, Chunk, ChunkingConfig, CorpusError, Document};
use crate::embedding::{embed_batch, embed_text, Embedder, EmbeddingError, HttpEmbedder, ReferenceEmbedder};
use crate::model::{DecodeParams, HttpModelBackend, MockBackend, ModelBackend, ModelError};
use crate::promptkit::{format_prompt, PromptBundle, PromptError};
use crate::vectorstore::{ChunkingProvenance, RetrievalConfig, StoreError};
use crate::{Index, MCQuestion};

pub use config::ServiceConfig;
pub use sessions::{ChatSession, ChatTurn, Role, SessionStore};

/// Texts sent per embedding request during ingestion.
const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown corpus {0:?}")]
    UnknownCorpus(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("message text is empty")]
    EmptyMessage,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no corpora configured")]
    NoCorpora,
    #[error("corpus {corpus}: {source}")]
    Index {
        corpus: String,
        #[source]
        source: StoreError,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("session store: {0}")]
    Persistence(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl ServiceError {
    /// True when the failure came from a model or embedding backend rather
    /// than from the request.
    pub fn is_backend(&self) -> bool {
        matches!(self, ServiceError::Model(_) | ServiceError::Embedding(_))
    }
}

/// Opens the embedding backend named by `spec`: `reference` or an `http(s)://` base URL.
pub fn open_embedder(spec: &str, id: Option<&str>, dim: usize) -> Result<Arc<dyn Embedder>, ServiceError> {
    if spec == "reference" {
        return Ok(Arc::new(ReferenceEmbedder::new(dim)));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Arc::new(HttpEmbedder::new(spec, id, dim)?));
    }
    Err(ServiceError::Config(format!(
        "embedder must be `reference` or an http URL, got {spec:?}"
    )))
}

/// Opens the model backend named by `spec`: `mock` or an `http(s)://` base URL.
pub fn open_model(
    spec: &str,
    id: Option<&str>,
    timeout: Duration,
    parallelism: usize,
) -> Result<Arc<dyn ModelBackend>, ServiceError> {
    if spec == "mock" {
        return Ok(Arc::new(MockBackend));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Arc::new(HttpModelBackend::new(spec, id, timeout, parallelism)?));
    }
    Err(ServiceError::Config(format!(
        "model must be `mock` or an http URL, got {spec:?}"
    )))
}

/// Embeds `chunks` in order and collects them into an index.
pub fn build_index(
    chunks: Vec<Chunk>,
    embedder: &dyn Embedder,
    chunking: ChunkingProvenance,
) -> Result<Index, ServiceError> {
    let mut index = Index::new(embedder.descriptor().clone(), chunking);
    for batch in chunks.chunks(EMBED_BATCH) {
        let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
        let vectors = embed_batch::<f32>(embedder, &texts)?;
        for (chunk, v) in batch.iter().zip(vectors) {
            index.add(chunk.clone(), v)?;
        }
    }
    Ok(index)
}

pub fn ingest_documents(
    docs: &[Document],
    cfg: &ChunkingConfig,
    embedder: &dyn Embedder,
) -> Result<Index, ServiceError> {
    let chunks = chunk_corpus(docs, cfg)?;
    build_index(chunks, embedder, ChunkingProvenance::Windows(*cfg))
}

pub fn ingest_questions(questions: &[MCQuestion], embedder: &dyn Embedder) -> Result<Index, ServiceError> {
    build_index(build_mmlu_kb(questions), embedder, ChunkingProvenance::QuestionItems)
}

/// A retrieved chunk with the text and provenance shown to the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub chunk_id: String,
    pub score: f64,
    pub rank: usize,
    pub text: String,
    pub document_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub retrieved: Vec<RetrievedContext>,
}

/// A loaded index together with the course name used in prompts.
#[derive(Debug)]
pub struct Corpus {
    pub id: String,
    pub course: String,
    pub index: Index,
}

impl Corpus {
    pub fn retrieve(
        &self,
        embedder: &dyn Embedder,
        text: &str,
        k: usize,
    ) -> Result<Vec<RetrievedContext>, ServiceError> {
        let qvec = embed_text::<f32>(embedder, text)?;
        let cfg = RetrievalConfig::new(k).map_err(|_| ServiceError::InvalidK)?;
        let hits = self.index.query(&qvec, &cfg)?;
        Ok(hits
            .into_iter()
            .map(|h| {
                let chunk = self
                    .index
                    .chunk(&h.chunk_id)
                    .expect("query returns catalogued ids");
                RetrievedContext {
                    text: chunk.text.clone(),
                    document_id: chunk.document_id.clone(),
                    chunk_id: h.chunk_id,
                    score: h.score,
                    rank: h.rank,
                }
            })
            .collect())
    }
}

/// One grounded answer. Depends only on the index, the backends, `k` and
/// the user text; conversation history is not part of the prompt.
pub fn answer_once(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    backend: &dyn ModelBackend,
    decode: &DecodeParams,
    text: &str,
    k: usize,
) -> Result<Answer, ServiceError> {
    if text.trim().is_empty() {
        return Err(ServiceError::EmptyMessage);
    }
    let retrieved = corpus.retrieve(embedder, text, k)?;
    let blocks = retrieved.iter().map(|r| r.text.clone()).collect();
    let prompt = format_prompt(&PromptBundle::chat(&corpus.course, blocks, text))?;
    let answer = backend.generate(&prompt, decode)?;
    Ok(Answer {
        text: answer,
        retrieved,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub corpus_id: String,
    pub chunk_count: usize,
    pub embedder_id: String,
}

/// Shared state behind every session: read-only corpora and the backends.
pub struct Tutor {
    corpora: BTreeMap<String, Arc<Corpus>>,
    embedder: Arc<dyn Embedder>,
    backend: Arc<dyn ModelBackend>,
    k: usize,
    decode: DecodeParams,
    sessions: SessionStore,
}

impl Tutor {
    pub fn new(
        corpora: Vec<Corpus>,
        embedder: Arc<dyn Embedder>,
        backend: Arc<dyn ModelBackend>,
        k: usize,
        sessions: SessionStore,
    ) -> Result<Self, ServiceError> {
        if corpora.is_empty() {
            return Err(ServiceError::NoCorpora);
        }
        if k == 0 {
            return Err(ServiceError::InvalidK);
        }
        let mut map = BTreeMap::new();
        for c in corpora {
            c.index
                .ensure_embedder(embedder.descriptor())
                .map_err(|source| ServiceError::Index {
                    corpus: c.id.clone(),
                    source,
                })?;
            map.insert(c.id.clone(), Arc::new(c));
        }
        Ok(Self {
            corpora: map,
            embedder,
            backend,
            k,
            decode: DecodeParams::default(),
            sessions,
        })
    }

    /// Builds a tutor from a config, loading every index from disk.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let embedder = open_embedder(&cfg.embedder, cfg.embedder_id.as_deref(), cfg.embedder_dim)?;
        let backend = open_model(
            &cfg.model,
            cfg.model_id.as_deref(),
            Duration::from_secs(cfg.model_timeout_secs),
            cfg.model_parallelism,
        )?;
        let mut corpora = Vec::new();
        for (id, path) in &cfg.corpora {
            corpora.push(load_corpus_index(id, path, cfg.course.as_deref())?);
        }
        let sessions = match &cfg.sessions_dir {
            Some(dir) => SessionStore::persistent(dir)?,
            None => SessionStore::in_memory(),
        };
        let mut tutor = Self::new(corpora, embedder, backend, cfg.k, sessions)?;
        tutor.decode.max_tokens = cfg.max_tokens;
        Ok(tutor)
    }

    pub fn with_decode(mut self, decode: DecodeParams) -> Self {
        self.decode = decode;
        self
    }

    pub fn default_k(&self) -> usize {
        self.k
    }

    pub fn model_id(&self) -> &str {
        self.backend.id()
    }

    pub fn backend_available(&self) -> bool {
        self.backend.is_available()
    }

    pub fn corpus(&self, id: &str) -> Option<&Arc<Corpus>> {
        self.corpora.get(id)
    }

    pub fn corpora(&self) -> Vec<CorpusInfo> {
        self.corpora
            .values()
            .map(|c| CorpusInfo {
                corpus_id: c.id.clone(),
                chunk_count: c.index.len(),
                embedder_id: c.index.descriptor().id.clone(),
            })
            .collect()
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    pub fn create_session(&self, corpus_id: &str) -> Result<String, ServiceError> {
        if !self.corpora.contains_key(corpus_id) {
            return Err(ServiceError::UnknownCorpus(corpus_id.to_string()));
        }
        self.sessions.create(corpus_id)
    }

    /// Answers one user message and appends the user/assistant pair to the
    /// session. On error the session is left unchanged.
    pub fn answer_query(
        &self,
        session_id: &str,
        user_text: &str,
        k: Option<usize>,
    ) -> Result<ChatTurn, ServiceError> {
        let k = k.unwrap_or(self.k);
        if k == 0 {
            return Err(ServiceError::InvalidK);
        }
        let session = self
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))?;
        let mut session = session.lock().unwrap_or_else(|e| e.into_inner());
        let corpus = self
            .corpora
            .get(&session.corpus_id)
            .ok_or_else(|| ServiceError::UnknownCorpus(session.corpus_id.clone()))?;
        let answer = answer_once(
            corpus,
            self.embedder.as_ref(),
            self.backend.as_ref(),
            &self.decode,
            user_text,
            k,
        )?;
        let user = ChatTurn::user(user_text);
        let assistant = ChatTurn::assistant(answer.text, answer.retrieved);
        self.sessions.append(&mut session, user, assistant.clone())?;
        Ok(assistant)
    }
}

pub fn load_corpus_index(id: &str, path: &Path, course: Option<&str>) -> Result<Corpus, ServiceError> {
    let index = Index::load(path).map_err(|source| ServiceError::Index {
        corpus: id.to_string(),
        source,
    })?;
    Ok(Corpus {
        id: id.to_string(),
        course: course.unwrap_or(id).to_string(),
        index,
    })
}
