//! Multiple-choice accuracy experiments.
//!
//! Each [`EvalMode`] is one cell of the experiment matrix: whether retrieved
//! context is prepended, and whether the gold answer is injected into the
//! prompt as a letter or as option text. `mmlu_kb` retrieves from a knowledge
//! base built out of the evaluation items themselves.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::build_mmlu_kb;
use crate::embedding::{embed_batch, embed_text, Embedder, EmbeddingError};
use crate::mmlu::{load_mmlu_csv, Label, MCQuestion, MmluError};
use crate::model::{ModelBackend, ModelError};
use crate::promptkit::{format_prompt, AnswerInjection, InjectionKind, PromptBundle, PromptError};
use crate::scalar::Scalar;
use crate::vectorstore::{ChunkingProvenance, RetrievalConfig, StoreError, VectorIndex};

pub use crate::mmlu::{load_mmlu_csv as load_dataset_file, MCQuestion as Question};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Baseline,
    Rag,
    Letter,
    RagLetter,
    Text,
    RagText,
    MmluKb,
}

impl EvalMode {
    pub const ALL: [EvalMode; 7] = [
        EvalMode::Baseline,
        EvalMode::Rag,
        EvalMode::Letter,
        EvalMode::RagLetter,
        EvalMode::Text,
        EvalMode::RagText,
        EvalMode::MmluKb,
    ];

    pub fn uses_retrieval(self) -> bool {
        matches!(
            self,
            EvalMode::Rag | EvalMode::RagLetter | EvalMode::RagText | EvalMode::MmluKb
        )
    }

    pub fn injection(self) -> InjectionKind {
        match self {
            EvalMode::Letter | EvalMode::RagLetter => InjectionKind::Letter,
            EvalMode::Text | EvalMode::RagText => InjectionKind::Text,
            _ => InjectionKind::None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Baseline => "baseline",
            EvalMode::Rag => "rag",
            EvalMode::Letter => "letter",
            EvalMode::RagLetter => "rag_letter",
            EvalMode::Text => "text",
            EvalMode::RagText => "rag_text",
            EvalMode::MmluKb => "mmlu_kb",
        }
    }

    pub fn parse(s: &str) -> Option<EvalMode> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub k: usize,
    /// A single MMLU CSV or a directory whose `.csv` files are pooled.
    pub dataset_path: PathBuf,
    /// Required for `rag`, `rag_letter`, `rag_text`. Optional for `mmlu_kb`,
    /// which otherwise builds its knowledge base from the dataset in memory.
    pub index_path: Option<PathBuf>,
    pub course: String,
}

impl EvalConfig {
    pub fn new(mode: EvalMode, dataset_path: impl Into<PathBuf>) -> Self {
        Self {
            mode,
            k: 2,
            dataset_path: dataset_path.into(),
            index_path: None,
            course: "biology".into(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k == 0 {
            return Err(EvalError::Store(StoreError::InvalidK));
        }
        if !self.dataset_path.exists() {
            return Err(EvalError::MissingPath(self.dataset_path.clone()));
        }
        match (&self.index_path, self.mode) {
            (None, m) if m.uses_retrieval() && m != EvalMode::MmluKb => {
                Err(EvalError::MissingIndex(m))
            }
            (Some(p), _) if !p.exists() => Err(EvalError::MissingPath(p.clone())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("path {} does not exist", .0.display())]
    MissingPath(PathBuf),
    #[error("mode {0} requires an index")]
    MissingIndex(EvalMode),
    #[error("mode mmlu_kb requires a question knowledge base, but the index holds token-window chunks")]
    WrongIndexKind,
    #[error(transparent)]
    Dataset(#[from] MmluError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("question {id}: {message}")]
    Question { id: String, message: String },
    #[error("run aborted: {failed} of {total} questions failed")]
    Aborted {
        failed: usize,
        total: usize,
        partial: Box<EvalReport>,
    },
    #[error("reports are not comparable: {0}")]
    Mismatch(String),
    #[error("cannot read dataset directory {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn question_err(id: &str, e: impl std::fmt::Display) -> EvalError {
    EvalError::Question {
        id: id.to_string(),
        message: e.to_string(),
    }
}

/// An index paired with the embedder that built it.
pub struct Retriever<'a, S> {
    pub index: &'a VectorIndex<S>,
    pub embedder: &'a dyn Embedder,
}

impl<S: Scalar> Retriever<'_, S> {
    pub fn retrieve(&self, text: &str, k: usize) -> Result<Vec<RetrievedScore>, EvalError> {
        let qvec = embed_text::<S>(self.embedder, text)?;
        let hits = self.index.query(&qvec, &RetrievalConfig::new(k)?)?;
        Ok(hits
            .into_iter()
            .map(|h| RetrievedScore {
                chunk_id: h.chunk_id,
                score: h.score,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedScore {
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub subject: String,
    pub predicted: Label,
    pub gold: Label,
    pub correct: bool,
    pub retrieved: Vec<RetrievedScore>,
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub mode: EvalMode,
    pub k: usize,
    pub dataset: String,
    pub index: Option<String>,
    pub course: String,
    pub model_id: String,
    pub embedder_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Result of one run. `n` counts scored questions; questions that errored
/// within the failure budget are listed in `failures` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub valid: bool,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_subject: BTreeMap<String, SubjectScore>,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<EvalFailure>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Prompt inputs for one question under `mode`.
pub fn bundle_for(
    q: &MCQuestion,
    mode: EvalMode,
    course: &str,
    context_blocks: Vec<String>,
) -> PromptBundle {
    PromptBundle {
        course: course.to_string(),
        context_blocks,
        question: q.question.clone(),
        options: Some(q.options.to_vec()),
        injection: AnswerInjection::new(mode.injection(), q.answer_index),
    }
}

/// Loads one CSV, or every `.csv` in a directory sorted by file name.
pub fn load_dataset(path: &Path) -> Result<Vec<MCQuestion>, EvalError> {
    if !path.is_dir() {
        return Ok(load_mmlu_csv(path)?);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(load_mmlu_csv(&f)?);
    }
    Ok(out)
}

/// Builds the in-memory question knowledge base for `mmlu_kb`.
pub fn build_kb_index<S: Scalar>(
    questions: &[MCQuestion],
    embedder: &dyn Embedder,
) -> Result<VectorIndex<S>, EvalError> {
    let chunks = build_mmlu_kb(questions);
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = embed_batch::<S>(embedder, &texts)?;
    let mut index = VectorIndex::new(embedder.descriptor().clone(), ChunkingProvenance::QuestionItems);
    for (chunk, v) in chunks.into_iter().zip(vectors) {
        index.add(chunk, v)?;
    }
    Ok(index)
}

/// Scores one question. Context blocks come from retrieval on the question
/// text alone.
pub fn predict_one<S: Scalar>(
    q: &MCQuestion,
    cfg: &EvalConfig,
    retriever: Option<&Retriever<'_, S>>,
    backend: &dyn ModelBackend,
) -> Result<EvalRecord, EvalError> {
    let (retrieved, blocks) = if cfg.mode.uses_retrieval() {
        let r = retriever.ok_or(EvalError::MissingIndex(cfg.mode))?;
        let hits = r
            .retrieve(&q.question, cfg.k)
            .map_err(|e| question_err(&q.id, e))?;
        let blocks = hits
            .iter()
            .map(|h| {
                r.index
                    .chunk(&h.chunk_id)
                    .map(|c| c.text.clone())
                    .expect("query returns catalogued ids")
            })
            .collect();
        (hits, blocks)
    } else {
        (Vec::new(), Vec::new())
    };
    let prompt = format_prompt(&bundle_for(q, cfg.mode, &cfg.course, blocks))
        .map_err(|e: PromptError| question_err(&q.id, e))?;
    let scores = backend
        .score_options(&prompt)
        .map_err(|e: ModelError| question_err(&q.id, e))?;
    let gold = q.gold();
    Ok(EvalRecord {
        id: q.id.clone(),
        subject: q.subject.clone(),
        predicted: scores.predicted,
        gold,
        correct: scores.predicted == gold,
        retrieved,
        prompt_hash: prompt_hash(&prompt),
    })
}

/// Runs `predict_one` over `questions` on a pool sized by the backend's
/// parallelism limit and aggregates the result.
pub fn evaluate<S: Scalar>(
    cfg: &EvalConfig,
    questions: &[MCQuestion],
    retriever: Option<&Retriever<'_, S>>,
    backend: &dyn ModelBackend,
) -> Result<EvalReport, EvalError> {
    if questions.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if cfg.mode.uses_retrieval() && retriever.is_none() {
        return Err(EvalError::MissingIndex(cfg.mode));
    }
    if let Some(r) = retriever {
        r.index.ensure_embedder(r.embedder.descriptor())?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(backend.parallelism().max(1))
        .build()
        .expect("thread pool");
    let outcomes: Vec<Result<EvalRecord, EvalError>> = pool.install(|| {
        questions
            .par_iter()
            .map(|q| predict_one(q, cfg, retriever, backend))
            .collect()
    });

    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (q, outcome) in questions.iter().zip(outcomes) {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => failures.push(EvalFailure {
                id: q.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    failures.sort_by(|a, b| a.id.cmp(&b.id));

    let report_cfg = ReportConfig {
        mode: cfg.mode,
        k: cfg.k,
        dataset: cfg.dataset_path.display().to_string(),
        index: cfg.index_path.as_ref().map(|p| p.display().to_string()),
        course: cfg.course.clone(),
        model_id: backend.id().to_string(),
        embedder_id: retriever.map(|r| r.embedder.descriptor().id.clone()),
    };
    let mut report = aggregate(report_cfg, records, failures);
    // At most 1% of questions may fail.
    let failed = report.failures.len();
    if failed * 100 > questions.len() || report.n == 0 {
        report.valid = false;
        return Err(EvalError::Aborted {
            failed,
            total: questions.len(),
            partial: Box::new(report),
        });
    }
    Ok(report)
}

fn aggregate(
    config: ReportConfig,
    records: Vec<EvalRecord>,
    failures: Vec<EvalFailure>,
) -> EvalReport {
    let mut per_subject: BTreeMap<String, SubjectScore> = BTreeMap::new();
    for r in &records {
        let s = per_subject.entry(r.subject.clone()).or_insert(SubjectScore {
            n: 0,
            correct: 0,
            accuracy: 0.0,
        });
        s.n += 1;
        s.correct += usize::from(r.correct);
    }
    for s in per_subject.values_mut() {
        s.accuracy = s.correct as f64 / s.n as f64;
    }
    let n = records.len();
    let correct = records.iter().filter(|r| r.correct).count();
    EvalReport {
        config,
        valid: true,
        n,
        correct,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        per_subject,
        records,
        failures,
    }
}

/// Loads dataset and index named by `cfg` and runs the evaluation.
pub fn run_eval(
    cfg: &EvalConfig,
    embedder: &dyn Embedder,
    backend: &dyn ModelBackend,
) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let questions = load_dataset(&cfg.dataset_path)?;
    if questions.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let index: Option<VectorIndex<f32>> = match (cfg.mode, &cfg.index_path) {
        (EvalMode::MmluKb, None) => Some(build_kb_index(&questions, embedder)?),
        (m, Some(p)) if m.uses_retrieval() => {
            let index = VectorIndex::<f32>::load(p)?;
            if m == EvalMode::MmluKb && index.chunking() != ChunkingProvenance::QuestionItems {
                return Err(EvalError::WrongIndexKind);
            }
            Some(index)
        }
        _ => None,
    };
    let retriever = index.as_ref().map(|index| Retriever { index, embedder });
    evaluate(cfg, &questions, retriever.as_ref(), backend)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// `accuracy_b - accuracy_a`.
    pub delta: f64,
    pub correct_to_wrong: Vec<String>,
    pub wrong_to_correct: Vec<String>,
}

/// Per-question differences between two runs over the same questions.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<ReportDelta, EvalError> {
    if a.n != b.n {
        return Err(EvalError::Mismatch(format!("n differs ({} vs {})", a.n, b.n)));
    }
    let b_by_id: BTreeMap<&str, &EvalRecord> =
        b.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let a_ids: BTreeSet<&str> = a.records.iter().map(|r| r.id.as_str()).collect();
    if a_ids.len() != b_by_id.len() || a_ids.iter().any(|id| !b_by_id.contains_key(id)) {
        return Err(EvalError::Mismatch("question ids differ".into()));
    }
    let mut correct_to_wrong = Vec::new();
    let mut wrong_to_correct = Vec::new();
    for ra in &a.records {
        let rb = b_by_id[ra.id.as_str()];
        match (ra.correct, rb.correct) {
            (true, false) => correct_to_wrong.push(ra.id.clone()),
            (false, true) => wrong_to_correct.push(ra.id.clone()),
            _ => {}
        }
    }
    Ok(ReportDelta {
        accuracy_a: a.accuracy,
        accuracy_b: b.accuracy,
        delta: b.accuracy - a.accuracy,
        correct_to_wrong,
        wrong_to_correct,
    })
}

/// Plain-text table with one pooled row per report plus one row per subject.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:<10} {:>3}  {:<24} {:>6}  {:>9}",
        "model", "mode", "k", "subject", "n", "accuracy%"
    );
    for r in reports {
        let k = if r.config.mode.uses_retrieval() {
            r.config.k.to_string()
        } else {
            "-".into()
        };
        let mut row = |subject: &str, n: usize, acc: f64| {
            let _ = writeln!(
                out,
                "{:<28} {:<10} {:>3}  {:<24} {:>6}  {:>9.2}",
                r.config.model_id,
                r.config.mode.as_str(),
                k,
                subject,
                n,
                acc * 100.0
            );
        };
        row("(pooled)", r.n, r.accuracy);
        for (subject, s) in &r.per_subject {
            row(subject, s.n, s.accuracy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ReferenceEmbedder;
    use crate::model::MockBackend;

    fn q(id: &str, question: &str, options: [&str; 4], answer: usize) -> MCQuestion {
        MCQuestion {
            id: id.into(),
            subject: "college_biology".into(),
            question: question.into(),
            options: options.map(String::from),
            answer_index: answer,
        }
    }

    fn cfg(mode: EvalMode) -> EvalConfig {
        EvalConfig::new(mode, "unused.csv")
    }

    #[test]
    fn modes_round_trip_names() {
        for m in EvalMode::ALL {
            assert_eq!(EvalMode::parse(m.as_str()), Some(m));
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let err = evaluate::<f32>(&cfg(EvalMode::Baseline), &[], None, &MockBackend).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn letter_mode_is_perfect_with_mock() {
        let qs: Vec<_> = (0..8)
            .map(|i| q(&format!("f:{i}"), "Pick one", ["a", "b", "c", "d"], i % 4))
            .collect();
        let report = evaluate::<f32>(&cfg(EvalMode::Letter), &qs, None, &MockBackend).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert!(report.records.iter().all(|r| r.retrieved.is_empty()));
    }

    #[test]
    fn rag_mode_without_index_fails() {
        let qs = [q("f:0", "x", ["a", "b", "c", "d"], 0)];
        assert!(matches!(
            evaluate::<f32>(&cfg(EvalMode::Rag), &qs, None, &MockBackend),
            Err(EvalError::MissingIndex(EvalMode::Rag))
        ));
    }

    #[test]
    fn mmlu_kb_retrieves_k_chunks() {
        let qs = [
            q("f:0", "What builds proteins", ["ribosome", "lipid", "sugar", "salt"], 0),
            q("f:1", "What stores genes", ["water", "dna", "ion", "fat"], 1),
            q("f:2", "What makes energy", ["wax", "bone", "mitochondria", "hair"], 2),
        ];
        let embedder = ReferenceEmbedder::default();
        let index = build_kb_index::<f32>(&qs, &embedder).unwrap();
        let retriever = Retriever {
            index: &index,
            embedder: &embedder,
        };
        let mut c = cfg(EvalMode::MmluKb);
        c.k = 2;
        let report = evaluate(&c, &qs, Some(&retriever), &MockBackend).unwrap();
        assert!(report.records.iter().all(|r| r.retrieved.len() == 2));
        c.k = 1;
        let report = evaluate(&c, &qs, Some(&retriever), &MockBackend).unwrap();
        for r in &report.records {
            assert_eq!(r.retrieved[0].chunk_id, r.id);
        }
        assert_eq!(report.accuracy, 1.0);
    }

    struct Flaky;
    impl ModelBackend for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn capabilities(&self) -> crate::model::Capabilities {
            MockBackend.capabilities()
        }
        fn score_options(&self, prompt: &str) -> Result<crate::model::OptionScores, ModelError> {
            if prompt.contains("fail") {
                Err(ModelError::Fault("boom".into()))
            } else {
                MockBackend.score_options(prompt)
            }
        }
        fn generate(&self, _: &str, _: &crate::model::DecodeParams) -> Result<String, ModelError> {
            unreachable!()
        }
    }

    #[test]
    fn failure_budget() {
        let mut qs: Vec<_> = (0..200)
            .map(|i| q(&format!("f:{i:03}"), "ok", ["a", "b", "c", "d"], 0))
            .collect();
        qs[5].question = "fail".into();
        qs[6].question = "fail".into();
        let report = evaluate::<f32>(&cfg(EvalMode::Baseline), &qs, None, &Flaky).unwrap();
        assert!(report.valid);
        assert_eq!(report.n, 198);
        assert_eq!(report.failures.len(), 2);
        qs[7].question = "fail".into();
        match evaluate::<f32>(&cfg(EvalMode::Baseline), &qs, None, &Flaky) {
            Err(EvalError::Aborted { failed, partial, .. }) => {
                assert_eq!(failed, 3);
                assert!(!partial.valid);
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn compare_identical_and_one_flip() {
        let qs: Vec<_> = (0..10)
            .map(|i| q(&format!("f:{i}"), "x", ["a", "b", "c", "d"], 0))
            .collect();
        let a = evaluate::<f32>(&cfg(EvalMode::Baseline), &qs, None, &MockBackend).unwrap();
        let d = compare_reports(&a, &a).unwrap();
        assert_eq!(d.delta, 0.0);
        assert!(d.correct_to_wrong.is_empty() && d.wrong_to_correct.is_empty());

        let mut b = a.clone();
        b.records[3].correct = false;
        b.correct -= 1;
        b.accuracy = b.correct as f64 / b.n as f64;
        let d = compare_reports(&a, &b).unwrap();
        assert!((d.delta.abs() - 0.1).abs() < 1e-12);
        assert_eq!(d.correct_to_wrong, [b.records[3].id.clone()]);

        let mut c = a.clone();
        c.records[0].id = "other".into();
        assert!(compare_reports(&a, &c).is_err());
    }

    #[test]
    fn summary_lists_subjects() {
        let qs = [q("f:0", "x", ["a", "b", "c", "d"], 0)];
        let r = evaluate::<f32>(&cfg(EvalMode::Baseline), &qs, None, &MockBackend).unwrap();
        let table = summary_table(&[r]);
        assert!(table.contains("(pooled)"));
        assert!(table.contains("college_biology"));
        assert!(table.contains("100.00"));
    }
}
