mod common;

use std::collections::HashSet;

use common::{fixtures, independent_tokens, synthetic_questions};
use tutor_core::corpus::{load_corpus, ChunkingConfig};
use tutor_core::eval::{
    build_kb_index, bundle_for, compare_reports, evaluate, load_dataset, prompt_hash, run_eval,
    EvalConfig, EvalMode, EvalReport, Retriever,
};
use tutor_core::mmlu::Label;
use tutor_core::model::MockBackend;
use tutor_core::promptkit::format_prompt;
use tutor_core::service::ingest_documents;
use tutor_core::{Index, MCQuestion, ReferenceEmbedder};

fn rag3_index() -> Index {
    let docs = load_corpus(&fixtures().join("rag3/corpus")).unwrap();
    ingest_documents(&docs, &ChunkingConfig::default(), &ReferenceEmbedder::default()).unwrap()
}

fn rag3_questions() -> Vec<MCQuestion> {
    load_dataset(&fixtures().join("rag3/college_biology_test.csv")).unwrap()
}

fn cfg(mode: EvalMode, k: usize) -> EvalConfig {
    let mut c = EvalConfig::new(mode, fixtures().join("rag3/college_biology_test.csv"));
    c.k = k;
    c
}

fn run(mode: EvalMode, k: usize, qs: &[MCQuestion], index: Option<&Index>) -> EvalReport {
    let embedder = ReferenceEmbedder::default();
    let retriever = index.map(|index| Retriever {
        index,
        embedder: &embedder,
    });
    evaluate(&cfg(mode, k), qs, retriever.as_ref(), &MockBackend).unwrap()
}

#[test]
fn three_question_rag_fixture() {
    // Retrieval and scores from an independent Python reimplementation of the
    // reference embedder (xxhash package) and a full scan.
    let expected_hits = [
        ("college_biology_test.csv:0", [("cells.txt#0", 0.316_227_756_818_381_8), ("energy.txt#0", 0.0)]),
        ("college_biology_test.csv:1", [("energy.txt#0", 0.338_061_692_298_968_1), ("cells.txt#0", 0.0)]),
        ("college_biology_test.csv:2", [("energy.txt#0", 0.154_303_353_046_731_93), ("cells.txt#0", 0.0)]),
    ];
    let index = rag3_index();
    let report = run(EvalMode::Rag, 2, &rag3_questions(), Some(&index));
    for (rec, (id, hits)) in report.records.iter().zip(expected_hits) {
        assert_eq!(rec.id, id);
        assert_eq!(rec.retrieved.len(), 2);
        for (got, (cid, score)) in rec.retrieved.iter().zip(hits) {
            assert_eq!(got.chunk_id, cid);
            assert!((got.score - score).abs() < 1e-6, "{} {}", got.score, score);
        }
    }
    // Q0: "proteins" appears in cells.txt → B (gold). Q1: "ATP" in energy.txt → C
    // (gold). Q2: no option token in context → tie → A, gold B.
    let predicted: Vec<Label> = report.records.iter().map(|r| r.predicted).collect();
    assert_eq!(predicted, [Label::B, Label::C, Label::A]);
    assert_eq!(report.correct, 2);
    assert!((report.accuracy - 2.0 / 3.0).abs() < 1e-9);
}

#[test]
fn baseline_vs_rag_flips() {
    let index = rag3_index();
    let qs = rag3_questions();
    let baseline = run(EvalMode::Baseline, 2, &qs, None);
    // No context: every option scores -1, argmax tie → A; no gold is A.
    assert_eq!(baseline.correct, 0);
    let rag = run(EvalMode::Rag, 2, &qs, Some(&index));
    let d = compare_reports(&baseline, &rag).unwrap();
    assert!(d.correct_to_wrong.is_empty());
    assert_eq!(
        d.wrong_to_correct,
        ["college_biology_test.csv:0", "college_biology_test.csv:1"]
    );
    assert!((d.delta - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn mmlu_kb_hand_checked_fixture() {
    let qs = load_dataset(&fixtures().join("mmlu_kb20/college_biology_test.csv")).unwrap();
    assert_eq!(qs.len(), 20);
    let embedder = ReferenceEmbedder::default();
    let index: Index = build_kb_index(&qs, &embedder).unwrap();
    let report = run(EvalMode::MmluKb, 1, &qs, Some(&index));
    let by_id: std::collections::HashMap<_, _> = qs.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut self_hits = 0;
    for rec in &report.records {
        let q = by_id[rec.id.as_str()];
        if rec.retrieved[0].chunk_id != rec.id {
            continue;
        }
        self_hits += 1;
        // Count context tokens falling in each option's vocabulary.
        let chunk = index.chunk(&rec.id).unwrap();
        let ctx: Vec<String> = independent_tokens(&chunk.text)
            .into_iter()
            .map(|t| t.to_lowercase())
            .collect();
        let counts: Vec<usize> = q
            .options
            .iter()
            .map(|o| {
                let vocab: HashSet<String> =
                    independent_tokens(o).into_iter().map(|t| t.to_lowercase()).collect();
                ctx.iter().filter(|t| vocab.contains(*t)).count()
            })
            .collect();
        let mut expected = vec![1, 1, 1, 1];
        expected[q.answer_index] = 2;
        assert_eq!(counts, expected, "{}", rec.id);
        assert_eq!(rec.predicted, q.gold(), "{}", rec.id);
    }
    assert_eq!(self_hits, 20);
    assert_eq!(report.accuracy, 1.0);
}

#[test]
fn injection_modes_with_mock() {
    let index = rag3_index();
    let qs = synthetic_questions(60, 3, &[]);
    for mode in [EvalMode::Letter, EvalMode::RagLetter] {
        let r = run(mode, 2, &qs, Some(&index));
        assert_eq!(r.accuracy, 1.0, "{mode}");
    }
    // Text injection is invisible to the mock: no context, every pick is A.
    let r = run(EvalMode::Text, 2, &qs, None);
    assert!(r.records.iter().all(|x| x.predicted == Label::A));
}

#[test]
fn mode_soundness_and_prompt_audit() {
    let index = rag3_index();
    let qs = rag3_questions();
    let by_id: std::collections::HashMap<_, _> = qs.iter().map(|q| (q.id.clone(), q)).collect();
    for mode in EvalMode::ALL {
        let kb;
        let idx = if mode == EvalMode::MmluKb {
            kb = build_kb_index::<f32>(&qs, &ReferenceEmbedder::default()).unwrap();
            &kb
        } else {
            &index
        };
        for k in [1, 2, 5] {
            let r = run(mode, k, &qs, Some(idx));
            assert_eq!(r.records.len(), r.n);
            assert_eq!(r.correct, r.records.iter().filter(|x| x.correct).count());
            assert_eq!(r.accuracy, r.correct as f64 / r.n as f64);
            for rec in &r.records {
                let want = if mode.uses_retrieval() { k.min(idx.len()) } else { 0 };
                assert_eq!(rec.retrieved.len(), want, "{mode} k={k}");
                let blocks = rec
                    .retrieved
                    .iter()
                    .map(|h| idx.chunk(&h.chunk_id).unwrap().text.clone())
                    .collect();
                let prompt = format_prompt(&bundle_for(by_id[&rec.id], mode, "biology", blocks)).unwrap();
                assert_eq!(prompt_hash(&prompt), rec.prompt_hash);
            }
        }
    }
}

#[test]
fn reports_are_deterministic() {
    let index = rag3_index();
    let qs = synthetic_questions(40, 9, &[]);
    let a = run(EvalMode::Rag, 2, &qs, Some(&index)).to_json();
    let b = run(EvalMode::Rag, 2, &qs, Some(&index)).to_json();
    assert_eq!(a, b);
    let parsed = EvalReport::from_json(&a).unwrap();
    assert_eq!(parsed.to_json(), a);
}

#[test]
fn run_eval_from_paths() {
    let dir = tempfile::tempdir().unwrap();
    let index = rag3_index();
    index.save(dir.path()).unwrap();
    let mut c = cfg(EvalMode::Rag, 2);
    c.index_path = Some(dir.path().to_path_buf());
    let r = run_eval(&c, &ReferenceEmbedder::default(), &MockBackend).unwrap();
    assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-9);
    assert_eq!(r.per_subject["college_biology"].n, 3);

    // A textbook index is not a question knowledge base.
    c.mode = EvalMode::MmluKb;
    assert!(run_eval(&c, &ReferenceEmbedder::default(), &MockBackend).is_err());
    c.index_path = None;
    let r = run_eval(&c, &ReferenceEmbedder::default(), &MockBackend).unwrap();
    assert_eq!(r.n, 3);

    // Index built with a different embedder is refused.
    c.mode = EvalMode::Rag;
    c.index_path = Some(dir.path().to_path_buf());
    assert!(run_eval(&c, &ReferenceEmbedder::new(128), &MockBackend).is_err());
}

#[test]
fn empty_dataset_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty_test.csv");
    std::fs::write(&p, "").unwrap();
    let err = run_eval(&EvalConfig::new(EvalMode::Baseline, &p), &ReferenceEmbedder::default(), &MockBackend)
        .unwrap_err();
    assert_eq!(err.to_string(), "empty dataset");
}
