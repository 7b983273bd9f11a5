//! `tutor` command line: `ingest`, `query`, `chat`, `eval`, `serve`.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use super::config::CONFIG_ENV;
use super::{answer_once, http, ingest_documents, ingest_questions, load_corpus_index, open_embedder, open_model,
    ServiceConfig, Tutor};
use crate::corpus::{load_corpus, ChunkingConfig};
use crate::eval::{load_dataset, run_eval, summary_table, EvalConfig, EvalMode};
use crate::model::DecodeParams;

#[derive(Debug, Parser)]
#[command(name = "tutor", version, about = "Offline retrieval-augmented tutor")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk and embed a corpus (or an MMLU question set) into an index directory.
    Ingest(IngestArgs),
    /// Print the top-k chunks for a query as `score<TAB>chunk_id<TAB>snippet`.
    Query(QueryArgs),
    /// Interactive tutoring over stdin/stdout.
    Chat(ChatArgs),
    /// Run one multiple-choice evaluation mode and write report.json.
    Eval(EvalArgs),
    /// Run the HTTP API (and UI, when configured).
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct EmbedderArgs {
    /// `reference` or the base URL of a local embedding server.
    #[arg(long, default_value = "reference")]
    pub embedder: String,
    #[arg(long)]
    pub embedder_id: Option<String>,
    #[arg(long, default_value_t = crate::DEFAULT_DIM)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// `mock` or the base URL of a local inference server.
    #[arg(long, default_value = "mock")]
    pub model: String,
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    #[arg(long, default_value_t = 300)]
    pub timeout_secs: u64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of `.txt` files.
    #[arg(long, conflicts_with = "mmlu", required_unless_present = "mmlu")]
    pub corpus: Option<PathBuf>,
    /// MMLU CSV (or directory of CSVs) to turn into a question knowledge base.
    #[arg(long)]
    pub mmlu: Option<PathBuf>,
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = 0)]
    pub overlap: usize,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    pub text: String,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value = "biology")]
    pub course: String,
    #[arg(long, default_value_t = 256)]
    pub max_tokens: usize,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_parser = parse_mode)]
    pub mode: EvalMode,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// MMLU CSV, or a directory whose CSVs are pooled.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
    /// Also write the plain-text summary table here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, default_value = "biology")]
    pub course: String,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Config file (TOML, or JSON by extension). Defaults to `$TUTOR_CONFIG`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    /// `ID=PATH`, repeatable.
    #[arg(long = "corpus", value_parser = parse_corpus)]
    pub corpora: Vec<(String, PathBuf)>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub embedder: Option<String>,
    #[arg(long)]
    pub course: Option<String>,
    #[arg(long)]
    pub ui: Option<PathBuf>,
    #[arg(long)]
    pub sessions: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    EvalMode::parse(s).ok_or_else(|| {
        let names: Vec<_> = EvalMode::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown mode {s:?} (expected one of {})", names.join(", "))
    })
}

fn parse_corpus(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((id, path)) if !id.is_empty() && !path.is_empty() => Ok((id.into(), path.into())),
        _ => Err(format!("expected ID=PATH, got {s:?}")),
    }
}

/// Parses `argv` and runs the subcommand, returning the process exit code:
/// 0 on success, 1 with a one-line diagnostic on failure, 2 on usage errors.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Query(a) => query(a),
        Command::Chat(a) => chat(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    }
}

fn embedder_from(a: &EmbedderArgs) -> Result<Arc<dyn crate::embedding::Embedder>> {
    Ok(open_embedder(&a.embedder, a.embedder_id.as_deref(), a.dim)?)
}

fn model_from(a: &ModelArgs) -> Result<Arc<dyn crate::model::ModelBackend>> {
    Ok(open_model(
        &a.model,
        a.model_id.as_deref(),
        Duration::from_secs(a.timeout_secs),
        a.parallelism,
    )?)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let embedder = embedder_from(&a.embedder)?;
    let (index, source_count, what) = if let Some(dir) = &a.corpus {
        let cfg = ChunkingConfig::new(a.chunk_size, a.overlap)?;
        let docs = load_corpus(dir)?;
        (ingest_documents(&docs, &cfg, embedder.as_ref())?, docs.len(), "documents")
    } else {
        let path = a.mmlu.as_ref().expect("clap enforces --corpus or --mmlu");
        let questions = load_dataset(path)?;
        if questions.is_empty() {
            bail!("empty dataset");
        }
        (ingest_questions(&questions, embedder.as_ref())?, questions.len(), "questions")
    };
    index
        .save(&a.db)
        .with_context(|| format!("writing index to {}", a.db.display()))?;
    println!(
        "indexed {} chunks from {source_count} {what} into {}",
        index.len(),
        a.db.display()
    );
    Ok(())
}

/// Single-line preview: whitespace collapsed, at most `max` characters.
pub fn snippet(text: &str, max: usize) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    match collapsed.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &collapsed[..i]),
        None => collapsed,
    }
}

fn db_name(db: &Path) -> String {
    db.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into())
}

fn query(a: QueryArgs) -> Result<()> {
    let embedder = embedder_from(&a.embedder)?;
    let corpus = load_corpus_index(&db_name(&a.db), &a.db, None)?;
    corpus.index.ensure_embedder(embedder.descriptor())?;
    let hits = corpus.retrieve(embedder.as_ref(), &a.text, a.k)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for h in hits {
        writeln!(out, "{:.6}\t{}\t{}", h.score, h.chunk_id, snippet(&h.text, 80))?;
    }
    Ok(())
}

fn chat(a: ChatArgs) -> Result<()> {
    let embedder = embedder_from(&a.embedder)?;
    let backend = model_from(&a.model)?;
    let corpus = load_corpus_index(&db_name(&a.db), &a.db, Some(&a.course))?;
    corpus.index.ensure_embedder(embedder.descriptor())?;
    let decode = DecodeParams {
        max_tokens: a.max_tokens,
        ..DecodeParams::default()
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "/quit" {
            break;
        }
        writeln!(out, "you> {text}")?;
        match answer_once(&corpus, embedder.as_ref(), backend.as_ref(), &decode, text, a.k) {
            Ok(ans) => {
                writeln!(out, "tutor> {}", ans.text)?;
                for r in &ans.retrieved {
                    writeln!(out, "  [{}] {:.3} {}", r.rank, r.score, r.chunk_id)?;
                }
            }
            Err(e) => writeln!(out, "tutor! {e}")?,
        }
        out.flush()?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let embedder = embedder_from(&a.embedder)?;
    let backend = model_from(&a.model)?;
    let cfg = EvalConfig {
        mode: a.mode,
        k: a.k,
        dataset_path: a.dataset.clone(),
        index_path: a.db.clone(),
        course: a.course.clone(),
    };
    let report = match run_eval(&cfg, embedder.as_ref(), backend.as_ref()) {
        Ok(r) => r,
        Err(crate::eval::EvalError::Aborted {
            failed,
            total,
            partial,
        }) => {
            std::fs::write(&a.report, partial.to_json())
                .with_context(|| format!("writing {}", a.report.display()))?;
            bail!(
                "run aborted: {failed} of {total} questions failed; partial report (valid=false) written to {}",
                a.report.display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    std::fs::write(&a.report, report.to_json())
        .with_context(|| format!("writing {}", a.report.display()))?;
    let table = summary_table(std::slice::from_ref(&report));
    if let Some(p) = &a.summary {
        std::fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?;
    }
    print!("{table}");
    Ok(())
}

pub fn resolve_service_config(a: &ServeArgs) -> Result<ServiceConfig> {
    let file = a
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match file {
        Some(p) => ServiceConfig::from_file(&p)?,
        None => ServiceConfig::default(),
    };
    if let Some(l) = &a.listen {
        cfg.listen = l.clone();
    }
    for (id, path) in &a.corpora {
        cfg.corpora.insert(id.clone(), path.clone());
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(m) = &a.model {
        cfg.model = m.clone();
    }
    if let Some(e) = &a.embedder {
        cfg.embedder = e.clone();
    }
    if let Some(c) = &a.course {
        cfg.course = Some(c.clone());
    }
    if let Some(u) = &a.ui {
        cfg.ui_dir = Some(u.clone());
    }
    if let Some(s) = &a.sessions {
        cfg.sessions_dir = Some(s.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = resolve_service_config(&a)?;
    let tutor = Arc::new(Tutor::from_config(&cfg)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.listen)
            .await
            .with_context(|| format!("binding {}", cfg.listen))?;
        println!("listening on http://{}", listener.local_addr()?);
        let router = http::router(tutor, cfg.ui_dir.clone());
        http::serve(listener, router, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snippets() {
        assert_eq!(snippet("a\n\tb   c", 80), "a b c");
        assert_eq!(snippet("abcdef", 3), "abc…");
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(cli_dispatch(["tutor", "query", "--bogus"]), 2);
        assert_eq!(cli_dispatch(["tutor", "frobnicate"]), 2);
        assert_eq!(cli_dispatch(["tutor", "eval", "--mode", "nope", "--dataset", "d", "--report", "r"]), 2);
    }

    #[test]
    fn runtime_errors_exit_1() {
        assert_eq!(cli_dispatch(["tutor", "query", "--db", "/nonexistent/idx", "x"]), 1);
    }

    #[test]
    fn corpus_flag() {
        assert_eq!(parse_corpus("bio=idx/b").unwrap(), ("bio".into(), "idx/b".into()));
        assert!(parse_corpus("bio").is_err());
    }
}
