//! Language-model backends.
//!
//! Multiple-choice accuracy is read off the log-probabilities a backend
//! assigns to the four option labels as the next token after the prompt,
//! not parsed out of generated text.

use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{lowercase_tokens, tokenize};
use crate::mmlu::Label;
use crate::promptkit::{letter_injection, ANSWER_CUE, CONTEXT_HEADER, INJECTION_PREFIX, QUESTION_PREFIX};
use crate::transport::{JsonClient, TransportError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Transport(TransportError),
    #[error("generation timed out (partial output: {partial_output})")]
    Timeout { partial_output: bool },
    #[error("backend fault: {0}")]
    Fault(String),
    #[error("backend {backend} does not support {capability}")]
    Unsupported {
        backend: String,
        capability: &'static str,
    },
    #[error("prompt has no A-D option lines to score")]
    NoOptions,
    #[error("invalid decode params: {0}")]
    InvalidParams(String),
}

impl ModelError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ModelError::Transport(t) => t.is_retryable(),
            ModelError::Timeout { .. } => true,
            _ => false,
        }
    }
}

impl From<TransportError> for ModelError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout { .. } => ModelError::Timeout {
                partial_output: false,
            },
            other => ModelError::Transport(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub scoring: bool,
    pub generation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub max_tokens: usize,
    /// 0 means greedy decoding.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            max_tokens: 256,
            temperature: 0.0,
            seed: 0,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_tokens == 0 {
            return Err(ModelError::InvalidParams("max_tokens must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ModelError::InvalidParams(
                "temperature must be a non-negative number".into(),
            ));
        }
        Ok(())
    }
}

/// Log-probabilities of the four labels and the argmax, ties to the earliest label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionScores {
    pub logprobs: [f64; 4],
    pub predicted: Label,
}

impl OptionScores {
    pub fn new(logprobs: [f64; 4]) -> Result<Self, ModelError> {
        if let Some(i) = logprobs.iter().position(|s| !s.is_finite()) {
            return Err(ModelError::Fault(format!(
                "non-finite score for label {}",
                Label::ALL[i]
            )));
        }
        let mut best = 0;
        for i in 1..4 {
            if logprobs[i] > logprobs[best] {
                best = i;
            }
        }
        Ok(Self {
            logprobs,
            predicted: Label::ALL[best],
        })
    }
}

pub trait ModelBackend: Send + Sync {
    /// Model name plus quantization tag, e.g. `tiny-instruct-q4_k_m`.
    fn id(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    fn score_options(&self, prompt: &str) -> Result<OptionScores, ModelError>;

    fn generate(&self, prompt: &str, params: &DecodeParams) -> Result<String, ModelError>;

    /// Number of requests the backend accepts concurrently.
    fn parallelism(&self) -> usize {
        1
    }

    fn is_available(&self) -> bool {
        true
    }
}

/// Deterministic stand-in for a language model.
///
/// Scoring: a prompt containing `The correct answer is {L}.` predicts `L`
/// (score 0, others -100). Otherwise each option scores `-1/(1+n)` where `n`
/// counts the lowercased context-block tokens that belong to the option's
/// token set. Repeats in the context count, so an option named again on an
/// `Answer:` line outscores the other listed options.
///
/// Generation: `Based on the context: {first sentence of block 1}`, or
/// `I don't have context for that.` when the prompt carries no context.
#[derive(Debug, Clone, Default)]
pub struct MockBackend;

impl MockBackend {
    pub const ID: &'static str = "mock";
    pub const NO_CONTEXT_REPLY: &'static str = "I don't have context for that.";
    pub const CONTEXT_REPLY_PREFIX: &'static str = "Based on the context: ";
}

impl ModelBackend for MockBackend {
    fn id(&self) -> &str {
        Self::ID
    }

    fn parallelism(&self) -> usize {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            scoring: true,
            generation: true,
        }
    }

    fn score_options(&self, prompt: &str) -> Result<OptionScores, ModelError> {
        if let Some(label) = Label::ALL
            .into_iter()
            .find(|l| prompt.contains(&letter_injection(*l)))
        {
            let mut scores = [-100.0; 4];
            scores[label.index()] = 0.0;
            return OptionScores::new(scores);
        }
        let parsed = ParsedPrompt::parse(prompt);
        let options = parsed.options.ok_or(ModelError::NoOptions)?;
        let context: Vec<String> = parsed
            .context_blocks
            .iter()
            .flat_map(|b| lowercase_tokens(b))
            .collect();
        let mut scores = [0.0; 4];
        for (score, option) in scores.iter_mut().zip(options) {
            let vocab: HashSet<String> = lowercase_tokens(option).into_iter().collect();
            let overlap = context.iter().filter(|t| vocab.contains(*t)).count();
            *score = -1.0 / (1.0 + overlap as f64);
        }
        OptionScores::new(scores)
    }

    fn generate(&self, prompt: &str, params: &DecodeParams) -> Result<String, ModelError> {
        params.validate()?;
        let parsed = ParsedPrompt::parse(prompt);
        let reply = match parsed.context_blocks.first() {
            Some(block) => format!("{}{}", Self::CONTEXT_REPLY_PREFIX, first_sentence(block)),
            None => Self::NO_CONTEXT_REPLY.to_string(),
        };
        Ok(truncate_tokens(&reply, params.max_tokens).to_string())
    }
}

/// Sections recovered from a prompt built by [`crate::promptkit::format_prompt`].
#[derive(Debug, Default, PartialEq, Eq)]
pub struct ParsedPrompt<'a> {
    pub context_blocks: Vec<&'a str>,
    pub options: Option<[&'a str; 4]>,
}

impl<'a> ParsedPrompt<'a> {
    pub fn parse(prompt: &'a str) -> Self {
        let body = prompt
            .strip_suffix(&format!("\n\n{ANSWER_CUE}"))
            .unwrap_or(prompt);
        let q_marker = format!("\n\n{QUESTION_PREFIX}");
        let (before_q, question) = match body.rfind(&q_marker) {
            Some(i) => (&body[..i], &body[i + 2..]),
            None if body.starts_with(QUESTION_PREFIX) => ("", body),
            None => (body, ""),
        };
        Self {
            context_blocks: parse_context(before_q),
            options: parse_options(question),
        }
    }
}

fn parse_context(head: &str) -> Vec<&str> {
    let header = format!("\n{CONTEXT_HEADER}\n");
    let Some(start) = head.find(&header) else {
        return Vec::new();
    };
    let mut region = &head[start + header.len()..];
    if let Some(i) = region.rfind(&format!("\n\n{INJECTION_PREFIX}")) {
        if !region[i + 2..].contains("\n\n") {
            region = &region[..i];
        }
    }
    let Some(mut rest) = region.strip_prefix("[1] ") else {
        return Vec::new();
    };
    let mut blocks = Vec::new();
    let mut next = 2;
    loop {
        let marker = format!("\n[{next}] ");
        match rest.find(&marker) {
            Some(i) => {
                blocks.push(&rest[..i]);
                rest = &rest[i + marker.len()..];
                next += 1;
            }
            None => {
                blocks.push(rest);
                return blocks;
            }
        }
    }
}

fn parse_options(question: &str) -> Option<[&str; 4]> {
    let mut out = [""; 4];
    let mut end = question.len();
    for label in Label::ALL.iter().rev() {
        let marker = format!("\n{label}. ");
        let i = question[..end].rfind(&marker)?;
        out[label.index()] = &question[i + marker.len()..end];
        end = i;
    }
    Some(out)
}

/// Text up to and including the first `.`, `!` or `?` that is followed by
/// whitespace or the end of the block.
pub fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            match chars.peek() {
                None => return text,
                Some((_, next)) if next.is_whitespace() => return &text[..i + c.len_utf8()],
                _ => {}
            }
        }
    }
    text
}

/// Prefix of `text` holding at most `max_tokens` reference tokens.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let tokens = tokenize(text);
    if tokens.len() <= max_tokens {
        return text;
    }
    match max_tokens {
        0 => "",
        n => &text[..tokens[n - 1].end],
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    labels: [&'static str; 4],
}

#[derive(Deserialize)]
struct ScoreResponse {
    logprobs: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// Client for a local inference server exposing `POST /score` and
/// `POST /generate`. Requests beyond `parallelism` queue in the client.
#[derive(Debug)]
pub struct HttpModelBackend {
    id: String,
    client: JsonClient,
}

impl HttpModelBackend {
    pub fn new(
        endpoint: &str,
        id: Option<&str>,
        timeout: Duration,
        parallelism: usize,
    ) -> Result<Self, ModelError> {
        let client = JsonClient::new(endpoint, timeout, parallelism)?;
        let id = id
            .map(str::to_string)
            .unwrap_or_else(|| format!("http:{}", client.base()));
        Ok(Self { id, client })
    }
}

impl ModelBackend for HttpModelBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            scoring: true,
            generation: true,
        }
    }

    fn score_options(&self, prompt: &str) -> Result<OptionScores, ModelError> {
        let resp: ScoreResponse = self.client.post(
            "/score",
            &ScoreRequest {
                prompt,
                labels: ["A", "B", "C", "D"],
            },
        )?;
        let mut scores = [0.0; 4];
        for label in Label::ALL {
            scores[label.index()] = *resp.logprobs.get(label.as_str()).ok_or_else(|| {
                ModelError::Fault(format!("no logprob for label {label}"))
            })?;
        }
        OptionScores::new(scores)
    }

    fn generate(&self, prompt: &str, params: &DecodeParams) -> Result<String, ModelError> {
        params.validate()?;
        let resp: GenerateResponse = self.client.post(
            "/generate",
            &GenerateRequest {
                prompt,
                max_tokens: params.max_tokens,
                temperature: params.temperature,
                seed: params.seed,
            },
        )?;
        Ok(resp.text)
    }

    fn parallelism(&self) -> usize {
        self.client.parallelism()
    }

    fn is_available(&self) -> bool {
        self.client.reachable(Duration::from_millis(500))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptkit::{format_prompt, AnswerInjection, PromptBundle};

    fn bundle(context: &[&str], options: [&str; 4], injection: AnswerInjection) -> PromptBundle {
        PromptBundle {
            course: "Biology".into(),
            context_blocks: context.iter().map(|s| s.to_string()).collect(),
            question: "Which organelle?".into(),
            options: Some(options.map(String::from).to_vec()),
            injection,
        }
    }

    const OPTS: [&str; 4] = ["cell wall", "nucleus", "plasma membrane", "ribosome"];

    #[test]
    fn injected_letter_wins() {
        let p = format_prompt(&bundle(&[], OPTS, AnswerInjection::Letter { gold_index: 1 })).unwrap();
        let s = MockBackend.score_options(&p).unwrap();
        assert_eq!(s.predicted, Label::B);
        assert_eq!(s.logprobs, [-100.0, 0.0, -100.0, -100.0]);
    }

    #[test]
    fn overlap_picks_option() {
        // Context tokens: {the, plasma, membrane, surrounds, cells, .}
        // A: {cell, wall} → 0; B: {nucleus} → 0; C: {plasma, membrane} → 2; D: {ribosome} → 0.
        let p = format_prompt(&bundle(
            &["The plasma membrane surrounds cells."],
            OPTS,
            AnswerInjection::None,
        ))
        .unwrap();
        let s = MockBackend.score_options(&p).unwrap();
        assert_eq!(s.predicted, Label::C);
        assert_eq!(s.logprobs, [-1.0, -1.0, -1.0 / 3.0, -1.0]);
    }

    #[test]
    fn ties_go_to_earliest_label() {
        // B and C each share one token with the context.
        let p = format_prompt(&bundle(
            &["alpha beta"],
            ["gamma", "alpha", "beta", "delta"],
            AnswerInjection::None,
        ))
        .unwrap();
        assert_eq!(MockBackend.score_options(&p).unwrap().predicted, Label::B);
        let p = format_prompt(&bundle(&[], OPTS, AnswerInjection::None)).unwrap();
        assert_eq!(MockBackend.score_options(&p).unwrap().predicted, Label::A);
    }

    #[test]
    fn text_injection_is_not_context() {
        let p = format_prompt(&bundle(&[], OPTS, AnswerInjection::Text { gold_index: 3 })).unwrap();
        assert_eq!(MockBackend.score_options(&p).unwrap().predicted, Label::A);
        let p = format_prompt(&bundle(&["ribosome"], OPTS, AnswerInjection::Text { gold_index: 1 })).unwrap();
        let parsed = ParsedPrompt::parse(&p);
        assert_eq!(parsed.context_blocks, ["ribosome"]);
        assert_eq!(MockBackend.score_options(&p).unwrap().predicted, Label::D);
    }

    #[test]
    fn parse_round_trip() {
        let p = format_prompt(&bundle(
            &["one\n\ntwo", "[x] three"],
            ["a\nb", "c", "d", "e"],
            AnswerInjection::Letter { gold_index: 0 },
        ))
        .unwrap();
        let parsed = ParsedPrompt::parse(&p);
        assert_eq!(parsed.context_blocks, ["one\n\ntwo", "[x] three"]);
        assert_eq!(parsed.options, Some(["a\nb", "c", "d", "e"]));
    }

    #[test]
    fn scoring_chat_prompt_fails() {
        let p = format_prompt(&PromptBundle::chat("Biology", vec![], "hi")).unwrap();
        assert!(matches!(MockBackend.score_options(&p), Err(ModelError::NoOptions)));
    }

    #[test]
    fn mock_generation() {
        let params = DecodeParams::default();
        let p = format_prompt(&PromptBundle::chat(
            "Biology",
            vec!["Mitosis is cell division. It has phases.".into()],
            "what is mitosis",
        ))
        .unwrap();
        assert_eq!(
            MockBackend.generate(&p, &params).unwrap(),
            "Based on the context: Mitosis is cell division."
        );
        let p = format_prompt(&PromptBundle::chat("Biology", vec![], "what is mitosis")).unwrap();
        assert_eq!(
            MockBackend.generate(&p, &params).unwrap(),
            "I don't have context for that."
        );
        let short = DecodeParams {
            max_tokens: 4,
            ..params
        };
        assert_eq!(MockBackend.generate(&p, &short).unwrap(), "I don't");
        assert!(MockBackend
            .generate(&p, &DecodeParams { max_tokens: 0, ..params })
            .is_err());
    }

    #[test]
    fn sentences() {
        assert_eq!(first_sentence("A b. C d."), "A b.");
        assert_eq!(first_sentence("Value 3.5 units! More"), "Value 3.5 units!");
        assert_eq!(first_sentence("no terminator"), "no terminator");
        assert_eq!(first_sentence("  ends here?"), "ends here?");
    }

    #[test]
    fn option_scores_contract() {
        let s = OptionScores::new([-2.0, -0.5, -0.5, -3.0]).unwrap();
        assert_eq!(s.predicted, Label::B);
        assert!(OptionScores::new([0.0, f64::NAN, 0.0, 0.0]).is_err());
    }
}
