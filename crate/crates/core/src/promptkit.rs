//! Prompt construction.
//!
//! Sections are separated by exactly one blank line and emitted in order:
//! tutor instruction with retrieved context, answer injection, question with
//! options, and the trailing `Answer:` cue. Output is byte-stable; golden
//! files under `fixtures/prompts/` lock the layout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mmlu::Label;

pub const CONTEXT_HEADER: &str = "Context:";
pub const QUESTION_PREFIX: &str = "Question: ";
pub const ANSWER_CUE: &str = "Answer:";
pub const INJECTION_PREFIX: &str = "The correct answer is";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("expected 4 options, got {0}")]
    OptionCount(usize),
    #[error("gold index {0} out of range 0..=3")]
    GoldIndex(usize),
    #[error("answer injection requires options")]
    InjectionWithoutOptions,
    #[error("injection phrase requested for kind `none`")]
    NoInjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    None,
    Letter,
    Text,
}

/// Gold answer revealed inside the prompt, either as its label or its text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnswerInjection {
    #[default]
    None,
    Letter {
        gold_index: usize,
    },
    Text {
        gold_index: usize,
    },
}

impl AnswerInjection {
    pub fn new(kind: InjectionKind, gold_index: usize) -> Self {
        match kind {
            InjectionKind::None => AnswerInjection::None,
            InjectionKind::Letter => AnswerInjection::Letter { gold_index },
            InjectionKind::Text => AnswerInjection::Text { gold_index },
        }
    }

    pub fn kind(&self) -> InjectionKind {
        match self {
            AnswerInjection::None => InjectionKind::None,
            AnswerInjection::Letter { .. } => InjectionKind::Letter,
            AnswerInjection::Text { .. } => InjectionKind::Text,
        }
    }

    pub fn gold_index(&self) -> Option<usize> {
        match *self {
            AnswerInjection::None => None,
            AnswerInjection::Letter { gold_index } | AnswerInjection::Text { gold_index } => {
                Some(gold_index)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub course: String,
    pub context_blocks: Vec<String>,
    pub question: String,
    /// Exactly four options A–D, or `None` in chat mode.
    pub options: Option<Vec<String>>,
    pub injection: AnswerInjection,
}

impl PromptBundle {
    pub fn chat(course: &str, context_blocks: Vec<String>, question: &str) -> Self {
        Self {
            course: course.to_string(),
            context_blocks,
            question: question.to_string(),
            options: None,
            injection: AnswerInjection::None,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if let Some(opts) = &self.options {
            if opts.len() != 4 {
                return Err(PromptError::OptionCount(opts.len()));
            }
        }
        if let Some(gold) = self.injection.gold_index() {
            if self.options.is_none() {
                return Err(PromptError::InjectionWithoutOptions);
            }
            if gold > 3 {
                return Err(PromptError::GoldIndex(gold));
            }
        }
        Ok(())
    }
}

pub fn tutor_instruction(course: &str) -> String {
    format!(
        "You are a helpful tutor for {course}. Answer using the provided context when it is relevant."
    )
}

/// `The correct answer is B.` for letters, `The correct answer is: ribosome` for text.
pub fn injection_phrase(
    options: &[String],
    gold_index: usize,
    kind: InjectionKind,
) -> Result<String, PromptError> {
    if options.len() != 4 {
        return Err(PromptError::OptionCount(options.len()));
    }
    let label = Label::from_index(gold_index).ok_or(PromptError::GoldIndex(gold_index))?;
    match kind {
        InjectionKind::None => Err(PromptError::NoInjection),
        InjectionKind::Letter => Ok(letter_injection(label)),
        InjectionKind::Text => Ok(format!("{INJECTION_PREFIX}: {}", options[gold_index])),
    }
}

pub fn letter_injection(label: Label) -> String {
    format!("{INJECTION_PREFIX} {label}.")
}

pub fn format_prompt(bundle: &PromptBundle) -> Result<String, PromptError> {
    bundle.validate()?;
    let mut sections: Vec<String> = Vec::with_capacity(4);

    if !bundle.context_blocks.is_empty() {
        let mut s = tutor_instruction(&bundle.course);
        s.push('\n');
        s.push_str(CONTEXT_HEADER);
        for (i, block) in bundle.context_blocks.iter().enumerate() {
            s.push_str(&format!("\n[{}] {block}", i + 1));
        }
        sections.push(s);
    }

    if let (Some(gold), Some(opts)) = (bundle.injection.gold_index(), &bundle.options) {
        sections.push(injection_phrase(opts, gold, bundle.injection.kind())?);
    }

    let mut q = format!("{QUESTION_PREFIX}{}", bundle.question);
    if let Some(opts) = &bundle.options {
        for (label, opt) in Label::ALL.iter().zip(opts) {
            q.push_str(&format!("\n{label}. {opt}"));
        }
    }
    sections.push(q);
    sections.push(ANSWER_CUE.to_string());

    Ok(sections.join("\n\n"))
}
