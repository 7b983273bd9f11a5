//! MMLU-format multiple-choice data.
//!
//! The standard distribution ships one headerless CSV per subject and split,
//! e.g. `college_biology_test.csv`, with six columns: question, four options,
//! and the answer letter.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the four option labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
    C,
    D,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::A, Label::B, Label::C, Label::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn from_letter(s: &str) -> Option<Label> {
        match s {
            "A" => Some(Label::A),
            "B" => Some(Label::B),
            "C" => Some(Label::C),
            "D" => Some(Label::D),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
            Label::C => "C",
            Label::D => "D",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A four-option multiple-choice item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCQuestion {
    pub id: String,
    pub subject: String,
    pub question: String,
    pub options: [String; 4],
    pub answer_index: usize,
}

impl MCQuestion {
    pub fn gold(&self) -> Label {
        Label::from_index(self.answer_index).expect("answer_index validated at construction")
    }

    pub fn gold_text(&self) -> &str {
        &self.options[self.answer_index]
    }
}

#[derive(Debug, Error)]
pub enum MmluError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },
}

/// Subject name from an MMLU file name: `college_biology_test.csv` → `college_biology`.
pub fn subject_from_path(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    for suffix in ["_test", "_val", "_dev", "_train"] {
        if let Some(s) = stem.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    stem
}

/// Parses a headerless six-column MMLU CSV.
///
/// Question ids are `"{filename}:{row}"` with 0-based rows; error messages
/// use the same row numbering.
pub fn load_mmlu_csv(path: &Path) -> Result<Vec<MCQuestion>, MmluError> {
    let bytes = std::fs::read(path).map_err(|source| MmluError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_mmlu_csv(path, &bytes)
}

pub fn parse_mmlu_csv(path: &Path, bytes: &[u8]) -> Result<Vec<MCQuestion>, MmluError> {
    let file_name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let subject = subject_from_path(path);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);

    let row_err = |row: usize, message: String| MmluError::Row {
        path: path.to_path_buf(),
        row,
        message,
    };

    let mut questions = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| row_err(row, e.to_string()))?;
        if record.len() != 6 {
            return Err(row_err(row, format!("expected 6 columns, found {}", record.len())));
        }
        let letter = record[5].trim();
        let gold = Label::from_letter(letter)
            .ok_or_else(|| row_err(row, format!("invalid answer letter {letter:?}")))?;
        questions.push(MCQuestion {
            id: format!("{file_name}:{row}"),
            subject: subject.clone(),
            question: record[0].to_string(),
            options: [
                record[1].to_string(),
                record[2].to_string(),
                record[3].to_string(),
                record[4].to_string(),
            ],
            answer_index: gold.index(),
        });
    }
    Ok(questions)
}
