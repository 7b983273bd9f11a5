//! Chat sessions, held in memory with optional append-only JSONL transcripts.
//!
//! A transcript file `{dir}/{session_id}.jsonl` starts with a header line
//! `{"session_id", "corpus_id", "created_at"}` followed by one line per turn.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{RetrievedContext, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    #[serde(default)]
    pub retrieved: Vec<RetrievedContext>,
}

impl ChatTurn {
    pub fn user(text: &str) -> Self {
        Self {
            role: Role::User,
            text: text.to_string(),
            retrieved: Vec::new(),
        }
    }

    pub fn assistant(text: String, retrieved: Vec<RetrievedContext>) -> Self {
        Self {
            role: Role::Assistant,
            text,
            retrieved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub id: String,
    pub corpus_id: String,
    pub history: Vec<ChatTurn>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Serialize, Deserialize)]
struct TranscriptHeader {
    session_id: String,
    corpus_id: String,
    created_at: u64,
}

pub type SharedSession = Arc<Mutex<ChatSession>>;

#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: Mutex<HashMap<String, SharedSession>>,
    dir: Option<PathBuf>,
}

fn persistence_err(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Persistence(format!("{}: {e}", path.display()))
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a transcript directory and restores every
    /// session found in it.
    pub fn persistent(dir: &Path) -> Result<Self, ServiceError> {
        fs::create_dir_all(dir).map_err(|e| persistence_err(dir, e))?;
        let mut sessions = HashMap::new();
        let entries = fs::read_dir(dir).map_err(|e| persistence_err(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| persistence_err(dir, e))?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                let session = read_transcript(&path)?;
                sessions.insert(session.id.clone(), Arc::new(Mutex::new(session)));
            }
        }
        Ok(Self {
            sessions: Mutex::new(sessions),
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn create(&self, corpus_id: &str) -> Result<String, ServiceError> {
        let session = ChatSession {
            id: uuid::Uuid::new_v4().simple().to_string(),
            corpus_id: corpus_id.to_string(),
            history: Vec::new(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        if let Some(path) = self.transcript_path(&session.id) {
            let header = TranscriptHeader {
                session_id: session.id.clone(),
                corpus_id: session.corpus_id.clone(),
                created_at: session.created_at,
            };
            let line = serde_json::to_string(&header).expect("header serializes") + "\n";
            fs::write(&path, line).map_err(|e| persistence_err(&path, e))?;
        }
        let id = session.id.clone();
        self.lock().insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<SharedSession> {
        self.lock().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends a user/assistant pair, writing the transcript first so a
    /// failed write leaves the session untouched.
    pub fn append(
        &self,
        session: &mut ChatSession,
        user: ChatTurn,
        assistant: ChatTurn,
    ) -> Result<(), ServiceError> {
        if let Some(path) = self.transcript_path(&session.id) {
            let mut buf = serde_json::to_string(&user).expect("turn serializes");
            buf.push('\n');
            buf.push_str(&serde_json::to_string(&assistant).expect("turn serializes"));
            buf.push('\n');
            let mut f = OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(|e| persistence_err(&path, e))?;
            f.write_all(buf.as_bytes())
                .map_err(|e| persistence_err(&path, e))?;
        }
        session.history.push(user);
        session.history.push(assistant);
        Ok(())
    }

    fn transcript_path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, SharedSession>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn read_transcript(path: &Path) -> Result<ChatSession, ServiceError> {
    let f = fs::File::open(path).map_err(|e| persistence_err(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let header: TranscriptHeader = match lines.next() {
        Some(line) => {
            let line = line.map_err(|e| persistence_err(path, e))?;
            serde_json::from_str(&line).map_err(|e| persistence_err(path, e))?
        }
        None => return Err(persistence_err(path, "empty transcript")),
    };
    let mut history = Vec::new();
    for line in lines {
        let line = line.map_err(|e| persistence_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        history.push(serde_json::from_str(&line).map_err(|e| persistence_err(path, e))?);
    }
    Ok(ChatSession {
        id: header.session_id,
        corpus_id: header.corpus_id,
        history,
        created_at: header.created_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_distinct() {
        let store = SessionStore::in_memory();
        let a = store.create("bio").unwrap();
        let b = store.create("bio").unwrap();
        assert_ne!(a, b);
        assert!(store.get(&a).unwrap().lock().unwrap().history.is_empty());
        assert!(store.get("nope").is_none());
    }

    #[test]
    fn transcripts_survive_restart() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let store = SessionStore::persistent(dir.path()).unwrap();
            let id = store.create("bio").unwrap();
            let s = store.get(&id).unwrap();
            let mut s = s.lock().unwrap();
            store
                .append(&mut s, ChatTurn::user("hi"), ChatTurn::assistant("hello".into(), vec![]))
                .unwrap();
            id
        };
        let store = SessionStore::persistent(dir.path()).unwrap();
        let s = store.get(&id).unwrap();
        let s = s.lock().unwrap();
        assert_eq!(s.corpus_id, "bio");
        assert_eq!(s.history.len(), 2);
        assert_eq!(s.history[0].role, Role::User);
        assert_eq!(s.history[1].text, "hello");
    }
}
