//! Fixture-driven chat provider.
//!
//! Replies are looked up by request digest first. Requests with no keyed
//! reply consume the next ordinal reply queued under their tag, then the next
//! untagged ordinal reply. Anything else is an error.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest};
use crate::records::{self, RecordError};

/// One line of a fixture file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplySource {
    Keyed,
    Ordinal { tag: Option<String> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallRecord {
    pub digest: String,
    pub tag: Option<String>,
    pub source: ReplySource,
}

#[derive(Default)]
struct Queues {
    tagged: HashMap<String, VecDeque<String>>,
    untagged: VecDeque<String>,
}

#[derive(Default)]
pub struct ScriptedBackend {
    keyed: HashMap<String, String>,
    queues: Mutex<Queues>,
    ledger: Mutex<Vec<CallRecord>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut backend = Self::new();
        for e in entries {
            match (e.key, e.tag) {
                (Some(key), _) => backend.insert_keyed(key, e.reply),
                (None, tag) => backend.push_ordinal(tag.as_deref(), e.reply),
            }
        }
        backend
    }

    pub fn from_file(path: &Path) -> Result<Self, RecordError> {
        Ok(Self::from_entries(records::read_records::<ScriptEntry>(path)?))
    }

    pub fn insert_keyed(&mut self, digest: impl Into<String>, reply: impl Into<String>) {
        self.keyed.insert(digest.into(), reply.into());
    }

    pub fn push_ordinal(&self, tag: Option<&str>, reply: impl Into<String>) {
        let mut q = self.queues.lock().unwrap();
        match tag {
            Some(t) => q.tagged.entry(t.to_string()).or_default().push_back(reply.into()),
            None => q.untagged.push_back(reply.into()),
        }
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.ledger.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.ledger.lock().unwrap().len()
    }

    pub fn calls_for(&self, tag: &str) -> usize {
        self.ledger
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.tag.as_deref() == Some(tag))
            .count()
    }

    /// Ordinal replies not yet consumed.
    pub fn remaining(&self) -> usize {
        let q = self.queues.lock().unwrap();
        q.untagged.len() + q.tagged.values().map(VecDeque::len).sum::<usize>()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let digest = request.digest();
        let (reply, source) = if let Some(r) = self.keyed.get(&digest) {
            (r.clone(), ReplySource::Keyed)
        } else {
            let mut q = self.queues.lock().unwrap();
            let from_tag = request
                .tag
                .as_ref()
                .and_then(|t| q.tagged.get_mut(t))
                .and_then(VecDeque::pop_front);
            match from_tag {
                Some(r) => (
                    r,
                    ReplySource::Ordinal {
                        tag: request.tag.clone(),
                    },
                ),
                None => match q.untagged.pop_front() {
                    Some(r) => (r, ReplySource::Ordinal { tag: None }),
                    None => return Err(BackendError::Unmatched { digest }),
                },
            }
        };
        self.ledger.lock().unwrap().push(CallRecord {
            digest,
            tag: request.tag.clone(),
            source,
        });
        Ok(reply)
    }
}
