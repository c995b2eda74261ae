//! Embedding-keyed experience stores with exact top-K retrieval.
//!
//! Three stores back the learning loop: planner reflections, actor precedents
//! (claim, strategy, advantage) and critic value samples. Retrieval is a
//! brute-force Euclidean scan; ties go to the older record.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Embedding;
use crate::records::{self, RecordError};
use crate::types::VerificationStrategy;

pub const REFLECTIONS_FILE: &str = "reflections.jsonl";
pub const PRECEDENTS_FILE: &str = "precedents.jsonl";
pub const VALUES_FILE: &str = "values.jsonl";

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("embedding dimension {got} does not match store dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("storage error at {}: {source}", path.display())]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: RecordError,
    },
}

pub trait MemoryRecord: Clone + Serialize + DeserializeOwned {
    fn id(&self) -> &str;
    fn embedding(&self) -> &Embedding;
    fn validate(&self) -> Result<(), MemoryError> {
        Ok(())
    }
}

/// A reflector output filed under the claim that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectionRecord {
    pub id: String,
    pub key_text: String,
    pub diagnosis: String,
    pub principles: Vec<String>,
    pub revised_strategy: VerificationStrategy,
    pub embedding: Embedding,
}

impl MemoryRecord for ReflectionRecord {
    fn id(&self) -> &str {
        &self.id
    }
    fn embedding(&self) -> &Embedding {
        &self.embedding
    }
    fn validate(&self) -> Result<(), MemoryError> {
        if self.principles.is_empty() {
            return Err(MemoryError::Invalid(format!("reflection {} has no principles", self.id)));
        }
        Ok(())
    }
}

impl ReflectionRecord {
    pub fn render(&self) -> String {
        let mut out = format!("Diagnosis: {}\nPrinciples:\n", self.diagnosis);
        for (i, p) in self.principles.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, p));
        }
        out.push_str("Revised strategy:\n");
        out.push_str(&self.revised_strategy.render());
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecedentRecord {
    pub id: String,
    pub claim_text: String,
    pub strategy: VerificationStrategy,
    pub advantage: f64,
    pub embedding: Embedding,
}

impl MemoryRecord for PrecedentRecord {
    fn id(&self) -> &str {
        &self.id
    }
    fn embedding(&self) -> &Embedding {
        &self.embedding
    }
    fn validate(&self) -> Result<(), MemoryError> {
        if !self.advantage.is_finite() {
            return Err(MemoryError::Invalid(format!("precedent {} has non-finite advantage", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSample {
    pub id: String,
    pub state_summary: String,
    pub value: f64,
    pub embedding: Embedding,
}

impl MemoryRecord for ValueSample {
    fn id(&self) -> &str {
        &self.id
    }
    fn embedding(&self) -> &Embedding {
        &self.embedding
    }
    fn validate(&self) -> Result<(), MemoryError> {
        if !self.value.is_finite() {
            return Err(MemoryError::Invalid(format!("value sample {} is not finite", self.id)));
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Splits retrieved precedents into successes (A > 0) and cautionary
/// examples (A <= 0), keeping order within each side.
pub fn partition_precedents(
    records: Vec<PrecedentRecord>,
) -> (Vec<PrecedentRecord>, Vec<PrecedentRecord>) {
    records.into_iter().partition(|r| r.advantage > 0.0)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreHeader {
    dim: usize,
    cap: Option<usize>,
    count: usize,
}

#[derive(Clone, Debug)]
pub struct Store<R> {
    dim: usize,
    cap: Option<usize>,
    entries: VecDeque<R>,
}

impl<R: MemoryRecord> Store<R> {
    pub fn new(dim: usize, cap: Option<usize>) -> Self {
        Store {
            dim,
            cap,
            entries: VecDeque::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cap(&self) -> Option<usize> {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &R> {
        self.entries.iter()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.iter().any(|r| r.id() == id)
    }

    pub fn set_cap(&mut self, cap: Option<usize>) {
        self.cap = cap;
        self.evict();
    }

    fn evict(&mut self) {
        if let Some(cap) = self.cap {
            while self.entries.len() > cap {
                self.entries.pop_front();
            }
        }
    }

    fn check_dim(&self, e: &Embedding) -> Result<(), MemoryError> {
        if e.dim() != self.dim {
            return Err(MemoryError::Dimension {
                expected: self.dim,
                got: e.dim(),
            });
        }
        Ok(())
    }

    pub fn insert(&mut self, record: R) -> Result<String, MemoryError> {
        self.check_dim(record.embedding())?;
        record.validate()?;
        let id = record.id().to_string();
        self.entries.push_back(record);
        self.evict();
        Ok(id)
    }

    pub fn retrieve_top_k(
        &self,
        query: &Embedding,
        k: usize,
        predicate: Option<&dyn Fn(&R) -> bool>,
    ) -> Result<Vec<R>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::ZeroK);
        }
        self.check_dim(query)?;
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, r)| predicate.is_none_or(|p| p(r)))
            .map(|(i, r)| (euclidean(query.as_slice(), r.embedding().as_slice()), i))
            .collect();
        // Stable sort on distance alone keeps insertion order among ties.
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(_, i)| self.entries[i].clone())
            .collect())
    }

    pub fn persist(&self, path: &Path) -> Result<(), MemoryError> {
        let storage = |source| MemoryError::Storage {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(storage)?;
        }
        let mut w = BufWriter::new(fs::File::create(path).map_err(storage)?);
        let header = StoreHeader {
            dim: self.dim,
            cap: self.cap,
            count: self.entries.len(),
        };
        writeln!(w, "{}", records::to_line(&header)).map_err(storage)?;
        for r in &self.entries {
            writeln!(w, "{}", records::to_line(r)).map_err(storage)?;
        }
        w.flush().map_err(storage)
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        let text = fs::read_to_string(path).map_err(|source| MemoryError::Storage {
            path: path.to_path_buf(),
            source,
        })?;
        let parse = |source| MemoryError::Parse {
            path: path.to_path_buf(),
            source,
        };
        let mut lines = text.lines();
        let header: StoreHeader = records::from_line(lines.next().unwrap_or(""), 1).map_err(parse)?;
        let body: Vec<R> = records::parse_records(&text[text.find('\n').map_or(text.len(), |i| i + 1)..], 2)
            .map_err(parse)?;
        if body.len() != header.count {
            return Err(parse(RecordError::Parse {
                line: body.len() + 2,
                path: ".".into(),
                message: format!("header declares {} records, file holds {}", header.count, body.len()),
            }));
        }
        let mut store = Store::new(header.dim, None);
        for (i, r) in body.into_iter().enumerate() {
            store.insert(r).map_err(|e| {
                parse(RecordError::Parse {
                    line: i + 2,
                    path: "embedding".into(),
                    message: e.to_string(),
                })
            })?;
        }
        store.cap = header.cap;
        Ok(store)
    }
}

/// The three stores, each readable concurrently and written by one writer at
/// a time.
pub struct Memories {
    pub reflections: RwLock<Store<ReflectionRecord>>,
    pub precedents: RwLock<Store<PrecedentRecord>>,
    pub values: RwLock<Store<ValueSample>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySizes {
    pub reflections: usize,
    pub precedents: usize,
    pub values: usize,
}

impl Memories {
    pub fn new(dim: usize, cap: Option<usize>) -> Self {
        Memories {
            reflections: RwLock::new(Store::new(dim, cap)),
            precedents: RwLock::new(Store::new(dim, cap)),
            values: RwLock::new(Store::new(dim, cap)),
        }
    }

    /// Loads whichever store files exist in `dir`; missing ones start empty.
    /// The configured cap replaces the stored one.
    pub fn open(dir: &Path, dim: usize, cap: Option<usize>) -> Result<Self, MemoryError> {
        fn one<R: MemoryRecord>(path: PathBuf, dim: usize, cap: Option<usize>) -> Result<Store<R>, MemoryError> {
            if !path.exists() {
                return Ok(Store::new(dim, cap));
            }
            let mut s = Store::<R>::load(&path)?;
            if s.dim() != dim {
                return Err(MemoryError::Dimension {
                    expected: dim,
                    got: s.dim(),
                });
            }
            s.set_cap(cap);
            Ok(s)
        }
        Ok(Memories {
            reflections: RwLock::new(one(dir.join(REFLECTIONS_FILE), dim, cap)?),
            precedents: RwLock::new(one(dir.join(PRECEDENTS_FILE), dim, cap)?),
            values: RwLock::new(one(dir.join(VALUES_FILE), dim, cap)?),
        })
    }

    pub fn persist(&self, dir: &Path) -> Result<(), MemoryError> {
        self.reflections.read().unwrap().persist(&dir.join(REFLECTIONS_FILE))?;
        self.precedents.read().unwrap().persist(&dir.join(PRECEDENTS_FILE))?;
        self.values.read().unwrap().persist(&dir.join(VALUES_FILE))
    }

    pub fn sizes(&self) -> MemorySizes {
        MemorySizes {
            reflections: self.reflections.read().unwrap().len(),
            precedents: self.precedents.read().unwrap().len(),
            values: self.values.read().unwrap().len(),
        }
    }
}
