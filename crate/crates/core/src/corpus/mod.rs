//! Executed test cases, indexed for the security oracles.

mod compose;
mod fresh;
mod fuzz;
mod generate;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use compose::{concat_and_bind, concat_with_created, slice_prefix, slice_solo, CompositionError};
pub use fresh::Freshener;
pub use fuzz::{base_fuzz, FuzzConfig, FuzzError, FuzzStats};
pub(crate) use fuzz::{creators, is_allowed, Creator};
pub use generate::{GenerationError, InputGenerator, PATTERN_ATTEMPTS};

use crate::http::{ExecutedCall, HttpAction, TestCase};
use crate::schema::EndpointId;

/// A test case with the responses observed when it ran. `executed` may be
/// shorter than `test.calls` when a binding failed mid-way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PoolEntry {
    pub test: TestCase,
    pub executed: Vec<ExecutedCall>,
}

/// Points at one call inside one pool entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallRef {
    pub entry: usize,
    pub call: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IdentityClass {
    Anonymous,
    Authenticated(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatusFilter {
    Exact(u16),
    Class(u8),
    AnyOf(Vec<u16>),
}

impl StatusFilter {
    pub fn matches(&self, status: u16) -> bool {
        match self {
            StatusFilter::Exact(s) => *s == status,
            StatusFilter::Class(c) => status / 100 == u16::from(*c),
            StatusFilter::AnyOf(list) => list.contains(&status),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdentityFilter {
    Any,
    Anonymous,
    Authenticated,
    Named(String),
    AuthenticatedExcept(String),
}

impl IdentityFilter {
    pub fn matches(&self, class: &IdentityClass) -> bool {
        match (self, class) {
            (IdentityFilter::Any, _) => true,
            (IdentityFilter::Anonymous, IdentityClass::Anonymous) => true,
            (IdentityFilter::Authenticated, IdentityClass::Authenticated(_)) => true,
            (IdentityFilter::Named(n), IdentityClass::Authenticated(m)) => n == m,
            (IdentityFilter::AuthenticatedExcept(n), IdentityClass::Authenticated(m)) => n != m,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub endpoint: EndpointId,
    pub status: StatusFilter,
    pub identity: IdentityFilter,
    pub duration_below_ms: Option<f64>,
}

impl Query {
    pub fn new(endpoint: &EndpointId, status: StatusFilter, identity: IdentityFilter) -> Self {
        Self {
            endpoint: endpoint.clone(),
            status,
            identity,
            duration_below_ms: None,
        }
    }

    pub fn faster_than(mut self, ms: f64) -> Self {
        self.duration_below_ms = Some(ms);
        self
    }
}

type IndexKey = (EndpointId, u16, IdentityClass);

/// Append-only collection of executed tests. The index maps each
/// (endpoint, status, identity) triple to the calls that produced it, in
/// insertion order.
#[derive(Debug, Clone)]
pub struct TestPool {
    anonymous: String,
    entries: Vec<PoolEntry>,
    index: BTreeMap<IndexKey, Vec<CallRef>>,
}

impl TestPool {
    pub fn new(anonymous: impl Into<String>) -> Self {
        Self {
            anonymous: anonymous.into(),
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn from_entries(anonymous: impl Into<String>, entries: Vec<PoolEntry>) -> Self {
        let mut pool = Self::new(anonymous);
        for e in entries {
            pool.push(e);
        }
        pool
    }

    pub fn class_of(&self, identity: &str) -> IdentityClass {
        if identity == self.anonymous {
            IdentityClass::Anonymous
        } else {
            IdentityClass::Authenticated(identity.to_string())
        }
    }

    /// Adds an entry and indexes every call that got a response.
    pub fn push(&mut self, entry: PoolEntry) -> usize {
        let id = self.entries.len();
        for (i, call) in entry.executed.iter().enumerate() {
            if call.timed_out {
                continue;
            }
            let key = (
                call.action.endpoint.clone(),
                call.status,
                self.class_of(&call.action.identity),
            );
            self.index
                .entry(key)
                .or_default()
                .push(CallRef { entry: id, call: i });
        }
        self.entries.push(entry);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> &PoolEntry {
        &self.entries[id]
    }

    pub fn call(&self, r: CallRef) -> &ExecutedCall {
        &self.entries[r.entry].executed[r.call]
    }

    pub fn template(&self, r: CallRef) -> &HttpAction {
        &self.entries[r.entry].test.calls[r.call]
    }

    /// Distinct (endpoint, status, identity) triples seen so far.
    pub fn key_count(&self) -> usize {
        self.index.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = &IndexKey> {
        self.index.keys()
    }

    /// Every matching call, ordered by test length, then insertion.
    pub fn find_all(&self, q: &Query) -> Vec<CallRef> {
        let mut hits: Vec<CallRef> = self
            .index
            .iter()
            .filter(|((ep, status, class), _)| {
                *ep == q.endpoint && q.status.matches(*status) && q.identity.matches(class)
            })
            .flat_map(|(_, refs)| refs.iter().copied())
            .filter(|r| {
                q.duration_below_ms
                    .is_none_or(|limit| self.call(*r).duration_ms < limit)
            })
            .collect();
        hits.sort_by_key(|r| (self.entries[r.entry].executed.len(), r.entry, r.call));
        hits.dedup_by_key(|r| r.entry);
        hits
    }

    /// The shortest matching test; ties go to the earliest added, and
    /// within a test to the earliest matching call.
    pub fn find(&self, q: &Query) -> Option<CallRef> {
        self.find_all(q).into_iter().next()
    }

    pub fn save(&self, path: &Path, base_url: &str, seed: u64) -> std::io::Result<()> {
        let file = CorpusFile {
            format_version: 1,
            target_base_url: base_url.to_string(),
            seed,
            anonymous: self.anonymous.clone(),
            entries: self.entries.clone(),
        };
        let text = serde_json::to_string_pretty(&file).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }
}

/// On-disk corpus, written by one run and read back by a later
/// security-only run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CorpusFile {
    pub format_version: u32,
    pub target_base_url: String,
    pub seed: u64,
    pub anonymous: String,
    pub entries: Vec<PoolEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {message}")]
    Read { path: String, message: String },
    #[error("unsupported corpus format version {0}")]
    Version(u32),
}

impl CorpusFile {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let read_err = |message: String| CorpusError::Read {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let file: CorpusFile = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        if file.format_version != 1 {
            return Err(CorpusError::Version(file.format_version));
        }
        Ok(file)
    }

    pub fn into_pool(self) -> TestPool {
        TestPool::from_entries(self.anonymous, self.entries)
    }
}
