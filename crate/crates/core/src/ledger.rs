//! Append-only, hash-chained attribution ledger.
//!
//! Each entry commits to its payload by digest and to its predecessor by
//! hash:
//!
//! ```text
//! entry_hash = SHA-256(seq as u64 BE || at as i64 BE || kind as UTF-8 || payload_digest || prev_hash)
//! ```
//!
//! Entry 0 chains from 32 zero bytes. The ledger file holds one line per
//! entry, `seq at kind payload_digest prev_hash entry_hash`; payloads live in a
//! sibling `<ledger>.payloads` file as `digest canonical-json` lines.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{to_canonical_string, Digest};
use crate::time::{TimeRange, Timestamp};

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("ledger storage failure: {0}")]
    StorageFailure(#[from] io::Error),
    #[error("ledger is corrupted at seq {first_bad_seq}")]
    Corrupted { first_bad_seq: u64 },
    #[error("payload is not serializable: {0}")]
    Payload(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Verification,
    Generation,
    Dissemination,
    ConsentChange,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Verification => "verification",
            EntryKind::Generation => "generation",
            EntryKind::Dissemination => "dissemination",
            EntryKind::ConsentChange => "consent_change",
        }
    }
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntryKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "verification" => Ok(EntryKind::Verification),
            "generation" => Ok(EntryKind::Generation),
            "dissemination" => Ok(EntryKind::Dissemination),
            "consent_change" => Ok(EntryKind::ConsentChange),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub at: Timestamp,
    pub kind: EntryKind,
    pub payload_digest: Digest,
    pub prev_hash: Digest,
    pub entry_hash: Digest,
}

impl LedgerEntry {
    pub fn compute_hash(seq: u64, at: Timestamp, kind: EntryKind, payload_digest: &Digest, prev_hash: &Digest) -> Digest {
        let mut buf = Vec::with_capacity(16 + kind.as_str().len() + 64);
        buf.extend_from_slice(&seq.to_be_bytes());
        buf.extend_from_slice(&at.0.to_be_bytes());
        buf.extend_from_slice(kind.as_str().as_bytes());
        buf.extend_from_slice(payload_digest.as_bytes());
        buf.extend_from_slice(prev_hash.as_bytes());
        Digest::of(&buf)
    }

    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.seq, self.at.0, self.kind, self.payload_digest, self.prev_hash, self.entry_hash
        )
    }

    /// Strict parse: canonical decimal integers, known kind, lowercase hex.
    pub fn parse_line(line: &str) -> Option<LedgerEntry> {
        let fields: Vec<&str> = line.split(' ').collect();
        let [seq, at, kind, payload_digest, prev_hash, entry_hash] = fields.as_slice() else {
            return None;
        };
        let seq_v: u64 = seq.parse().ok()?;
        let at_v: i64 = at.parse().ok()?;
        if seq_v.to_string() != *seq || at_v.to_string() != *at {
            return None;
        }
        Some(LedgerEntry {
            seq: seq_v,
            at: Timestamp(at_v),
            kind: kind.parse().ok()?,
            payload_digest: payload_digest.parse().ok()?,
            prev_hash: prev_hash.parse().ok()?,
            entry_hash: entry_hash.parse().ok()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainReport {
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_bad_seq: Option<u64>,
    pub entries: u64,
}

/// Recomputes every hash of a serialized ledger.
///
/// The first line that fails to parse, is out of sequence, does not chain
/// from its predecessor, or does not hash to its stored value is reported by
/// its position.
pub fn verify_chain_bytes(bytes: &[u8]) -> ChainReport {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    if body.is_empty() {
        return ChainReport { valid: bytes.is_empty(), first_bad_seq: (!bytes.is_empty()).then_some(0), entries: 0 };
    }
    let mut prev = Digest::ZERO;
    let mut count = 0u64;
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let expected_seq = i as u64;
        let bad = ChainReport { valid: false, first_bad_seq: Some(expected_seq), entries: count };
        let Ok(line) = std::str::from_utf8(raw) else { return bad };
        let Some(entry) = LedgerEntry::parse_line(line) else { return bad };
        if entry.seq != expected_seq || entry.prev_hash != prev {
            return bad;
        }
        let recomputed = LedgerEntry::compute_hash(entry.seq, entry.at, entry.kind, &entry.payload_digest, &entry.prev_hash);
        if recomputed != entry.entry_hash {
            return bad;
        }
        prev = entry.entry_hash;
        count += 1;
    }
    ChainReport { valid: true, first_bad_seq: None, entries: count }
}

pub fn verify_chain_file(path: &Path) -> io::Result<ChainReport> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(verify_chain_bytes(&bytes)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(verify_chain_bytes(&[])),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EntryKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rights_holder_id: Option<String>,
    #[serde(default)]
    pub range: TimeRange,
}

fn payload_lists(payload: &Value, field: &str, needle: &str) -> bool {
    payload
        .get(field)
        .and_then(Value::as_array)
        .is_some_and(|items| items.iter().any(|v| v.as_str() == Some(needle)))
}

impl LedgerFilter {
    pub fn matches(&self, entry: &LedgerEntry, payload: &Value) -> bool {
        self.kind.is_none_or(|k| k == entry.kind)
            && self.range.contains(entry.at)
            && self.entity_id.as_deref().is_none_or(|e| payload_lists(payload, "entity_ids", e))
            && self.rights_holder_id.as_deref().is_none_or(|r| payload_lists(payload, "rights_holder_ids", r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedEntry {
    #[serde(flatten)]
    pub entry: LedgerEntry,
    pub payload: Value,
}

enum Storage {
    Memory(Vec<u8>),
    File { ledger: File, payloads: File, path: PathBuf },
}

struct Inner {
    entries: Vec<LedgerEntry>,
    payloads: HashMap<Digest, Value>,
    storage: Storage,
}

/// The ledger. Appends are serialized; readers see a consistent prefix.
pub struct Ledger {
    inner: RwLock<Inner>,
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger").field("len", &self.len()).finish()
    }
}

fn payload_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".payloads");
    PathBuf::from(p)
}

impl Ledger {
    pub fn in_memory() -> Self {
        Ledger {
            inner: RwLock::new(Inner { entries: Vec::new(), payloads: HashMap::new(), storage: Storage::Memory(Vec::new()) }),
        }
    }

    /// Opens or creates a file-backed ledger. A ledger whose chain does not
    /// verify is refused.
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let report = verify_chain_bytes(&bytes);
        if !report.valid {
            return Err(LedgerError::Corrupted { first_bad_seq: report.first_bad_seq.unwrap_or(0) });
        }
        let entries: Vec<LedgerEntry> = String::from_utf8_lossy(&bytes)
            .lines()
            .filter_map(LedgerEntry::parse_line)
            .collect();

        let ppath = payload_path(path);
        let mut payloads = HashMap::new();
        match std::fs::read_to_string(&ppath) {
            Ok(text) => {
                for line in text.lines() {
                    let Some((digest, json)) = line.split_once(' ') else { continue };
                    let (Ok(digest), Ok(value)) = (digest.parse::<Digest>(), serde_json::from_str::<Value>(json)) else {
                        continue;
                    };
                    payloads.insert(digest, value);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }

        let ledger = OpenOptions::new().create(true).append(true).open(path)?;
        let payload_file = OpenOptions::new().create(true).append(true).open(&ppath)?;
        Ok(Ledger {
            inner: RwLock::new(Inner {
                entries,
                payloads,
                storage: Storage::File { ledger, payloads: payload_file, path: path.to_path_buf() },
            }),
        })
    }

    pub fn len(&self) -> usize {
        self.inner.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append_entry(&self, kind: EntryKind, at: Timestamp, payload: &Value) -> Result<LedgerEntry, LedgerError> {
        let payload = payload.clone();
        self.append_with(kind, at, move |_| payload)
    }

    /// Appends an entry whose payload may depend on the sequence number it
    /// will receive. The entry is persisted before this returns.
    pub fn append_with(
        &self,
        kind: EntryKind,
        at: Timestamp,
        build: impl FnOnce(u64) -> Value,
    ) -> Result<LedgerEntry, LedgerError> {
        let mut inner = self.inner.write();
        let seq = inner.entries.len() as u64;
        let prev_hash = inner.entries.last().map(|e| e.entry_hash).unwrap_or(Digest::ZERO);
        let payload = crate::canonical::canonical_value(&build(seq))?;
        let canonical = to_canonical_string(&payload)?;
        let payload_digest = Digest::of(canonical.as_bytes());
        let entry_hash = LedgerEntry::compute_hash(seq, at, kind, &payload_digest, &prev_hash);
        let entry = LedgerEntry { seq, at, kind, payload_digest, prev_hash, entry_hash };

        let line = format!("{}\n", entry.to_line());
        match &mut inner.storage {
            Storage::Memory(buf) => buf.extend_from_slice(line.as_bytes()),
            Storage::File { ledger, payloads, .. } => {
                payloads.write_all(format!("{payload_digest} {canonical}\n").as_bytes())?;
                payloads.flush()?;
                ledger.write_all(line.as_bytes())?;
                ledger.flush()?;
            }
        }
        inner.payloads.insert(payload_digest, payload);
        inner.entries.push(entry.clone());
        Ok(entry)
    }

    /// The ledger exactly as stored.
    pub fn stored_bytes(&self) -> io::Result<Vec<u8>> {
        let inner = self.inner.read();
        match &inner.storage {
            Storage::Memory(buf) => Ok(buf.clone()),
            Storage::File { path, .. } => std::fs::read(path),
        }
    }

    /// Re-reads stored entries and recomputes every hash.
    pub fn verify_chain(&self) -> Result<ChainReport, LedgerError> {
        Ok(verify_chain_bytes(&self.stored_bytes()?))
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.inner.read().entries.clone()
    }

    pub fn payload(&self, digest: &Digest) -> Option<Value> {
        self.inner.read().payloads.get(digest).cloned()
    }

    /// All and only the entries matching `filter`, in sequence order.
    pub fn query_entries(&self, filter: &LedgerFilter) -> Vec<RecordedEntry> {
        let inner = self.inner.read();
        inner
            .entries
            .iter()
            .filter_map(|e| {
                let payload = inner.payloads.get(&e.payload_digest).cloned().unwrap_or(Value::Null);
                filter.matches(e, &payload).then(|| RecordedEntry { entry: e.clone(), payload })
            })
            .collect()
    }
}
