//! Canonical store, per-agent views, projection, and the deterministic merge.
//!
//! Commits are serialized through [`GlobalStore`] and carry a gapless,
//! strictly increasing sequence number. Views merge committed updates
//! last-writer-wins keyed by that sequence number, exactly once per commit,
//! so any delivery order converges to the in-order replay. The store exists
//! as the verification oracle: agents only ever see notifications and
//! retrieved updates.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{
    AgentId, EntityKey, SliceSpec, Statement, StatementLookup, UpdateProposal, Value,
};
use crate::rng::fnv1a64;

/// A validated update with its position in the global commit order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedUpdate {
    pub commit_seq: u64,
    pub tick: u64,
    pub author: AgentId,
    pub proposal_id: u64,
    pub statements: Vec<Statement>,
}

impl CommittedUpdate {
    pub fn keys(&self) -> impl Iterator<Item = &EntityKey> {
        self.statements.iter().map(|s| &s.key)
    }
}

/// One view entry: the value plus the commit that last wrote it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub value: Value,
    pub commit_seq: u64,
}

fn entry_digest(key: &EntityKey, e: &Entry) -> u64 {
    let line = format!("{key}\t{}\t{}", e.value.canonical(), e.commit_seq);
    fnv1a64(line.as_bytes())
}

/// A keyed memory state. Used both for the canonical store's current state
/// and for agent-local views (where entries stay inside the owning slice's
/// readable set).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryView {
    pub entries: BTreeMap<EntityKey, Entry>,
    /// Highest commit reflected in this view.
    pub as_of_seq: u64,
    /// Commits already merged; repeats are no-ops.
    seen: BTreeSet<u64>,
    /// Order-independent digest over entries, maintained incrementally.
    digest: u64,
}

/// Result of merging one committed update into a view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MergeOutcome {
    /// Statements applied (possibly none, when every key already had a
    /// higher-sequence writer). Lists the keys actually written.
    Applied { keys: Vec<EntityKey> },
    /// This commit was already merged.
    NoOp,
    /// Local revalidation rejected the update; the view is untouched.
    Stutter,
}

impl MemoryView {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &EntityKey) -> Option<&Entry> {
        self.entries.get(key)
    }

    /// Order-independent digest of the entry set. Two views are equal iff
    /// their canonical snapshots are byte-equal, which this tracks.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    fn put(&mut self, key: EntityKey, entry: Entry) {
        if let Some(old) = self.entries.get(&key) {
            self.digest = self.digest.wrapping_sub(entry_digest(&key, old));
        }
        self.digest = self.digest.wrapping_add(entry_digest(&key, &entry));
        self.entries.insert(key, entry);
    }

    /// Writes a statement if its commit sequence beats the current writer.
    /// Returns true when the entry changed.
    fn apply_lww(&mut self, key: &EntityKey, value: &Value, commit_seq: u64) -> bool {
        match self.entries.get(key) {
            Some(e) if e.commit_seq >= commit_seq => false,
            _ => {
                self.put(
                    key.clone(),
                    Entry {
                        value: value.clone(),
                        commit_seq,
                    },
                );
                true
            }
        }
    }
}

impl StatementLookup for MemoryView {
    fn value_of(&self, key: &EntityKey) -> Option<&Value> {
        self.entries.get(key).map(|e| &e.value)
    }
}

/// Merges a committed update into a local view: exactly once per commit,
/// in-slice statements only, last-writer-wins per key. `revalidated == false`
/// records a local rejection as a stutter, leaving the view untouched.
pub fn integrate(
    local: &mut MemoryView,
    update: &CommittedUpdate,
    slice: &SliceSpec,
    revalidated: bool,
) -> MergeOutcome {
    if local.seen.contains(&update.commit_seq) {
        return MergeOutcome::NoOp;
    }
    if !revalidated {
        local.seen.insert(update.commit_seq);
        return MergeOutcome::Stutter;
    }
    local.seen.insert(update.commit_seq);
    let mut keys = Vec::new();
    for s in &update.statements {
        if !slice.reads(s.key.predicate.as_ref()) {
            continue;
        }
        if local.apply_lww(&s.key, &s.value, update.commit_seq) {
            keys.push(s.key.clone());
        }
    }
    local.as_of_seq = local.as_of_seq.max(update.commit_seq);
    MergeOutcome::Applied { keys }
}

/// Canonical serialized form of a view: a header line with `as_of`, then one
/// tab-separated line per entry in key order. Equal views produce identical
/// bytes regardless of insertion order.
pub fn snapshot(view: &MemoryView) -> Vec<u8> {
    let mut out = format!("as_of={}\n", view.as_of_seq).into_bytes();
    for (k, e) in &view.entries {
        out.extend_from_slice(format!("{k}\t{}\t{}\n", e.value.canonical(), e.commit_seq).as_bytes());
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SnapshotParseError {
    #[error("snapshot line {0} is malformed")]
    BadLine(usize),
}

/// Parses the canonical snapshot form back into a view.
pub fn parse_snapshot(bytes: &[u8]) -> Result<MemoryView, SnapshotParseError> {
    let text = std::str::from_utf8(bytes).map_err(|_| SnapshotParseError::BadLine(0))?;
    let mut view = MemoryView::default();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            let seq = line
                .strip_prefix("as_of=")
                .and_then(|s| s.parse().ok())
                .ok_or(SnapshotParseError::BadLine(i))?;
            view.as_of_seq = seq;
            continue;
        }
        let mut parts = line.split('\t');
        let (k, v, s) = (parts.next(), parts.next(), parts.next());
        let (k, v, s) = match (k, v, s, parts.next()) {
            (Some(k), Some(v), Some(s), None) => (k, v, s),
            _ => return Err(SnapshotParseError::BadLine(i)),
        };
        let key: EntityKey = k.parse().map_err(|_| SnapshotParseError::BadLine(i))?;
        let value = Value::parse_canonical(v).ok_or(SnapshotParseError::BadLine(i))?;
        let commit_seq = s.parse().map_err(|_| SnapshotParseError::BadLine(i))?;
        view.put(key, Entry { value, commit_seq });
    }
    Ok(view)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("requested sequence {requested} exceeds head {head}")]
    SeqOutOfRange { requested: u64, head: u64 },
    #[error("commit {0} is not in the store history")]
    UnknownCommit(u64),
}

/// Proof that a proposal passed validation; [`GlobalStore::commit`] refuses
/// anything else. Constructed by the validation paths in [`crate::agent`].
#[derive(Debug)]
pub struct ValidatedProposal {
    proposal: UpdateProposal,
}

impl ValidatedProposal {
    /// Wraps a proposal the caller has already validated. Kept crate-private
    /// so external code must go through a validator.
    pub(crate) fn assume_valid(proposal: UpdateProposal) -> Self {
        ValidatedProposal { proposal }
    }

    pub fn statements(&self) -> &[Statement] {
        &self.proposal.statements
    }
}

/// The canonical, serialized store: current state plus append-only history.
/// Replaying the history from empty reproduces the current state exactly.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GlobalStore {
    pub current: MemoryView,
    pub history: Vec<Arc<CommittedUpdate>>,
}

impl GlobalStore {
    pub fn new() -> Self {
        GlobalStore::default()
    }

    pub fn head_seq(&self) -> u64 {
        self.current.as_of_seq
    }

    /// Assigns the next commit sequence, applies the statements
    /// last-writer-wins, and appends to history.
    pub fn commit(&mut self, update: ValidatedProposal, tick: u64) -> Arc<CommittedUpdate> {
        let commit_seq = self.head_seq() + 1;
        let UpdateProposal {
            id,
            author,
            statements,
        } = update.proposal;
        let committed = Arc::new(CommittedUpdate {
            commit_seq,
            tick,
            author,
            proposal_id: id,
            statements,
        });
        for s in &committed.statements {
            self.current.apply_lww(&s.key, &s.value, commit_seq);
        }
        self.current.as_of_seq = commit_seq;
        self.current.seen.insert(commit_seq);
        self.history.push(Arc::clone(&committed));
        committed
    }

    /// Returns the exact committed update for a sequence number.
    pub fn retrieve(&self, commit_seq: u64) -> Result<&Arc<CommittedUpdate>, StoreError> {
        if commit_seq == 0 || commit_seq > self.history.len() as u64 {
            return Err(StoreError::UnknownCommit(commit_seq));
        }
        Ok(&self.history[(commit_seq - 1) as usize])
    }

    /// Reconstructs the slice-readable portion of the store as of `at_seq`.
    pub fn project(&self, slice: &SliceSpec, at_seq: u64) -> Result<MemoryView, StoreError> {
        if at_seq > self.head_seq() {
            return Err(StoreError::SeqOutOfRange {
                requested: at_seq,
                head: self.head_seq(),
            });
        }
        let mut view = MemoryView::default();
        for update in self.history.iter().take(at_seq as usize) {
            for s in &update.statements {
                if slice.reads(s.key.predicate.as_ref()) {
                    view.apply_lww(&s.key, &s.value, update.commit_seq);
                }
            }
            view.seen.insert(update.commit_seq);
        }
        view.as_of_seq = at_seq;
        Ok(view)
    }
}
