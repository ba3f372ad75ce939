//! Append-only run trace: the substrate for all post-hoc verification.
//!
//! A trace is JSON Lines: a schema-versioned header record first, then one
//! event per line with a strictly increasing event ordinal. Snapshot records
//! carry the order-independent digest of the canonical view form rather than
//! the full bytes; checkers reconstruct views from commit contents and
//! compare digests.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{AgentId, EntityKey, Statement};
use crate::scenario::ScenarioConfig;

pub const TRACE_SCHEMA: &str = "slicetrace/1";

/// First line of every trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub seed: u64,
    pub config: ScenarioConfig,
}

/// One log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Per-run event ordinal, strictly increasing.
    pub seq: u64,
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// An agent produced a candidate proposal.
    Propose {
        agent: AgentId,
        proposal_id: u64,
        keys: Vec<EntityKey>,
        probabilistic: bool,
    },
    /// Outcome of commit-side validation, including error flips.
    Validate {
        agent: AgentId,
        proposal_id: u64,
        accepted: bool,
        flipped: bool,
        probabilistic: bool,
    },
    /// A validated update entered the store.
    Commit {
        commit_seq: u64,
        author: AgentId,
        proposal_id: u64,
        statements: Vec<Statement>,
    },
    /// Entity-ids-only announcement of a commit.
    Notify {
        commit_seq: u64,
        author: AgentId,
        entities: Vec<EntityKey>,
    },
    /// Routing decision outcome for one recipient.
    Deliver { commit_seq: u64, recipient: AgentId },
    Drop { commit_seq: u64, recipient: AgentId },
    /// An agent pulled a full update from the store.
    Retrieve { commit_seq: u64, agent: AgentId },
    /// Statements merged into a local view; `keys` lists what was written.
    Integrate {
        commit_seq: u64,
        agent: AgentId,
        keys: Vec<EntityKey>,
    },
    /// Local revalidation rejected a delivered update; view unchanged.
    Stutter { commit_seq: u64, agent: AgentId },
    /// A proposal was rejected before commit.
    Reject {
        agent: AgentId,
        proposal_id: u64,
        reason: String,
    },
    /// Agent removed; it emits nothing afterwards.
    Remove { agent: AgentId },
    /// Per-tick local view digest (order-independent, over entries).
    Snapshot {
        agent: AgentId,
        as_of_seq: u64,
        digest: u64,
        entries: u64,
    },
}

impl EventKind {
    pub fn agent(&self) -> Option<&AgentId> {
        match self {
            EventKind::Propose { agent, .. }
            | EventKind::Validate { agent, .. }
            | EventKind::Retrieve { agent, .. }
            | EventKind::Integrate { agent, .. }
            | EventKind::Stutter { agent, .. }
            | EventKind::Reject { agent, .. }
            | EventKind::Remove { agent }
            | EventKind::Snapshot { agent, .. } => Some(agent),
            EventKind::Commit { author, .. } | EventKind::Notify { author, .. } => Some(author),
            EventKind::Deliver { recipient, .. } | EventKind::Drop { recipient, .. } => {
                Some(recipient)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Propose { .. } => "propose",
            EventKind::Validate { .. } => "validate",
            EventKind::Commit { .. } => "commit",
            EventKind::Notify { .. } => "notify",
            EventKind::Deliver { .. } => "deliver",
            EventKind::Drop { .. } => "drop",
            EventKind::Retrieve { .. } => "retrieve",
            EventKind::Integrate { .. } => "integrate",
            EventKind::Stutter { .. } => "stutter",
            EventKind::Reject { .. } => "reject",
            EventKind::Remove { .. } => "remove",
            EventKind::Snapshot { .. } => "snapshot",
        }
    }
}

/// Where the simulation writes its events.
pub trait TraceSink {
    fn header(&mut self, header: &TraceHeader);
    fn record(&mut self, event: &TraceEvent);
    fn flush(&mut self) {}
}

/// Keeps everything in memory; used by in-process checking.
#[derive(Debug, Default)]
pub struct VecSink {
    pub header: Option<TraceHeader>,
    pub events: Vec<TraceEvent>,
}

impl TraceSink for VecSink {
    fn header(&mut self, header: &TraceHeader) {
        self.header = Some(header.clone());
    }

    fn record(&mut self, event: &TraceEvent) {
        self.events.push(event.clone());
    }
}

/// Discards everything; used when only end-state or observers matter.
#[derive(Debug, Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn header(&mut self, _: &TraceHeader) {}
    fn record(&mut self, _: &TraceEvent) {}
}

/// Serializes records as JSON Lines into any writer.
pub struct JsonlSink<W: Write> {
    out: io::BufWriter<W>,
    error: Option<io::Error>,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        JsonlSink {
            out: io::BufWriter::new(out),
            error: None,
        }
    }

    fn write_line<T: Serialize>(&mut self, record: &T) {
        if self.error.is_some() {
            return;
        }
        let res = serde_json::to_writer(&mut self.out, record)
            .map_err(io::Error::from)
            .and_then(|_| self.out.write_all(b"\n"));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }

    /// Flushes and surfaces any deferred I/O error.
    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()?;
        match self.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

impl<W: Write> TraceSink for JsonlSink<W> {
    fn header(&mut self, header: &TraceHeader) {
        self.write_line(header);
    }

    fn record(&mut self, event: &TraceEvent) {
        self.write_line(event);
    }

    fn flush(&mut self) {
        if let Err(e) = self.out.flush() {
            self.error.get_or_insert(e);
        }
    }
}

/// Hashes the serialized byte stream without storing it; two runs are
/// byte-identical iff their stream digests match.
#[derive(Debug, Default)]
pub struct HashingSink {
    digest: u64,
    bytes: u64,
}

impl HashingSink {
    pub fn digest(&self) -> (u64, u64) {
        (self.digest, self.bytes)
    }

    fn mix<T: Serialize>(&mut self, record: &T) {
        let line = serde_json::to_vec(record).expect("trace records serialize");
        // Chained (order-sensitive) FNV over lines.
        self.digest = crate::rng::fnv1a64(&line) ^ self.digest.rotate_left(1);
        self.bytes += line.len() as u64 + 1;
    }
}

impl TraceSink for HashingSink {
    fn header(&mut self, header: &TraceHeader) {
        self.mix(header);
    }

    fn record(&mut self, event: &TraceEvent) {
        self.mix(event);
    }
}

/// Feeds two sinks at once (e.g. a file plus an in-memory copy).
pub struct TeeSink<A: TraceSink, B: TraceSink>(pub A, pub B);

impl<A: TraceSink, B: TraceSink> TraceSink for TeeSink<A, B> {
    fn header(&mut self, header: &TraceHeader) {
        self.0.header(header);
        self.1.header(header);
    }

    fn record(&mut self, event: &TraceEvent) {
        self.0.record(event);
        self.1.record(event);
    }

    fn flush(&mut self) {
        self.0.flush();
        self.1.flush();
    }
}

#[derive(Debug, Error)]
pub enum TraceReadError {
    #[error("trace i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("trace is missing its header line")]
    MissingHeader,
    #[error("unsupported trace schema `{0}`, expected `{TRACE_SCHEMA}`")]
    BadSchema(String),
}

/// Reads a full trace back from JSON Lines.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<(TraceHeader, Vec<TraceEvent>), TraceReadError> {
    let mut header: Option<TraceHeader> = None;
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: TraceHeader =
                serde_json::from_str(&line).map_err(|e| TraceReadError::Malformed {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if h.schema != TRACE_SCHEMA {
                return Err(TraceReadError::BadSchema(h.schema));
            }
            header = Some(h);
            continue;
        }
        let ev: TraceEvent = serde_json::from_str(&line).map_err(|e| TraceReadError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(ev);
    }
    let header = header.ok_or(TraceReadError::MissingHeader)?;
    Ok((header, events))
}
