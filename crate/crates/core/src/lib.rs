//! Deterministic multi-agent simulation over ontology-scoped shared memory.
//!
//! Agents hold slice-scoped views of a shared store of typed statements.
//! Updates are validated against a declarative ontology before commit, and
//! committed updates are announced to overlapping slices through entity-id
//! refresh notifications with configurable per-delivery loss. Every run
//! produces an append-only event trace; the [`verify`] module replays traces
//! against independent checkers (coherence, causal isolation, snapshot
//! alignment, proposal reflection, failure containment, and bad-prefix
//! safety properties), and [`bench`] holds the communication-scaling and
//! convergence-tail experiments.
//!
//! All randomness flows from a single run seed through named sub-streams,
//! so a run is reproducible byte-for-byte.

#![forbid(unsafe_code)]

pub mod agent;
pub mod bench;
pub mod memory;
pub mod ontology;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod transport;
pub mod verify;

pub use ontology::{EntityKey, Ontology, SliceSpec, Statement, UpdateProposal, Value};
