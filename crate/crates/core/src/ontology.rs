//! Ontology schema, entity keys, statements, and the deterministic
//! validation predicate used by every other module.
//!
//! The schema is flat: a set of named predicates, each with a value domain
//! (enumeration, integer range, or coordinate bounds), plus a list of
//! constraints evaluable on a single proposal and one memory view. Slices
//! are predicate-granular readable/writable sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Agent identifier. Cheap to clone; trace events carry many of these.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub Arc<str>);

impl AgentId {
    pub fn new(s: impl AsRef<str>) -> Self {
        AgentId(Arc::from(s.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId::new(s)
    }
}

/// Key of one statement in shared memory: `predicate@subject`.
///
/// The canonical text rendering round-trips exactly through [`FromStr`].
/// The predicate may not contain `@`; the subject may.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityKey {
    pub predicate: Arc<str>,
    pub subject: Arc<str>,
}

impl EntityKey {
    pub fn new(predicate: impl AsRef<str>, subject: impl AsRef<str>) -> Self {
        EntityKey {
            predicate: Arc::from(predicate.as_ref()),
            subject: Arc::from(subject.as_ref()),
        }
    }
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.predicate, self.subject)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyParseError {
    #[error("entity key `{0}` has no `@` separator")]
    MissingSeparator(String),
    #[error("entity key `{0}` has an empty predicate or subject")]
    EmptyPart(String),
}

impl FromStr for EntityKey {
    type Err = KeyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (pred, subj) = s
            .split_once('@')
            .ok_or_else(|| KeyParseError::MissingSeparator(s.to_string()))?;
        if pred.is_empty() || subj.is_empty() {
            return Err(KeyParseError::EmptyPart(s.to_string()));
        }
        Ok(EntityKey::new(pred, subj))
    }
}

impl Serialize for EntityKey {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityKey {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A typed statement value. Serialized compactly: symbols as JSON strings,
/// integers as numbers, coordinates as two-element arrays.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Coord(i64, i64),
    Symbol(Arc<str>),
}

impl Value {
    pub fn symbol(s: impl AsRef<str>) -> Self {
        Value::Symbol(Arc::from(s.as_ref()))
    }

    /// Canonical text form used in snapshots: `s:..`, `i:..`, `c:x,y`.
    pub fn canonical(&self) -> String {
        match self {
            Value::Symbol(s) => format!("s:{s}"),
            Value::Int(i) => format!("i:{i}"),
            Value::Coord(x, y) => format!("c:{x},{y}"),
        }
    }

    pub fn parse_canonical(s: &str) -> Option<Value> {
        let (tag, rest) = s.split_once(':')?;
        match tag {
            "s" => Some(Value::symbol(rest)),
            "i" => rest.parse().ok().map(Value::Int),
            "c" => {
                let (x, y) = rest.split_once(',')?;
                Some(Value::Coord(x.parse().ok()?, y.parse().ok()?))
            }
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Symbol(s) => f.write_str(s),
            Value::Int(i) => write!(f, "{i}"),
            Value::Coord(x, y) => write!(f, "({x},{y})"),
        }
    }
}

/// Value domain of a predicate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    /// Finite set of symbols.
    Enum(BTreeSet<String>),
    /// Closed integer interval `[min, max]`.
    IntRange { min: i64, max: i64 },
    /// Coordinates with `0 <= x < width`, `0 <= y < height`.
    Coord { width: i64, height: i64 },
}

impl ValueDomain {
    pub fn contains(&self, v: &Value) -> bool {
        match (self, v) {
            (ValueDomain::Enum(set), Value::Symbol(s)) => set.contains(s.as_ref()),
            (ValueDomain::IntRange { min, max }, Value::Int(i)) => min <= i && i <= max,
            (ValueDomain::Coord { width, height }, Value::Coord(x, y)) => {
                (0..*width).contains(x) && (0..*height).contains(y)
            }
            _ => false,
        }
    }
}

/// A schema constraint. Each kind is evaluable on one proposal plus a single
/// memory view; there is no cross-slice quantification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// Restricts a predicate to a subset of its declared enum domain.
    DomainMembership {
        id: String,
        predicate: String,
        allowed: BTreeSet<String>,
    },
    /// A statement on `predicate@s` requires `required@s` to be present in
    /// the proposal or the view it is validated against.
    RequiredCoPredicate {
        id: String,
        predicate: String,
        required: String,
    },
    /// No subject may carry `a.0 = a.1` and `b.0 = b.1` simultaneously once
    /// the proposal is applied to the view.
    ForbiddenValuePair {
        id: String,
        a: (String, Value),
        b: (String, Value),
    },
}

impl Constraint {
    pub fn id(&self) -> &str {
        match self {
            Constraint::DomainMembership { id, .. }
            | Constraint::RequiredCoPredicate { id, .. }
            | Constraint::ForbiddenValuePair { id, .. } => id,
        }
    }

    fn referenced_predicates(&self) -> Vec<&str> {
        match self {
            Constraint::DomainMembership { predicate, .. } => vec![predicate],
            Constraint::RequiredCoPredicate {
                predicate,
                required,
                ..
            } => vec![predicate, required],
            Constraint::ForbiddenValuePair { a, b, .. } => vec![&a.0, &b.0],
        }
    }

    /// True when the constraint mentions the given predicate and therefore
    /// participates in validating statements on it.
    pub fn touches(&self, predicate: &str) -> bool {
        self.referenced_predicates().contains(&predicate)
    }
}

/// The global schema: predicate domains plus constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    pub predicates: BTreeMap<String, ValueDomain>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("constraint `{constraint}` references undeclared predicate `{predicate}`")]
    UnknownPredicate {
        constraint: String,
        predicate: String,
    },
    #[error("duplicate constraint id `{0}`")]
    DuplicateConstraint(String),
    #[error("schema file is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Ontology {
    pub fn new(
        predicates: BTreeMap<String, ValueDomain>,
        constraints: Vec<Constraint>,
    ) -> Result<Self, SchemaError> {
        let ont = Ontology {
            predicates,
            constraints,
        };
        ont.check_well_formed()?;
        Ok(ont)
    }

    /// Loads a schema from its declarative TOML form. See
    /// `presets/ontology.sar.toml` for the shape.
    pub fn from_toml_str(s: &str) -> Result<Self, SchemaError> {
        let ont: Ontology = toml::from_str(s)?;
        ont.check_well_formed()?;
        Ok(ont)
    }

    fn check_well_formed(&self) -> Result<(), SchemaError> {
        let mut ids = BTreeSet::new();
        for c in &self.constraints {
            if !ids.insert(c.id().to_string()) {
                return Err(SchemaError::DuplicateConstraint(c.id().to_string()));
            }
            for p in c.referenced_predicates() {
                if !self.predicates.contains_key(p) {
                    return Err(SchemaError::UnknownPredicate {
                        constraint: c.id().to_string(),
                        predicate: p.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn declares(&self, predicate: &str) -> bool {
        self.predicates.contains_key(predicate)
    }

    pub fn predicate_names(&self) -> impl Iterator<Item = &str> {
        self.predicates.keys().map(String::as_str)
    }
}

/// An agent's readable/writable predicate sets. `writable ⊆ readable`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub agent: AgentId,
    pub readable: BTreeSet<String>,
    pub writable: BTreeSet<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SliceError {
    #[error("slice for `{agent}`: writable predicate `{predicate}` is not readable")]
    WritableNotReadable { agent: AgentId, predicate: String },
    #[error("slice for `{agent}`: predicate `{predicate}` is not declared in the schema")]
    Undeclared { agent: AgentId, predicate: String },
}

impl SliceSpec {
    pub fn new(
        agent: AgentId,
        readable: BTreeSet<String>,
        writable: BTreeSet<String>,
        ont: &Ontology,
    ) -> Result<Self, SliceError> {
        for p in &writable {
            if !readable.contains(p) {
                return Err(SliceError::WritableNotReadable {
                    agent,
                    predicate: p.clone(),
                });
            }
        }
        for p in &readable {
            if !ont.declares(p) {
                return Err(SliceError::Undeclared {
                    agent,
                    predicate: p.clone(),
                });
            }
        }
        Ok(SliceSpec {
            agent,
            readable,
            writable,
        })
    }

    pub fn reads(&self, predicate: &str) -> bool {
        self.readable.contains(predicate)
    }

    pub fn writes(&self, predicate: &str) -> bool {
        self.writable.contains(predicate)
    }
}

/// One grounded statement: the unit of shared memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub key: EntityKey,
    pub value: Value,
    pub author: AgentId,
    pub proposal_id: u64,
}

/// A set of candidate statements produced by one agent in one step.
/// Non-empty by construction; validation is all-or-nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateProposal {
    pub id: u64,
    pub author: AgentId,
    pub statements: Vec<Statement>,
}

impl UpdateProposal {
    /// Builds a proposal from `(key, value)` pairs. Panics on an empty list;
    /// generators return `None` instead of an empty proposal.
    pub fn new(id: u64, author: AgentId, entries: Vec<(EntityKey, Value)>) -> Self {
        assert!(!entries.is_empty(), "proposals must be non-empty");
        let statements = entries
            .into_iter()
            .map(|(key, value)| Statement {
                key,
                value,
                author: author.clone(),
                proposal_id: id,
            })
            .collect();
        UpdateProposal {
            id,
            author,
            statements,
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &EntityKey> {
        self.statements.iter().map(|s| &s.key)
    }
}

/// Why validation rejected a statement or proposal. Each variant names the
/// failing rule.
#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationError {
    #[error("predicate of `{key}` is not declared in the schema")]
    UndeclaredPredicate { key: EntityKey },
    #[error("value `{value}` of `{key}` is outside the declared domain of `{rule}`")]
    DomainViolation {
        key: EntityKey,
        value: Value,
        rule: String,
    },
    #[error("constraint `{rule}` violated at `{key}`")]
    ConstraintViolation { key: EntityKey, rule: String },
    #[error("`{key}` is outside the proposing slice's writable set")]
    SliceViolation { key: EntityKey },
}

pub type ValidationResult = Result<(), ValidationError>;

/// A read-only lookup used by view-dependent constraints. The memory module
/// implements it for its view type; validation itself never mutates.
pub trait StatementLookup {
    fn value_of(&self, key: &EntityKey) -> Option<&Value>;
}

/// An empty view, for validating statements in isolation.
pub struct NoView;

impl StatementLookup for NoView {
    fn value_of(&self, _key: &EntityKey) -> Option<&Value> {
        None
    }
}

/// Lookup that prefers the proposal's own statements and falls back to a view,
/// so constraints see the state the proposal would produce.
struct Overlay<'a, V: StatementLookup + ?Sized> {
    proposal: &'a [Statement],
    view: &'a V,
}

impl<V: StatementLookup + ?Sized> StatementLookup for Overlay<'_, V> {
    fn value_of(&self, key: &EntityKey) -> Option<&Value> {
        self.proposal
            .iter()
            .rev()
            .find(|s| &s.key == key)
            .map(|s| &s.value)
            .or_else(|| self.view.value_of(key))
    }
}

fn check_constraint<V: StatementLookup + ?Sized>(
    c: &Constraint,
    s: &Statement,
    state: &Overlay<'_, V>,
) -> ValidationResult {
    let fail = |rule: &str| {
        Err(ValidationError::ConstraintViolation {
            key: s.key.clone(),
            rule: rule.to_string(),
        })
    };
    match c {
        Constraint::DomainMembership { id, predicate, allowed } => {
            if s.key.predicate.as_ref() == predicate {
                match &s.value {
                    Value::Symbol(sym) if allowed.contains(sym.as_ref()) => Ok(()),
                    _ => fail(id),
                }
            } else {
                Ok(())
            }
        }
        Constraint::RequiredCoPredicate { id, predicate, required } => {
            if s.key.predicate.as_ref() == predicate {
                let req = EntityKey::new(required, s.key.subject.as_ref());
                if state.value_of(&req).is_none() {
                    return fail(id);
                }
            }
            Ok(())
        }
        Constraint::ForbiddenValuePair { id, a, b } => {
            // Only fires on statements mentioning one side of the pair.
            let relevant =
                s.key.predicate.as_ref() == a.0 || s.key.predicate.as_ref() == b.0;
            if !relevant {
                return Ok(());
            }
            let ka = EntityKey::new(&a.0, s.key.subject.as_ref());
            let kb = EntityKey::new(&b.0, s.key.subject.as_ref());
            if state.value_of(&ka) == Some(&a.1) && state.value_of(&kb) == Some(&b.1) {
                return fail(id);
            }
            Ok(())
        }
    }
}

/// Validates one statement against the schema and a view: the predicate must
/// be declared, the value must lie in its domain, and every constraint
/// touching the predicate must hold. Deterministic in its inputs.
pub fn validate_statement_in<V: StatementLookup + ?Sized>(
    ont: &Ontology,
    s: &Statement,
    view: &V,
    proposal: &[Statement],
) -> ValidationResult {
    let domain = ont
        .predicates
        .get(s.key.predicate.as_ref())
        .ok_or_else(|| ValidationError::UndeclaredPredicate { key: s.key.clone() })?;
    if !domain.contains(&s.value) {
        return Err(ValidationError::DomainViolation {
            key: s.key.clone(),
            value: s.value.clone(),
            rule: format!("domain({})", s.key.predicate),
        });
    }
    let state = Overlay { proposal, view };
    for c in &self_constraints(ont, &s.key.predicate) {
        check_constraint(c, s, &state)?;
    }
    Ok(())
}

fn self_constraints<'a>(ont: &'a Ontology, predicate: &str) -> Vec<&'a Constraint> {
    ont.constraints
        .iter()
        .filter(|c| c.touches(predicate))
        .collect()
}

/// Statement validation against an empty view.
pub fn validate_statement(ont: &Ontology, s: &Statement) -> ValidationResult {
    validate_statement_in(ont, s, &NoView, &[])
}

/// Validates a whole proposal: every statement must pass statement
/// validation and fall inside the slice's writable set. All-or-nothing —
/// one bad statement rejects the proposal.
pub fn validate_proposal<V: StatementLookup + ?Sized>(
    ont: &Ontology,
    slice: &SliceSpec,
    p: &UpdateProposal,
    view: &V,
) -> ValidationResult {
    for s in &p.statements {
        if !slice.writes(s.key.predicate.as_ref()) {
            return Err(ValidationError::SliceViolation { key: s.key.clone() });
        }
        validate_statement_in(ont, s, view, &p.statements)?;
    }
    Ok(())
}

/// True iff some key's predicate is readable by the slice.
pub fn slice_overlaps<'a>(
    slice: &SliceSpec,
    entities: impl IntoIterator<Item = &'a EntityKey>,
) -> bool {
    entities
        .into_iter()
        .any(|k| slice.reads(k.predicate.as_ref()))
}
