//! Structured prompt representation with explicit provenance and priority.
//!
//! A request is modeled as an ordered composition of segments (system,
//! developer, user, retrieved context), each carrying the text, its role, the
//! priority derived from that role, a provenance label, and free-form
//! metadata. Every enforcement stage consults this structure instead of a
//! flat string.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// The role of a prompt segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Developer,
    User,
    Retrieved,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::System, Role::Developer, Role::User, Role::Retrieved];

    /// Priority under the lattice S > D > U > R.
    pub fn priority(self) -> Priority {
        Priority(match self {
            Role::System => 3,
            Role::Developer => 2,
            Role::User => 1,
            Role::Retrieved => 0,
        })
    }

    /// True iff this role may issue governing instructions.
    pub fn is_privileged(self) -> bool {
        matches!(self, Role::System | Role::Developer)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::Developer => "developer",
            Role::User => "user",
            Role::Retrieved => "retrieved",
        }
    }
}

/// Authority rank of a role. Higher outranks lower; derived from [`Role`]
/// only, so a segment can never carry a priority inconsistent with its role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Priority(u8);

impl Priority {
    pub fn rank(self) -> u8 {
        self.0
    }
}

/// True iff `a` strictly outranks `b` under S > D > U > R.
pub fn outranks(a: Role, b: Role) -> bool {
    a.priority() > b.priority()
}

/// Which channel a segment entered through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceSource {
    /// Injected by the defender-owned gateway configuration.
    GatewayConfig,
    /// Untrusted client request channel.
    ClientRequest,
    /// Untrusted retrieval/document channel.
    RetrievalPipeline,
}

/// Provenance label: the source channel plus an optional opaque identifier
/// for the concrete origin (e.g. a document id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: ProvenanceSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_id: Option<String>,
}

impl Provenance {
    pub fn gateway() -> Self {
        Provenance { source: ProvenanceSource::GatewayConfig, origin_id: None }
    }

    pub fn client() -> Self {
        Provenance { source: ProvenanceSource::ClientRequest, origin_id: None }
    }

    pub fn retrieval(origin_id: impl Into<String>) -> Self {
        Provenance {
            source: ProvenanceSource::RetrievalPipeline,
            origin_id: Some(origin_id.into()),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{role:?} segment requires {expected:?} provenance, got {actual:?}")]
    ProvenanceMismatch {
        role: Role,
        expected: ProvenanceSource,
        actual: ProvenanceSource,
    },
    #[error("structural ambiguity: more than one {0:?} segment")]
    DuplicatePrivilegedSegment(Role),
    #[error("segment priority {claimed} contradicts role {role:?}")]
    PriorityMismatch { role: Role, claimed: u8 },
}

/// One provenance-tagged prompt component.
///
/// Text is NFC-normalized at construction so downstream pattern matching
/// cannot be evaded with decomposed codepoints. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SegmentWire", into = "SegmentWire")]
pub struct Segment {
    text: String,
    role: Role,
    priority: Priority,
    provenance: Provenance,
    metadata: BTreeMap<String, String>,
}

/// Serde shape for [`Segment`]; construction re-validates invariants.
#[derive(Serialize, Deserialize)]
struct SegmentWire {
    text: String,
    role: Role,
    priority: Priority,
    provenance: Provenance,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl TryFrom<SegmentWire> for Segment {
    type Error = PromptError;

    fn try_from(w: SegmentWire) -> Result<Self, PromptError> {
        if w.priority != w.role.priority() {
            return Err(PromptError::PriorityMismatch { role: w.role, claimed: w.priority.0 });
        }
        Segment::with_metadata(w.text, w.role, w.provenance, w.metadata)
    }
}

impl From<Segment> for SegmentWire {
    fn from(s: Segment) -> Self {
        SegmentWire {
            text: s.text,
            role: s.role,
            priority: s.priority,
            provenance: s.provenance,
            metadata: s.metadata,
        }
    }
}

impl Segment {
    pub fn new(
        text: impl Into<String>,
        role: Role,
        provenance: Provenance,
    ) -> Result<Self, PromptError> {
        Self::with_metadata(text, role, provenance, BTreeMap::new())
    }

    pub fn with_metadata(
        text: impl Into<String>,
        role: Role,
        provenance: Provenance,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self, PromptError> {
        let expected = match role {
            Role::System | Role::Developer => Some(ProvenanceSource::GatewayConfig),
            Role::Retrieved => Some(ProvenanceSource::RetrievalPipeline),
            Role::User => None,
        };
        if let Some(expected) = expected {
            if provenance.source != expected {
                return Err(PromptError::ProvenanceMismatch {
                    role,
                    expected,
                    actual: provenance.source,
                });
            }
        }
        let text: String = text.into().nfc().collect();
        Ok(Segment { text, priority: role.priority(), role, provenance, metadata })
    }

    /// System segment sourced from gateway configuration.
    pub fn system(text: impl Into<String>) -> Self {
        Self::new(text, Role::System, Provenance::gateway()).expect("gateway provenance is valid")
    }

    /// Developer segment sourced from gateway configuration.
    pub fn developer(text: impl Into<String>) -> Self {
        Self::new(text, Role::Developer, Provenance::gateway())
            .expect("gateway provenance is valid")
    }

    /// User segment from the client request channel.
    pub fn user(text: impl Into<String>) -> Self {
        Self::new(text, Role::User, Provenance::client()).expect("client provenance is valid")
    }

    /// Retrieved segment from the retrieval pipeline, tagged with a doc id.
    pub fn retrieved(text: impl Into<String>, origin_id: impl Into<String>) -> Self {
        Self::new(text, Role::Retrieved, Provenance::retrieval(origin_id))
            .expect("retrieval provenance is valid")
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn priority(&self) -> Priority {
        self.priority
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Copy of this segment with replaced text and extra metadata entries;
    /// used by sanitization. Role, priority, and provenance never change.
    pub(crate) fn rewritten(
        &self,
        text: String,
        extra_metadata: impl IntoIterator<Item = (String, String)>,
    ) -> Segment {
        let mut metadata = self.metadata.clone();
        metadata.extend(extra_metadata);
        Segment {
            text: text.nfc().collect(),
            role: self.role,
            priority: self.priority,
            provenance: self.provenance.clone(),
            metadata,
        }
    }
}

/// Ordered composition of segments in lattice order: at most one System and
/// one Developer segment, then any number of User and Retrieved segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ComposedWire", into = "ComposedWire")]
pub struct ComposedPrompt {
    segments: Vec<Segment>,
}

#[derive(Serialize, Deserialize)]
struct ComposedWire {
    segments: Vec<Segment>,
}

impl TryFrom<ComposedWire> for ComposedPrompt {
    type Error = PromptError;

    fn try_from(w: ComposedWire) -> Result<Self, PromptError> {
        compose(w.segments)
    }
}

impl From<ComposedPrompt> for ComposedWire {
    fn from(p: ComposedPrompt) -> Self {
        ComposedWire { segments: p.segments }
    }
}

/// Compose segments into lattice order (S, D, U, R), preserving the relative
/// order within each role class.
pub fn compose(segments: Vec<Segment>) -> Result<ComposedPrompt, PromptError> {
    for role in [Role::System, Role::Developer] {
        if segments.iter().filter(|s| s.role == role).count() > 1 {
            return Err(PromptError::DuplicatePrivilegedSegment(role));
        }
    }
    let mut segments = segments;
    segments.sort_by_key(|s| std::cmp::Reverse(s.priority()));
    Ok(ComposedPrompt { segments })
}

impl ComposedPrompt {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// True iff a System or Developer segment is present — the precondition
    /// for a hierarchy to be violated.
    pub fn has_governing_segment(&self) -> bool {
        self.segments.iter().any(|s| s.role.is_privileged())
    }

    /// The User and Retrieved segments with their indices, in prompt order.
    pub fn lower_priority_segments(&self) -> impl Iterator<Item = (usize, &Segment)> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.role.is_privileged())
    }

    /// Replace the segment at `index`, keeping everything else unchanged.
    pub(crate) fn with_segment_replaced(&self, index: usize, segment: Segment) -> ComposedPrompt {
        let mut segments = self.segments.clone();
        segments[index] = segment;
        ComposedPrompt { segments }
    }
}
