//! Priority-aware prompt-injection enforcement engine.
//!
//! Requests are modeled as provenance-tagged prompt segments ordered by the
//! authority lattice System > Developer > User > Retrieved. A three-stage
//! pipeline — lexical screening, role-switch detection, hierarchical policy
//! enforcement — yields an ALLOW/SANITIZE/BLOCK verdict with a full decision
//! trace. A JSONL benchmark harness replays attack and benign corpora and
//! reports APR/FPR and latency percentiles.

pub mod benchmark;
pub mod decision;
pub mod lexical;
pub mod matcher;
pub mod metrics;
pub mod policy;
pub mod prompt;
pub mod roleswitch;

pub use decision::{evaluate, is_intercepted, DecisionTrace, Verdict};
pub use lexical::{default_lexical_patterns, LexicalPattern, LexicalReport};
pub use policy::{default_policy, load_policy, load_policy_file, CompiledPolicy, PolicySet};
pub use prompt::{compose, outranks, ComposedPrompt, Provenance, Role, Segment};
pub use roleswitch::{detect_role_markers, sanitize, sanitize_fully, RoleSwitchReport};
