//! Decision engine: combines the three stage reports into a final
//! ALLOW/SANITIZE/BLOCK verdict with a full trace and per-stage timings.
//!
//! Verdict rules:
//!   * Block    iff the hierarchical stage reports any violation,
//!   * Sanitize iff no violation and the role-switch stage recommends it,
//!   * Allow    otherwise.
//!
//! The lexical risk score is advisory only; it is carried in the trace for
//! logs and metrics but never changes the verdict. All three stages always
//! run so traces and per-stage latency statistics are complete, and the
//! hierarchical stage sees the ORIGINAL prompt: a segment that both
//! impersonates a role and carries a forbidden directive must block, not
//! slip through as sanitized.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::lexical::LexicalReport;
use crate::policy::{CompiledPolicy, Violation};
use crate::prompt::ComposedPrompt;
use crate::roleswitch::{detect_role_markers, sanitize_fully, RoleSwitchReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Allow,
    Sanitize,
    Block,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Allow => "allow",
            Verdict::Sanitize => "sanitize",
            Verdict::Block => "block",
        }
    }
}

pub const STAGE_LEXICAL: &str = "lexical";
pub const STAGE_ROLESWITCH: &str = "roleswitch";
pub const STAGE_POLICY: &str = "policy";
pub const STAGE_TOTAL: &str = "total";

/// The canonical per-request evaluation record: verdict, per-stage findings,
/// per-stage wall-clock timings (nanoseconds), and the sanitized prompt when
/// the verdict is Sanitize.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub verdict: Verdict,
    pub lexical: LexicalReport,
    pub roleswitch: RoleSwitchReport,
    pub violations: Vec<Violation>,
    /// Stage name -> duration in nanoseconds; always carries the three
    /// stage entries plus `total` (measured independently).
    pub stage_timings_ns: BTreeMap<String, u64>,
    pub policy_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sanitized_prompt: Option<ComposedPrompt>,
}

impl DecisionTrace {
    pub fn total_ns(&self) -> u64 {
        self.stage_timings_ns.get(STAGE_TOTAL).copied().unwrap_or(0)
    }

    /// Timings in milliseconds at three decimal places, the granularity used
    /// in reports.
    pub fn timings_ms(&self) -> BTreeMap<String, f64> {
        self.stage_timings_ns
            .iter()
            .map(|(k, &ns)| (k.clone(), (ns as f64 / 1e6 * 1000.0).round() / 1000.0))
            .collect()
    }

    pub fn rule_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.violations.iter().map(|v| v.rule_id.clone()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Run the three-stage pipeline over `prompt` and produce the verdict and
/// trace.
pub fn evaluate(prompt: &ComposedPrompt, policy: &CompiledPolicy) -> DecisionTrace {
    let total_start = Instant::now();
    let mut stage_timings_ns = BTreeMap::new();

    let start = Instant::now();
    let lexical = policy.lexical().scan(prompt);
    stage_timings_ns.insert(STAGE_LEXICAL.to_string(), start.elapsed().as_nanos() as u64);

    let start = Instant::now();
    let roleswitch = detect_role_markers(prompt, policy.roleswitch_threshold());
    stage_timings_ns.insert(STAGE_ROLESWITCH.to_string(), start.elapsed().as_nanos() as u64);

    let start = Instant::now();
    let violations = policy.check(prompt);
    stage_timings_ns.insert(STAGE_POLICY.to_string(), start.elapsed().as_nanos() as u64);

    let (verdict, sanitized_prompt) = if !violations.is_empty() {
        (Verdict::Block, None)
    } else if roleswitch.sanitize_recommended {
        let sanitized = sanitize_fully(prompt, policy.roleswitch_threshold())
            .expect("reports are produced from the prompt they sanitize");
        (Verdict::Sanitize, Some(sanitized))
    } else {
        (Verdict::Allow, None)
    };

    stage_timings_ns.insert(STAGE_TOTAL.to_string(), total_start.elapsed().as_nanos() as u64);
    DecisionTrace {
        verdict,
        lexical,
        roleswitch,
        violations,
        stage_timings_ns,
        policy_version: policy.version().to_string(),
        sanitized_prompt,
    }
}

/// True iff the gateway outcome counts as an interception (SANITIZE or
/// BLOCK).
pub fn is_intercepted(trace: &DecisionTrace) -> bool {
    matches!(trace.verdict, Verdict::Sanitize | Verdict::Block)
}
