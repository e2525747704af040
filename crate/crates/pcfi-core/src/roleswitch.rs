//! Stage 2: role-switch detection and sanitization.
//!
//! Lower-priority segments may try to impersonate privileged roles with line
//! prefixes (`system:`), serialized role fields (`"role":"system"`), or
//! XML-like role tags (`<system>`). Detection assigns a confidence per
//! marker; sanitization removes the marker spans without upgrading the
//! segment's actual role or priority.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{ComposedPrompt, Role};

/// Default confidence threshold above which sanitization is recommended.
pub const DEFAULT_ROLESWITCH_THRESHOLD: f64 = 0.75;

const CONF_PREFIX_SEGMENT_START: f64 = 0.95;
const CONF_PREFIX_LINE_START: f64 = 0.85;
const CONF_SERIALIZED_FIELD: f64 = 0.9;
const CONF_XML_TAG: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleMarkerKind {
    /// A line beginning with `system:` or `developer:`.
    LinePrefix,
    /// A serialized fragment like `"role":"system"`.
    SerializedField,
    /// An XML-like role tag such as `<system>` or `</developer>`.
    XmlLikeTag,
}

impl RoleMarkerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleMarkerKind::LinePrefix => "line_prefix",
            RoleMarkerKind::SerializedField => "serialized_field",
            RoleMarkerKind::XmlLikeTag => "xml_like_tag",
        }
    }
}

/// One detected impersonation marker inside a User/Retrieved segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSwitchFinding {
    pub kind: RoleMarkerKind,
    /// The privileged role being impersonated (System or Developer).
    pub claimed_role: Role,
    pub segment_index: usize,
    pub byte_span: (usize, usize),
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSwitchReport {
    pub findings: Vec<RoleSwitchFinding>,
    pub sanitize_recommended: bool,
}

impl RoleSwitchReport {
    pub fn empty() -> Self {
        RoleSwitchReport { findings: Vec::new(), sanitize_recommended: false }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoleSwitchError {
    #[error("stale report: span {span:?} does not lie within segment {segment_index}")]
    StaleReport { segment_index: usize, span: (usize, usize) },
}

// A line-prefix match consumes a whole run of stacked role prefixes
// (`system: system: hi`) so one sanitization pass reaches a fixed point.
fn line_prefix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?mi)^[ \t]*((system|developer)[ \t]*:[ \t]*(?:(?:system|developer)[ \t]*:[ \t]*)*)")
            .unwrap()
    })
}

fn serialized_field_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)["']role["'][ \t]*:[ \t]*["'](system|developer)["']"#).unwrap()
    })
}

fn xml_tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)</?[ \t]*(system|developer)[ \t]*>").unwrap())
}

fn claimed_role(token: &str) -> Role {
    if token.eq_ignore_ascii_case("system") {
        Role::System
    } else {
        Role::Developer
    }
}

/// Detect role-impersonation markers in the User/Retrieved segments of
/// `prompt`. Privileged segments are never inspected: their role claims are
/// legitimate by provenance.
pub fn detect_role_markers(prompt: &ComposedPrompt, threshold: f64) -> RoleSwitchReport {
    let mut findings = Vec::new();
    for (segment_index, segment) in prompt.lower_priority_segments() {
        let text = segment.text();

        for caps in line_prefix_re().captures_iter(text) {
            let run = caps.get(1).unwrap();
            let confidence = if text[..run.start()].contains('\n') {
                CONF_PREFIX_LINE_START
            } else {
                CONF_PREFIX_SEGMENT_START
            };
            findings.push(RoleSwitchFinding {
                kind: RoleMarkerKind::LinePrefix,
                claimed_role: claimed_role(caps.get(2).unwrap().as_str()),
                segment_index,
                byte_span: (run.start(), run.end()),
                confidence,
            });
        }

        for caps in serialized_field_re().captures_iter(text) {
            let whole = caps.get(0).unwrap();
            findings.push(RoleSwitchFinding {
                kind: RoleMarkerKind::SerializedField,
                claimed_role: claimed_role(caps.get(1).unwrap().as_str()),
                segment_index,
                byte_span: (whole.start(), whole.end()),
                confidence: CONF_SERIALIZED_FIELD,
            });
        }

        for caps in xml_tag_re().captures_iter(text) {
            let whole = caps.get(0).unwrap();
            findings.push(RoleSwitchFinding {
                kind: RoleMarkerKind::XmlLikeTag,
                claimed_role: claimed_role(caps.get(1).unwrap().as_str()),
                segment_index,
                byte_span: (whole.start(), whole.end()),
                confidence: CONF_XML_TAG,
            });
        }
    }
    let sanitize_recommended = findings.iter().any(|f| f.confidence >= threshold);
    RoleSwitchReport { findings, sanitize_recommended }
}

/// Remove every reported marker span from the affected segments. Affected
/// segments get `sanitized=true` and the removed marker kinds recorded in
/// their metadata; all other segments are returned unchanged.
pub fn sanitize(
    prompt: &ComposedPrompt,
    report: &RoleSwitchReport,
) -> Result<ComposedPrompt, RoleSwitchError> {
    let mut result = prompt.clone();
    let mut by_segment: Vec<(usize, Vec<&RoleSwitchFinding>)> = Vec::new();
    for finding in &report.findings {
        match by_segment.iter_mut().find(|(i, _)| *i == finding.segment_index) {
            Some((_, v)) => v.push(finding),
            None => by_segment.push((finding.segment_index, vec![finding])),
        }
    }

    for (segment_index, findings) in by_segment {
        let segment = prompt
            .segments()
            .get(segment_index)
            .ok_or(RoleSwitchError::StaleReport {
                segment_index,
                span: findings[0].byte_span,
            })?;
        let text = segment.text();
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for f in &findings {
            let (start, end) = f.byte_span;
            if start > end
                || end > text.len()
                || !text.is_char_boundary(start)
                || !text.is_char_boundary(end)
            {
                return Err(RoleSwitchError::StaleReport { segment_index, span: f.byte_span });
            }
            spans.push(f.byte_span);
        }
        spans.sort_unstable();
        // merge overlaps so each byte is removed once
        let mut merged: Vec<(usize, usize)> = Vec::new();
        for (start, end) in spans {
            match merged.last_mut() {
                Some((_, last_end)) if start <= *last_end => *last_end = (*last_end).max(end),
                _ => merged.push((start, end)),
            }
        }
        let mut out = String::with_capacity(text.len());
        let mut cursor = 0;
        for (start, end) in merged {
            out.push_str(&text[cursor..start]);
            cursor = end;
        }
        out.push_str(&text[cursor..]);

        let mut kinds: Vec<&str> = findings.iter().map(|f| f.kind.as_str()).collect();
        kinds.sort_unstable();
        kinds.dedup();
        let replaced = segment.rewritten(
            out,
            [
                ("sanitized".to_string(), "true".to_string()),
                ("sanitized_markers".to_string(), kinds.join(",")),
            ],
        );
        result = result.with_segment_replaced(segment_index, replaced);
    }
    Ok(result)
}

/// Detect and sanitize repeatedly until no marker remains. Removing a marker
/// can expose another (a tag stripped at line start can move a `system:`
/// prefix to the line start), so the single-pass [`sanitize`] is iterated to
/// a fixed point. Terminates because every pass with findings removes bytes.
pub fn sanitize_fully(
    prompt: &ComposedPrompt,
    threshold: f64,
) -> Result<ComposedPrompt, RoleSwitchError> {
    let mut current = prompt.clone();
    loop {
        let report = detect_role_markers(&current, threshold);
        if report.findings.is_empty() {
            return Ok(current);
        }
        current = sanitize(&current, &report)?;
    }
}
