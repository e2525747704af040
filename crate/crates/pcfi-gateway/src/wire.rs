//! Chat-completion wire format and the trust-assignment step that turns an
//! inbound request into a composed prompt.
//!
//! Retrieved documents travel in a dedicated `rag_docs` extension field so
//! the gateway can assign retrieval provenance unambiguously; unknown body
//! fields are passed through to the backend untouched.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use pcfi_core::prompt::{compose, ComposedPrompt, PromptError, Segment};

use crate::config::GatewayConfig;

pub const WIRE_ROLES: [&str; 3] = ["system", "developer", "user"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RagDoc {
    pub id: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InboundRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub messages: Vec<WireMessage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rag_docs: Vec<RagDoc>,
    /// Unknown fields (temperature etc.), forwarded bit-exactly.
    #[serde(flatten)]
    pub passthrough: Map<String, Value>,
}

/// Field-level problems found while validating an inbound request.
#[derive(Debug, Clone, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug)]
pub enum TrustError {
    Invalid(Vec<FieldError>),
    Structure(PromptError),
}

/// Build the composed prompt with defender-controlled trust assignment.
///
/// The System segment always comes from gateway configuration, never the
/// client. With `trust_client_roles=false`, every client message becomes a
/// User segment regardless of its claimed wire role; demoted claims are
/// recorded in segment metadata as `claimed_role`. Each rag doc becomes a
/// Retrieved segment whose origin id is the doc id.
pub fn parse_and_trust(
    req: &InboundRequest,
    cfg: &GatewayConfig,
) -> Result<ComposedPrompt, TrustError> {
    let mut errors = Vec::new();
    if req.messages.is_empty() {
        errors.push(FieldError {
            field: "messages".to_string(),
            message: "must contain at least one message".to_string(),
        });
    }
    for (i, msg) in req.messages.iter().enumerate() {
        if !WIRE_ROLES.contains(&msg.role.as_str()) {
            errors.push(FieldError {
                field: format!("messages[{i}].role"),
                message: format!(
                    "unknown role `{}`; accepted roles: {}",
                    msg.role,
                    WIRE_ROLES.join(", ")
                ),
            });
        }
    }
    for (i, doc) in req.rag_docs.iter().enumerate() {
        if doc.id.is_empty() {
            errors.push(FieldError {
                field: format!("rag_docs[{i}].id"),
                message: "must be non-empty".to_string(),
            });
        }
    }
    if !errors.is_empty() {
        return Err(TrustError::Invalid(errors));
    }

    let mut segments = Vec::new();
    segments.push(Segment::system(&cfg.system_policy_text));
    if let Some(dev) = &cfg.developer_prompt_text {
        if !dev.trim().is_empty() {
            segments.push(Segment::developer(dev));
        }
    }
    for msg in &req.messages {
        let trusted_claim = cfg.trust_client_roles && msg.role != "user";
        let segment = if trusted_claim {
            match msg.role.as_str() {
                "system" => Segment::system(&msg.content),
                "developer" => Segment::developer(&msg.content),
                _ => unreachable!("validated wire role"),
            }
        } else if msg.role == "user" {
            Segment::user(&msg.content)
        } else {
            // untrusted privileged claim: demote to User, remember the claim
            Segment::with_metadata(
                &msg.content,
                pcfi_core::prompt::Role::User,
                pcfi_core::prompt::Provenance::client(),
                [("claimed_role".to_string(), msg.role.clone())].into(),
            )
            .expect("user/client provenance is valid")
        };
        segments.push(segment);
    }
    for doc in &req.rag_docs {
        segments.push(Segment::retrieved(&doc.content, &doc.id));
    }
    compose(segments).map_err(TrustError::Structure)
}

/// Outbound body for the backend: gateway-injected system/developer
/// messages followed by the client content. With `sanitized` present, the
/// user/retrieved texts come from the sanitized prompt; otherwise the
/// original client content is forwarded byte-identically.
pub fn build_outbound(
    req: &InboundRequest,
    cfg: &GatewayConfig,
    sanitized: Option<&ComposedPrompt>,
) -> Value {
    let user_texts: Option<Vec<&str>> = sanitized.map(|p| {
        p.segments()
            .iter()
            .filter(|s| s.role() == pcfi_core::prompt::Role::User)
            .map(Segment::text)
            .collect()
    });
    let doc_texts: Option<Vec<&str>> = sanitized.map(|p| {
        p.segments()
            .iter()
            .filter(|s| s.role() == pcfi_core::prompt::Role::Retrieved)
            .map(Segment::text)
            .collect()
    });

    let mut messages = Vec::new();
    messages.push(serde_json::json!({
        "role": "system",
        "content": cfg.system_policy_text,
    }));
    if let Some(dev) = &cfg.developer_prompt_text {
        if !dev.trim().is_empty() {
            messages.push(serde_json::json!({"role": "developer", "content": dev}));
        }
    }
    let mut user_index = 0usize;
    for msg in &req.messages {
        let demoted = !cfg.trust_client_roles || msg.role == "user";
        let role = if demoted { "user" } else { msg.role.as_str() };
        let content: &str = match (&user_texts, demoted) {
            (Some(texts), true) => {
                let t = texts[user_index];
                user_index += 1;
                t
            }
            _ => &msg.content,
        };
        messages.push(serde_json::json!({"role": role, "content": content}));
    }

    let mut body = Map::new();
    if let Some(model) = &req.model {
        body.insert("model".to_string(), Value::String(model.clone()));
    }
    body.insert("messages".to_string(), Value::Array(messages));
    if !req.rag_docs.is_empty() {
        let docs: Vec<Value> = req
            .rag_docs
            .iter()
            .enumerate()
            .map(|(i, doc)| {
                let content = doc_texts
                    .as_ref()
                    .map(|texts| texts[i])
                    .unwrap_or(doc.content.as_str());
                serde_json::json!({"id": doc.id, "content": content})
            })
            .collect();
        body.insert("rag_docs".to_string(), Value::Array(docs));
    }
    for (k, v) in &req.passthrough {
        body.insert(k.clone(), v.clone());
    }
    Value::Object(body)
}
