//! API-boundary enforcement gateway.
//!
//! Intercepts chat-completion-style requests, builds the provenance-tagged
//! prompt with defender-controlled trust assignment, runs the enforcement
//! engine, and forwards / forwards-sanitized / rejects with a structured
//! response. Policies hot-reload without restarting.

pub mod config;
pub mod service;
pub mod stub;
pub mod wire;

pub use config::GatewayConfig;
pub use service::{build_router, serve, spawn, GatewayState, RejectionResponse};
pub use stub::{spawn_stub_backend, StubBackend};
pub use wire::{build_outbound, parse_and_trust, InboundRequest, RagDoc, TrustError, WireMessage};
