//! Gateway configuration.

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

pub const DEFAULT_MAX_BODY_BYTES: usize = 1024 * 1024;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen_address: String,
    pub backend_url: String,
    /// Defender-owned system prompt injected into every request.
    pub system_policy_text: String,
    pub developer_prompt_text: Option<String>,
    /// Source for `POST /admin/reload-policy`.
    pub policy_file_path: Option<PathBuf>,
    pub request_timeout: Duration,
    /// When false (the default), client-claimed system/developer roles are
    /// demoted to User segments.
    pub trust_client_roles: bool,
    pub max_body_bytes: usize,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("system_policy_text must be non-empty")]
    EmptySystemPolicy,
    #[error("backend_url must be non-empty")]
    EmptyBackendUrl,
}

impl GatewayConfig {
    pub fn new(backend_url: impl Into<String>, system_policy_text: impl Into<String>) -> Self {
        GatewayConfig {
            listen_address: "127.0.0.1:8080".to_string(),
            backend_url: backend_url.into(),
            system_policy_text: system_policy_text.into(),
            developer_prompt_text: None,
            policy_file_path: None,
            request_timeout: Duration::from_secs(30),
            trust_client_roles: false,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.system_policy_text.trim().is_empty() {
            return Err(ConfigError::EmptySystemPolicy);
        }
        if self.backend_url.trim().is_empty() {
            return Err(ConfigError::EmptyBackendUrl);
        }
        Ok(())
    }
}
