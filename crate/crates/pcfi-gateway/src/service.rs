//! The HTTP middleware: request interception, enforcement, forwarding,
//! structured rejection, policy hot-reload, and health/metrics.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;
use tracing::{info, warn};

use pcfi_core::decision::{self, Verdict};
use pcfi_core::metrics::LatencySummary;
use pcfi_core::policy::{load_policy_file, CompiledPolicy};

use crate::config::GatewayConfig;
use crate::wire::{build_outbound, parse_and_trust, InboundRequest, TrustError};

const METRICS_WINDOW: usize = 4096;

/// Verdict counters and a sliding window of enforcement durations.
#[derive(Default)]
struct MetricsWindow {
    allow: u64,
    sanitize: u64,
    block: u64,
    errors: u64,
    enforcement: VecDeque<Duration>,
}

impl MetricsWindow {
    fn record(&mut self, verdict: Verdict, elapsed: Duration) {
        match verdict {
            Verdict::Allow => self.allow += 1,
            Verdict::Sanitize => self.sanitize += 1,
            Verdict::Block => self.block += 1,
        }
        if self.enforcement.len() == METRICS_WINDOW {
            self.enforcement.pop_front();
        }
        self.enforcement.push_back(elapsed);
    }

    fn latency(&self) -> Option<LatencySummary> {
        let samples: Vec<Duration> = self.enforcement.iter().copied().collect();
        LatencySummary::from_durations(&samples).ok()
    }
}

pub struct GatewayState {
    config: GatewayConfig,
    policy: RwLock<Arc<CompiledPolicy>>,
    http: reqwest::Client,
    metrics: Mutex<MetricsWindow>,
}

impl GatewayState {
    pub fn new(config: GatewayConfig, policy: CompiledPolicy) -> Arc<Self> {
        let http = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .expect("http client builds");
        Arc::new(GatewayState {
            config,
            policy: RwLock::new(Arc::new(policy)),
            http,
            metrics: Mutex::new(MetricsWindow::default()),
        })
    }

    /// Snapshot of the active policy. In-flight requests keep the snapshot
    /// they started with across reloads.
    fn active_policy(&self) -> Arc<CompiledPolicy> {
        self.policy.read().unwrap().clone()
    }

    fn swap_policy(&self, policy: CompiledPolicy) {
        *self.policy.write().unwrap() = Arc::new(policy);
    }
}

/// Structured rejection body returned for blocked requests. Rule ids are
/// named but the matched attack text is never reflected back.
#[derive(Debug, Serialize)]
pub struct RejectionResponse {
    pub status: u16,
    pub error_code: String,
    pub verdict: Verdict,
    pub rule_ids: Vec<String>,
    pub message: String,
    pub trace_id: String,
    pub policy_version: String,
}

pub fn build_router(state: Arc<GatewayState>) -> Router {
    let max_body = state.config.max_body_bytes;
    Router::new()
        .route("/v1/chat/completions", post(chat_completions))
        .route("/healthz", get(healthz))
        .route("/admin/reload-policy", post(reload_policy))
        .layer(DefaultBodyLimit::max(max_body))
        .with_state(state)
}

/// Bind the configured listen address and serve until the task is dropped.
/// Returns the bound address (useful with port 0) and the server task.
pub async fn spawn(
    state: Arc<GatewayState>,
) -> std::io::Result<(std::net::SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = TcpListener::bind(&state.config.listen_address).await?;
    let addr = listener.local_addr()?;
    let router = build_router(state);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            warn!(error = %e, "gateway server exited");
        }
    });
    Ok((addr, handle))
}

pub async fn serve(state: Arc<GatewayState>) -> std::io::Result<()> {
    let listener = TcpListener::bind(&state.config.listen_address).await?;
    info!(addr = %listener.local_addr()?, "gateway listening");
    axum::serve(listener, build_router(state)).await
}

fn error_body(status: StatusCode, code: &str, message: String) -> Response {
    (status, Json(json!({"error_code": code, "message": message}))).into_response()
}

async fn chat_completions(State(state): State<Arc<GatewayState>>, body: Bytes) -> Response {
    let trace_id = uuid::Uuid::new_v4().to_string();

    let request: InboundRequest = match serde_json::from_slice(&body) {
        Ok(req) => req,
        Err(e) => {
            return error_body(
                StatusCode::BAD_REQUEST,
                "pcfi.invalid_request",
                format!("malformed request body: {e}"),
            )
        }
    };

    let prompt = match parse_and_trust(&request, &state.config) {
        Ok(prompt) => prompt,
        Err(TrustError::Invalid(errors)) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(json!({
                    "error_code": "pcfi.invalid_request",
                    "message": "request failed validation",
                    "fields": errors,
                })),
            )
                .into_response()
        }
        Err(TrustError::Structure(e)) => {
            return error_body(
                StatusCode::BAD_REQUEST,
                "pcfi.invalid_request",
                e.to_string(),
            )
        }
    };

    let policy = state.active_policy();
    let start = std::time::Instant::now();
    let trace = decision::evaluate(&prompt, &policy);
    let enforcement = start.elapsed();
    state.metrics.lock().unwrap().record(trace.verdict, enforcement);

    info!(
        trace_id = %trace_id,
        verdict = trace.verdict.as_str(),
        rule_ids = ?trace.rule_ids(),
        risk_score = trace.lexical.risk_score,
        policy_version = %trace.policy_version,
        timings_ms = ?trace.timings_ms(),
        "request evaluated"
    );

    match trace.verdict {
        Verdict::Block => {
            let rejection = RejectionResponse {
                status: StatusCode::FORBIDDEN.as_u16(),
                error_code: "pcfi.blocked".to_string(),
                verdict: Verdict::Block,
                rule_ids: trace.rule_ids(),
                message: "request violates the configured instruction hierarchy policy"
                    .to_string(),
                trace_id,
                policy_version: trace.policy_version.clone(),
            };
            (StatusCode::FORBIDDEN, Json(rejection)).into_response()
        }
        Verdict::Allow | Verdict::Sanitize => {
            let outbound = build_outbound(&request, &state.config, trace.sanitized_prompt.as_ref());
            let url = format!(
                "{}/v1/chat/completions",
                state.config.backend_url.trim_end_matches('/')
            );
            match state.http.post(&url).json(&outbound).send().await {
                Ok(resp) => {
                    let status = StatusCode::from_u16(resp.status().as_u16())
                        .unwrap_or(StatusCode::BAD_GATEWAY);
                    let bytes = resp.bytes().await.unwrap_or_default();
                    let mut response = (status, bytes).into_response();
                    response.headers_mut().insert(
                        header::CONTENT_TYPE,
                        HeaderValue::from_static("application/json"),
                    );
                    if trace.verdict == Verdict::Sanitize {
                        response
                            .headers_mut()
                            .insert("pcfi-action", HeaderValue::from_static("sanitize"));
                    }
                    if let Ok(v) = HeaderValue::from_str(&trace_id) {
                        response.headers_mut().insert("pcfi-trace-id", v);
                    }
                    response
                }
                Err(e) => {
                    state.metrics.lock().unwrap().errors += 1;
                    warn!(trace_id = %trace_id, error = %e, "backend request failed");
                    error_body(
                        StatusCode::BAD_GATEWAY,
                        "pcfi.backend_error",
                        format!("backend unreachable: {e}"),
                    )
                }
            }
        }
    }
}

async fn healthz(State(state): State<Arc<GatewayState>>) -> Response {
    let policy = state.active_policy();
    let metrics = state.metrics.lock().unwrap();
    let latency = metrics.latency();
    let body = json!({
        "status": "ok",
        "policy_version": policy.version(),
        "counts": {
            "allow": metrics.allow,
            "sanitize": metrics.sanitize,
            "block": metrics.block,
            "backend_errors": metrics.errors,
        },
        "latency_ms": latency.map(|l| json!({
            "median": l.median_ms,
            "p95": l.p95_ms,
            "p99": l.p99_ms,
        })),
    });
    Json(body).into_response()
}

/// Reload the policy file and swap it in atomically. On any load or
/// validation failure the previous policy stays active.
async fn reload_policy(State(state): State<Arc<GatewayState>>) -> Response {
    let Some(path) = state.config.policy_file_path.clone() else {
        return error_body(
            StatusCode::BAD_REQUEST,
            "pcfi.no_policy_file",
            "gateway was started without a policy file".to_string(),
        );
    };
    let loaded = load_policy_file(&path).and_then(CompiledPolicy::compile);
    match loaded {
        Ok(policy) => {
            let version = policy.version().to_string();
            state.swap_policy(policy);
            info!(policy_version = %version, "policy reloaded");
            (StatusCode::OK, Json(json!({"status": "ok", "policy_version": version})))
                .into_response()
        }
        Err(e) => {
            let active = state.active_policy().version().to_string();
            warn!(error = %e, active_version = %active, "policy reload failed; keeping previous policy");
            (
                StatusCode::UNPROCESSABLE_ENTITY,
                Json(json!({
                    "error_code": "pcfi.policy_invalid",
                    "message": e.to_string(),
                    "active_policy_version": active,
                })),
            )
                .into_response()
        }
    }
}
