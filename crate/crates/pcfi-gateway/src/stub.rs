//! Call-recording echo backend so the full gateway path runs without an
//! external LLM.

use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;

#[derive(Clone, Default)]
pub struct StubBackend {
    calls: Arc<Mutex<Vec<Value>>>,
}

impl StubBackend {
    /// Request bodies received so far, in arrival order.
    pub fn calls(&self) -> Vec<Value> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

async fn completions(State(stub): State<StubBackend>, Json(body): Json<Value>) -> Json<Value> {
    stub.calls.lock().unwrap().push(body.clone());
    let echoed: String = body["messages"]
        .as_array()
        .map(|msgs| {
            msgs.iter()
                .filter_map(|m| m["content"].as_str())
                .collect::<Vec<_>>()
                .join("\n")
        })
        .unwrap_or_default();
    Json(json!({
        "id": "stub-completion",
        "object": "chat.completion",
        "model": body["model"].as_str().unwrap_or("stub"),
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": echoed},
            "finish_reason": "stop",
        }],
    }))
}

/// Bind an ephemeral port and serve the echo backend. Returns the handle
/// for call inspection and the base URL to configure the gateway with.
pub async fn spawn_stub_backend() -> std::io::Result<(StubBackend, String)> {
    let stub = StubBackend::default();
    let router = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(stub.clone());
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move {
        let _ = axum::serve(listener, router).await;
    });
    Ok((stub, format!("http://{addr}")))
}
