//! A local HTTP service that answers refinement calls with fixed outcomes.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

/// Serves until the runtime shuts down. Returns the bound address.
pub async fn serve(answers: BTreeMap<String, String>) -> std::io::Result<SocketAddr> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let app = Router::new().route("/", post(answer)).with_state(Arc::new(answers));
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("stub service stopped: {e}");
        }
    });
    Ok(addr)
}

async fn answer(State(answers): State<Arc<BTreeMap<String, String>>>, Json(call): Json<Value>) -> (StatusCode, Json<Value>) {
    let refinement = call["refinement"].as_str().unwrap_or_default();
    match answers.get(refinement) {
        Some(outcome) => (StatusCode::OK, Json(json!({ "outcome": outcome }))),
        None => (
            StatusCode::NOT_FOUND,
            Json(json!({ "error": format!("no stubbed answer for `{refinement}`") })),
        ),
    }
}
