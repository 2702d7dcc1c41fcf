//! Management layer over the runtime: a content-addressed bundle
//! repository, instance lifecycle with on-disk logs, role bindings, the
//! task worklist, service refinement calls, the node registry and links,
//! and the REST API that exposes all of it.

pub mod engine;
pub mod error;
pub mod http;
pub mod metrics;
mod net;
pub mod repo;

use std::net::SocketAddr;
use std::sync::Arc;

pub use engine::{Binding, CreateInstance, Engine, EngineConfig, InstanceRecord, InstanceReport, NodeInfo, Task};
pub use error::EngineError;

/// A running engine with its HTTP and wire listeners bound.
pub struct Server {
    pub engine: Arc<Engine>,
    pub http_addr: SocketAddr,
    pub wire_addr: SocketAddr,
}

/// Binds both listeners, opens the engine and serves until the runtime
/// shuts down. Port 0 picks free ports.
pub async fn start_server(mut cfg: EngineConfig, http: &str, wire: &str) -> Result<Server, EngineError> {
    let http_listener = tokio::net::TcpListener::bind(http).await?;
    let wire_listener = tokio::net::TcpListener::bind(wire).await?;
    let http_addr = http_listener.local_addr()?;
    let wire_addr = wire_listener.local_addr()?;
    cfg.http_port = http_addr.port();
    cfg.wire_port = Some(wire_addr.port());
    if cfg.host.is_empty() {
        cfg.host = http_addr.ip().to_string();
    }
    let engine = Engine::open(cfg)?;
    tokio::spawn(net::serve_wire(Arc::downgrade(&engine), wire_listener));
    let app = http::router(engine.clone());
    tokio::spawn(async move {
        if let Err(e) = axum::serve(http_listener, app).await {
            tracing::error!("http server: {e}");
        }
    });
    Ok(Server {
        engine,
        http_addr,
        wire_addr,
    })
}
