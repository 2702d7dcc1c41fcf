//! REST API.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use uuid::Uuid;

use crate::engine::{CreateInstance, Engine, NodeInfo};
use crate::error::EngineError;

impl IntoResponse for EngineError {
    fn into_response(self) -> Response {
        let status = match &self {
            EngineError::UnknownBundle(_) | EngineError::UnknownInstance(_) | EngineError::UnknownTask(_) => {
                StatusCode::NOT_FOUND
            }
            EngineError::TaskGone(_) => StatusCode::GONE,
            EngineError::NotYourTask { .. } => StatusCode::FORBIDDEN,
            EngineError::NoSuchOutcome(_) | EngineError::PayloadInvalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            EngineError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(json!({"code": self.code(), "message": self.to_string()}))).into_response()
    }
}

type Api = State<Arc<Engine>>;
type Reply = Result<Json<Value>, EngineError>;

fn ok(v: impl serde::Serialize) -> Reply {
    Ok(Json(serde_json::to_value(v).expect("responses serialize")))
}

fn parse_id(s: &str, not_found: fn(String) -> EngineError) -> Result<Uuid, EngineError> {
    s.parse().map_err(|_| not_found(s.to_string()))
}

fn body<T: serde::de::DeserializeOwned>(bytes: &Bytes) -> Result<T, EngineError> {
    serde_json::from_slice(bytes).map_err(|e| EngineError::BadRequest(e.to_string()))
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/bundles", post(deploy).get(bundles))
        .route("/instances", post(create).get(instances))
        .route("/instances/{id}", get(instance))
        .route("/instances/{id}/trace", get(trace))
        .route("/instances/{id}/tasks", get(instance_tasks))
        .route("/agents/{id}/tasks", get(agent_tasks))
        .route("/tasks/{id}/complete", post(complete))
        .route("/nodes/register", post(register))
        .route("/nodes", get(nodes))
        .with_state(engine)
}

async fn deploy(State(e): Api, bytes: Bytes) -> Reply {
    ok(json!({"hash": e.deploy(&bytes)?}))
}

async fn bundles(State(e): Api) -> Reply {
    ok(e.bundles())
}

async fn create(State(e): Api, bytes: Bytes) -> Reply {
    let req: CreateInstance = body(&bytes)?;
    ok(json!({"instance_id": e.create_instance(req)?}))
}

async fn instances(State(e): Api) -> Reply {
    ok(e.instance_ids())
}

async fn instance(State(e): Api, Path(id): Path<String>) -> Reply {
    ok(e.report(parse_id(&id, EngineError::UnknownInstance)?)?)
}

async fn trace(State(e): Api, Path(id): Path<String>) -> Reply {
    ok(e.trace(parse_id(&id, EngineError::UnknownInstance)?)?)
}

async fn instance_tasks(State(e): Api, Path(id): Path<String>) -> Reply {
    ok(e.instance_tasks(parse_id(&id, EngineError::UnknownInstance)?)?)
}

async fn agent_tasks(State(e): Api, Path(agent): Path<String>) -> Reply {
    ok(e.tasks_for(&agent))
}

#[derive(Deserialize)]
struct Completion {
    outcome: String,
    #[serde(default)]
    payload: Value,
    #[serde(default)]
    agent: Option<String>,
}

async fn complete(State(e): Api, Path(id): Path<String>, bytes: Bytes) -> Reply {
    let task = parse_id(&id, EngineError::UnknownTask)?;
    let c: Completion = body(&bytes)?;
    e.complete_task(task, &c.outcome, c.payload, c.agent.as_deref())?;
    ok(json!({}))
}

async fn register(State(e): Api, bytes: Bytes) -> Reply {
    let info: NodeInfo = body(&bytes)?;
    ok(e.register_node(info)?)
}

async fn nodes(State(e): Api) -> Reply {
    ok(e.nodes())
}
