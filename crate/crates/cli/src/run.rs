//! Plays a scenario against an engine, embedded or reached over REST.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use thiserror::Error;
use uuid::Uuid;

use sbpm_core::compile::Bundle;
use sbpm_core::Ident;
use sbpm_engine::{Binding, CreateInstance, Engine, EngineError, InstanceReport, Task};
use sbpm_runtime::{Event, EventRecord, InstanceStatus};

use crate::scenario::{self, Scenario, ScenarioError, Script};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{code}: {message}")]
    Api { code: String, message: String },
    #[error("cannot reach engine: {0}")]
    Http(String),
    #[error("stub `{0}` names no refinement in the bundle")]
    UnknownRefinement(String),
    #[error("stub service: {0}")]
    Stub(std::io::Error),
}

impl From<EngineError> for RunError {
    fn from(e: EngineError) -> Self {
        RunError::Api {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<reqwest::Error> for RunError {
    fn from(e: reqwest::Error) -> Self {
        RunError::Http(e.to_string())
    }
}

pub enum Backend {
    Embedded(Arc<Engine>),
    Remote { http: reqwest::Client, base: String },
}

impl Backend {
    pub fn remote(base: &str) -> Self {
        let base = base.trim_end_matches('/');
        let base = if base.contains("://") {
            base.to_string()
        } else {
            format!("http://{base}")
        };
        Backend::Remote {
            http: reqwest::Client::new(),
            base,
        }
    }

    async fn call<T: DeserializeOwned>(&self, path: &str, body: Option<reqwest::Body>) -> Result<T, RunError> {
        let Backend::Remote { http, base } = self else {
            unreachable!("embedded engines are called directly")
        };
        let url = format!("{base}{path}");
        let req = match body {
            Some(b) => http.post(url).body(b).header("content-type", "application/json"),
            None => http.get(url),
        };
        let resp = req.send().await?;
        let ok = resp.status().is_success();
        let value: Value = resp.json().await?;
        if !ok {
            return Err(RunError::Api {
                code: value["code"].as_str().unwrap_or("Error").to_string(),
                message: value["message"].as_str().unwrap_or_default().to_string(),
            });
        }
        serde_json::from_value(value).map_err(|e| RunError::Http(format!("unexpected reply from {path}: {e}")))
    }

    pub async fn deploy(&self, bytes: Vec<u8>) -> Result<String, RunError> {
        match self {
            Backend::Embedded(e) => Ok(e.deploy(&bytes)?),
            Backend::Remote { .. } => {
                let v: Value = self.call("/bundles", Some(bytes.into())).await?;
                Ok(v["hash"].as_str().unwrap_or_default().to_string())
            }
        }
    }

    pub async fn create(&self, req: CreateInstance) -> Result<Uuid, RunError> {
        match self {
            Backend::Embedded(e) => Ok(e.create_instance(req)?),
            Backend::Remote { .. } => {
                let body = serde_json::to_vec(&req).expect("serializable request");
                let v: Value = self.call("/instances", Some(body.into())).await?;
                serde_json::from_value(v["instance_id"].clone()).map_err(|e| RunError::Http(e.to_string()))
            }
        }
    }

    pub async fn report(&self, id: Uuid) -> Result<InstanceReport, RunError> {
        match self {
            Backend::Embedded(e) => Ok(e.report(id)?),
            Backend::Remote { .. } => self.call(&format!("/instances/{id}"), None).await,
        }
    }

    pub async fn tasks(&self, id: Uuid) -> Result<Vec<Task>, RunError> {
        match self {
            Backend::Embedded(e) => Ok(e.instance_tasks(id)?),
            Backend::Remote { .. } => self.call(&format!("/instances/{id}/tasks"), None).await,
        }
    }

    pub async fn trace(&self, id: Uuid) -> Result<Vec<EventRecord>, RunError> {
        match self {
            Backend::Embedded(e) => Ok(e.trace(id)?),
            Backend::Remote { .. } => self.call(&format!("/instances/{id}/trace"), None).await,
        }
    }

    pub async fn complete(&self, task: &Task, outcome: &str, payload: Value) -> Result<(), RunError> {
        let id = task.task.task_id;
        match self {
            Backend::Embedded(e) => Ok(e.complete_task(id, outcome, payload, Some(&task.agent))?),
            Backend::Remote { .. } => {
                let body = json!({"outcome": outcome, "payload": payload, "agent": task.agent});
                let _: Value = self
                    .call(&format!("/tasks/{id}/complete"), Some(body.to_string().into()))
                    .await?;
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub scenario: Scenario,
    /// Refinement name → outcome the stub service answers with.
    pub stubs: BTreeMap<String, String>,
    pub placement: BTreeMap<Ident, String>,
    /// Give up after this long without any new event.
    pub max_idle: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Failed(String),
    /// No progress within the idle limit; the tasks still open.
    Stalled(Vec<Task>),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub instance_id: Uuid,
    pub status: RunStatus,
    pub trace: Vec<EventRecord>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Completed => 0,
            RunStatus::Failed(_) => 1,
            RunStatus::Stalled(_) => 3,
        }
    }
}

/// Agent id bound to `role` for scripted runs.
pub fn agent_for(role: &str) -> String {
    format!("{role}-agent")
}

/// Deploys `bundle`, starts one instance and answers its tasks from the
/// scenario until it ends or stalls.
pub async fn run(backend: &Backend, bundle: &Bundle, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    scenario::check(&opts.scenario, bundle)?;
    let mut bindings: BTreeMap<String, Binding> = bundle
        .roles()
        .into_iter()
        .map(|r| (r.to_string(), Binding::Agent(agent_for(r))))
        .collect();
    if !opts.stubs.is_empty() {
        let stubbed = stubbed_roles(bundle, &opts.stubs)?;
        let addr = crate::stub::serve(opts.stubs.clone()).await.map_err(RunError::Stub)?;
        for role in stubbed {
            bindings.insert(
                role.clone(),
                Binding::Service {
                    agent: format!("{role}-service"),
                    kind: sbpm_engine::engine::ServiceKind::Service,
                    url: format!("http://{addr}/"),
                },
            );
        }
    }

    let hash = backend.deploy(bundle.to_bytes()).await?;
    let id = backend
        .create(CreateInstance {
            hash,
            bindings: bindings.clone(),
            placement: opts.placement.clone(),
            routes: BTreeMap::new(),
        })
        .await?;

    let mut script = Script::new(&opts.scenario);
    let mut last_events = 0;
    let mut last_progress = Instant::now();
    let status = loop {
        let mut tasks = backend.tasks(id).await?;
        tasks.sort_by_key(|t| t.task.created_ts);
        let mut acted = false;
        for t in &tasks {
            if t.task.refinement.is_some() && matches!(bindings.get(&t.assigned_role), Some(Binding::Service { .. })) {
                continue;
            }
            let Some(step) = script.next_for(&t.task.subject, t.task.state.as_str(), &t.task.state_name) else {
                continue;
            };
            let (outcome, payload) = (step.outcome.clone(), step.payload.clone());
            backend.complete(t, &outcome, payload).await?;
            script.consume(&t.task.subject);
            acted = true;
        }
        if acted {
            last_progress = Instant::now();
            continue;
        }

        let report = backend.report(id).await?;
        match report.status {
            InstanceStatus::Completed => break RunStatus::Completed,
            InstanceStatus::Failed => break RunStatus::Failed(report.failure.unwrap_or_default()),
            InstanceStatus::Running => {}
        }
        if report.metrics.events != last_events {
            last_events = report.metrics.events;
            last_progress = Instant::now();
        } else if last_progress.elapsed() >= opts.max_idle {
            break RunStatus::Stalled(tasks);
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    };

    let trace = backend.trace(id).await?;
    Ok(RunOutcome {
        instance_id: id,
        status,
        trace,
    })
}

fn stubbed_roles(bundle: &Bundle, stubs: &BTreeMap<String, String>) -> Result<Vec<String>, RunError> {
    let mut roles = Vec::new();
    for refinement in stubs.keys() {
        let mut found = false;
        for p in &bundle.programs {
            if p.states.iter().any(|s| s.refinement.as_deref() == Some(refinement.as_str())) {
                found = true;
                let role = bundle.subject(&p.subject).expect("program subject declared").role.clone();
                if !roles.contains(&role) {
                    roles.push(role);
                }
            }
        }
        if !found {
            return Err(RunError::UnknownRefinement(refinement.clone()));
        }
    }
    Ok(roles)
}

/// State ids entered by each subject, in log order.
pub fn state_sequences(trace: &[EventRecord]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in trace {
        if let Event::StateEntered { state, .. } = &r.event {
            out.entry(r.subject.clone()).or_default().push(state.to_string());
        }
    }
    out
}

/// One `Subject: s0 s1 ...` line per subject.
pub fn summary(trace: &[EventRecord]) -> String {
    state_sequences(trace)
        .iter()
        .map(|(s, states)| format!("{s}: {}\n", states.join(" ")))
        .collect()
}
