//! The engine: repository, instances, tasks, nodes and the hooks that
//! connect runtime instances to files, timers, peers and services.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Weak};
use std::time::Duration;

use base64::Engine as _;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uuid::Uuid;

use crate::error::EngineError;
use crate::metrics::{self, Metrics};
use crate::net::Links;
use crate::repo::{BundleInfo, Repository};
use sbpm_core::compile::Bundle;
use sbpm_core::Ident;
use sbpm_runtime::actor::{ActorStatus, StepError};
use sbpm_runtime::instance::{check_start, StartError};
use sbpm_runtime::{
    checkpoint_replay, log, Envelope, Event, EventRecord, Frame, FrameKind, Hooks, Instance, InstanceMeta, InstanceState,
    InstanceStatus, OpenTask,
};

pub const DEFAULT_SERVICE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub data_dir: PathBuf,
    pub node_id: String,
    pub service_timeout: Duration,
    /// Host other nodes use to reach this one.
    pub host: String,
    pub http_port: u16,
    pub wire_port: Option<u16>,
}

impl EngineConfig {
    pub fn new(data_dir: impl Into<PathBuf>, node_id: impl Into<String>) -> Self {
        EngineConfig {
            data_dir: data_dir.into(),
            node_id: node_id.into(),
            service_timeout: DEFAULT_SERVICE_TIMEOUT,
            host: "127.0.0.1".into(),
            http_port: 0,
            wire_port: None,
        }
    }
}

/// Who acts for a role: a person's agent id, or a service called over HTTP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Binding {
    Agent(String),
    Service { agent: String, kind: ServiceKind, url: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceKind {
    Service,
}

impl Binding {
    pub fn agent(&self) -> &str {
        match self {
            Binding::Agent(a) | Binding::Service { agent: a, .. } => a,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateInstance {
    pub hash: String,
    pub bindings: BTreeMap<String, Binding>,
    #[serde(default)]
    pub placement: BTreeMap<Ident, String>,
    #[serde(default)]
    pub routes: BTreeMap<Ident, String>,
}

/// What is stored next to an instance's log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub meta: InstanceMeta,
    /// Role → callback URL for roles bound to services.
    #[serde(default)]
    pub services: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    #[serde(flatten)]
    pub task: OpenTask,
    pub assigned_role: String,
    pub agent: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub node_id: String,
    pub host: String,
    /// HTTP port.
    pub port: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wire_port: Option<u16>,
    #[serde(default)]
    pub last_seen_ts: u64,
    #[serde(default = "up")]
    pub status: NodeStatus,
}

fn up() -> NodeStatus {
    NodeStatus::Up
}

/// A node counts as down after this long without any frame from it.
const NODE_SILENCE_MS: u64 = 5_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectView {
    pub state: Ident,
    pub state_name: String,
    pub status: ActorStatus,
    pub pool: usize,
    pub node: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance_id: Uuid,
    pub bundle_hash: String,
    pub process_id: String,
    pub status: InstanceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub coordinator: String,
    pub bindings: BTreeMap<String, String>,
    pub subjects: BTreeMap<Ident, SubjectView>,
    pub metrics: Metrics,
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct Hosted {
    inst: Arc<Instance>,
    record: InstanceRecord,
}

impl Hosted {
    fn coordinated(&self) -> bool {
        self.inst.is_coordinator()
    }
}

pub struct Engine {
    cfg: EngineConfig,
    repo: Repository,
    instances: RwLock<HashMap<Uuid, Arc<Hosted>>>,
    /// Ids of tasks that were completed through this engine.
    closed: Mutex<HashSet<Uuid>>,
    /// Tasks with a service call in progress.
    calls: Mutex<HashSet<Uuid>>,
    nodes: Mutex<BTreeMap<String, NodeInfo>>,
    pub(crate) links: Links,
    rt: tokio::runtime::Handle,
    http: reqwest::Client,
    this: Weak<Engine>,
}

struct EngineHooks {
    engine: Weak<Engine>,
    log_path: Option<PathBuf>,
}

impl Hooks for EngineHooks {
    fn persist(&self, _state: &InstanceState, rec: &EventRecord) {
        if let Some(path) = &self.log_path {
            if let Err(e) = log::append(path, rec) {
                tracing::error!("{e}");
            }
        }
    }

    fn send_frame(&self, node: &str, frame: Frame) {
        if let Some(e) = self.engine.upgrade() {
            if !e.links.send(node, frame) {
                tracing::warn!("no link to node {node}");
            }
        }
    }

    fn arm_timer(&self, instance: Uuid, subject: &Ident, epoch: u64, ms: u64) {
        let Some(e) = self.engine.upgrade() else { return };
        let weak = self.engine.clone();
        let subject = subject.clone();
        e.rt.spawn(async move {
            tokio::time::sleep(Duration::from_millis(ms)).await;
            if let Some(i) = weak.upgrade().and_then(|e| e.instance(instance)) {
                i.timeout(&subject, epoch);
            }
        });
    }

    fn route_external(&self, route: &str, env: &Envelope) -> Result<(), String> {
        let e = self.engine.upgrade().ok_or("engine stopped")?;
        e.route_external(route, env)
    }

    fn changed(&self, instance: Uuid) {
        if let Some(e) = self.engine.upgrade() {
            e.call_services(instance);
        }
    }
}

fn start_error(e: StartError) -> EngineError {
    match e {
        StartError::UnboundRole(r) => EngineError::UnboundRole(r),
        StartError::UnknownNode(n) => EngineError::UnknownNode(n),
        StartError::UnknownSubject(s) => EngineError::BadRequest(format!("placement names unknown subject `{s}`")),
        StartError::CorruptBundle(m) => EngineError::CorruptBundle(m),
    }
}

fn step_error(task: Uuid, e: StepError) -> EngineError {
    match e {
        StepError::NoSuchOutcome { .. } => EngineError::NoSuchOutcome(e.to_string()),
        StepError::PayloadInvalid(_) => EngineError::PayloadInvalid(e.to_string()),
        StepError::NotAwaitingTask { .. } | StepError::NothingToAck(_) => EngineError::TaskGone(task.to_string()),
        StepError::UnknownSubject(_) => EngineError::BadRequest(e.to_string()),
    }
}

impl Engine {
    /// Opens the data directory and resumes the instances coordinated here.
    /// Must be called inside a tokio runtime.
    pub fn open(cfg: EngineConfig) -> Result<Arc<Engine>, EngineError> {
        let repo = Repository::open(&cfg.data_dir.join("bundles"))?;
        std::fs::create_dir_all(cfg.data_dir.join("instances"))?;
        let http = reqwest::Client::builder()
            .timeout(cfg.service_timeout)
            .build()
            .map_err(|e| EngineError::Io(e.to_string()))?;
        let engine = Arc::new_cyclic(|this| Engine {
            repo,
            instances: RwLock::new(HashMap::new()),
            closed: Mutex::new(HashSet::new()),
            calls: Mutex::new(HashSet::new()),
            nodes: Mutex::new(BTreeMap::new()),
            links: Links::new(this.clone()),
            rt: tokio::runtime::Handle::current(),
            http,
            this: this.clone(),
            cfg,
        });
        engine.load_instances()?;
        Ok(engine)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn node_id(&self) -> &str {
        &self.cfg.node_id
    }

    pub(crate) fn runtime(&self) -> &tokio::runtime::Handle {
        &self.rt
    }

    fn instance_dir(&self, id: Uuid) -> PathBuf {
        self.cfg.data_dir.join("instances").join(id.to_string())
    }

    fn hooks(&self, log_path: Option<PathBuf>) -> Arc<dyn Hooks> {
        Arc::new(EngineHooks {
            engine: self.this.clone(),
            log_path,
        })
    }

    fn load_instances(&self) -> Result<(), EngineError> {
        let root = self.cfg.data_dir.join("instances");
        let mut resumed = Vec::new();
        for entry in std::fs::read_dir(&root)? {
            let dir = entry?.path();
            match self.load_instance(&dir) {
                Ok(inst) => resumed.push(inst),
                Err(e) => tracing::warn!("not resuming {}: {e}", dir.display()),
            }
        }
        for inst in resumed {
            inst.kick();
        }
        Ok(())
    }

    fn load_instance(&self, dir: &Path) -> Result<Arc<Instance>, String> {
        let text = std::fs::read_to_string(dir.join("meta.json")).map_err(|e| e.to_string())?;
        let record: InstanceRecord = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let bundle = self
            .repo
            .get(&record.meta.bundle_hash)
            .ok_or_else(|| format!("bundle {} missing", record.meta.bundle_hash))?;
        let events = dir.join("events.jsonl");
        let log = log::read(&events).map_err(|e| e.to_string())?;
        let state = checkpoint_replay(&log, &bundle, &record.meta).map_err(|e| e.to_string())?;
        if !record.meta.remote_nodes().is_empty() && state.status == InstanceStatus::Running {
            tracing::warn!("instance {} spans other nodes; resuming local part only", record.meta.instance_id);
        }
        let id = record.meta.instance_id;
        let inst = Instance::resume(state, bundle, &self.cfg.node_id, self.hooks(Some(events)));
        self.instances.write().insert(id, Arc::new(Hosted { inst: inst.clone(), record }));
        Ok(inst)
    }

    pub fn instance(&self, id: Uuid) -> Option<Arc<Instance>> {
        self.instances.read().get(&id).map(|h| h.inst.clone())
    }

    fn hosted(&self, id: Uuid) -> Result<Arc<Hosted>, EngineError> {
        self.instances
            .read()
            .get(&id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownInstance(id.to_string()))
    }

    pub fn deploy(&self, bytes: &[u8]) -> Result<String, EngineError> {
        Ok(self.repo.deploy(bytes)?.hash().to_string())
    }

    pub fn bundles(&self) -> Vec<BundleInfo> {
        self.repo.list()
    }

    pub fn bundle(&self, hash: &str) -> Option<Arc<Bundle>> {
        self.repo.get(hash)
    }

    pub fn create_instance(&self, req: CreateInstance) -> Result<Uuid, EngineError> {
        let bundle = self
            .repo
            .get(&req.hash)
            .ok_or_else(|| EngineError::UnknownBundle(req.hash.clone()))?;
        let id = Uuid::new_v4();
        let meta = InstanceMeta {
            instance_id: id,
            bundle_hash: req.hash.clone(),
            bindings: req.bindings.iter().map(|(r, b)| (r.clone(), b.agent().to_string())).collect(),
            placement: req.placement.clone(),
            coordinator: self.cfg.node_id.clone(),
            routes: req.routes.clone(),
        };
        {
            let nodes = self.nodes.lock();
            check_start(&meta, &bundle, |n| nodes.get(n).is_some_and(|i| i.wire_port.is_some())).map_err(start_error)?;
        }
        let record = InstanceRecord {
            meta: meta.clone(),
            services: req
                .bindings
                .iter()
                .filter_map(|(r, b)| match b {
                    Binding::Service { url, .. } => Some((r.clone(), url.clone())),
                    Binding::Agent(_) => None,
                })
                .collect(),
        };
        let dir = self.instance_dir(id);
        std::fs::create_dir_all(&dir)?;
        let meta_json = serde_json::to_vec_pretty(&record).expect("record serializes");
        let tmp = dir.join("meta.json.tmp");
        std::fs::write(&tmp, meta_json)?;
        std::fs::rename(&tmp, dir.join("meta.json"))?;

        let inst = Instance::create(meta.clone(), bundle.clone(), &self.cfg.node_id, self.hooks(Some(dir.join("events.jsonl"))));
        self.instances.write().insert(id, Arc::new(Hosted { inst: inst.clone(), record: record.clone() }));
        for node in meta.remote_nodes() {
            let body = json!({
                "bundle": base64::engine::general_purpose::STANDARD.encode(bundle.to_bytes()),
                "record": record,
            });
            self.links.send(&node, Frame::new(FrameKind::Spawn, self.cfg.node_id.clone()).instance(id).body(body));
        }
        inst.kick();
        Ok(id)
    }

    /// Instances this node coordinates, by id.
    pub fn instance_ids(&self) -> Vec<Uuid> {
        let mut ids: Vec<Uuid> = self
            .instances
            .read()
            .iter()
            .filter(|(_, h)| h.coordinated())
            .map(|(id, _)| *id)
            .collect();
        ids.sort();
        ids
    }

    pub fn report(&self, id: Uuid) -> Result<InstanceReport, EngineError> {
        let h = self.hosted(id)?;
        let bundle = h.inst.bundle().clone();
        let state = h.inst.snapshot();
        Ok(report_of(&state, &bundle))
    }

    pub fn trace(&self, id: Uuid) -> Result<Vec<EventRecord>, EngineError> {
        Ok(self.hosted(id)?.inst.with_state(|s| s.log.clone()))
    }

    fn tasks_of(&self, h: &Hosted) -> Vec<Task> {
        if !h.coordinated() {
            return Vec::new();
        }
        let bundle = h.inst.bundle();
        h.inst
            .open_tasks()
            .into_iter()
            .filter_map(|t| {
                let role = bundle.subject(&t.subject)?.role.clone();
                let agent = h.record.meta.bindings.get(&role)?.clone();
                Some(Task {
                    task: t,
                    assigned_role: role,
                    agent,
                })
            })
            .collect()
    }

    /// Open tasks assigned to `agent`, oldest first.
    pub fn tasks_for(&self, agent: &str) -> Vec<Task> {
        let hosted: Vec<Arc<Hosted>> = self.instances.read().values().cloned().collect();
        let mut out: Vec<Task> = hosted
            .iter()
            .flat_map(|h| self.tasks_of(h))
            .filter(|t| t.agent == agent)
            .collect();
        out.sort_by_key(|t| (t.task.created_ts, t.task.task_id));
        out
    }

    /// Open tasks of one instance.
    pub fn instance_tasks(&self, id: Uuid) -> Result<Vec<Task>, EngineError> {
        Ok(self.tasks_of(&*self.hosted(id)?))
    }

    fn find_task(&self, task_id: Uuid) -> Option<(Arc<Hosted>, Task)> {
        let hosted: Vec<Arc<Hosted>> = self.instances.read().values().cloned().collect();
        hosted.into_iter().find_map(|h| {
            let t = self.tasks_of(&h).into_iter().find(|t| t.task.task_id == task_id)?;
            Some((h, t))
        })
    }

    pub fn complete_task(&self, task_id: Uuid, outcome: &str, payload: Value, agent: Option<&str>) -> Result<(), EngineError> {
        let Some((h, t)) = self.find_task(task_id) else {
            return Err(if self.closed.lock().contains(&task_id) {
                EngineError::TaskGone(task_id.to_string())
            } else {
                EngineError::UnknownTask(task_id.to_string())
            });
        };
        if let Some(a) = agent {
            if a != t.agent {
                return Err(EngineError::NotYourTask {
                    task: task_id.to_string(),
                    owner: t.agent.clone(),
                    agent: a.to_string(),
                });
            }
        }
        if !self.closed.lock().insert(task_id) {
            return Err(EngineError::TaskGone(task_id.to_string()));
        }
        let res = h
            .inst
            .complete_task(&t.task.subject, outcome, payload, Some(agent.unwrap_or(&t.agent).to_string()));
        if let Err(e) = res {
            self.closed.lock().remove(&task_id);
            return Err(step_error(task_id, e));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<NodeInfo> {
        let now = now_ms();
        let mut out = vec![self.self_info()];
        out.extend(self.nodes.lock().values().map(|n| {
            let mut n = n.clone();
            n.status = if now.saturating_sub(n.last_seen_ts) <= NODE_SILENCE_MS {
                NodeStatus::Up
            } else {
                NodeStatus::Down
            };
            n
        }));
        out
    }

    pub fn self_info(&self) -> NodeInfo {
        NodeInfo {
            node_id: self.cfg.node_id.clone(),
            host: self.cfg.host.clone(),
            port: self.cfg.http_port,
            wire_port: self.cfg.wire_port,
            last_seen_ts: now_ms(),
            status: NodeStatus::Up,
        }
    }

    /// Records a peer and opens a link to it. Returns this node's info.
    pub fn register_node(&self, mut info: NodeInfo) -> Result<NodeInfo, EngineError> {
        if info.node_id.is_empty() {
            return Err(EngineError::BadRequest("empty node id".into()));
        }
        if info.node_id == self.cfg.node_id {
            return Err(EngineError::BadRequest(format!("node id {} is this node", info.node_id)));
        }
        info.last_seen_ts = now_ms();
        info.status = NodeStatus::Up;
        let wire = info.wire_port.map(|p| format!("{}:{p}", info.host));
        self.nodes.lock().insert(info.node_id.clone(), info.clone());
        if let Some(addr) = wire {
            self.links.connect(&info.node_id, &addr);
        }
        Ok(self.self_info())
    }

    pub(crate) fn touch_node(&self, node: &str) {
        if let Some(n) = self.nodes.lock().get_mut(node) {
            n.last_seen_ts = now_ms();
        }
    }

    /// Registers this node with the engine at `peer` (an HTTP base URL or
    /// `host:port`) and records the peer in turn.
    pub async fn join(&self, peer: &str) -> Result<NodeInfo, EngineError> {
        let base = peer.trim_end_matches('/');
        let url = if base.contains("://") {
            format!("{base}/nodes/register")
        } else {
            format!("http://{base}/nodes/register")
        };
        let resp = self
            .http
            .post(&url)
            .json(&self.self_info())
            .send()
            .await
            .map_err(|e| EngineError::Io(format!("join {peer}: {e}")))?;
        if !resp.status().is_success() {
            return Err(EngineError::Io(format!("join {peer}: HTTP {}", resp.status())));
        }
        let info: NodeInfo = resp.json().await.map_err(|e| EngineError::Io(e.to_string()))?;
        self.register_node(info.clone())?;
        Ok(info)
    }

    /// Handles a frame from another node.
    pub(crate) fn on_frame(&self, f: Frame) {
        self.touch_node(&f.node);
        let Some(id) = f.instance else {
            return;
        };
        match f.kind {
            FrameKind::Spawn => {
                if let Err(e) = self.spawn_replica(id, f.body.unwrap_or(Value::Null)) {
                    tracing::error!("SPAWN {id} from {}: {e}", f.node);
                }
            }
            FrameKind::Stop => {
                let mut map = self.instances.write();
                if map.get(&id).is_some_and(|h| !h.coordinated()) {
                    map.remove(&id);
                }
            }
            _ => {
                let Some(inst) = self.instance(id) else {
                    tracing::warn!("{:?} frame for unknown instance {id}", f.kind);
                    return;
                };
                self.on_instance_frame(&inst, f);
            }
        }
    }

    fn on_instance_frame(&self, inst: &Instance, f: Frame) {
        match f.kind {
            FrameKind::Msg => {
                let Some(env) = f.envelope else { return };
                let external = inst.bundle().subject(&env.from_subject).is_some_and(|s| s.external);
                if external {
                    if let Err(e) = inst.deliver_external(env) {
                        tracing::warn!("external delivery into {}: {e}", inst.id());
                    }
                } else {
                    inst.on_msg(env, &f.node);
                }
            }
            FrameKind::Ack => {
                if let Some(env) = f.envelope {
                    inst.on_ack(&env);
                }
            }
            FrameKind::Nack => tracing::debug!("NACK from {} for {}", f.node, inst.id()),
            FrameKind::Event => {
                let body = f.body.unwrap_or(Value::Null);
                let subject = body["subject"].as_str().unwrap_or_default().to_string();
                match serde_json::from_value::<Event>(body["event"].clone()) {
                    Ok(ev) => {
                        if let Err(e) = inst.on_event(&subject, ev) {
                            tracing::error!("record from {} rejected: {e}", f.node);
                            inst.abort(&format!("InternalError: record from {} rejected: {e}", f.node));
                        }
                    }
                    Err(e) => tracing::error!("bad EVENT body from {}: {e}", f.node),
                }
            }
            FrameKind::Task => {
                let body = f.body.unwrap_or(Value::Null);
                let subject = body["subject"].as_str().unwrap_or_default();
                let outcome = body["outcome"].as_str().unwrap_or_default();
                let agent = body["agent"].as_str().map(str::to_string);
                if let Err(e) = inst.complete_task(subject, outcome, body["payload"].clone(), agent) {
                    tracing::warn!("forwarded task for {subject} rejected: {e}");
                }
            }
            _ => {}
        }
    }

    fn spawn_replica(&self, id: Uuid, body: Value) -> Result<(), String> {
        if self.instances.read().contains_key(&id) {
            return Ok(());
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(body["bundle"].as_str().ok_or("missing bundle")?)
            .map_err(|e| e.to_string())?;
        let bundle = self.repo.deploy(&bytes).map_err(|e| e.to_string())?;
        let record: InstanceRecord = serde_json::from_value(body["record"].clone()).map_err(|e| e.to_string())?;
        if record.meta.bundle_hash != bundle.hash() {
            return Err("bundle does not match instance".into());
        }
        let inst = Instance::create(record.meta.clone(), bundle, &self.cfg.node_id, self.hooks(None));
        self.instances.write().insert(id, Arc::new(Hosted { inst: inst.clone(), record }));
        inst.kick();
        Ok(())
    }

    /// Route hints have the form `node-id/instance-id/subject-id`.
    fn route_external(&self, route: &str, env: &Envelope) -> Result<(), String> {
        let parts: Vec<&str> = route.split('/').collect();
        let [node, instance, subject] = parts[..] else {
            return Err(format!("route `{route}` is not node/instance/subject"));
        };
        let instance: Uuid = instance.parse().map_err(|e| format!("route `{route}`: {e}"))?;
        let mut env = env.clone();
        env.instance_id = instance;
        env.to_subject = subject.parse().map_err(|e| format!("route `{route}`: {e}"))?;
        if node == self.cfg.node_id {
            let weak = self.this.clone();
            self.rt.spawn(async move {
                let Some(target) = weak.upgrade().and_then(|e| e.instance(instance)) else {
                    tracing::warn!("external route to unknown instance {instance}");
                    return;
                };
                if let Err(e) = target.deliver_external(env) {
                    tracing::warn!("external delivery into {instance}: {e}");
                }
            });
            return Ok(());
        }
        let frame = Frame::new(FrameKind::Msg, self.cfg.node_id.clone())
            .instance(instance)
            .envelope(env);
        if self.links.send(node, frame) {
            Ok(())
        } else {
            Err(format!("no link to node {node}"))
        }
    }

    /// Starts calls for open tasks of service-bound roles.
    fn call_services(&self, id: Uuid) {
        let Ok(h) = self.hosted(id) else { return };
        if h.record.services.is_empty() || h.inst.status() != InstanceStatus::Running {
            return;
        }
        for t in self.tasks_of(&h) {
            let (Some(refinement), Some(url)) = (t.task.refinement.clone(), h.record.services.get(&t.assigned_role)) else {
                continue;
            };
            if !self.calls.lock().insert(t.task.task_id) {
                continue;
            }
            let payload = h.inst.with_state(|s| last_consumed_payload(s, &t.task.subject));
            let body = json!({
                "instance": id,
                "subject": t.task.subject,
                "state": t.task.state,
                "refinement": refinement,
                "payload": payload,
            });
            let call = self.http.post(url.clone()).json(&body).send();
            let weak = self.this.clone();
            let inst = h.inst.clone();
            self.rt.spawn(async move {
                let result = match call.await {
                    Ok(resp) if resp.status().is_success() => resp.json::<ServiceReply>().await.map_err(|e| Err(e.to_string())),
                    Ok(resp) => Err(Err(format!("HTTP {}", resp.status()))),
                    Err(e) => Err(Ok(e.to_string())),
                };
                let Some(engine) = weak.upgrade() else { return };
                engine.finish_call(&inst, &t, result);
            });
        }
    }

    /// `result` is the service's reply, or `Err(Ok(_))` when the service
    /// could not be reached in time and `Err(Err(_))` when it answered badly.
    fn finish_call(&self, inst: &Instance, t: &Task, result: Result<ServiceReply, Result<String, String>>) {
        let task_id = t.task.task_id;
        let subject = t.task.subject.as_str();
        let mut retry = false;
        match result {
            Ok(reply) => {
                self.closed.lock().insert(task_id);
                match inst.complete_task(subject, &reply.outcome, reply.payload, Some(t.agent.clone())) {
                    Ok(()) => {}
                    // Another answer for this task got there first.
                    Err(StepError::NotAwaitingTask { .. }) => {}
                    Err(e) => {
                        self.closed.lock().remove(&task_id);
                        inst.crash(subject, &format!("BadServiceResponse: {e}"));
                        retry = true;
                    }
                }
            }
            Err(Err(e)) => {
                inst.crash(subject, &format!("BadServiceResponse: {e}"));
                retry = true;
            }
            Err(Ok(e)) => match &t.task.on_error {
                Some(outcome) => {
                    tracing::warn!("service for {subject} unreachable ({e}); taking `{outcome}`");
                    self.closed.lock().insert(task_id);
                    match inst.complete_task(subject, outcome, Value::Null, Some(t.agent.clone())) {
                        Ok(()) | Err(StepError::NotAwaitingTask { .. }) => {}
                        Err(e) => inst.abort(&format!("ServiceUnreachable: {e}")),
                    }
                }
                None => inst.abort(&format!("ServiceUnreachable: {subject}: {e}")),
            },
        }
        // A restarted actor waits in the same task; call again.
        if retry {
            self.calls.lock().remove(&task_id);
        }
        self.call_services(inst.id());
    }
}

#[derive(Debug, Deserialize)]
struct ServiceReply {
    outcome: String,
    #[serde(default)]
    payload: Value,
}

/// Payload of the message `subject` consumed last, if any.
fn last_consumed_payload(s: &InstanceState, subject: &str) -> Value {
    let Some(corr) = s.log.iter().rev().find_map(|r| match &r.event {
        Event::MsgConsumed { correlation_id, .. } if r.subject == subject => Some(*correlation_id),
        _ => None,
    }) else {
        return Value::Null;
    };
    s.log
        .iter()
        .rev()
        .find_map(|r| match &r.event {
            Event::MsgDelivered { envelope } if envelope.correlation_id == corr => Some(envelope.payload.clone()),
            _ => None,
        })
        .unwrap_or(Value::Null)
}

/// Report for an instance, computed from its state and log.
pub fn report_of(state: &InstanceState, bundle: &Bundle) -> InstanceReport {
    let subjects = state
        .actors
        .iter()
        .map(|(s, a)| {
            let st = bundle.program(s).expect("program per actor").state(a.current);
            (
                s.clone(),
                SubjectView {
                    state: st.id.clone(),
                    state_name: st.name.clone(),
                    status: a.status,
                    pool: a.pool.len(),
                    node: state.meta.node_of(s).to_string(),
                },
            )
        })
        .collect();
    InstanceReport {
        instance_id: state.meta.instance_id,
        bundle_hash: state.meta.bundle_hash.clone(),
        process_id: bundle.manifest.process_id.to_string(),
        status: state.status,
        failure: state.failure.clone(),
        coordinator: state.meta.coordinator.clone(),
        bindings: state.meta.bindings.clone(),
        subjects,
        metrics: metrics::compute(&state.log, bundle, &state.meta),
    }
}
