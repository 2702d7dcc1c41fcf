//! Drives one instance on one node: the supervisor and dispatcher.
//!
//! All mutation of an instance happens under its lock. After every input
//! the pump runs the enabled internal actions of the local actors in a fixed
//! order until nothing is enabled. On the coordinator node each record is
//! checked against the step function and appended to the log; on other nodes
//! records are applied locally and forwarded to the coordinator.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uuid::Uuid;

use crate::actor::{self, ActorStatus, Effect, Input, StepError};
use crate::envelope::{task_id, Envelope};
use crate::event::{Event, EventRecord, SUPERVISOR};
use crate::instance::{checkpoint_replay, InstanceMeta, InstanceState, InstanceStatus, Route};
use crate::wire::{Frame, FrameKind};
use sbpm_core::compile::{Bundle, RestartPolicy, Selector, SendMode};
use sbpm_core::model::{BoSchema, StateKind};
use sbpm_core::Ident;

/// Connection from an instance to the node that hosts it.
pub trait Hooks: Send + Sync {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    /// A record was appended to the log of a coordinated instance.
    fn persist(&self, _state: &InstanceState, _rec: &EventRecord) {}

    fn send_frame(&self, _node: &str, _frame: Frame) {}

    /// Calls [`Instance::timeout`] with `epoch` after `ms` milliseconds.
    fn arm_timer(&self, _instance: Uuid, _subject: &Ident, _epoch: u64, _ms: u64) {}

    /// Hands an envelope for an external subject to its route.
    fn route_external(&self, route: &str, _env: &Envelope) -> Result<(), String> {
        Err(format!("no external routing for `{route}`"))
    }

    /// Something observable changed (tasks, status).
    fn changed(&self, _instance: Uuid) {}
}

/// Hooks that do nothing; instances driven by hand in tests use these.
pub struct NoHooks;

impl Hooks for NoHooks {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ChooseOutcome,
    ProvideSendPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskOption {
    Outcome(String),
    Payload {
        message: Ident,
        to: Ident,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bo: Option<BoSchema>,
    },
}

/// A decision an actor is waiting for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenTask {
    pub task_id: Uuid,
    pub instance_id: Uuid,
    pub subject: Ident,
    pub state: Ident,
    pub state_name: String,
    pub state_index: usize,
    pub kind: TaskKind,
    pub options: Vec<TaskOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_error: Option<String>,
    /// Timestamp of the STATE_ENTERED that opened the task, if logged here.
    pub created_ts: u64,
}

struct Inner {
    state: InstanceState,
    /// Envelopes handed to another node and not yet acknowledged.
    in_flight: HashSet<Uuid>,
    /// Remote envelopes waiting for room in a local pool, with the node to
    /// acknowledge.
    parked: BTreeMap<Ident, VecDeque<(Envelope, String)>>,
    /// Coordinator only: deliveries reported before the matching send.
    early: Vec<(Ident, Event)>,
}

pub struct Instance {
    id: Uuid,
    bundle: Arc<Bundle>,
    node: String,
    hooks: Arc<dyn Hooks>,
    inner: Mutex<Inner>,
}

impl Instance {
    fn build(state: InstanceState, bundle: Arc<Bundle>, node: &str, hooks: Arc<dyn Hooks>) -> Arc<Instance> {
        Arc::new(Instance {
            id: state.meta.instance_id,
            bundle,
            node: node.to_string(),
            hooks,
            inner: Mutex::new(Inner {
                state,
                in_flight: HashSet::new(),
                parked: BTreeMap::new(),
                early: Vec::new(),
            }),
        })
    }

    /// Starts a fresh instance (coordinator) or the local part of one that
    /// another node coordinates.
    pub fn start(meta: InstanceMeta, bundle: Arc<Bundle>, node: &str, hooks: Arc<dyn Hooks>) -> Arc<Instance> {
        let inst = Self::create(meta, bundle, node, hooks);
        inst.kick();
        inst
    }

    /// Like [`Instance::start`] but nothing runs until [`Instance::kick`],
    /// so the caller can register the instance first.
    pub fn create(meta: InstanceMeta, bundle: Arc<Bundle>, node: &str, hooks: Arc<dyn Hooks>) -> Arc<Instance> {
        let state = InstanceState::new(meta, &bundle);
        Self::build(state, bundle, node, hooks)
    }

    /// Runs whatever is enabled.
    pub fn kick(&self) {
        self.run(|_, _| {});
    }

    /// Continues an instance rebuilt by [`checkpoint_replay`].
    pub fn resume(state: InstanceState, bundle: Arc<Bundle>, node: &str, hooks: Arc<dyn Hooks>) -> Arc<Instance> {
        let inst = Self::build(state, bundle, node, hooks);
        inst.run(|this, inner| {
            let subjects: Vec<Ident> = inner.state.actors.keys().cloned().collect();
            for s in subjects {
                if this.is_local(inner, &s) {
                    this.rearm(inner, &s);
                }
            }
        });
        inst
    }

    pub fn id(&self) -> Uuid {
        self.id
    }

    pub fn bundle(&self) -> &Arc<Bundle> {
        &self.bundle
    }

    pub fn node(&self) -> &str {
        &self.node
    }

    pub fn meta(&self) -> InstanceMeta {
        self.inner.lock().state.meta.clone()
    }

    pub fn is_coordinator(&self) -> bool {
        self.inner.lock().state.meta.coordinator == self.node
    }

    pub fn snapshot(&self) -> InstanceState {
        self.inner.lock().state.clone()
    }

    pub fn status(&self) -> InstanceStatus {
        self.inner.lock().state.status
    }

    pub fn with_state<R>(&self, f: impl FnOnce(&InstanceState) -> R) -> R {
        f(&self.inner.lock().state)
    }

    fn is_local(&self, inner: &Inner, subject: &str) -> bool {
        inner.state.meta.node_of(subject) == self.node
    }

    fn coordinates(&self, inner: &Inner) -> bool {
        inner.state.meta.coordinator == self.node
    }

    /// Runs `f` under the lock, then pumps and notifies.
    fn run<R>(&self, f: impl FnOnce(&Self, &mut Inner) -> R) -> R {
        let out = {
            let mut inner = self.inner.lock();
            let out = f(self, &mut inner);
            self.pump(&mut inner);
            out
        };
        self.hooks.changed(self.id);
        out
    }

    fn rearm(&self, inner: &Inner, subject: &Ident) {
        let a = &inner.state.actors[subject];
        if a.status != ActorStatus::AwaitingMessage || !self.is_local(inner, subject) {
            return;
        }
        if let Some(p) = self.bundle.program(subject) {
            if let Some(ms) = p.state(a.current).timeout_ms {
                self.hooks.arm_timer(self.id, subject, a.entries, ms);
            }
        }
    }

    /// Logs (coordinator) or forwards (elsewhere) one event and carries out
    /// its effects for local actors.
    fn record(&self, inner: &mut Inner, subject: &str, ev: Event) -> Result<(), String> {
        if self.coordinates(inner) {
            let ts = self.hooks.now_ms();
            let rec = inner.state.append(&self.bundle, subject, ev.clone(), ts)?.clone();
            self.hooks.persist(&inner.state, &rec);
        } else {
            inner.state.apply_event(&self.bundle, subject, &ev);
            let coordinator = inner.state.meta.coordinator.clone();
            let frame = Frame::new(FrameKind::Event, self.node.clone())
                .instance(self.id)
                .body(json!({"subject": subject, "event": ev}));
            self.hooks.send_frame(&coordinator, frame);
        }
        if self.is_local(inner, subject) {
            if let (Some(a), Some(p)) = (inner.state.actors.get(subject), self.bundle.program(subject)) {
                for eff in actor::effects_of(a, p, &ev) {
                    match eff {
                        Effect::ArmTimer { epoch, ms } => self.hooks.arm_timer(self.id, &a.subject, epoch, ms),
                        Effect::Warn(w) => tracing::warn!(instance = %self.id, "{w}"),
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    fn record_or_fail(&self, inner: &mut Inner, subject: &str, ev: Event) {
        if let Err(e) = self.record(inner, subject, ev) {
            tracing::error!(instance = %self.id, "internal step rejected: {e}");
            self.fail(inner, format!("InternalError: {e}"));
        }
    }

    fn fail(&self, inner: &mut Inner, reason: String) {
        if inner.state.status != InstanceStatus::Running || !self.coordinates(inner) {
            return;
        }
        let _ = self.record(inner, SUPERVISOR, Event::Crashed { reason });
        self.stop_remotes(inner);
    }

    fn stop_remotes(&self, inner: &Inner) {
        for node in inner.state.meta.remote_nodes() {
            self.hooks
                .send_frame(&node, Frame::new(FrameKind::Stop, self.node.clone()).instance(self.id));
        }
    }

    fn local_subjects(&self, inner: &Inner) -> Vec<Ident> {
        inner
            .state
            .actors
            .keys()
            .filter(|s| self.is_local(inner, s))
            .cloned()
            .collect()
    }

    fn pump(&self, inner: &mut Inner) {
        while inner.state.status == InstanceStatus::Running && self.pump_once(inner) {}
    }

    /// Performs the first enabled internal action; false when none is.
    fn pump_once(&self, inner: &mut Inner) -> bool {
        let local = self.local_subjects(inner);
        let cx = inner.state.cx(&self.bundle);

        for s in &local {
            let program = self.bundle.program(s).expect("program per actor");
            if let Some(ev) = actor::next_internal(&inner.state.actors[s], program, &cx) {
                self.record_or_fail(inner, s, ev);
                return true;
            }
        }

        for s in &local {
            let env = match &inner.state.actors[s].outbox {
                Some(o) if !o.delivered && !inner.in_flight.contains(&o.envelope.correlation_id) => o.envelope.clone(),
                _ => continue,
            };
            match inner.state.route(&self.bundle, &env, &self.node) {
                Ok(Route::Local) => {
                    let cap = self.capacity(&env.to_subject);
                    let receiver = &inner.state.actors[&env.to_subject];
                    let queued = inner.parked.get(&env.to_subject).map_or(0, VecDeque::len);
                    if receiver.pool.len() < cap && queued == 0 {
                        let to = env.to_subject.clone();
                        self.record_or_fail(inner, &to, Event::MsgDelivered { envelope: env });
                        return true;
                    }
                    if self.bundle.supervisor.send_mode == SendMode::DropError {
                        self.fail(
                            inner,
                            format!("PoolFull: pool of {} is full, {} from {} dropped", env.to_subject, env.message_id, env.from_subject),
                        );
                        return true;
                    }
                }
                Ok(Route::Remote(node)) => {
                    inner.in_flight.insert(env.correlation_id);
                    let frame = Frame::new(FrameKind::Msg, self.node.clone())
                        .instance(self.id)
                        .envelope(env);
                    self.hooks.send_frame(&node, frame);
                }
                Ok(Route::External(route)) => {
                    match self.hooks.route_external(&route, &env) {
                        Ok(()) => {
                            let to = env.to_subject.clone();
                            self.record_or_fail(inner, &to, Event::MsgDelivered { envelope: env });
                        }
                        Err(e) => self.fail(inner, format!("UnknownTarget: {}: {e}", env.to_subject)),
                    }
                    return true;
                }
                Err(e) => {
                    self.fail(inner, format!("{}: {e}", e.code()));
                    return true;
                }
            }
        }

        let receivers: Vec<Ident> = inner.parked.iter().filter(|(_, q)| !q.is_empty()).map(|(s, _)| s.clone()).collect();
        for r in receivers {
            if inner.state.actors[&r].pool.len() < self.capacity(&r) {
                let (env, from_node) = inner.parked.get_mut(&r).and_then(VecDeque::pop_front).expect("non-empty");
                if self.deliver_remote(inner, env, &from_node) {
                    return true;
                }
            }
        }

        for s in &local {
            let program = self.bundle.program(s).expect("program per actor");
            if let Ok(Some(ev)) = actor::respond(&inner.state.actors[s], program, &cx, &Input::MessageAvailable) {
                self.record_or_fail(inner, s, ev);
                return true;
            }
        }

        if self.coordinates(inner) && inner.state.all_halted() {
            self.record_or_fail(inner, SUPERVISOR, Event::InstanceCompleted {});
            self.stop_remotes(inner);
            return true;
        }
        false
    }

    fn capacity(&self, subject: &str) -> usize {
        self.bundle.subject(subject).map(|s| s.pool_capacity as usize).unwrap_or(0)
    }

    fn deliver_remote(&self, inner: &mut Inner, env: Envelope, from_node: &str) -> bool {
        let to = env.to_subject.clone();
        let seq = env.seq;
        let ack = Frame::new(FrameKind::Ack, self.node.clone())
            .instance(self.id)
            .envelope(env.clone())
            .ack_seq(seq);
        match self.record(inner, &to, Event::MsgDelivered { envelope: env }) {
            Ok(()) => {
                self.hooks.send_frame(from_node, ack);
                true
            }
            Err(e) => {
                tracing::warn!(instance = %self.id, "dropping remote envelope: {e}");
                false
            }
        }
    }

    /// Feeds a task completion to `subject`. On the coordinator the
    /// completion is checked here even when the subject runs elsewhere.
    pub fn complete_task(&self, subject: &str, outcome: &str, payload: Value, agent: Option<String>) -> Result<(), StepError> {
        self.run(|this, inner| {
            let a = inner
                .state
                .actors
                .get(subject)
                .ok_or_else(|| StepError::UnknownSubject(subject.to_string()))?;
            if inner.state.status != InstanceStatus::Running {
                return Err(StepError::NotAwaitingTask {
                    subject: subject.to_string(),
                    status: a.status,
                });
            }
            let program = this.bundle.program(subject).expect("program per actor");
            let cx = inner.state.cx(&this.bundle);
            let input = Input::TaskCompleted {
                outcome: outcome.to_string(),
                payload: payload.clone(),
                agent: agent.clone(),
            };
            let ev = actor::respond(a, program, &cx, &input)?.expect("task completion always yields an event");
            if this.is_local(inner, subject) {
                this.record_or_fail(inner, subject, ev);
            } else {
                let node = inner.state.meta.node_of(subject).to_string();
                let frame = Frame::new(FrameKind::Task, this.node.clone())
                    .instance(this.id)
                    .body(json!({"subject": subject, "outcome": outcome, "payload": payload, "agent": agent}));
                this.hooks.send_frame(&node, frame);
            }
            Ok(())
        })
    }

    /// Timer expiry for the `epoch`-th state entry of `subject`.
    pub fn timeout(&self, subject: &str, epoch: u64) {
        self.run(|this, inner| {
            let Some(a) = inner.state.actors.get(subject) else { return };
            let program = this.bundle.program(subject).expect("program per actor");
            let cx = inner.state.cx(&this.bundle);
            if let Ok(Some(ev)) = actor::respond(a, program, &cx, &Input::TimeoutElapsed { epoch }) {
                this.record_or_fail(inner, subject, ev);
            }
        })
    }

    /// Reports a crash of a local actor and applies the restart policy.
    pub fn crash(&self, subject: &str, reason: &str) {
        self.run(|this, inner| {
            if inner.state.status != InstanceStatus::Running || !this.coordinates(inner) {
                return;
            }
            match inner.state.actors.get(subject) {
                Some(a) if !a.crashed && !a.halted => {}
                _ => return,
            }
            this.record_or_fail(inner, subject, Event::Crashed { reason: reason.to_string() });
            match this.bundle.supervisor.restart_policy {
                RestartPolicy::Never => this.fail(inner, format!("Crashed: {subject}: {reason}")),
                RestartPolicy::Replay { max_restarts, window_s } => {
                    let since = this.hooks.now_ms().saturating_sub(window_s * 1000);
                    let restarts = inner.state.restarts_since(subject, since);
                    if restarts >= max_restarts {
                        this.fail(
                            inner,
                            format!("RestartLimit: {subject} crashed {} times within {window_s}s: {reason}", restarts + 1),
                        );
                        return;
                    }
                    match checkpoint_replay(&inner.state.log, &this.bundle, &inner.state.meta) {
                        Ok(rebuilt) => {
                            let actor = rebuilt.actors[subject].clone();
                            inner.state.actors.insert(actor.subject.clone(), actor);
                        }
                        Err(e) => {
                            this.fail(inner, format!("ReplayFailed: {e}"));
                            return;
                        }
                    }
                    this.record_or_fail(inner, subject, Event::Restarted { attempt: restarts + 1 });
                    let s: Ident = subject.parse().expect("actor ids are identifiers");
                    this.rearm(inner, &s);
                }
            }
        })
    }

    /// Fails the instance from outside (for example an unreachable service
    /// without an error outcome).
    pub fn abort(&self, reason: &str) {
        self.run(|this, inner| this.fail(inner, reason.to_string()))
    }

    /// A MSG frame from another node for a subject hosted here.
    pub fn on_msg(&self, env: Envelope, from_node: &str) {
        self.run(|this, inner| {
            let to = env.to_subject.clone();
            if !inner.state.actors.contains_key(&to) || !this.is_local(inner, &to) {
                tracing::warn!(instance = %this.id, "MSG for {to}, which is not hosted here");
                return;
            }
            let room = inner.state.actors[&to].pool.len() < this.capacity(&to);
            let queued = inner.parked.get(&to).map_or(0, VecDeque::len);
            if room && queued == 0 {
                this.deliver_remote(inner, env, from_node);
            } else {
                let nack = Frame::new(FrameKind::Nack, this.node.clone())
                    .instance(this.id)
                    .envelope(env.clone())
                    .ack_seq(env.seq)
                    .reason("pool full");
                this.hooks.send_frame(from_node, nack);
                inner.parked.entry(to).or_default().push_back((env, from_node.to_string()));
            }
        })
    }

    /// Acknowledgement of an envelope sent from here.
    pub fn on_ack(&self, env: &Envelope) {
        self.run(|this, inner| {
            inner.in_flight.remove(&env.correlation_id);
            if this.coordinates(inner) {
                // The delivery itself arrives as an EVENT frame.
                return;
            }
            if let (Some(a), Some(p)) = (inner.state.actors.get_mut(&env.from_subject), this.bundle.program(&env.from_subject)) {
                a.mark_delivered(p, env.correlation_id);
            }
        })
    }

    /// A record produced on another node (coordinator only).
    pub fn on_event(&self, subject: &str, ev: Event) -> Result<(), String> {
        self.run(|this, inner| {
            if !this.coordinates(inner) {
                return Err("not the coordinator".into());
            }
            if let Event::MsgDelivered { envelope } = &ev {
                if !this.send_logged(inner, envelope) {
                    inner.early.push((subject.parse().map_err(|e| format!("{e}"))?, ev));
                    return Ok(());
                }
            }
            this.record(inner, subject, ev)?;
            loop {
                let ready = inner.early.iter().position(|(_, e)| match e {
                    Event::MsgDelivered { envelope } => this.send_logged(inner, envelope),
                    _ => true,
                });
                let Some(i) = ready else { break };
                let (s, e) = inner.early.remove(i);
                this.record(inner, &s, e)?;
            }
            Ok(())
        })
    }

    fn send_logged(&self, inner: &Inner, env: &Envelope) -> bool {
        match inner.state.actors.get(env.from_subject.as_str()) {
            Some(a) => a
                .outbox
                .as_ref()
                .is_some_and(|o| o.envelope.correlation_id == env.correlation_id && !o.delivered),
            None => true,
        }
    }

    /// An inbound envelope from outside the instance (external sender).
    pub fn deliver_external(&self, env: Envelope) -> Result<(), String> {
        self.run(|this, inner| {
            let sender_external = this.bundle.subject(&env.from_subject).is_some_and(|s| s.external);
            if !sender_external {
                return Err(format!("`{}` is not an external subject of this process", env.from_subject));
            }
            let to = env.to_subject.clone();
            this.record(inner, &to, Event::MsgDelivered { envelope: env })
        })
    }

    /// Open tasks of all actors awaiting one, in subject order.
    pub fn open_tasks(&self) -> Vec<OpenTask> {
        let inner = self.inner.lock();
        if inner.state.status != InstanceStatus::Running {
            return Vec::new();
        }
        inner
            .state
            .actors
            .values()
            .filter(|a| a.status == ActorStatus::AwaitingTask)
            .map(|a| {
                let program = self.bundle.program(&a.subject).expect("program per actor");
                let st = program.state(a.current);
                let (kind, options) = match st.kind {
                    StateKind::Send => (
                        TaskKind::ProvideSendPayload,
                        st.arms
                            .iter()
                            .filter_map(|arm| match &arm.selector {
                                Selector::Emit { message, to, bo } => Some(TaskOption::Payload {
                                    message: message.clone(),
                                    to: to.clone(),
                                    bo: bo.as_ref().and_then(|b| self.bundle.bo_schema(b)).cloned(),
                                }),
                                _ => None,
                            })
                            .collect(),
                    ),
                    _ => (
                        TaskKind::ChooseOutcome,
                        st.outcomes().into_iter().map(|o| TaskOption::Outcome(o.to_string())).collect(),
                    ),
                };
                let created_ts = inner
                    .state
                    .log
                    .iter()
                    .rev()
                    .find(|r| r.subject == a.subject.as_str() && matches!(r.event, Event::StateEntered { .. }))
                    .map_or(0, |r| r.ts);
                OpenTask {
                    task_id: task_id(self.id, &a.subject, a.entries),
                    instance_id: self.id,
                    subject: a.subject.clone(),
                    state: st.id.clone(),
                    state_name: st.name.clone(),
                    state_index: a.current,
                    kind,
                    options,
                    refinement: st.refinement.clone(),
                    on_error: st.on_error.clone(),
                    created_ts,
                }
            })
            .collect()
    }
}
