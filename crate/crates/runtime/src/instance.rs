//! Instance state as a fold over its event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::actor::{self, ActorState, ActorStatus, Cx, Input};
use crate::envelope::Envelope;
use crate::event::{Event, EventRecord, SUPERVISOR};
use sbpm_core::compile::Bundle;
use sbpm_core::Ident;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceStatus {
    Running,
    Completed,
    Failed,
}

/// What an instance was started with. Persisted next to the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub instance_id: Uuid,
    pub bundle_hash: String,
    /// Role → agent id.
    pub bindings: BTreeMap<String, String>,
    /// Subject → node id. Subjects not listed run on the coordinator.
    #[serde(default)]
    pub placement: BTreeMap<Ident, String>,
    /// Node that owns the log and the supervisor.
    pub coordinator: String,
    /// Overrides for the bundle's external routes.
    #[serde(default)]
    pub routes: BTreeMap<Ident, String>,
}

impl InstanceMeta {
    pub fn node_of(&self, subject: &str) -> &str {
        self.placement.get(subject).map(String::as_str).unwrap_or(&self.coordinator)
    }

    pub fn route_for<'a>(&'a self, bundle: &'a Bundle, subject: &str) -> Option<&'a str> {
        self.routes
            .get(subject)
            .map(String::as_str)
            .or_else(|| bundle.supervisor.route_for(subject))
    }

    /// Nodes other than the coordinator that host at least one subject.
    pub fn remote_nodes(&self) -> Vec<String> {
        let mut nodes: Vec<String> = self
            .placement
            .values()
            .filter(|n| **n != self.coordinator)
            .cloned()
            .collect();
        nodes.sort();
        nodes.dedup();
        nodes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StartError {
    #[error("no agent bound for role `{0}`")]
    UnboundRole(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("placement names `{0}`, which is not an internal subject")]
    UnknownSubject(String),
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
}

/// Checks bindings and placement against the bundle.
pub fn check_start(meta: &InstanceMeta, bundle: &Bundle, known_node: impl Fn(&str) -> bool) -> Result<(), StartError> {
    bundle.verify().map_err(|e| StartError::CorruptBundle(e.to_string()))?;
    if bundle.hash() != meta.bundle_hash {
        return Err(StartError::CorruptBundle("bundle hash does not match instance".into()));
    }
    for role in bundle.roles() {
        if !meta.bindings.contains_key(role) {
            return Err(StartError::UnboundRole(role.to_string()));
        }
    }
    for (subject, node) in &meta.placement {
        if bundle.program(subject).is_none() {
            return Err(StartError::UnknownSubject(subject.to_string()));
        }
        if *node != meta.coordinator && !known_node(node) {
            return Err(StartError::UnknownNode(node.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("log corrupt at seq {seq}: {reason}")]
    LogCorrupt { seq: u64, reason: String },
    #[error("bundle mismatch: log belongs to {expected}, got {actual}")]
    BundleMismatch { expected: String, actual: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryResult {
    Delivered,
    NackFull,
    RoutedRemote,
    RoutedExternal,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("invalid payload: {0}")]
    PayloadInvalid(String),
}

impl DispatchError {
    pub fn code(&self) -> &'static str {
        match self {
            DispatchError::UnknownTarget(_) => "UnknownTarget",
            DispatchError::PayloadInvalid(_) => "PayloadInvalid",
        }
    }
}

/// Where an envelope has to go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Route {
    Local,
    Remote(String),
    External(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceState {
    pub meta: InstanceMeta,
    pub actors: BTreeMap<Ident, ActorState>,
    pub status: InstanceStatus,
    /// Reason recorded when the supervisor failed the instance.
    pub failure: Option<String>,
    pub log: Vec<EventRecord>,
}

impl InstanceState {
    /// State before any record: every actor about to enter its start state.
    pub fn new(meta: InstanceMeta, bundle: &Bundle) -> Self {
        let actors = bundle
            .programs
            .iter()
            .map(|p| (p.subject.clone(), ActorState::new(p)))
            .collect();
        InstanceState {
            meta,
            actors,
            status: InstanceStatus::Running,
            failure: None,
            log: Vec::new(),
        }
    }

    pub fn id(&self) -> Uuid {
        self.meta.instance_id
    }

    pub fn cx<'a>(&self, bundle: &'a Bundle) -> Cx<'a> {
        Cx {
            instance_id: self.meta.instance_id,
            bundle,
        }
    }

    pub fn all_halted(&self) -> bool {
        self.actors.values().all(|a| a.halted)
    }

    /// Checks that `ev` by `subject` is a transition the step function
    /// allows from the current state.
    pub fn check(&self, bundle: &Bundle, subject: &str, ev: &Event) -> Result<(), String> {
        if self.status != InstanceStatus::Running {
            return Err(format!("instance is {:?}", self.status));
        }
        let cx = self.cx(bundle);
        if subject == SUPERVISOR {
            return match ev {
                Event::Crashed { .. } => Ok(()),
                Event::InstanceCompleted {} if self.all_halted() => Ok(()),
                Event::InstanceCompleted {} => Err("completion while some subject has not halted".into()),
                _ => Err(format!("{} is not a supervisor record", ev.kind())),
            };
        }
        if let Event::MsgDelivered { envelope } = ev {
            return self.check_delivery(bundle, subject, envelope);
        }
        let a = self
            .actors
            .get(subject)
            .ok_or_else(|| format!("`{subject}` has no actor"))?;
        let program = cx.program(subject).map_err(|e| e.to_string())?;
        if a.crashed && !matches!(ev, Event::Restarted { .. }) {
            return Err(format!("`{subject}` is crashed"));
        }
        let expected = match ev {
            Event::ChoiceMade { outcome, payload, agent } => actor::respond(
                a,
                program,
                &cx,
                &Input::TaskCompleted {
                    outcome: outcome.clone(),
                    payload: payload.clone(),
                    agent: agent.clone(),
                },
            )
            .map_err(|e| e.to_string())?,
            Event::MsgConsumed { .. } => actor::respond(a, program, &cx, &Input::MessageAvailable).map_err(|e| e.to_string())?,
            Event::TimeoutFired { .. } => {
                actor::respond(a, program, &cx, &Input::TimeoutElapsed { epoch: a.entries }).map_err(|e| e.to_string())?
            }
            Event::StateEntered { .. } | Event::MsgSent { .. } | Event::SubjectHalted { .. } => {
                actor::next_internal(a, program, &cx)
            }
            Event::Crashed { .. } if a.halted => return Err(format!("`{subject}` already halted")),
            Event::Crashed { .. } => return Ok(()),
            Event::Restarted { .. } if a.crashed => return Ok(()),
            Event::Restarted { .. } => return Err(format!("`{subject}` is not crashed")),
            Event::MsgDelivered { .. } | Event::InstanceCompleted {} => unreachable!(),
        };
        match expected {
            Some(e) if e == *ev => Ok(()),
            Some(e) => Err(format!("expected {} {:?}, found {:?}", e.kind(), e, ev)),
            None => Err(format!(
                "{} not enabled for `{subject}` ({:?} in {})",
                ev.kind(),
                a.status,
                program.state(a.current).id
            )),
        }
    }

    fn check_delivery(&self, bundle: &Bundle, subject: &str, env: &Envelope) -> Result<(), String> {
        if env.to_subject != subject {
            return Err(format!("delivery for `{}` logged under `{subject}`", env.to_subject));
        }
        if env.instance_id != self.meta.instance_id {
            return Err("envelope belongs to another instance".into());
        }
        if let Some(sender) = self.actors.get(env.from_subject.as_str()) {
            match &sender.outbox {
                Some(o) if o.envelope == *env && !o.delivered => {}
                _ => return Err(format!("`{}` has no matching envelope in flight", env.from_subject)),
            }
        } else if bundle.subject(&env.from_subject).map(|s| !s.external).unwrap_or(true) {
            return Err(format!("unknown sender `{}`", env.from_subject));
        }
        if let Some(receiver) = self.actors.get(subject) {
            let cap = bundle.subject(subject).map(|s| s.pool_capacity).unwrap_or(0) as usize;
            if receiver.pool.len() >= cap {
                return Err(format!("pool of `{subject}` is full"));
            }
        } else if bundle.subject(subject).map(|s| !s.external).unwrap_or(true) {
            return Err(format!("unknown receiver `{subject}`"));
        }
        Ok(())
    }

    /// Applies `ev` without checking it or logging it.
    pub fn apply_event(&mut self, bundle: &Bundle, subject: &str, ev: &Event) {
        match ev {
            Event::MsgDelivered { envelope } => {
                for name in [&envelope.to_subject, &envelope.from_subject] {
                    if let (Some(a), Some(p)) = (self.actors.get_mut(name.as_str()), bundle.program(name)) {
                        actor::apply(a, p, ev);
                    }
                }
            }
            Event::InstanceCompleted {} => self.status = InstanceStatus::Completed,
            Event::Crashed { reason } if subject == SUPERVISOR => {
                self.status = InstanceStatus::Failed;
                self.failure = Some(reason.clone());
            }
            _ => {
                if let (Some(a), Some(p)) = (self.actors.get_mut(subject), bundle.program(subject)) {
                    actor::apply(a, p, ev);
                }
            }
        }
    }

    /// Checks, applies and logs one event. Returns the new record.
    pub fn append(&mut self, bundle: &Bundle, subject: &str, ev: Event, ts: u64) -> Result<&EventRecord, String> {
        self.check(bundle, subject, &ev)?;
        self.apply_event(bundle, subject, &ev);
        self.log.push(EventRecord {
            seq: self.log.len() as u64,
            ts,
            subject: subject.to_string(),
            event: ev,
        });
        Ok(self.log.last().expect("just pushed"))
    }

    /// Decides where `env` goes and whether it can be delivered now.
    pub fn route(&self, bundle: &Bundle, env: &Envelope, here: &str) -> Result<Route, DispatchError> {
        let target = bundle
            .subject(&env.to_subject)
            .ok_or_else(|| DispatchError::UnknownTarget(env.to_subject.to_string()))?;
        bundle
            .validate_payload(&env.message_id, &env.payload)
            .map_err(DispatchError::PayloadInvalid)?;
        if target.external {
            return match self.meta.route_for(bundle, &target.id) {
                Some(r) => Ok(Route::External(r.to_string())),
                None => Err(DispatchError::UnknownTarget(target.id.to_string())),
            };
        }
        let node = self.meta.node_of(&target.id);
        if node == here {
            Ok(Route::Local)
        } else {
            Ok(Route::Remote(node.to_string()))
        }
    }

    /// The dispatcher decision for `env` as seen from node `here`.
    pub fn dispatch(&self, bundle: &Bundle, env: &Envelope, here: &str) -> Result<DeliveryResult, DispatchError> {
        Ok(match self.route(bundle, env, here)? {
            Route::Local => {
                let cap = bundle.subject(&env.to_subject).map(|s| s.pool_capacity).unwrap_or(0) as usize;
                let len = self.actors.get(env.to_subject.as_str()).map(|a| a.pool.len()).unwrap_or(cap);
                if len < cap {
                    DeliveryResult::Delivered
                } else {
                    DeliveryResult::NackFull
                }
            }
            Route::Remote(_) => DeliveryResult::RoutedRemote,
            Route::External(_) => DeliveryResult::RoutedExternal,
        })
    }

    /// Number of RESTARTED records for `subject` at or after `since_ms`.
    pub fn restarts_since(&self, subject: &str, since_ms: u64) -> u32 {
        self.log
            .iter()
            .filter(|r| r.subject == subject && r.ts >= since_ms && matches!(r.event, Event::Restarted { .. }))
            .count() as u32
    }

    pub fn actor_status(&self, subject: &str) -> Option<ActorStatus> {
        self.actors.get(subject).map(|a| a.status)
    }
}

/// Rebuilds an instance from its log, checking every record against the
/// step function.
pub fn checkpoint_replay(log: &[EventRecord], bundle: &Bundle, meta: &InstanceMeta) -> Result<InstanceState, ReplayError> {
    if bundle.hash() != meta.bundle_hash {
        return Err(ReplayError::BundleMismatch {
            expected: meta.bundle_hash.clone(),
            actual: bundle.hash().to_string(),
        });
    }
    let mut state = InstanceState::new(meta.clone(), bundle);
    for (i, rec) in log.iter().enumerate() {
        if rec.seq != i as u64 {
            return Err(ReplayError::LogCorrupt {
                seq: rec.seq,
                reason: format!("expected seq {i}"),
            });
        }
        state
            .append(bundle, &rec.subject, rec.event.clone(), rec.ts)
            .map_err(|reason| ReplayError::LogCorrupt { seq: rec.seq, reason })?;
    }
    Ok(state)
}
