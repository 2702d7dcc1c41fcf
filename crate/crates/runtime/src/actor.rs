//! The per-subject step function.
//!
//! An actor's state changes only through [`apply`], one log event at a time.
//! [`respond`] turns an external input into at most one event and
//! [`next_internal`] yields the single event the actor produces on its own
//! from its current state. [`actor_step`] chains the two until the actor
//! needs outside input again. Because every event is a complete transition,
//! a log cut anywhere can be resumed by calling `next_internal` again.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use uuid::Uuid;

use crate::envelope::{correlation_id, Envelope};
use crate::event::Event;
use sbpm_core::compile::{Bundle, IrState, Selector, SubjectProgram};
use sbpm_core::model::StateKind;
use sbpm_core::Ident;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorStatus {
    Running,
    AwaitingTask,
    AwaitingMessage,
    BlockedSend,
    Halted,
    Crashed,
}

/// The message a send state committed to, waiting to go out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Staged {
    pub message: Ident,
    pub payload: Value,
}

/// An envelope that left the actor and the arm it will follow once the
/// envelope is delivered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outbox {
    pub envelope: Envelope,
    pub target: usize,
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorState {
    pub subject: Ident,
    pub current: usize,
    pub pool: VecDeque<Envelope>,
    pub status: ActorStatus,
    /// Sequence number for the next envelope this actor sends.
    pub next_seq: u64,
    /// Number of STATE_ENTERED events so far; timers and task ids use it as
    /// an epoch.
    pub entries: u64,
    /// State to enter next.
    pub pending: Option<usize>,
    pub staged: Option<Staged>,
    pub outbox: Option<Outbox>,
    pub halted: bool,
    pub crashed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("outcome `{outcome}` is not declared in state `{state}`")]
    NoSuchOutcome { state: String, outcome: String },
    #[error("invalid payload: {0}")]
    PayloadInvalid(String),
    #[error("subject `{subject}` is not awaiting a task (status {status:?})")]
    NotAwaitingTask { subject: String, status: ActorStatus },
    #[error("subject `{0}` has no envelope waiting for an acknowledgement")]
    NothingToAck(String),
    #[error("no program for subject `{0}`")]
    UnknownSubject(String),
}

/// External inputs to an actor.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    TaskCompleted {
        outcome: String,
        payload: Value,
        agent: Option<String>,
    },
    MessageAvailable,
    TimeoutElapsed {
        epoch: u64,
    },
    SendAck,
    SendNack,
}

/// Side effects requested by a step. Records are appended to the log in
/// order; the rest is for the hosting runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Record(Event),
    Send(Envelope),
    ArmTimer { epoch: u64, ms: u64 },
    AwaitTask,
    Halt,
    Warn(String),
    Blocked,
}

/// Read-only context a step runs in.
#[derive(Clone, Copy)]
pub struct Cx<'a> {
    pub instance_id: Uuid,
    pub bundle: &'a Bundle,
}

impl<'a> Cx<'a> {
    pub fn program(&self, subject: &str) -> Result<&'a SubjectProgram, StepError> {
        self.bundle
            .program(subject)
            .ok_or_else(|| StepError::UnknownSubject(subject.to_string()))
    }
}

impl ActorState {
    /// A fresh actor that has not entered its start state yet.
    pub fn new(program: &SubjectProgram) -> Self {
        ActorState {
            subject: program.subject.clone(),
            current: program.start_index,
            pool: VecDeque::new(),
            status: ActorStatus::Running,
            next_seq: 0,
            entries: 0,
            pending: Some(program.start_index),
            staged: None,
            outbox: None,
            halted: false,
            crashed: false,
        }
    }

    fn derive_status(&self, program: &SubjectProgram) -> ActorStatus {
        if self.crashed {
            return ActorStatus::Crashed;
        }
        if self.halted {
            return ActorStatus::Halted;
        }
        if self.outbox.is_some() {
            return ActorStatus::BlockedSend;
        }
        if self.pending.is_some() {
            return ActorStatus::Running;
        }
        let st = program.state(self.current);
        match st.kind {
            StateKind::Function if program.is_end(self.current) => ActorStatus::Running,
            StateKind::Function => ActorStatus::AwaitingTask,
            StateKind::Send if self.staged.is_none() && st.send_needs_task() => ActorStatus::AwaitingTask,
            StateKind::Send => ActorStatus::Running,
            StateKind::Receive => ActorStatus::AwaitingMessage,
        }
    }

    /// Marks the outstanding envelope as delivered without logging; used by
    /// a node that learns of the delivery through an acknowledgement.
    pub fn mark_delivered(&mut self, program: &SubjectProgram, correlation: Uuid) -> bool {
        match &mut self.outbox {
            Some(o) if o.envelope.correlation_id == correlation && !o.delivered => {
                o.delivered = true;
                self.status = self.derive_status(program);
                true
            }
            _ => false,
        }
    }
}

fn emit_target(st: &IrState, message: &str, to: &str) -> Option<usize> {
    st.arms.iter().find_map(|a| match &a.selector {
        Selector::Emit { message: m, to: t, .. } if m == message && t == to => Some(a.target),
        _ => None,
    })
}

/// Applies one event of this actor (or one delivery touching it).
pub fn apply(a: &mut ActorState, program: &SubjectProgram, ev: &Event) {
    match ev {
        Event::StateEntered { index, .. } => {
            a.current = *index;
            a.pending = None;
            a.staged = None;
            a.outbox = None;
            a.entries += 1;
        }
        Event::MsgSent { envelope } => {
            let target = emit_target(program.state(a.current), &envelope.message_id, &envelope.to_subject)
                .unwrap_or(a.current);
            a.next_seq = envelope.seq + 1;
            a.staged = None;
            a.outbox = Some(Outbox {
                envelope: envelope.clone(),
                target,
                delivered: false,
            });
        }
        Event::MsgDelivered { envelope } => {
            if envelope.to_subject == a.subject {
                a.pool.push_back(envelope.clone());
            }
            if envelope.from_subject == a.subject {
                if let Some(o) = &mut a.outbox {
                    if o.envelope.correlation_id == envelope.correlation_id {
                        o.delivered = true;
                    }
                }
            }
        }
        Event::MsgConsumed {
            message,
            from,
            correlation_id,
            ..
        } => {
            if let Some(pos) = a.pool.iter().position(|e| e.correlation_id == *correlation_id) {
                a.pool.remove(pos);
            }
            a.pending = program.state(a.current).match_arm(message, from).map(|arm| arm.target);
        }
        Event::ChoiceMade { outcome, payload, .. } => {
            let st = program.state(a.current);
            match st.kind {
                StateKind::Send => {
                    a.staged = Some(Staged {
                        message: outcome.parse().expect("message ids are identifiers"),
                        payload: payload.clone(),
                    })
                }
                _ => a.pending = st.outcome_arm(outcome).map(|arm| arm.target),
            }
        }
        Event::TimeoutFired { .. } => {
            a.pending = program.state(a.current).timeout_arm().map(|arm| arm.target);
        }
        Event::Crashed { .. } => a.crashed = true,
        Event::Restarted { .. } => a.crashed = false,
        Event::SubjectHalted { .. } => a.halted = true,
        Event::InstanceCompleted {} => {}
    }
    a.status = a.derive_status(program);
}

fn envelope_for(a: &ActorState, cx: &Cx, message: &Ident, to: &Ident, payload: Value) -> Envelope {
    Envelope {
        instance_id: cx.instance_id,
        from_subject: a.subject.clone(),
        to_subject: to.clone(),
        message_id: message.clone(),
        correlation_id: correlation_id(cx.instance_id, &a.subject, a.next_seq),
        seq: a.next_seq,
        payload,
    }
}

/// The event this actor produces next without outside input, if any.
pub fn next_internal(a: &ActorState, program: &SubjectProgram, cx: &Cx) -> Option<Event> {
    if a.halted || a.crashed {
        return None;
    }
    if let Some(t) = a.pending {
        return Some(Event::StateEntered {
            state: program.state(t).id.clone(),
            index: t,
        });
    }
    let st = program.state(a.current);
    if program.is_end(a.current) {
        return Some(Event::SubjectHalted {
            state: st.id.clone(),
            unconsumed: a.pool.len(),
        });
    }
    if let Some(o) = &a.outbox {
        return o.delivered.then(|| Event::StateEntered {
            state: program.state(o.target).id.clone(),
            index: o.target,
        });
    }
    if st.kind != StateKind::Send {
        return None;
    }
    let (message, payload) = match &a.staged {
        Some(s) => (s.message.clone(), s.payload.clone()),
        None if !st.send_needs_task() => match &st.arms[0].selector {
            Selector::Emit { message, .. } => (message.clone(), Value::Null),
            _ => return None,
        },
        None => return None,
    };
    let to = st.arms.iter().find_map(|arm| match &arm.selector {
        Selector::Emit { message: m, to, .. } if *m == message => Some(to.clone()),
        _ => None,
    })?;
    Some(Event::MsgSent {
        envelope: envelope_for(a, cx, &message, &to, payload),
    })
}

/// Receive matching: the oldest pool entry accepted by any arm, with the
/// first accepting arm in document order.
fn find_match(a: &ActorState, st: &IrState) -> Option<Event> {
    a.pool.iter().find_map(|env| {
        st.match_arm(&env.message_id, &env.from_subject).map(|_| Event::MsgConsumed {
            message: env.message_id.clone(),
            from: env.from_subject.clone(),
            correlation_id: env.correlation_id,
            seq: env.seq,
        })
    })
}

/// Turns an external input into the event it causes, if any.
pub fn respond(a: &ActorState, program: &SubjectProgram, cx: &Cx, input: &Input) -> Result<Option<Event>, StepError> {
    let st = program.state(a.current);
    match input {
        Input::TaskCompleted { outcome, payload, agent } => {
            if a.status != ActorStatus::AwaitingTask {
                return Err(StepError::NotAwaitingTask {
                    subject: a.subject.to_string(),
                    status: a.status,
                });
            }
            let no_such = || StepError::NoSuchOutcome {
                state: st.id.to_string(),
                outcome: outcome.clone(),
            };
            match st.kind {
                StateKind::Send => {
                    if !st.arms.iter().any(|arm| matches!(&arm.selector, Selector::Emit { message, .. } if message == outcome.as_str())) {
                        return Err(no_such());
                    }
                    cx.bundle
                        .validate_payload(outcome, payload)
                        .map_err(StepError::PayloadInvalid)?;
                }
                _ => {
                    st.outcome_arm(outcome).ok_or_else(no_such)?;
                }
            }
            Ok(Some(Event::ChoiceMade {
                outcome: outcome.clone(),
                payload: payload.clone(),
                agent: agent.clone(),
            }))
        }
        Input::MessageAvailable if a.status == ActorStatus::AwaitingMessage => Ok(find_match(a, st)),
        Input::TimeoutElapsed { epoch }
            if a.status == ActorStatus::AwaitingMessage && *epoch == a.entries && st.timeout_arm().is_some() =>
        {
            Ok(Some(Event::TimeoutFired { state: st.id.clone() }))
        }
        _ => Ok(None),
    }
}

/// Effects that follow from `ev` having been applied to `a`.
pub fn effects_of(a: &ActorState, program: &SubjectProgram, ev: &Event) -> Vec<Effect> {
    let mut out = Vec::new();
    match ev {
        Event::StateEntered { index, .. } => {
            let st = program.state(*index);
            if let (StateKind::Receive, Some(ms)) = (st.kind, st.timeout_ms) {
                out.push(Effect::ArmTimer { epoch: a.entries, ms });
            }
            if a.status == ActorStatus::AwaitingTask {
                out.push(Effect::AwaitTask);
            }
        }
        Event::ChoiceMade { .. } if a.status == ActorStatus::AwaitingTask => out.push(Effect::AwaitTask),
        Event::MsgSent { envelope } => out.push(Effect::Send(envelope.clone())),
        Event::SubjectHalted { state, unconsumed } => {
            out.push(Effect::Halt);
            if *unconsumed > 0 {
                out.push(Effect::Warn(format!(
                    "{} halted in {state} with {unconsumed} unconsumed message(s)",
                    a.subject
                )));
            }
        }
        _ => {}
    }
    out
}

/// Deterministic transition of one actor: handles `input`, then runs until
/// the actor waits for a task, a message or an acknowledgement, or halts.
pub fn actor_step(a: &ActorState, cx: &Cx, input: Input) -> Result<(ActorState, Vec<Effect>), StepError> {
    let program = cx.program(&a.subject)?;
    let mut a = a.clone();
    let mut effects = Vec::new();
    let push = |a: &mut ActorState, ev: Event, effects: &mut Vec<Effect>| {
        apply(a, program, &ev);
        let more = effects_of(a, program, &ev);
        effects.push(Effect::Record(ev));
        effects.extend(more);
    };
    match &input {
        Input::SendAck => {
            let correlation = match &a.outbox {
                Some(o) if !o.delivered => o.envelope.correlation_id,
                _ => return Err(StepError::NothingToAck(a.subject.to_string())),
            };
            a.mark_delivered(program, correlation);
        }
        Input::SendNack => return Ok((a, vec![Effect::Blocked])),
        _ => {
            if let Some(ev) = respond(&a, program, cx, &input)? {
                push(&mut a, ev, &mut effects);
            }
        }
    }
    while let Some(ev) = next_internal(&a, program, cx) {
        push(&mut a, ev, &mut effects);
    }
    Ok((a, effects))
}
