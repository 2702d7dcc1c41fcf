use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

use crate::envelope::Envelope;
use sbpm_core::Ident;

/// Pseudo-subject for records written by the supervisor itself.
pub const SUPERVISOR: &str = "SUPERVISOR";

/// One log entry. Serialized as `{seq, ts, subject, kind, data}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub subject: String,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Event {
    StateEntered {
        state: Ident,
        index: usize,
    },
    MsgSent {
        envelope: Envelope,
    },
    /// Logged under the receiving subject.
    MsgDelivered {
        envelope: Envelope,
    },
    MsgConsumed {
        message: Ident,
        from: Ident,
        correlation_id: Uuid,
        seq: u64,
    },
    /// A task completion: an outcome in a function state, or the chosen
    /// message id in a send state.
    ChoiceMade {
        outcome: String,
        #[serde(default, skip_serializing_if = "Value::is_null")]
        payload: Value,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<String>,
    },
    TimeoutFired {
        state: Ident,
    },
    Crashed {
        reason: String,
    },
    Restarted {
        attempt: u32,
    },
    SubjectHalted {
        state: Ident,
        unconsumed: usize,
    },
    InstanceCompleted {},
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::StateEntered { .. } => "STATE_ENTERED",
            Event::MsgSent { .. } => "MSG_SENT",
            Event::MsgDelivered { .. } => "MSG_DELIVERED",
            Event::MsgConsumed { .. } => "MSG_CONSUMED",
            Event::ChoiceMade { .. } => "CHOICE_MADE",
            Event::TimeoutFired { .. } => "TIMEOUT_FIRED",
            Event::Crashed { .. } => "CRASHED",
            Event::Restarted { .. } => "RESTARTED",
            Event::SubjectHalted { .. } => "SUBJECT_HALTED",
            Event::InstanceCompleted {} => "INSTANCE_COMPLETED",
        }
    }
}

impl std::fmt::Display for EventRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:>5} {:<13} {:<19}", self.seq, self.subject, self.event.kind())?;
        match &self.event {
            Event::StateEntered { state, .. } => write!(f, " {state}"),
            Event::MsgSent { envelope } => write!(
                f,
                " {} -> {} #{}",
                envelope.message_id, envelope.to_subject, envelope.seq
            ),
            Event::MsgDelivered { envelope } => write!(
                f,
                " {} from {} #{}",
                envelope.message_id, envelope.from_subject, envelope.seq
            ),
            Event::MsgConsumed { message, from, seq, .. } => write!(f, " {message} from {from} #{seq}"),
            Event::ChoiceMade { outcome, .. } => write!(f, " {outcome}"),
            Event::TimeoutFired { state } => write!(f, " {state}"),
            Event::Crashed { reason } => write!(f, " {reason}"),
            Event::Restarted { attempt } => write!(f, " attempt {attempt}"),
            Event::SubjectHalted { state, unconsumed } => {
                write!(f, " {state}")?;
                if *unconsumed > 0 {
                    write!(f, " ({unconsumed} unconsumed)")?;
                }
                Ok(())
            }
            Event::InstanceCompleted {} => Ok(()),
        }
    }
}
