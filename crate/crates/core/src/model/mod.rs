//! Domain types for subject-oriented process models.
//!
//! A [`ProcessModel`] is the interaction diagram (subjects, messages, business
//! objects) together with one [`BehaviorGraph`] per internal subject. Models
//! are read from and written to a directory of XML files, see [`parse_model`]
//! and [`serialize_model`].

mod bo;
mod parse;
mod write;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::Ident;

pub use bo::{validate_empty, BoField, BoSchema, FieldType, PayloadError};
pub use parse::{parse_model, parse_model_dir, FileMap, ParseError, SID_FILE};
pub use write::{behavior_file_name, serialize_model, write_model_dir};

pub const DEFAULT_POOL_CAPACITY: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessModel {
    pub id: Ident,
    pub name: String,
    pub version: String,
    pub subjects: Vec<SubjectDecl>,
    pub messages: Vec<MessageDecl>,
    pub bo_schemas: Vec<BoSchema>,
    pub behaviors: BTreeMap<Ident, BehaviorGraph>,
}

impl ProcessModel {
    pub fn subject(&self, id: &str) -> Option<&SubjectDecl> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn message(&self, id: &str) -> Option<&MessageDecl> {
        self.messages.iter().find(|m| m.id == id)
    }

    pub fn bo_schema(&self, id: &str) -> Option<&BoSchema> {
        self.bo_schemas.iter().find(|b| b.id == id)
    }

    pub fn behavior(&self, subject: &str) -> Option<&BehaviorGraph> {
        self.behaviors.get(subject)
    }

    pub fn has_external_subjects(&self) -> bool {
        self.subjects.iter().any(|s| s.external)
    }

    /// Internal (non-external) subjects sorted by id.
    pub fn internal_subjects(&self) -> Vec<&SubjectDecl> {
        let mut out: Vec<_> = self.subjects.iter().filter(|s| !s.external).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectDecl {
    pub id: Ident,
    pub name: String,
    /// Organizational role label; bound to an agent per instance.
    pub role: String,
    pub external: bool,
    pub pool_capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageDecl {
    pub id: Ident,
    pub name: String,
    pub from: Ident,
    pub to: Ident,
    pub bo: Option<Ident>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorGraph {
    pub subject: Ident,
    pub states: Vec<State>,
    /// Kept in document order; receive matching depends on it.
    pub transitions: Vec<Transition>,
}

impl BehaviorGraph {
    pub fn state(&self, id: &str) -> Option<&State> {
        self.states.iter().find(|s| s.id == id)
    }

    pub fn state_index(&self, id: &str) -> Option<usize> {
        self.states.iter().position(|s| s.id == id)
    }

    pub fn start_state(&self) -> Option<&State> {
        self.states.iter().find(|s| s.start)
    }

    /// Outgoing transitions of `state`, in document order.
    pub fn outgoing<'a>(&'a self, state: &'a str) -> impl Iterator<Item = &'a Transition> + 'a {
        self.transitions.iter().filter(move |t| t.from == state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Function,
    Send,
    Receive,
}

impl StateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StateKind::Function => "function",
            StateKind::Send => "send",
            StateKind::Receive => "receive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "function" => Some(StateKind::Function),
            "send" => Some(StateKind::Send),
            "receive" => Some(StateKind::Receive),
            _ => None,
        }
    }
}

impl std::fmt::Display for StateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub id: Ident,
    pub name: String,
    pub kind: StateKind,
    pub start: bool,
    pub end: bool,
    /// External service called to complete a function state.
    pub refinement: Option<String>,
    /// Outcome taken when the refinement service fails or times out.
    pub on_error: Option<String>,
    /// Receive-state timer; `None` means wait forever.
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: Ident,
    pub to: Ident,
    pub label: Label,
}

/// Transition label, discriminated by the kind of the source state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Label {
    Outcome { name: String },
    Send { message: Ident, to: Ident },
    Receive { message: Ident, from: Ident },
    Timeout,
}

impl Label {
    /// The state kind this label may leave from.
    pub fn source_kind(&self) -> StateKind {
        match self {
            Label::Outcome { .. } => StateKind::Function,
            Label::Send { .. } => StateKind::Send,
            Label::Receive { .. } | Label::Timeout => StateKind::Receive,
        }
    }
}
